//! Checkpoint persistence and parameter/feature drift diagnostics.
//!
//! On-disk layout of a run: one binary checkpoint file per epoch plus a
//! plain-text manifest. Checkpoint files are integrity-checked with an
//! FNV-1a checksum; round-trips are bit-exact.

use crate::linalg::{norm2, sub, Matrix};
use crate::nn::{forward, Activation, LayerParams, NetworkArch, NnError, TrainRun};
use crate::rng::fnv1a;
use std::path::{Path, PathBuf};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"TALB";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic in {path}")]
    BadMagic { path: String },
    #[error("unsupported checkpoint version {got} in {path} (expected {VERSION})")]
    Version { path: String, got: u32 },
    #[error("checksum mismatch in {path}: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum {
        path: String,
        stored: u64,
        computed: u64,
    },
    #[error("truncated checkpoint file {path}")]
    TruncatedFile { path: String },
    #[error("shape mismatch at layer {layer}: expected {expected_out}x{expected_in}, file has {got_out}x{got_in}")]
    ShapeMismatch {
        layer: usize,
        expected_out: usize,
        expected_in: usize,
        got_out: usize,
        got_in: usize,
    },
    #[error("manifest parse error in {path}: {msg}")]
    ManifestParse { path: String, msg: String },
    #[error("epoch {0} not stored in trajectory")]
    MissingEpoch(usize),
    #[error("dataset fingerprint mismatch: manifest {manifest:#018x}, provided {provided:#018x}")]
    FingerprintMismatch { manifest: u64, provided: u64 },
    #[error("architecture mismatch between checkpoints")]
    ArchMismatch,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Layer boundary at which a network is split into a shallow feature
/// extractor (layers `1..=d`) and a deep classifier head (layers `d+1..=n`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    depth: usize,
}

impl SplitSpec {
    pub fn new(depth: usize, arch: &NetworkArch) -> Result<Self, NnError> {
        if depth == 0 || depth >= arch.layer_count() {
            return Err(NnError::InvalidConfig(format!(
                "split depth {depth} outside 1..{}",
                arch.layer_count()
            )));
        }
        Ok(SplitSpec { depth })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Width of the latent space the split exposes.
    pub fn latent_width(&self, arch: &NetworkArch) -> usize {
        arch.layer_widths[self.depth]
    }
}

/// The full parameter set of one training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: Vec<LayerParams>,
    pub arch: NetworkArch,
    pub run_id: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrajError + '_ {
    move |source| TrajError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serialize layer parameters to the checkpoint wire format:
/// magic "TALB", u32 version, then payload (u32 layer_count, per layer
/// u32 out, u32 in, row-major f64 weights, f64 biases, all little-endian),
/// and finally the u64 FNV-1a checksum of the payload.
pub fn encode_params(params: &[LayerParams]) -> Vec<u8> {
    let mut payload = Vec::new();
    payload.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        payload.extend_from_slice(&(p.out_width() as u32).to_le_bytes());
        payload.extend_from_slice(&(p.in_width() as u32).to_le_bytes());
        for v in &p.weight.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        for v in &p.bias {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a(&payload);
    let mut out = Vec::with_capacity(8 + payload.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

pub fn decode_params(bytes: &[u8], path: &Path) -> Result<Vec<LayerParams>, TrajError> {
    let pathstr = || path.display().to_string();
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(TrajError::BadMagic { path: pathstr() });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(TrajError::Version {
            path: pathstr(),
            got: version,
        });
    }
    let payload = &bytes[8..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = fnv1a(payload);
    if stored != computed {
        return Err(TrajError::Checksum {
            path: pathstr(),
            stored,
            computed,
        });
    }

    let mut off = 0usize;
    let take_u32 = |off: &mut usize| -> Result<u32, TrajError> {
        let v = payload
            .get(*off..*off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or(TrajError::TruncatedFile { path: pathstr() })?;
        *off += 4;
        Ok(v)
    };
    let layer_count = take_u32(&mut off)? as usize;
    let mut params = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let out_w = take_u32(&mut off)? as usize;
        let in_w = take_u32(&mut off)? as usize;
        let n_f64 = out_w * in_w + out_w;
        let floats = payload
            .get(off..off + n_f64 * 8)
            .ok_or(TrajError::TruncatedFile { path: pathstr() })?;
        off += n_f64 * 8;
        let values: Vec<f64> = floats
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(LayerParams {
            weight: Matrix {
                rows: out_w,
                cols: in_w,
                data: values[..out_w * in_w].to_vec(),
            },
            bias: values[out_w * in_w..].to_vec(),
        });
    }
    Ok(params)
}

pub fn save_checkpoint_file(path: &Path, params: &[LayerParams]) -> Result<(), TrajError> {
    std::fs::write(path, encode_params(params)).map_err(io_err(path))
}

pub fn load_checkpoint_file(path: &Path) -> Result<Vec<LayerParams>, TrajError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_params(&bytes, path)
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Identity => "identity",
    }
}

fn parse_activation(s: &str) -> Option<Activation> {
    match s {
        "relu" => Some(Activation::Relu),
        "identity" => Some(Activation::Identity),
        _ => None,
    }
}

/// Manifest data for a stored run.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub run_id: String,
    pub seed: u64,
    pub arch: NetworkArch,
    pub dataset_fingerprint: u64,
    pub epochs: Vec<usize>,
}

impl Manifest {
    fn to_text(&self) -> String {
        let widths: Vec<String> = self.arch.layer_widths.iter().map(|w| w.to_string()).collect();
        let acts: Vec<&str> = self
            .arch
            .activations
            .iter()
            .map(|&a| activation_name(a))
            .collect();
        let epochs: Vec<String> = self.epochs.iter().map(|e| e.to_string()).collect();
        format!(
            "run_id = {}\nseed = {}\nwidths = {}\nactivations = {}\ndataset_fingerprint = {:#018x}\nepochs = {}\n",
            self.run_id,
            self.seed,
            widths.join(","),
            acts.join(","),
            self.dataset_fingerprint,
            epochs.join(",")
        )
    }

    fn from_text(text: &str, path: &Path) -> Result<Self, TrajError> {
        let perr = |msg: String| TrajError::ManifestParse {
            path: path.display().to_string(),
            msg,
        };
        let mut fields = std::collections::HashMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                fields.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .cloned()
                .ok_or_else(|| perr(format!("missing key {k}")))
        };
        let widths: Vec<usize> = get("widths")?
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| perr(format!("bad width {s}"))))
            .collect::<Result<_, _>>()?;
        let activations: Vec<Activation> = get("activations")?
            .split(',')
            .map(|s| {
                parse_activation(s.trim()).ok_or_else(|| perr(format!("bad activation {s}")))
            })
            .collect::<Result<_, _>>()?;
        let arch = NetworkArch::new(widths, activations)
            .map_err(|e| perr(format!("invalid arch: {e}")))?;
        let fp_str = get("dataset_fingerprint")?;
        let dataset_fingerprint =
            u64::from_str_radix(fp_str.trim_start_matches("0x"), 16)
                .map_err(|_| perr(format!("bad fingerprint {fp_str}")))?;
        let epochs: Vec<usize> = {
            let raw = get("epochs")?;
            if raw.is_empty() {
                Vec::new()
            } else {
                raw.split(',')
                    .map(|s| s.trim().parse().map_err(|_| perr(format!("bad epoch {s}"))))
                    .collect::<Result<_, _>>()?
            }
        };
        if epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(perr("epochs not strictly increasing".into()));
        }
        Ok(Manifest {
            run_id: get("run_id")?,
            seed: get("seed")?.parse().map_err(|_| perr("bad seed".into()))?,
            arch,
            dataset_fingerprint,
            epochs,
        })
    }
}

/// An on-disk trajectory: manifest plus one checkpoint file per epoch.
#[derive(Debug)]
pub struct TrajectoryStore {
    dir: PathBuf,
    manifest: Manifest,
}

impl TrajectoryStore {
    pub fn create(
        dir: &Path,
        run_id: &str,
        arch: &NetworkArch,
        seed: u64,
        dataset_fingerprint: u64,
    ) -> Result<Self, TrajError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let store = TrajectoryStore {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                run_id: run_id.to_string(),
                seed,
                arch: arch.clone(),
                dataset_fingerprint,
                epochs: Vec::new(),
            },
        };
        store.write_manifest()?;
        Ok(store)
    }

    pub fn open(dir: &Path) -> Result<Self, TrajError> {
        let mpath = dir.join("manifest.txt");
        let text = std::fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
        let manifest = Manifest::from_text(&text, &mpath)?;
        Ok(TrajectoryStore {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    /// Persist a whole training run in one call.
    pub fn save_run(
        dir: &Path,
        run: &TrainRun,
        seed: u64,
        dataset_fingerprint: u64,
    ) -> Result<Self, TrajError> {
        let first = run
            .checkpoints
            .first()
            .expect("a train run always has the epoch-0 checkpoint");
        let mut store =
            TrajectoryStore::create(dir, &first.run_id, &first.arch, seed, dataset_fingerprint)?;
        for ckpt in &run.checkpoints {
            store.append(ckpt)?;
        }
        Ok(store)
    }

    fn write_manifest(&self) -> Result<(), TrajError> {
        let mpath = self.dir.join("manifest.txt");
        std::fs::write(&mpath, self.manifest.to_text()).map_err(io_err(&mpath))
    }

    fn ckpt_path(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch_{epoch:05}.ckpt"))
    }

    pub fn append(&mut self, ckpt: &Checkpoint) -> Result<(), TrajError> {
        if ckpt.arch != self.manifest.arch {
            return Err(TrajError::ArchMismatch);
        }
        if let Some(&last) = self.manifest.epochs.last() {
            if ckpt.epoch <= last {
                return Err(TrajError::ManifestParse {
                    path: self.dir.display().to_string(),
                    msg: format!("epoch {} not after {last}", ckpt.epoch),
                });
            }
        }
        save_checkpoint_file(&self.ckpt_path(ckpt.epoch), &ckpt.params)?;
        self.manifest.epochs.push(ckpt.epoch);
        self.write_manifest()
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn epochs(&self) -> &[usize] {
        &self.manifest.epochs
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.manifest.arch
    }

    pub fn has_epoch(&self, epoch: usize) -> bool {
        self.manifest.epochs.binary_search(&epoch).is_ok()
    }

    /// Fail fast if the store was built from different data.
    pub fn check_fingerprint(&self, provided: u64) -> Result<(), TrajError> {
        if self.manifest.dataset_fingerprint != provided {
            return Err(TrajError::FingerprintMismatch {
                manifest: self.manifest.dataset_fingerprint,
                provided,
            });
        }
        Ok(())
    }

    pub fn load_epoch(&self, epoch: usize) -> Result<Checkpoint, TrajError> {
        if !self.has_epoch(epoch) {
            return Err(TrajError::MissingEpoch(epoch));
        }
        let params = load_checkpoint_file(&self.ckpt_path(epoch))?;
        let arch = &self.manifest.arch;
        for (layer, p) in params.iter().enumerate() {
            let (eo, ei) = (arch.layer_widths[layer + 1], arch.layer_widths[layer]);
            if p.out_width() != eo || p.in_width() != ei {
                return Err(TrajError::ShapeMismatch {
                    layer,
                    expected_out: eo,
                    expected_in: ei,
                    got_out: p.out_width(),
                    got_in: p.in_width(),
                });
            }
        }
        Ok(Checkpoint {
            epoch,
            params,
            arch: arch.clone(),
            run_id: self.manifest.run_id.clone(),
        })
    }
}

/// Concatenated parameter vector in canonical order: layer-major, weights
/// before bias, weights row-major.
fn flatten(params: &[LayerParams]) -> Vec<f64> {
    let mut out = Vec::new();
    for p in params {
        out.extend_from_slice(&p.weight.data);
        out.extend_from_slice(&p.bias);
    }
    out
}

fn same_arch(a: &Checkpoint, b: &Checkpoint) -> Result<(), TrajError> {
    if a.arch != b.arch {
        return Err(TrajError::ArchMismatch);
    }
    Ok(())
}

/// Relative parameter drift `||theta_b - theta_a||_2 / ||theta_b||_2` over
/// the concatenated parameters.
pub fn drift_relative_l2(a: &Checkpoint, b: &Checkpoint) -> Result<f64, TrajError> {
    same_arch(a, b)?;
    let fa = flatten(&a.params);
    let fb = flatten(&b.params);
    let diff = norm2(&sub(&fb, &fa));
    let denom = norm2(&fb);
    Ok(if denom == 0.0 { 0.0 } else { diff / denom })
}

/// Per-layer relative drift, same formula restricted to each layer.
pub fn drift_per_layer(a: &Checkpoint, b: &Checkpoint) -> Result<Vec<f64>, TrajError> {
    same_arch(a, b)?;
    a.params
        .iter()
        .zip(&b.params)
        .map(|(pa, pb)| {
            let fa = flatten(std::slice::from_ref(pa));
            let fb = flatten(std::slice::from_ref(pb));
            let diff = norm2(&sub(&fb, &fa));
            let denom = norm2(&fb);
            Ok(if denom == 0.0 { 0.0 } else { diff / denom })
        })
        .collect()
}

/// Mean latent displacement `||z_b(x) - z_a(x)||_2` at depth `d`.
#[derive(Debug, Clone)]
pub struct FeatureDrift {
    pub mean: f64,
    pub per_sample: Vec<f64>,
}

pub fn feature_drift(
    a: &Checkpoint,
    b: &Checkpoint,
    d: usize,
    samples: &[Vec<f64>],
) -> Result<FeatureDrift, TrajError> {
    same_arch(a, b)?;
    assert!(d >= 1 && d < a.arch.layer_count(), "split depth out of range");
    let mut per_sample = Vec::with_capacity(samples.len());
    for x in samples {
        let za = forward(&a.arch, &a.params, x, d)?;
        let zb = forward(&b.arch, &b.params, x, d)?;
        per_sample.push(norm2(&sub(zb.feature(d), za.feature(d))));
    }
    let mean = if per_sample.is_empty() {
        0.0
    } else {
        per_sample.iter().sum::<f64>() / per_sample.len() as f64
    };
    Ok(FeatureDrift { mean, per_sample })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, train, NetworkArch, TrainConfig};
    use crate::rng;
    use approx::assert_abs_diff_eq;

    fn ckpt(widths: &[usize], seed: u64, epoch: usize) -> Checkpoint {
        let arch = NetworkArch::relu(widths.to_vec()).unwrap();
        let mut rng = rng::named_stream(seed, "traj-test");
        let params = init_params(&arch, &mut rng);
        Checkpoint {
            epoch,
            params,
            arch,
            run_id: "test".into(),
        }
    }

    #[test]
    fn file_round_trip_bit_exact() {
        let c = ckpt(&[5, 4, 3], 1, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        save_checkpoint_file(&path, &c.params).unwrap();
        let back = load_checkpoint_file(&path).unwrap();
        assert_eq!(c.params, back);
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let c = ckpt(&[3, 2], 2, 0);
        let mut bytes = encode_params(&c.params);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint_file(&path),
            Err(TrajError::Checksum { .. })
        ));
    }

    #[test]
    fn wrong_arch_names_offending_layer() {
        let dir = tempfile::tempdir().unwrap();
        let arch = NetworkArch::relu(vec![4, 3, 2]).unwrap();
        let mut store = TrajectoryStore::create(dir.path(), "r", &arch, 0, 0).unwrap();
        let good = ckpt(&[4, 3, 2], 3, 0);
        store.append(&good).unwrap();
        // Overwrite the stored file with params of a different shape.
        let other = ckpt(&[4, 5, 2], 3, 0);
        save_checkpoint_file(&dir.path().join("epoch_00000.ckpt"), &other.params).unwrap();
        match store.load_epoch(0) {
            Err(TrajError::ShapeMismatch { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn store_round_trip_and_missing_epoch() {
        let ds = crate::dataio::synth_blobs(2, 20, 3, 0.2, 4).unwrap();
        let arch = NetworkArch::relu(vec![3, 5, 2]).unwrap();
        let run = train(&arch, &ds, &TrainConfig::new(0.1, 5, 3, 9), "run-a").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = TrajectoryStore::save_run(dir.path(), &run, 9, ds.fingerprint()).unwrap();
        assert_eq!(store.epochs(), &[0, 1, 2, 3]);

        let reopened = TrajectoryStore::open(dir.path()).unwrap();
        assert_eq!(reopened.manifest(), store.manifest());
        for t in 0..=3 {
            assert_eq!(reopened.load_epoch(t).unwrap().params, run.checkpoints[t].params);
        }
        assert!(matches!(
            reopened.load_epoch(4),
            Err(TrajError::MissingEpoch(4))
        ));
        assert!(reopened.check_fingerprint(ds.fingerprint()).is_ok());
        assert!(matches!(
            reopened.check_fingerprint(123),
            Err(TrajError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn drift_identical_is_zero() {
        let c = ckpt(&[4, 3, 2], 5, 0);
        assert_eq!(drift_relative_l2(&c, &c).unwrap(), 0.0);
        assert!(drift_per_layer(&c, &c).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn drift_doubling_is_half() {
        let a = ckpt(&[4, 3, 2], 6, 0);
        let mut b = a.clone();
        for p in &mut b.params {
            for v in &mut p.weight.data {
                *v *= 2.0;
            }
            for v in &mut p.bias {
                *v *= 2.0;
            }
        }
        assert_abs_diff_eq!(drift_relative_l2(&a, &b).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn drift_rejects_arch_mismatch() {
        let a = ckpt(&[4, 3, 2], 6, 0);
        let b = ckpt(&[4, 4, 2], 6, 0);
        assert!(matches!(
            drift_relative_l2(&a, &b),
            Err(TrajError::ArchMismatch)
        ));
    }

    #[test]
    fn feature_drift_zero_cases() {
        let a = ckpt(&[3, 4, 2], 7, 0);
        let fd = feature_drift(&a, &a, 1, &[vec![0.1, 0.2, 0.3]]).unwrap();
        assert_eq!(fd.mean, 0.0);
        // Zero input with zero biases: relu(W*0) = 0 for any weights.
        let b = ckpt(&[3, 4, 2], 99, 0);
        let fd = feature_drift(&a, &b, 1, &[vec![0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(fd.mean, 0.0);
    }
}
