//! Dataset ingestion and generation: MNIST-format IDX files, synthetic
//! Gaussian blobs, a procedural handwritten-digit generator, label-noise
//! injection, and parameterized input corruptions.

use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::io::Read;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic number in {path}: expected {expected:#010x}, got {got:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        got: u32,
    },
    #[error("truncated payload in {path}: expected {expected} bytes, got {got}")]
    Truncated {
        path: String,
        expected: usize,
        got: usize,
    },
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("inputs of width {width} do not reshape to {rows}x{cols}")]
    BadImageShape {
        width: usize,
        rows: usize,
        cols: usize,
    },
    #[error("csv parse error at line {line}: {msg}")]
    CsvParse { line: usize, msg: String },
}

/// A labeled classification dataset with inputs in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_count: usize,
        name: impl Into<String>,
    ) -> Result<Self, DataError> {
        if inputs.len() != labels.len() {
            return Err(DataError::CountMismatch {
                images: inputs.len(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(DataError::InvalidArgument(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if let Some(w) = inputs.first().map(Vec::len) {
            if inputs.iter().any(|x| x.len() != w) {
                return Err(DataError::InvalidArgument("ragged input widths".into()));
            }
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            class_count,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.inputs.first().map(Vec::len).unwrap_or(0)
    }

    /// FNV-1a over the raw little-endian bytes of inputs followed by labels.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.len() * (self.input_width() * 8 + 8));
        for x in &self.inputs {
            for v in x {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        for &l in &self.labels {
            bytes.extend_from_slice(&(l as u64).to_le_bytes());
        }
        rng::fnv1a(&bytes)
    }

    /// Indices of every sample with the given label.
    pub fn class_indices(&self, class_id: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class_id)
            .map(|(i, _)| i)
            .collect()
    }

    /// The first `n` samples (deterministic subset for desk-scale runs).
    pub fn take(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        LabeledDataset {
            inputs: self.inputs[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            class_count: self.class_count,
            name: format!("{}[..{n}]", self.name),
        }
    }

    /// Subset by explicit indices.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> LabeledDataset {
        LabeledDataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            name: name.into(),
        }
    }

    /// CSV with header `x0..x{d-1},label`.
    pub fn to_csv(&self) -> String {
        let d = self.input_width();
        let mut out = String::new();
        for j in 0..d {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("x{j}"));
        }
        out.push_str(",label\n");
        for (x, l) in self.inputs.iter().zip(&self.labels) {
            for v in x {
                out.push_str(&format!("{v:.16e},"));
            }
            out.push_str(&format!("{l}\n"));
        }
        out
    }

    pub fn from_csv(text: &str, class_count: usize, name: &str) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(DataError::CsvParse {
            line: 1,
            msg: "empty file".into(),
        })?;
        let cols = header.split(',').count();
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(DataError::CsvParse {
                    line: i + 1,
                    msg: format!("expected {cols} fields, got {}", fields.len()),
                });
            }
            let mut x = Vec::with_capacity(cols - 1);
            for f in &fields[..cols - 1] {
                x.push(f.parse::<f64>().map_err(|e| DataError::CsvParse {
                    line: i + 1,
                    msg: e.to_string(),
                })?);
            }
            labels.push(fields[cols - 1].trim().parse::<usize>().map_err(|e| {
                DataError::CsvParse {
                    line: i + 1,
                    msg: e.to_string(),
                }
            })?);
            inputs.push(x);
        }
        LabeledDataset::new(inputs, labels, class_count, name)
    }
}

/// A reference to the samples of one class.
#[derive(Debug, Clone)]
pub struct ClassSubset {
    pub class_id: usize,
    pub indices: Vec<usize>,
}

impl ClassSubset {
    pub fn of(dataset: &LabeledDataset, class_id: usize) -> Self {
        ClassSubset {
            class_id,
            indices: dataset.class_indices(class_id),
        }
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], off: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.display().to_string(),
            expected: off + 4,
            got: bytes.len(),
        })
}

/// Load an MNIST-format IDX image/label file pair. Pixels are scaled to
/// `[0,1]` by dividing by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, DataError> {
    let img_bytes = read_file(images_path)?;
    let magic = be_u32(&img_bytes, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: images_path.display().to_string(),
            expected: IDX_IMAGES_MAGIC,
            got: magic,
        });
    }
    let count = be_u32(&img_bytes, 4, images_path)? as usize;
    let rows = be_u32(&img_bytes, 8, images_path)? as usize;
    let cols = be_u32(&img_bytes, 12, images_path)? as usize;
    let expected = 16 + count * rows * cols;
    if img_bytes.len() < expected {
        return Err(DataError::Truncated {
            path: images_path.display().to_string(),
            expected,
            got: img_bytes.len(),
        });
    }

    let lbl_bytes = read_file(labels_path)?;
    let magic = be_u32(&lbl_bytes, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_path.display().to_string(),
            expected: IDX_LABELS_MAGIC,
            got: magic,
        });
    }
    let lbl_count = be_u32(&lbl_bytes, 4, labels_path)? as usize;
    if lbl_bytes.len() < 8 + lbl_count {
        return Err(DataError::Truncated {
            path: labels_path.display().to_string(),
            expected: 8 + lbl_count,
            got: lbl_bytes.len(),
        });
    }
    if count != lbl_count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: lbl_count,
        });
    }

    let width = rows * cols;
    let inputs: Vec<Vec<f64>> = (0..count)
        .map(|i| {
            img_bytes[16 + i * width..16 + (i + 1) * width]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect()
        })
        .collect();
    let labels: Vec<usize> = lbl_bytes[8..8 + count].iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().copied().max().map_or(1, |m| m + 1);
    LabeledDataset::new(inputs, labels, class_count.max(10), "idx")
}

/// Gaussian clusters with class means on a scaled simplex.
///
/// Class `i`'s mean sits at `0.2 + 0.6*e_i` in the first `class_count`
/// coordinates (requires `dim >= class_count`); points are drawn with
/// isotropic standard deviation `spread`.
pub fn synth_blobs(
    class_count: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    if class_count == 0 || per_class == 0 || dim == 0 {
        return Err(DataError::InvalidArgument(
            "class_count, per_class, and dim must be positive".into(),
        ));
    }
    if dim < class_count {
        return Err(DataError::InvalidArgument(format!(
            "simplex placement needs dim >= class_count ({dim} < {class_count})"
        )));
    }
    if spread < 0.0 {
        return Err(DataError::InvalidArgument("spread must be >= 0".into()));
    }
    let mut rng = rng::named_stream(seed, "blobs");
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut inputs = Vec::with_capacity(class_count * per_class);
    let mut labels = Vec::with_capacity(class_count * per_class);
    for class in 0..class_count {
        for _ in 0..per_class {
            let mut x = vec![0.2; dim];
            x[class] += 0.6;
            for v in &mut x {
                *v += spread * normal.sample(&mut rng);
            }
            inputs.push(x);
            labels.push(class);
        }
    }
    LabeledDataset::new(inputs, labels, class_count, format!("blobs-k{class_count}-d{dim}"))
}

// ---------------------------------------------------------------------------
// Procedural digits
// ---------------------------------------------------------------------------

const DIGIT_SIDE: usize = 28;

fn circle_points(cx: f64, cy: f64, rx: f64, ry: f64, n: usize) -> Vec<(f64, f64)> {
    (0..=n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Stroke skeletons for digits 0-9, as polylines in the unit square
/// (x right, y down).
fn digit_strokes(digit: usize) -> Vec<Vec<(f64, f64)>> {
    match digit {
        0 => vec![circle_points(0.5, 0.5, 0.22, 0.33, 16)],
        1 => vec![vec![(0.35, 0.28), (0.55, 0.12), (0.55, 0.88)]],
        2 => vec![vec![
            (0.27, 0.3),
            (0.32, 0.17),
            (0.5, 0.12),
            (0.68, 0.19),
            (0.71, 0.34),
            (0.27, 0.85),
            (0.75, 0.85),
        ]],
        3 => vec![vec![
            (0.28, 0.18),
            (0.55, 0.12),
            (0.7, 0.25),
            (0.55, 0.45),
            (0.72, 0.62),
            (0.62, 0.84),
            (0.28, 0.85),
        ]],
        4 => vec![
            vec![(0.6, 0.12), (0.25, 0.62), (0.78, 0.62)],
            vec![(0.63, 0.4), (0.63, 0.9)],
        ],
        5 => vec![vec![
            (0.72, 0.14),
            (0.3, 0.14),
            (0.28, 0.46),
            (0.55, 0.42),
            (0.72, 0.56),
            (0.66, 0.8),
            (0.3, 0.86),
        ]],
        6 => vec![
            vec![(0.64, 0.12), (0.38, 0.36), (0.3, 0.62)],
            circle_points(0.49, 0.68, 0.19, 0.19, 12),
        ],
        7 => vec![vec![(0.25, 0.15), (0.75, 0.15), (0.45, 0.88)]],
        8 => vec![
            circle_points(0.5, 0.3, 0.17, 0.17, 12),
            circle_points(0.5, 0.68, 0.2, 0.2, 12),
        ],
        9 => vec![
            circle_points(0.5, 0.32, 0.19, 0.19, 12),
            vec![(0.69, 0.34), (0.67, 0.6), (0.54, 0.88)],
        ],
        _ => unreachable!("digit out of range"),
    }
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - qx) * (px - qx) + (py - qy) * (py - qy)).sqrt()
}

/// Procedurally rendered handwritten-digit dataset: 28x28 grayscale images
/// of stroke-based digits 0-9 under random affine jitter (rotation, scale,
/// shear, translation) and stroke-width variation, plus light pixel noise.
///
/// A deterministic desk-scale stand-in for MNIST when the official IDX
/// files are not on disk: same input width (784), same class count, and
/// class structure carried by shape rather than arbitrary noise.
pub fn synth_digits(per_class: usize, seed: u64) -> Result<LabeledDataset, DataError> {
    if per_class == 0 {
        return Err(DataError::InvalidArgument("per_class must be positive".into()));
    }
    let mut rng = rng::named_stream(seed, "digits");
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let n = per_class * 10;
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    // Interleave classes so prefix subsets stay balanced.
    for _ in 0..per_class {
        for digit in 0..10 {
            let angle: f64 = rng.gen_range(-0.25..0.25);
            let scale_x = rng.gen_range(0.85..1.15);
            let scale_y = rng.gen_range(0.85..1.15);
            let shear = rng.gen_range(-0.15..0.15);
            let tx = rng.gen_range(-0.07..0.07);
            let ty = rng.gen_range(-0.07..0.07);
            let half_width = rng.gen_range(0.035..0.06);
            let (cos_a, sin_a) = (angle.cos(), angle.sin());

            let strokes: Vec<Vec<(f64, f64)>> = digit_strokes(digit)
                .into_iter()
                .map(|poly| {
                    poly.into_iter()
                        .map(|(x, y)| {
                            let (cx, cy) = (x - 0.5, y - 0.5);
                            let (sx, sy) = (scale_x * (cx + shear * cy), scale_y * cy);
                            let (rx, ry) = (cos_a * sx - sin_a * sy, sin_a * sx + cos_a * sy);
                            (rx + 0.5 + tx, ry + 0.5 + ty)
                        })
                        .collect()
                })
                .collect();

            let aa = 0.03; // anti-aliasing band, in unit-square units
            let mut img = Vec::with_capacity(DIGIT_SIDE * DIGIT_SIDE);
            for row in 0..DIGIT_SIDE {
                for col in 0..DIGIT_SIDE {
                    let px = (col as f64 + 0.5) / DIGIT_SIDE as f64;
                    let py = (row as f64 + 0.5) / DIGIT_SIDE as f64;
                    let mut dist = f64::INFINITY;
                    for poly in &strokes {
                        for seg in poly.windows(2) {
                            dist = dist.min(segment_distance(px, py, seg[0], seg[1]));
                        }
                    }
                    let ink = 1.0 - ((dist - half_width) / aa).clamp(0.0, 1.0);
                    let noisy = ink + 0.02 * normal.sample(&mut rng);
                    img.push(noisy.clamp(0.0, 1.0));
                }
            }
            inputs.push(img);
            labels.push(digit);
        }
    }
    LabeledDataset::new(inputs, labels, 10, "synth-digits")
}

// ---------------------------------------------------------------------------
// Corruptions
// ---------------------------------------------------------------------------

/// Per-pixel Gaussian noise sigma for severities 1..=5.
pub const NOISE_SIGMA: [f64; 5] = [0.04, 0.08, 0.12, 0.18, 0.26];
/// Gaussian blur kernel sigma in pixels for severities 1..=5.
pub const BLUR_SIGMA: [f64; 5] = [0.4, 0.6, 0.9, 1.3, 1.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    GaussianNoise,
    GaussianBlur,
}

#[derive(Debug, Clone, Copy)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// Severity 1..=5.
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self, DataError> {
        if !(1..=5).contains(&severity) {
            return Err(DataError::InvalidArgument(format!(
                "severity {severity} outside 1..=5"
            )));
        }
        Ok(CorruptionSpec {
            kind,
            severity,
            seed,
        })
    }

    pub fn sigma(&self) -> f64 {
        match self.kind {
            CorruptionKind::GaussianNoise => NOISE_SIGMA[self.severity as usize - 1],
            CorruptionKind::GaussianBlur => BLUR_SIGMA[self.severity as usize - 1],
        }
    }
}

/// Relabel exactly `round(fraction*N)` samples, chosen without replacement,
/// with a uniformly random *different* label. Selection and draws are
/// seed-deterministic; the original dataset is untouched.
pub fn corrupt_labels(
    dataset: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DataError::InvalidArgument(format!(
            "fraction {fraction} outside [0,1]"
        )));
    }
    let n = dataset.len();
    let k = (fraction * n as f64).round() as usize;
    let mut out = dataset.clone();
    out.name = format!("{}+labelnoise{fraction}", dataset.name);
    if k == 0 {
        return Ok(out);
    }
    if dataset.class_count < 2 {
        return Err(DataError::InvalidArgument(
            "cannot corrupt labels with a single class".into(),
        ));
    }
    let mut rng = rng::named_stream(seed, "label-noise");
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    for &i in indices.iter().take(k) {
        // Draw from the other class_count-1 classes so every corrupted
        // sample really changes label.
        let offset = rng.gen_range(1..dataset.class_count);
        out.labels[i] = (dataset.labels[i] + offset) % dataset.class_count;
    }
    Ok(out)
}

/// Normalized 1-D Gaussian kernel with radius `ceil(3*sigma)`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64 * i as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn blur_image(img: &[f64], rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    // Separable convolution with clamped-edge padding.
    let mut horiz = vec![0.0; img.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let cc = (c as i64 + ki as i64 - radius).clamp(0, cols as i64 - 1) as usize;
                acc += kv * img[r * cols + cc];
            }
            horiz[r * cols + c] = acc;
        }
    }
    let mut out = vec![0.0; img.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let rr = (r as i64 + ki as i64 - radius).clamp(0, rows as i64 - 1) as usize;
                acc += kv * horiz[rr * cols + c];
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

/// Apply an input corruption; outputs stay in `[0,1]`.
pub fn corrupt_inputs(
    dataset: &LabeledDataset,
    spec: &CorruptionSpec,
    image_shape: (usize, usize),
) -> Result<LabeledDataset, DataError> {
    let (rows, cols) = image_shape;
    let width = dataset.input_width();
    if width != rows * cols {
        return Err(DataError::BadImageShape { width, rows, cols });
    }
    let sigma = spec.sigma();
    let mut out = dataset.clone();
    out.name = format!("{}+{:?}s{}", dataset.name, spec.kind, spec.severity);
    match spec.kind {
        CorruptionKind::GaussianNoise => {
            let mut rng = rng::stream(spec.seed, rng::fnv1a(b"pixel-noise"));
            let normal = Normal::new(0.0, sigma).expect("valid normal");
            for x in &mut out.inputs {
                for v in x.iter_mut() {
                    *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
        }
        CorruptionKind::GaussianBlur => {
            for x in &mut out.inputs {
                let blurred = blur_image(x, rows, cols, sigma);
                for (v, b) in x.iter_mut().zip(blurred) {
                    *v = b.clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn idx_pair(images: &[Vec<u8>], labels: &[u8], rows: u32, cols: u32) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&(images.len() as u32).to_be_bytes());
        img.extend_from_slice(&rows.to_be_bytes());
        img.extend_from_slice(&cols.to_be_bytes());
        for im in images {
            img.extend_from_slice(im);
        }
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lbl.extend_from_slice(labels);
        (img, lbl)
    }

    fn write_pair(dir: &Path, img: &[u8], lbl: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("images-idx3-ubyte");
        let lp = dir.join("labels-idx1-ubyte");
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lbl).unwrap();
        (ip, lp)
    }

    #[test]
    fn load_idx_small_pair() {
        let dir = tempfile::tempdir().unwrap();
        let images: Vec<Vec<u8>> = (0..3).map(|i| vec![i as u8 * 100; 784]).collect();
        let (img, lbl) = idx_pair(&images, &[0, 1, 2], 28, 28);
        let (ip, lp) = write_pair(dir.path(), &img, &lbl);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.input_width(), 784);
        assert_abs_diff_eq!(ds.inputs[1][0], 100.0 / 255.0, epsilon = 1e-15);
        assert_eq!(ds.labels, vec![0, 1, 2]);
    }

    #[test]
    fn load_idx_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (mut img, lbl) = idx_pair(&[vec![0; 4]], &[0], 2, 2);
        img[3] = 0x99;
        let (ip, lp) = write_pair(dir.path(), &img, &lbl);
        assert!(matches!(load_idx(&ip, &lp), Err(DataError::BadMagic { .. })));
    }

    #[test]
    fn load_idx_rejects_truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = idx_pair(&[vec![0; 4], vec![1; 4]], &[0, 1], 2, 2);
        let (ip, lp) = write_pair(dir.path(), &img[..img.len() - 2], &lbl);
        assert!(matches!(load_idx(&ip, &lp), Err(DataError::Truncated { .. })));

        let (img, lbl) = idx_pair(&[vec![0; 4], vec![1; 4]], &[0], 2, 2);
        let (ip, lp) = write_pair(dir.path(), &img, &lbl);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(DataError::CountMismatch { .. })
        ));
    }

    #[test]
    fn blobs_zero_spread_collapses_to_means() {
        let ds = synth_blobs(3, 5, 4, 0.0, 1).unwrap();
        for (x, &l) in ds.inputs.iter().zip(&ds.labels) {
            let mut mean = vec![0.2; 4];
            mean[l] += 0.6;
            assert_eq!(x, &mean);
        }
    }

    #[test]
    fn blobs_deterministic_and_linearly_separable() {
        let a = synth_blobs(2, 100, 2, 0.1, 3).unwrap();
        let b = synth_blobs(2, 100, 2, 0.1, 3).unwrap();
        assert_eq!(a, b);
        // Least-squares oracle: fit w on (x, y in {-1, +1}) in closed form
        // for 2-D inputs plus bias, check accuracy > 99%.
        let n = a.len() as f64;
        // Build normal equations for [x0, x1, 1] -> y.
        let mut xtx = [[0.0f64; 3]; 3];
        let mut xty = [0.0f64; 3];
        for (x, &l) in a.inputs.iter().zip(&a.labels) {
            let row = [x[0], x[1], 1.0];
            let y = if l == 0 { -1.0 } else { 1.0 };
            for i in 0..3 {
                for j in 0..3 {
                    xtx[i][j] += row[i] * row[j] / n;
                }
                xty[i] += row[i] * y / n;
            }
        }
        // Solve 3x3 by Gaussian elimination.
        let mut m = [[0.0f64; 4]; 3];
        for i in 0..3 {
            m[i][..3].copy_from_slice(&xtx[i]);
            m[i][3] = xty[i];
        }
        for col in 0..3 {
            let pivot = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
            m.swap(col, pivot);
            for r in 0..3 {
                if r != col {
                    let f = m[r][col] / m[col][col];
                    for c in col..4 {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
        let w = [m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]];
        let correct = a
            .inputs
            .iter()
            .zip(&a.labels)
            .filter(|(x, &l)| {
                let score = w[0] * x[0] + w[1] * x[1] + w[2];
                (score > 0.0) == (l == 1)
            })
            .count();
        assert!(correct as f64 / n > 0.99, "lsq accuracy {}", correct as f64 / n);
    }

    #[test]
    fn label_noise_zero_fraction_is_identity() {
        let ds = synth_blobs(3, 10, 3, 0.1, 2).unwrap();
        assert_eq!(corrupt_labels(&ds, 0.0, 9).unwrap().labels, ds.labels);
    }

    #[test]
    fn label_noise_full_fraction_two_classes_flips_all() {
        let ds = synth_blobs(2, 50, 2, 0.1, 2).unwrap();
        let noisy = corrupt_labels(&ds, 1.0, 9).unwrap();
        for (a, b) in ds.labels.iter().zip(&noisy.labels) {
            assert_eq!(*b, 1 - *a);
        }
    }

    #[test]
    fn label_noise_exact_count_and_never_original() {
        let ds = synth_blobs(5, 200, 5, 0.1, 2).unwrap();
        let noisy = corrupt_labels(&ds, 0.4, 11).unwrap();
        let changed = ds
            .labels
            .iter()
            .zip(&noisy.labels)
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, (0.4 * ds.len() as f64).round() as usize);
    }

    #[test]
    fn blur_constant_image_unchanged() {
        let img = vec![vec![0.37; 16]];
        let ds = LabeledDataset::new(img, vec![0], 1, "const").unwrap();
        let spec = CorruptionSpec::new(CorruptionKind::GaussianBlur, 5, 0).unwrap();
        let out = corrupt_inputs(&ds, &spec, (4, 4)).unwrap();
        for v in &out.inputs[0] {
            assert_abs_diff_eq!(*v, 0.37, epsilon = 1e-12);
        }
    }

    #[test]
    fn blur_kernel_normalized() {
        for sigma in [0.4, 0.9, 1.8, 3.0] {
            let k = gaussian_kernel(sigma);
            assert_abs_diff_eq!(k.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn noise_severity5_std_near_table_value() {
        let ds = LabeledDataset::new(vec![vec![0.5; 784]; 50], vec![0; 50], 1, "grey").unwrap();
        let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, 5, 123).unwrap();
        let out = corrupt_inputs(&ds, &spec, (28, 28)).unwrap();
        let all: Vec<f64> = out.inputs.iter().flatten().cloned().collect();
        let mean: f64 = all.iter().sum::<f64>() / all.len() as f64;
        let std = (all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (all.len() - 1) as f64)
            .sqrt();
        assert!((std - 0.26).abs() / 0.26 < 0.1, "std {std}");
        assert!(all.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn corruption_rejects_bad_shape() {
        let ds = LabeledDataset::new(vec![vec![0.5; 10]], vec![0], 1, "x").unwrap();
        let spec = CorruptionSpec::new(CorruptionKind::GaussianBlur, 1, 0).unwrap();
        assert!(matches!(
            corrupt_inputs(&ds, &spec, (4, 4)),
            Err(DataError::BadImageShape { .. })
        ));
    }

    #[test]
    fn severity_out_of_range_rejected() {
        assert!(CorruptionSpec::new(CorruptionKind::GaussianNoise, 0, 0).is_err());
        assert!(CorruptionSpec::new(CorruptionKind::GaussianNoise, 6, 0).is_err());
    }

    #[test]
    fn digits_deterministic_and_shaped() {
        let a = synth_digits(3, 5).unwrap();
        let b = synth_digits(3, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert_eq!(a.input_width(), 784);
        assert_eq!(a.class_count, 10);
        assert!(a.inputs.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        // Prefix subsets stay class-balanced.
        let prefix = a.take(10);
        for c in 0..10 {
            assert_eq!(prefix.class_indices(c).len(), 1);
        }
    }

    #[test]
    fn csv_round_trip() {
        let ds = synth_blobs(2, 5, 3, 0.1, 7).unwrap();
        let csv = ds.to_csv();
        let back = LabeledDataset::from_csv(&csv, 2, &ds.name).unwrap();
        assert_eq!(ds.inputs, back.inputs);
        assert_eq!(ds.labels, back.labels);
    }
}
