//! Feature-memory diagnostics: finite feature clouds over epoch windows,
//! particle- and dataset-level memory predicates, per-class generalization
//! gaps, and the numeric check that the gap is controlled by a
//! total-variation term plus the memory slack.

use crate::composite::CompositeError;
use crate::dataio::LabeledDataset;
use crate::nn::{argmax, forward, forward_partial, NnError};
use crate::stats::{self, Histogram2, StatError};
use crate::trajectory::{Checkpoint, SplitSpec, TrajError, TrajectoryStore};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no samples of class {0}")]
    EmptyClass(usize),
    #[error("delta must be in [0,1], got {0}")]
    InvalidDelta(f64),
    #[error("q must be > 1, got {0}")]
    InvalidQ(f64),
    #[error("latent width {width} too wide to bin (max 3); project first")]
    LatentTooWide { width: usize },
    #[error("binning failed: {0}")]
    Binning(String),
}

/// Which epochs around the anchor t' form the feature window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowMode {
    /// [t' - dt, t' + dt]; matches the uniform-window feature measure.
    #[default]
    TwoSided,
    /// [t' - dt, t']; the variant used when t' is the final epoch.
    OneSided,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryParams {
    /// Allowed disagreement fraction in the memory predicates.
    pub delta: f64,
    /// Window half-width dt (epochs).
    pub window: usize,
    /// Anchor epoch t'.
    pub anchor: usize,
    pub split: SplitSpec,
    pub mode: WindowMode,
}

impl MemoryParams {
    pub fn validate(&self) -> Result<(), MemoryError> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(MemoryError::InvalidDelta(self.delta));
        }
        Ok(())
    }

    /// Window epochs in increasing order, plus a flag when the lower end
    /// was clipped at epoch 0.
    pub fn window_epochs(&self) -> (Vec<usize>, bool) {
        let lo = self.anchor.saturating_sub(self.window);
        let clipped = self.window > self.anchor;
        let hi = match self.mode {
            WindowMode::TwoSided => self.anchor + self.window,
            WindowMode::OneSided => self.anchor,
        };
        ((lo..=hi).collect(), clipped)
    }
}

/// The latent vectors one sample produces across the epoch window — the
/// finite feature measure, enumerated exactly rather than sampled.
#[derive(Debug, Clone)]
pub struct FeatureCloud {
    pub epochs: Vec<usize>,
    pub latents: Vec<Vec<f64>>,
    /// z_{t'}(x), the anchor feature.
    pub anchor_latent: Vec<f64>,
    /// True when the window hit epoch 0 and was clipped.
    pub clipped: bool,
}

pub fn feature_cloud(
    x: &[f64],
    params: &MemoryParams,
    store: &TrajectoryStore,
) -> Result<FeatureCloud, MemoryError> {
    params.validate()?;
    let (epochs, clipped) = params.window_epochs();
    let d = params.split.depth();
    let mut latents = Vec::with_capacity(epochs.len());
    let mut anchor_latent = Vec::new();
    for &t in &epochs {
        let ckpt = store.load_epoch(t)?;
        let z = forward_partial(&ckpt.arch, &ckpt.params, x, 0, d)?;
        if t == params.anchor {
            anchor_latent = z.clone();
        }
        latents.push(z);
    }
    Ok(FeatureCloud {
        epochs,
        latents,
        anchor_latent,
        clipped,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ParticleMemory {
    /// Fraction of the cloud the anchor-epoch head maps to the anchor
    /// prediction.
    pub score: f64,
    /// score >= 1 - delta.
    pub holds: bool,
}

/// Score one sample's cloud against the head of the anchor checkpoint.
pub fn particle_memory(
    cloud: &FeatureCloud,
    anchor: &Checkpoint,
    split: SplitSpec,
    delta: f64,
) -> Result<ParticleMemory, MemoryError> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(MemoryError::InvalidDelta(delta));
    }
    let d = split.depth();
    let n_layers = anchor.arch.layer_count();
    let head = |z: &[f64]| -> Result<usize, MemoryError> {
        let logits = forward_partial(&anchor.arch, &anchor.params, z, d, n_layers)?;
        Ok(argmax(&logits))
    };
    let reference = head(&cloud.anchor_latent)?;
    let mut agree = 0usize;
    for z in &cloud.latents {
        if head(z)? == reference {
            agree += 1;
        }
    }
    let score = agree as f64 / cloud.latents.len() as f64;
    Ok(ParticleMemory {
        score,
        holds: score + 1e-12 >= 1.0 - delta,
    })
}

#[derive(Debug, Clone)]
pub struct EmpiricalMemory {
    /// Mean particle score over the dataset.
    pub score: f64,
    pub holds: bool,
    pub per_sample: Vec<f64>,
}

/// Dataset-level memory: mean particle score over all samples, computed
/// with one checkpoint load and one shallow pass per window epoch.
pub fn empirical_memory(
    dataset: &LabeledDataset,
    params: &MemoryParams,
    store: &TrajectoryStore,
) -> Result<EmpiricalMemory, MemoryError> {
    params.validate()?;
    if dataset.is_empty() {
        return Err(MemoryError::EmptyDataset);
    }
    let (epochs, _) = params.window_epochs();
    let d = params.split.depth();
    let anchor = store.load_epoch(params.anchor)?;
    let n_layers = anchor.arch.layer_count();
    let head_pred = |z: &[f64]| -> Result<usize, MemoryError> {
        let logits = forward_partial(&anchor.arch, &anchor.params, z, d, n_layers)?;
        Ok(argmax(&logits))
    };
    let mut reference = Vec::with_capacity(dataset.len());
    for x in &dataset.inputs {
        let z = forward_partial(&anchor.arch, &anchor.params, x, 0, d)?;
        reference.push(head_pred(&z)?);
    }
    let mut agree = vec![0usize; dataset.len()];
    for &t in &epochs {
        let ckpt = store.load_epoch(t)?;
        for (i, x) in dataset.inputs.iter().enumerate() {
            let z = forward_partial(&ckpt.arch, &ckpt.params, x, 0, d)?;
            if head_pred(&z)? == reference[i] {
                agree[i] += 1;
            }
        }
    }
    let per_sample: Vec<f64> = agree
        .iter()
        .map(|&a| a as f64 / epochs.len() as f64)
        .collect();
    let score = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(EmpiricalMemory {
        score,
        holds: score + 1e-12 >= 1.0 - params.delta,
        per_sample,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct Theorem2Entry {
    pub q: f64,
    /// fraction{score >= 1 - q*delta}.
    pub fraction: f64,
    /// 1 - 1/q, which the fraction must strictly exceed.
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct Theorem2Report {
    /// False when the mean score falls below 1 - delta, making the
    /// premise vacuous; entries are still reported for inspection.
    pub applicable: bool,
    pub mean_score: f64,
    pub entries: Vec<Theorem2Entry>,
}

/// Markov-style concentration check: if the mean score is at least
/// 1 - delta, then for every q > 1 more than 1 - 1/q of the samples have
/// score at least 1 - q*delta.
pub fn theorem2_check(
    scores: &[f64],
    delta: f64,
    qs: &[f64],
) -> Result<Theorem2Report, MemoryError> {
    if scores.is_empty() {
        return Err(MemoryError::EmptyDataset);
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(MemoryError::InvalidDelta(delta));
    }
    for &q in qs {
        if q <= 1.0 {
            return Err(MemoryError::InvalidQ(q));
        }
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let applicable = mean + 1e-12 >= 1.0 - delta;
    let entries = qs
        .iter()
        .map(|&q| {
            let cutoff = 1.0 - q * delta;
            let fraction = scores
                .iter()
                .filter(|&&s| s + 1e-12 >= cutoff)
                .count() as f64
                / scores.len() as f64;
            let threshold = 1.0 - 1.0 / q;
            Theorem2Entry {
                q,
                fraction,
                threshold,
                pass: fraction > threshold,
            }
        })
        .collect();
    Ok(Theorem2Report {
        applicable,
        mean_score: mean,
        entries,
    })
}

/// Class-i error rates of one checkpoint on two datasets and their gap.
#[derive(Debug, Clone, Copy)]
pub struct ClassGap {
    pub class: usize,
    pub train_error: f64,
    pub heldout_error: f64,
    pub gap: f64,
}

fn class_error(
    ckpt: &Checkpoint,
    dataset: &LabeledDataset,
    class: usize,
) -> Result<f64, MemoryError> {
    let idx = dataset.class_indices(class);
    if idx.is_empty() {
        return Err(MemoryError::EmptyClass(class));
    }
    let mut wrong = 0usize;
    for &i in &idx {
        let t = forward(&ckpt.arch, &ckpt.params, &dataset.inputs[i], ckpt.arch.layer_count())?;
        if t.prediction != class {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / idx.len() as f64)
}

pub fn class_gap(
    ckpt: &Checkpoint,
    train: &LabeledDataset,
    heldout: &LabeledDataset,
    class: usize,
) -> Result<ClassGap, MemoryError> {
    let train_error = class_error(ckpt, train, class)?;
    let heldout_error = class_error(ckpt, heldout, class)?;
    Ok(ClassGap {
        class,
        train_error,
        heldout_error,
        gap: (train_error - heldout_error).abs(),
    })
}

/// Latent vectors of every class-i training sample at every window epoch.
#[derive(Debug, Clone)]
pub struct AugmentedClassDistribution {
    pub class: usize,
    pub latents: Vec<Vec<f64>>,
    pub n_samples: usize,
    pub window_len: usize,
}

pub fn augmented_class_distribution(
    train: &LabeledDataset,
    class: usize,
    params: &MemoryParams,
    store: &TrajectoryStore,
) -> Result<AugmentedClassDistribution, MemoryError> {
    params.validate()?;
    let idx = train.class_indices(class);
    if idx.is_empty() {
        return Err(MemoryError::EmptyClass(class));
    }
    let (epochs, _) = params.window_epochs();
    let d = params.split.depth();
    let mut latents = Vec::with_capacity(idx.len() * epochs.len());
    for &t in &epochs {
        let ckpt = store.load_epoch(t)?;
        for &i in &idx {
            latents.push(forward_partial(&ckpt.arch, &ckpt.params, &train.inputs[i], 0, d)?);
        }
    }
    Ok(AugmentedClassDistribution {
        class,
        latents,
        n_samples: idx.len(),
        window_len: epochs.len(),
    })
}

/// Outcome of the gap-vs-bound comparison for one class.
#[derive(Debug, Clone)]
pub struct GapReport {
    pub class: usize,
    pub train_error: f64,
    pub heldout_error: f64,
    pub gap: f64,
    /// Histogram TV between the pooled window features (train) and the
    /// anchor-epoch features of held-out data, which stands in for the
    /// unobservable true class distribution.
    pub tv: f64,
    /// 1 - empirical memory score on the class-i training subset: the
    /// tightest slack at which the memory premise holds.
    pub delta: f64,
    /// Finite-sample histogram margin sqrt(b_total / min(n_pool, n_held));
    /// a heuristic allowance, not a guarantee.
    pub eps_est: f64,
    /// tv + delta.
    pub bound: f64,
    /// gap <= bound + eps_est.
    pub holds: bool,
    pub bins_per_axis: usize,
    pub pool_size: usize,
    pub heldout_size: usize,
}

/// Histogram two point sets on shared equal-width bins; returns mass
/// vectors and the per-axis bin count used.
pub fn shared_histogram(
    pool: &[Vec<f64>],
    pushforward: &[Vec<f64>],
    bins_per_axis: Option<usize>,
) -> Result<(Histogram2, usize), MemoryError> {
    let dim = pool[0].len();
    if dim > 3 {
        return Err(MemoryError::LatentTooWide { width: dim });
    }
    let min_n = pool.len().min(pushforward.len());
    let b = match bins_per_axis {
        Some(b) if b >= 1 => b,
        Some(b) => return Err(MemoryError::Binning(format!("bins_per_axis = {b}"))),
        // Expected count >= 5 per bin under the smaller sample.
        None => (((min_n as f64 / 5.0).powf(1.0 / dim as f64)).floor() as usize).clamp(1, 20),
    };
    let b_total = b.pow(dim as u32);
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for z in pool.iter().chain(pushforward) {
        for (k, &v) in z.iter().enumerate() {
            if !v.is_finite() {
                return Err(MemoryError::Binning("non-finite latent".into()));
            }
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let width: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &h)| {
            let w = (h - l).max(1e-12);
            // Slight padding so the maximum lands inside the last bin.
            w * (1.0 + 1e-9) / b as f64
        })
        .collect();
    let bin_of = |z: &[f64]| -> usize {
        let mut idx = 0usize;
        for k in 0..dim {
            let cell = (((z[k] - lo[k]) / width[k]) as usize).min(b - 1);
            idx = idx * b + cell;
        }
        idx
    };
    let mass = |points: &[Vec<f64>]| -> Vec<f64> {
        let mut m = vec![0.0; b_total];
        for z in points {
            m[bin_of(z)] += 1.0;
        }
        let n = points.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    };
    let edges: Vec<f64> = lo.iter().chain(hi.iter()).copied().collect();
    let h = Histogram2::new(edges, mass(pool), mass(pushforward))?;
    Ok((h, b))
}

/// Compare the class-i generalization gap against the TV + memory-slack
/// bound, with an explicit finite-sample margin.
pub fn bound_check(
    train: &LabeledDataset,
    heldout: &LabeledDataset,
    class: usize,
    params: &MemoryParams,
    store: &TrajectoryStore,
    bins_per_axis: Option<usize>,
) -> Result<GapReport, MemoryError> {
    params.validate()?;
    let anchor = store.load_epoch(params.anchor)?;
    let width = params.split.latent_width(&anchor.arch);
    if width > 3 {
        return Err(MemoryError::LatentTooWide { width });
    }
    let held_idx = heldout.class_indices(class);
    if held_idx.is_empty() {
        return Err(MemoryError::EmptyClass(class));
    }
    let omega = augmented_class_distribution(train, class, params, store)?;
    let d = params.split.depth();
    let mut pushforward = Vec::with_capacity(held_idx.len());
    for &i in &held_idx {
        pushforward.push(forward_partial(
            &anchor.arch,
            &anchor.params,
            &heldout.inputs[i],
            0,
            d,
        )?);
    }
    let (hist, b) = shared_histogram(&omega.latents, &pushforward, bins_per_axis)?;
    let tv = stats::tv_distance(&hist);

    let train_class = train.select(&train.class_indices(class), format!("{}:c{}", train.name, class));
    let mem = empirical_memory(&train_class, params, store)?;
    let delta = 1.0 - mem.score;

    let gaps = class_gap(&anchor, train, heldout, class)?;
    let eps_est =
        (b.pow(width as u32) as f64 / omega.latents.len().min(pushforward.len()) as f64).sqrt();
    let bound = tv + delta;
    Ok(GapReport {
        class,
        train_error: gaps.train_error,
        heldout_error: gaps.heldout_error,
        gap: gaps.gap,
        tv,
        delta,
        eps_est,
        bound,
        holds: gaps.gap <= bound + eps_est,
        bins_per_axis: b,
        pool_size: omega.latents.len(),
        heldout_size: pushforward.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth_blobs;
    use crate::nn::{train, FreezeBelow, NetworkArch, TrainConfig};
    use crate::trajectory::{feature_drift, TrajectoryStore};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use tempfile::tempdir;

    fn small_store(
        dir: &std::path::Path,
        freeze: Option<FreezeBelow>,
        seed: u64,
    ) -> (TrajectoryStore, LabeledDataset, NetworkArch) {
        let ds = synth_blobs(2, 30, 3, 0.12, seed).unwrap();
        let arch = NetworkArch::relu(vec![3, 4, 2]).unwrap();
        let mut config = TrainConfig::new(0.05, 10, 12, seed);
        config.freeze_below = freeze;
        let run = train(&arch, &ds, &config, "mem-test").unwrap();
        let store = TrajectoryStore::save_run(dir, &run, seed, ds.fingerprint()).unwrap();
        (store, ds, arch)
    }

    fn params(arch: &NetworkArch, anchor: usize, window: usize) -> MemoryParams {
        MemoryParams {
            delta: 0.1,
            window,
            anchor,
            split: SplitSpec::new(1, arch).unwrap(),
            mode: WindowMode::TwoSided,
        }
    }

    #[test]
    fn cloud_zero_window_is_anchor_only() {
        let dir = tempdir().unwrap();
        let (store, ds, arch) = small_store(dir.path(), None, 1);
        let p = params(&arch, 6, 0);
        let cloud = feature_cloud(&ds.inputs[0], &p, &store).unwrap();
        assert_eq!(cloud.epochs, vec![6]);
        assert_eq!(cloud.latents.len(), 1);
        assert_eq!(cloud.latents[0], cloud.anchor_latent);
        assert!(!cloud.clipped);
    }

    #[test]
    fn cloud_window_size_and_clipping() {
        let dir = tempdir().unwrap();
        let (store, ds, arch) = small_store(dir.path(), None, 2);
        let p = params(&arch, 5, 3);
        let cloud = feature_cloud(&ds.inputs[1], &p, &store).unwrap();
        assert_eq!(cloud.latents.len(), 7);
        assert!(!cloud.clipped);

        let clipped = params(&arch, 2, 3);
        let cloud = feature_cloud(&ds.inputs[1], &clipped, &store).unwrap();
        assert_eq!(cloud.epochs, (0..=5).collect::<Vec<_>>());
        assert!(cloud.clipped);

        let one_sided = MemoryParams {
            mode: WindowMode::OneSided,
            ..params(&arch, 8, 2)
        };
        let cloud = feature_cloud(&ds.inputs[1], &one_sided, &store).unwrap();
        assert_eq!(cloud.epochs, vec![6, 7, 8]);
    }

    #[test]
    fn frozen_shallow_cloud_is_constant_and_memory_is_perfect() {
        let dir = tempdir().unwrap();
        let (store, ds, arch) = small_store(
            dir.path(),
            Some(FreezeBelow { depth: 1, from_epoch: 0 }),
            3,
        );
        let p = params(&arch, 8, 4);
        let cloud = feature_cloud(&ds.inputs[0], &p, &store).unwrap();
        for z in &cloud.latents {
            assert_eq!(z, &cloud.anchor_latent);
        }
        let anchor = store.load_epoch(8).unwrap();
        let pm = particle_memory(&cloud, &anchor, p.split, 0.0).unwrap();
        assert_eq!(pm.score, 1.0);
        assert!(pm.holds);
        let em = empirical_memory(&ds, &p, &store).unwrap();
        assert_eq!(em.score, 1.0);
        assert!(em.per_sample.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn cloud_matches_feature_drift_inputs() {
        let dir = tempdir().unwrap();
        let (store, ds, arch) = small_store(dir.path(), None, 4);
        let p = params(&arch, 6, 1);
        let cloud = feature_cloud(&ds.inputs[2], &p, &store).unwrap();
        // feature_drift between epochs 5 and 6 sees the same vectors, so a
        // zero drift would force equal cloud entries and vice versa.
        let a = store.load_epoch(5).unwrap();
        let b = store.load_epoch(6).unwrap();
        let fd = feature_drift(&a, &b, p.split.depth(), &[ds.inputs[2].clone()]).unwrap();
        let diff: f64 = cloud.latents[0]
            .iter()
            .zip(&cloud.latents[1])
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt();
        assert_abs_diff_eq!(fd.per_sample[0], diff, epsilon = 1e-12);
    }

    #[test]
    fn particle_score_matches_brute_force() {
        let dir = tempdir().unwrap();
        let (store, ds, arch) = small_store(dir.path(), None, 5);
        let p = params(&arch, 6, 5);
        let anchor = store.load_epoch(6).unwrap();
        let n = arch.layer_count();
        for x in ds.inputs.iter().take(8) {
            let cloud = feature_cloud(x, &p, &store).unwrap();
            let pm = particle_memory(&cloud, &anchor, p.split, 0.2).unwrap();
            // Brute force: recompute every head decision independently.
            let head = |z: &[f64]| {
                argmax(&forward_partial(&anchor.arch, &anchor.params, z, 1, n).unwrap())
            };
            let reference = head(&cloud.anchor_latent);
            let agree = cloud.latents.iter().filter(|z| head(z) == reference).count();
            assert_abs_diff_eq!(
                pm.score,
                agree as f64 / cloud.latents.len() as f64,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn empirical_equals_mean_of_particles() {
        let dir = tempdir().unwrap();
        let (store, ds, arch) = small_store(dir.path(), None, 6);
        let p = params(&arch, 7, 3);
        let em = empirical_memory(&ds, &p, &store).unwrap();
        let anchor = store.load_epoch(7).unwrap();
        let mut total = 0.0;
        for x in &ds.inputs {
            let cloud = feature_cloud(x, &p, &store).unwrap();
            total += particle_memory(&cloud, &anchor, p.split, p.delta).unwrap().score;
        }
        assert_abs_diff_eq!(em.score, total / ds.len() as f64, epsilon = 1e-12);
        // If every per-sample score clears the threshold, so does the mean.
        if em.per_sample.iter().all(|&s| s + 1e-12 >= 1.0 - p.delta) {
            assert!(em.holds);
        }
    }

    #[test]
    fn theorem2_hand_example() {
        let r = theorem2_check(&[1.0, 1.0, 1.0, 0.9], 0.025, &[2.0]).unwrap();
        assert!(r.applicable);
        assert_abs_diff_eq!(r.entries[0].fraction, 0.75, epsilon = 1e-15);
        assert!(r.entries[0].pass);

        let all_one = theorem2_check(&[1.0; 7], 0.01, &[1.5, 2.0, 10.0]).unwrap();
        assert!(all_one.entries.iter().all(|e| e.pass));

        assert!(matches!(
            theorem2_check(&[1.0], 0.1, &[1.0]),
            Err(MemoryError::InvalidQ(_))
        ));
    }

    #[test]
    fn theorem2_holds_on_random_premise_tables() {
        let mut rng = crate::rng::named_stream(41, "thm2");
        let mut checked = 0;
        for _ in 0..1000 {
            let n = rng.gen_range(2..40);
            let delta = rng.gen_range(0.01..0.3);
            // Concentrate scores near 1 so the mean-score premise is
            // satisfied often enough to exercise the claim.
            let scores: Vec<f64> = (0..n)
                .map(|_| 1.0 - rng.gen_range(0.0f64..2.0 * delta).min(1.0))
                .collect();
            let mean = scores.iter().sum::<f64>() / n as f64;
            if mean < 1.0 - delta {
                continue; // mean-score premise not met; the check is vacuous
            }
            let qs = [1.1, 2.0, 3.0, 7.5];
            let r = theorem2_check(&scores, delta, &qs).unwrap();
            assert!(r.applicable);
            for e in &r.entries {
                assert!(e.pass, "q={} fraction={} thr={}", e.q, e.fraction, e.threshold);
            }
            checked += 1;
        }
        assert!(checked > 50, "only {checked} premise-satisfying tables");
    }

    #[test]
    fn class_gap_oracle_and_edge_cases() {
        let dir = tempdir().unwrap();
        let (store, ds, _) = small_store(dir.path(), None, 7);
        let ckpt = store.load_epoch(12).unwrap();
        let same = class_gap(&ckpt, &ds, &ds, 0).unwrap();
        assert_eq!(same.gap, 0.0);
        // Independent recount.
        let mut wrong = 0;
        let idx = ds.class_indices(1);
        for &i in &idx {
            let t = forward(&ckpt.arch, &ckpt.params, &ds.inputs[i], 3).unwrap();
            if t.prediction != 1 {
                wrong += 1;
            }
        }
        let g = class_gap(&ckpt, &ds, &ds, 1).unwrap();
        assert_abs_diff_eq!(g.train_error, wrong as f64 / idx.len() as f64, epsilon = 1e-15);
        assert!(matches!(
            class_gap(&ckpt, &ds, &ds, 5),
            Err(MemoryError::EmptyClass(5))
        ));
    }

    #[test]
    fn augmented_pool_size() {
        let dir = tempdir().unwrap();
        let (store, ds, arch) = small_store(dir.path(), None, 8);
        let p = params(&arch, 6, 2);
        let omega = augmented_class_distribution(&ds, 0, &p, &store).unwrap();
        assert_eq!(omega.window_len, 5);
        assert_eq!(omega.n_samples, ds.class_indices(0).len());
        assert_eq!(omega.latents.len(), omega.n_samples * 5);
    }

    #[test]
    fn pushforward_matches_zero_window_pool() {
        // The anchor-epoch slice of the pool is exactly the pushforward of
        // the training data, so with dt = 0 the two histograms coincide.
        let dir = tempdir().unwrap();
        let ds = synth_blobs(2, 30, 3, 0.12, 9).unwrap();
        let arch = NetworkArch::relu(vec![3, 2, 2]).unwrap();
        let config = TrainConfig::new(0.05, 10, 12, 9);
        let run = train(&arch, &ds, &config, "push-test").unwrap();
        let store = TrajectoryStore::save_run(dir.path(), &run, 9, ds.fingerprint()).unwrap();
        let p = MemoryParams { window: 0, ..params(&arch, 10, 0) };
        let r = bound_check(&ds, &ds, 0, &p, &store, Some(6)).unwrap();
        assert_abs_diff_eq!(r.tv, 0.0, epsilon = 1e-12);
        assert_eq!(r.gap, 0.0);
        assert!(r.holds);
    }

    #[test]
    fn disjoint_supports_give_tv_one() {
        let pool = vec![vec![0.0, 0.0], vec![0.1, 0.1]];
        let push = vec![vec![5.0, 5.0], vec![5.1, 5.2]];
        let (h, _) = shared_histogram(&pool, &push, Some(4)).unwrap();
        assert_abs_diff_eq!(stats::tv_distance(&h), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn histogram_tv_matches_hand_count() {
        // 1-D, 2 bins over [0, 1): p = (0.75, 0.25), q = (0.25, 0.75).
        let pool = vec![vec![0.1], vec![0.2], vec![0.3], vec![0.9]];
        let push = vec![vec![0.1], vec![0.8], vec![0.9], vec![1.0]];
        let (h, b) = shared_histogram(&pool, &push, Some(2)).unwrap();
        assert_eq!(b, 2);
        assert_abs_diff_eq!(stats::tv_distance(&h), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn wide_latent_rejected() {
        let pool = vec![vec![0.0; 4]; 3];
        assert!(matches!(
            shared_histogram(&pool, &pool, None),
            Err(MemoryError::LatentTooWide { width: 4 })
        ));
    }

    #[test]
    fn bound_holds_on_blob_trials() {
        // Monte-Carlo harness: the gap inequality is exact at the population
        // level; finite-sample slack is covered by eps_est.
        let mut held_count = 0;
        let trials = 10;
        for trial in 0..trials {
            let dir = tempdir().unwrap();
            let seed = 100 + trial;
            let train_ds = synth_blobs(2, 40, 2, 0.15, seed).unwrap();
            let held_ds = synth_blobs(2, 40, 2, 0.15, seed + 5000).unwrap();
            let arch = NetworkArch::relu(vec![2, 2, 2]).unwrap();
            let config = TrainConfig::new(0.08, 10, 10, seed);
            let run = train(&arch, &train_ds, &config, "bound-trial").unwrap();
            let store =
                TrajectoryStore::save_run(dir.path(), &run, seed, train_ds.fingerprint()).unwrap();
            let p = MemoryParams {
                delta: 0.1,
                window: 2,
                anchor: 8,
                split: SplitSpec::new(1, &arch).unwrap(),
                mode: WindowMode::TwoSided,
            };
            let r = bound_check(&train_ds, &held_ds, 0, &p, &store, None).unwrap();
            assert!(r.bound >= 0.0 && r.gap <= 1.0);
            if r.holds {
                held_count += 1;
            }
        }
        assert!(held_count >= trials - 1, "bound held in {held_count}/{trials}");
    }
}
