//! Composite networks across checkpoint pairs and the metrics built on
//! them: consistency, memory windows, forgetting/transferability sweeps,
//! corruption error, latent region maps, and the drift-sensitivity
//! diagnostic.

use crate::dataio::{corrupt_inputs, CorruptionKind, CorruptionSpec, DataError, LabeledDataset};
use crate::linalg::{norm2, sub};
use crate::nn::{argmax, cross_entropy, forward, forward_partial, NnError};
use crate::trajectory::{Checkpoint, SplitSpec, TrajError, TrajectoryStore};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CompositeError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("checkpoints come from different architectures")]
    ArchMismatch,
    #[error("missing epochs in trajectory: {0:?}")]
    MissingEpochs(Vec<usize>),
    #[error("latent width at this split is {width}, region maps need 2 (project first)")]
    UnsupportedLatentDim { width: usize },
}

/// Shallow epoch, deep epoch, and split depth of a composite network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompositeSpec {
    /// Epoch providing the shallow feature extractor.
    pub t1: usize,
    /// Epoch providing the deep classifier head.
    pub t2: usize,
    pub split: SplitSpec,
}

/// Cross-entropy and accuracy over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cross_entropy: f64,
    pub accuracy: f64,
    pub n: usize,
}

/// Dataset-level consistency of one checkpoint pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyCell {
    pub t1: usize,
    pub t2: usize,
    pub depth: usize,
    pub value: f64,
    pub n_samples: usize,
}

/// Point-wise consistency of one sample over a checkpoint window.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRecord {
    pub sample_index: usize,
    pub t1: usize,
    pub t2: usize,
    pub value: f64,
}

fn check_pair(shallow: &Checkpoint, deep: &Checkpoint) -> Result<(), CompositeError> {
    if shallow.arch != deep.arch {
        return Err(CompositeError::ArchMismatch);
    }
    Ok(())
}

/// Logits of `f_[d+1:n](deep) . f_[1:d](shallow)` on `x`.
pub fn composite_logits(
    shallow: &Checkpoint,
    deep: &Checkpoint,
    split: SplitSpec,
    x: &[f64],
) -> Result<Vec<f64>, CompositeError> {
    check_pair(shallow, deep)?;
    let d = split.depth();
    let z = forward_partial(&shallow.arch, &shallow.params, x, 0, d)?;
    let logits = forward_partial(
        &deep.arch,
        &deep.params,
        &z,
        d,
        deep.arch.layer_count(),
    )?;
    Ok(logits)
}

/// Predicted class (and logits) of the composite network.
pub fn composite_predict(
    shallow: &Checkpoint,
    deep: &Checkpoint,
    split: SplitSpec,
    x: &[f64],
) -> Result<(usize, Vec<f64>), CompositeError> {
    let logits = composite_logits(shallow, deep, split, x)?;
    Ok((argmax(&logits), logits))
}

/// Store-backed composite prediction for a `CompositeSpec`.
pub fn composite_predict_spec(
    store: &TrajectoryStore,
    spec: &CompositeSpec,
    x: &[f64],
) -> Result<(usize, Vec<f64>), CompositeError> {
    let shallow = store.load_epoch(spec.t1)?;
    let deep = store.load_epoch(spec.t2)?;
    composite_predict(&shallow, &deep, spec.split, x)
}

/// Per-sample cross-entropy, clamped at 50 nats so confidently wrong
/// answers keep reports finite.
fn clamped_ce(logits: &[f64], label: usize) -> f64 {
    cross_entropy(logits, label).min(50.0)
}

/// Mean cross-entropy and accuracy of a composite network over a dataset.
pub fn eval_composite(
    shallow: &Checkpoint,
    deep: &Checkpoint,
    split: SplitSpec,
    dataset: &LabeledDataset,
) -> Result<EvalReport, CompositeError> {
    check_pair(shallow, deep)?;
    if dataset.is_empty() {
        return Err(CompositeError::EmptyDataset);
    }
    let mut ce = 0.0;
    let mut correct = 0usize;
    for (x, &label) in dataset.inputs.iter().zip(&dataset.labels) {
        let logits = composite_logits(shallow, deep, split, x)?;
        ce += clamped_ce(&logits, label);
        if argmax(&logits) == label {
            correct += 1;
        }
    }
    let n = dataset.len();
    Ok(EvalReport {
        cross_entropy: ce / n as f64,
        accuracy: correct as f64 / n as f64,
        n,
    })
}

/// Full-model evaluation (degenerate composite).
pub fn eval_full(ckpt: &Checkpoint, dataset: &LabeledDataset) -> Result<EvalReport, CompositeError> {
    if dataset.is_empty() {
        return Err(CompositeError::EmptyDataset);
    }
    let mut ce = 0.0;
    let mut correct = 0usize;
    for (x, &label) in dataset.inputs.iter().zip(&dataset.labels) {
        let t = forward(&ckpt.arch, &ckpt.params, x, ckpt.arch.layer_count())?;
        ce += clamped_ce(t.logits(), label);
        if t.prediction == label {
            correct += 1;
        }
    }
    let n = dataset.len();
    Ok(EvalReport {
        cross_entropy: ce / n as f64,
        accuracy: correct as f64 / n as f64,
        n,
    })
}

fn require_epochs(store: &TrajectoryStore, epochs: &[usize]) -> Result<(), CompositeError> {
    let missing: Vec<usize> = epochs
        .iter()
        .copied()
        .filter(|&t| !store.has_epoch(t))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CompositeError::MissingEpochs(missing))
    }
}

/// Point-wise consistency over the window `[T1 ^ T2, T1 v T2]`:
/// the fraction of window epochs `t` at which the composite with shallow
/// layers from `t` and head from `T2` agrees with the reference network
/// `f(theta_{t v T2})`. Computed for a batch of samples so each window
/// epoch is loaded once.
pub fn pointwise_consistency_batch(
    samples: &[Vec<f64>],
    t1: usize,
    t2: usize,
    split: SplitSpec,
    store: &TrajectoryStore,
) -> Result<Vec<ConsistencyRecord>, CompositeError> {
    let lo = t1.min(t2);
    let hi = t1.max(t2);
    let window: Vec<usize> = (lo..=hi).collect();
    require_epochs(store, &window)?;

    let head = store.load_epoch(t2)?;
    let d = split.depth();
    let n_layers = head.arch.layer_count();
    let mut agree = vec![0usize; samples.len()];
    // Reference predictions at T2, reused whenever t <= T2.
    let mut ref_at_t2: Vec<usize> = Vec::new();
    for &t in &window {
        let shallow = store.load_epoch(t)?;
        check_pair(&shallow, &head)?;
        // Reference epoch is max(t, T2).
        let ref_preds: Vec<usize> = if t <= t2 {
            if ref_at_t2.is_empty() {
                ref_at_t2 = samples
                    .iter()
                    .map(|x| {
                        forward(&head.arch, &head.params, x, n_layers).map(|tr| tr.prediction)
                    })
                    .collect::<Result<_, _>>()?;
            }
            ref_at_t2.clone()
        } else {
            samples
                .iter()
                .map(|x| {
                    forward(&shallow.arch, &shallow.params, x, n_layers).map(|tr| tr.prediction)
                })
                .collect::<Result<_, _>>()?
        };
        for ((x, cnt), reference) in samples.iter().zip(&mut agree).zip(ref_preds) {
            let z = forward_partial(&shallow.arch, &shallow.params, x, 0, d)?;
            let logits = forward_partial(&head.arch, &head.params, &z, d, n_layers)?;
            if argmax(&logits) == reference {
                *cnt += 1;
            }
        }
    }
    let len = window.len() as f64;
    Ok(agree
        .into_iter()
        .enumerate()
        .map(|(i, c)| ConsistencyRecord {
            sample_index: i,
            t1,
            t2,
            value: c as f64 / len,
        })
        .collect())
}

/// Single-sample point-wise consistency.
pub fn pointwise_consistency(
    x: &[f64],
    t1: usize,
    t2: usize,
    split: SplitSpec,
    store: &TrajectoryStore,
) -> Result<ConsistencyRecord, CompositeError> {
    Ok(pointwise_consistency_batch(std::slice::from_ref(&x.to_vec()), t1, t2, split, store)?
        .remove(0))
}

/// Dataset-level consistency: how often the composite `(t1, t2)` agrees
/// with the reference full network at `t2`.
pub fn dataset_consistency(
    t1: usize,
    t2: usize,
    split: SplitSpec,
    dataset: &LabeledDataset,
    store: &TrajectoryStore,
) -> Result<ConsistencyCell, CompositeError> {
    if dataset.is_empty() {
        return Err(CompositeError::EmptyDataset);
    }
    require_epochs(store, &[t1, t2])?;
    let shallow = store.load_epoch(t1)?;
    let deep = store.load_epoch(t2)?;
    check_pair(&shallow, &deep)?;
    let d = split.depth();
    let n_layers = deep.arch.layer_count();
    let mut agree = 0usize;
    for x in &dataset.inputs {
        let reference = forward(&deep.arch, &deep.params, x, n_layers)?.prediction;
        let z = forward_partial(&shallow.arch, &shallow.params, x, 0, d)?;
        let logits = forward_partial(&deep.arch, &deep.params, &z, d, n_layers)?;
        if argmax(&logits) == reference {
            agree += 1;
        }
    }
    Ok(ConsistencyCell {
        t1,
        t2,
        depth: d,
        value: agree as f64 / dataset.len() as f64,
        n_samples: dataset.len(),
    })
}

/// Full consistency matrix over all grid pairs with `t1 <= t2`.
///
/// Shallow features are computed once per grid epoch; each `(t1, t2)` cell
/// then only costs head evaluations.
pub fn consistency_matrix(
    t_grid: &[usize],
    split: SplitSpec,
    dataset: &LabeledDataset,
    store: &TrajectoryStore,
) -> Result<Vec<ConsistencyCell>, CompositeError> {
    if dataset.is_empty() {
        return Err(CompositeError::EmptyDataset);
    }
    require_epochs(store, t_grid)?;
    let mut grid = t_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let d = split.depth();

    // Pass 1: reference predictions of the full network at every grid epoch.
    let mut ref_preds: Vec<Vec<usize>> = Vec::with_capacity(grid.len());
    for &t in &grid {
        let ckpt = store.load_epoch(t)?;
        let preds = dataset
            .inputs
            .iter()
            .map(|x| {
                forward(&ckpt.arch, &ckpt.params, x, ckpt.arch.layer_count())
                    .map(|tr| tr.prediction)
            })
            .collect::<Result<Vec<_>, _>>()?;
        ref_preds.push(preds);
    }

    // Pass 2: for each shallow epoch, reuse its features against every
    // later head.
    let mut cells = Vec::new();
    for (i1, &t1) in grid.iter().enumerate() {
        let shallow = store.load_epoch(t1)?;
        let feats: Vec<Vec<f64>> = dataset
            .inputs
            .iter()
            .map(|x| forward_partial(&shallow.arch, &shallow.params, x, 0, d))
            .collect::<Result<_, _>>()?;
        for (i2, &t2) in grid.iter().enumerate().skip(i1) {
            let head = store.load_epoch(t2)?;
            check_pair(&shallow, &head)?;
            let n_layers = head.arch.layer_count();
            let mut agree = 0usize;
            for (z, &reference) in feats.iter().zip(&ref_preds[i2]) {
                let logits = forward_partial(&head.arch, &head.params, z, d, n_layers)?;
                if argmax(&logits) == reference {
                    agree += 1;
                }
            }
            cells.push(ConsistencyCell {
                t1,
                t2,
                depth: d,
                value: agree as f64 / dataset.len() as f64,
                n_samples: dataset.len(),
            });
        }
    }
    Ok(cells)
}

/// Largest `w` such that every grid epoch `t1` in `[t2 - w, t2]` has
/// consistency at least `threshold`, walking back contiguously from the
/// diagonal.
pub fn memory_window(cells: &[ConsistencyCell], t2: usize, threshold: f64) -> usize {
    let mut row: Vec<&ConsistencyCell> = cells
        .iter()
        .filter(|c| c.t2 == t2 && c.t1 <= t2)
        .collect();
    row.sort_by_key(|c| std::cmp::Reverse(c.t1));
    let mut lowest = t2;
    for cell in row {
        if cell.value >= threshold {
            lowest = cell.t1;
        } else {
            break;
        }
    }
    t2 - lowest
}

/// One point of a forgetting or transferability sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// The swept epoch (shallow epoch in the memory sweep, later shallow
    /// epoch in the transferability sweep).
    pub t: usize,
    pub report: EvalReport,
    /// Mean point-wise consistency over the dataset, when requested.
    pub consistency: Option<f64>,
}

/// Memory/forgetting sweep: head fixed at `t2`, shallow epoch swept.
pub fn memory_sweep(
    t1_grid: &[usize],
    t2: usize,
    split: SplitSpec,
    dataset: &LabeledDataset,
    store: &TrajectoryStore,
) -> Result<Vec<SweepPoint>, CompositeError> {
    require_epochs(store, t1_grid)?;
    require_epochs(store, &[t2])?;
    let deep = store.load_epoch(t2)?;
    let mut out = Vec::with_capacity(t1_grid.len());
    for &t1 in t1_grid {
        let shallow = store.load_epoch(t1)?;
        let report = eval_composite(&shallow, &deep, split, dataset)?;
        out.push(SweepPoint {
            t: t1,
            report,
            consistency: None,
        });
    }
    Ok(out)
}

/// Transferability sweep with roles reversed: deep head fixed at the
/// earlier `t1`, shallow extractor swept over later epochs `t2`.
/// Consistency is the dataset mean of the symmetric point-wise formula
/// with `T2 = t1` and `T1 = t2`.
pub fn transferability_sweep(
    t1: usize,
    t2_grid: &[usize],
    split: SplitSpec,
    dataset: &LabeledDataset,
    store: &TrajectoryStore,
) -> Result<Vec<SweepPoint>, CompositeError> {
    require_epochs(store, t2_grid)?;
    require_epochs(store, &[t1])?;
    let deep = store.load_epoch(t1)?;
    let mut out = Vec::with_capacity(t2_grid.len());
    for &t2 in t2_grid {
        let shallow = store.load_epoch(t2)?;
        let report = eval_composite(&shallow, &deep, split, dataset)?;
        let records =
            pointwise_consistency_batch(&dataset.inputs, t2, t1, split, store)?;
        let mean = records.iter().map(|r| r.value).sum::<f64>() / records.len() as f64;
        out.push(SweepPoint {
            t: t2,
            report,
            consistency: Some(mean),
        });
    }
    Ok(out)
}

/// Class map over a 2-D latent plane, evaluated through the deep head.
#[derive(Debug, Clone)]
pub struct RegionMap {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `classes[iy * xs.len() + ix]` is the predicted class at
    /// `(xs[ix], ys[iy])`.
    pub classes: Vec<usize>,
}

pub fn region_map(
    ckpt: &Checkpoint,
    split: SplitSpec,
    grid_bounds: (f64, f64, f64, f64),
    resolution: usize,
) -> Result<RegionMap, CompositeError> {
    let width = split.latent_width(&ckpt.arch);
    if width != 2 {
        return Err(CompositeError::UnsupportedLatentDim { width });
    }
    let (xmin, xmax, ymin, ymax) = grid_bounds;
    let lin = |lo: f64, hi: f64, i: usize| {
        if resolution == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (resolution - 1) as f64
        }
    };
    let xs: Vec<f64> = (0..resolution).map(|i| lin(xmin, xmax, i)).collect();
    let ys: Vec<f64> = (0..resolution).map(|i| lin(ymin, ymax, i)).collect();
    let d = split.depth();
    let n_layers = ckpt.arch.layer_count();
    let mut classes = Vec::with_capacity(resolution * resolution);
    for &y in &ys {
        for &x in &xs {
            let logits = forward_partial(&ckpt.arch, &ckpt.params, &[x, y], d, n_layers)?;
            classes.push(argmax(&logits));
        }
    }
    Ok(RegionMap { xs, ys, classes })
}

/// Mean logit displacement of the epoch-`t` head between consecutive
/// shallow features: `||f_head(theta_t, z_{t+1}(x)) - f_head(theta_t, z_t(x))||`.
pub fn drift_sensitivity(
    t: usize,
    split: SplitSpec,
    dataset: &LabeledDataset,
    store: &TrajectoryStore,
) -> Result<f64, CompositeError> {
    if dataset.is_empty() {
        return Err(CompositeError::EmptyDataset);
    }
    require_epochs(store, &[t, t + 1])?;
    let now = store.load_epoch(t)?;
    let next = store.load_epoch(t + 1)?;
    check_pair(&now, &next)?;
    let d = split.depth();
    let n_layers = now.arch.layer_count();
    let mut sum = 0.0;
    for x in &dataset.inputs {
        let z_now = forward_partial(&now.arch, &now.params, x, 0, d)?;
        let z_next = forward_partial(&next.arch, &next.params, x, 0, d)?;
        let out_now = forward_partial(&now.arch, &now.params, &z_now, d, n_layers)?;
        let out_next = forward_partial(&now.arch, &now.params, &z_next, d, n_layers)?;
        sum += norm2(&sub(&out_next, &out_now));
    }
    Ok(sum / dataset.len() as f64)
}

/// One cell of a corruption-error report.
#[derive(Debug, Clone)]
pub struct CorruptionCell {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct CorruptionReport {
    pub cells: Vec<CorruptionCell>,
    /// Unnormalized mean error over all (kind, severity) cells.
    pub mce: f64,
}

/// Mean corruption error of a (possibly composite) classifier over the
/// cross product of corruption kinds and severities.
#[allow(clippy::too_many_arguments)]
pub fn corruption_error(
    shallow: &Checkpoint,
    deep: &Checkpoint,
    split: SplitSpec,
    dataset: &LabeledDataset,
    kinds: &[CorruptionKind],
    severities: &[u8],
    image_shape: (usize, usize),
    seed: u64,
) -> Result<CorruptionReport, CompositeError> {
    if dataset.is_empty() {
        return Err(CompositeError::EmptyDataset);
    }
    let mut cells = Vec::new();
    for &kind in kinds {
        for &severity in severities {
            let spec = CorruptionSpec::new(kind, severity, seed)?;
            let corrupted = corrupt_inputs(dataset, &spec, image_shape)?;
            let report = eval_composite(shallow, deep, split, &corrupted)?;
            cells.push(CorruptionCell {
                kind,
                severity,
                error: 1.0 - report.accuracy,
            });
        }
    }
    let mce = cells.iter().map(|c| c.error).sum::<f64>() / cells.len() as f64;
    Ok(CorruptionReport { cells, mce })
}
