//! One-step SGD perturbation protocol and the analysis of the feature
//! noise it induces: empirical covariance, eigenspectrum, matched
//! isotropic baselines, and PCA projection for wide latents.

use crate::dataio::LabeledDataset;
use crate::linalg::{self, Matrix};
use crate::nn::{forward_partial, grad, NnError};
use crate::rng;
use crate::trajectory::{Checkpoint, SplitSpec};
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error("need at least 2 perturbations, got {0}")]
    TooFewSamples(usize),
    #[error("reference covariance has zero trace")]
    ZeroTrace,
    #[error("batch source smaller than batch size ({n} < {batch_size})")]
    SourceTooSmall { n: usize, batch_size: usize },
}

/// One-step feature perturbations `dz^(b) = f_[1:d](theta - eta*grad_b, x)
/// - f_[1:d](theta, x)` for B independent mini-batches.
#[derive(Debug, Clone)]
pub struct PerturbationBatch {
    pub base_epoch: usize,
    pub depth: usize,
    pub eta: f64,
    pub deltas: Vec<Vec<f64>>,
    /// False where the perturbed forward pass produced non-finite features.
    pub finite: Vec<bool>,
}

impl PerturbationBatch {
    /// Deltas whose perturbed forward pass stayed finite.
    pub fn finite_deltas(&self) -> Vec<Vec<f64>> {
        self.deltas
            .iter()
            .zip(&self.finite)
            .filter(|(_, &ok)| ok)
            .map(|(d, _)| d.clone())
            .collect()
    }
}

/// Apply `B` independent one-step SGD updates (plain step, no momentum or
/// weight decay) from the same checkpoint and record the induced latent
/// displacement at depth `d` for the fixed input `x`.
///
/// Mini-batches are drawn without replacement within a batch, each from
/// its own seed-derived stream, so any single delta can be re-derived
/// independently. The base checkpoint is untouched.
#[allow(clippy::too_many_arguments)]
pub fn one_step_perturb(
    ckpt: &Checkpoint,
    x: &[f64],
    split: SplitSpec,
    batch_source: &LabeledDataset,
    batch_size: usize,
    b_count: usize,
    eta: f64,
    seed: u64,
) -> Result<PerturbationBatch, NoiseError> {
    if b_count < 2 {
        return Err(NoiseError::TooFewSamples(b_count));
    }
    if batch_source.len() < batch_size {
        return Err(NoiseError::SourceTooSmall {
            n: batch_source.len(),
            batch_size,
        });
    }
    let d = split.depth();
    let base = forward_partial(&ckpt.arch, &ckpt.params, x, 0, d)?;
    let mut deltas = Vec::with_capacity(b_count);
    let mut finite = Vec::with_capacity(b_count);
    for b in 0..b_count {
        let mut rng = rng::stream(seed, rng::fnv1a(b"perturb") ^ b as u64);
        let idx = rand::seq::index::sample(&mut rng, batch_source.len(), batch_size);
        let batch: Vec<(&[f64], usize)> = idx
            .iter()
            .map(|i| (batch_source.inputs[i].as_slice(), batch_source.labels[i]))
            .collect();
        let (grads, _) = grad(&ckpt.arch, &ckpt.params, &batch)?;
        let mut stepped = ckpt.params.clone();
        for (p, g) in stepped.iter_mut().zip(&grads) {
            for (w, gw) in p.weight.data.iter_mut().zip(&g.weight.data) {
                *w -= eta * gw;
            }
            for (bias, gb) in p.bias.iter_mut().zip(&g.bias) {
                *bias -= eta * gb;
            }
        }
        let z = forward_partial(&ckpt.arch, &stepped, x, 0, d)?;
        let delta: Vec<f64> = z.iter().zip(&base).map(|(a, b)| a - b).collect();
        finite.push(delta.iter().all(|v| v.is_finite()));
        deltas.push(delta);
    }
    Ok(PerturbationBatch {
        base_epoch: ckpt.epoch,
        depth: d,
        eta,
        deltas,
        finite,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Centering {
    /// Variability around the mean one-step drift.
    Mean,
    /// Second moments about zero (the stochastic part including drift).
    Zero,
}

/// Empirical covariance of a set of perturbation deltas with its
/// eigenspectrum.
#[derive(Debug, Clone)]
pub struct NoiseCovariance {
    pub s: Matrix,
    pub n_samples: usize,
    /// Descending eigenvalues from the cyclic Jacobi solver.
    pub eigenvalues: Vec<f64>,
    pub trace: f64,
}

pub fn covariance(deltas: &[Vec<f64>], center: Centering) -> Result<NoiseCovariance, NoiseError> {
    if deltas.len() < 2 {
        return Err(NoiseError::TooFewSamples(deltas.len()));
    }
    let s = linalg::covariance_of_rows(deltas, center == Centering::Mean)?;
    let eig = linalg::sym_eigen(&s)?;
    let trace = s.trace();
    Ok(NoiseCovariance {
        s,
        n_samples: deltas.len(),
        eigenvalues: eig.values,
        trace,
    })
}

/// Gaussian deltas matched in total variance to a reference covariance:
/// B i.i.d. draws from `N(0, sigma^2 I)` with `sigma^2 = tr(S_ref)/d`.
pub fn isotropic_baseline(
    reference: &NoiseCovariance,
    b_count: usize,
    seed: u64,
) -> Result<PerturbationBatch, NoiseError> {
    if reference.trace <= 0.0 {
        return Err(NoiseError::ZeroTrace);
    }
    let d = reference.s.rows;
    let sigma = (reference.trace / d as f64).sqrt();
    let normal = Normal::new(0.0, sigma).expect("valid normal");
    let mut rng = rng::named_stream(seed, "isotropic-baseline");
    let deltas: Vec<Vec<f64>> = (0..b_count)
        .map(|_| (0..d).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    Ok(PerturbationBatch {
        base_epoch: 0,
        depth: 0,
        eta: 0.0,
        finite: vec![true; deltas.len()],
        deltas,
    })
}

/// Anisotropy ratios are capped here when the k-th eigenvalue vanishes.
pub const RATIO_CAP: f64 = 1e12;

/// Top-k eigenvalue comparison between an SGD-induced covariance and its
/// matched isotropic baseline.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub k: usize,
    pub sgd_top: Vec<f64>,
    pub baseline_top: Vec<f64>,
    /// `lambda_1 / lambda_k`, capped at `RATIO_CAP`.
    pub sgd_ratio: f64,
    pub baseline_ratio: f64,
}

fn anisotropy_ratio(eigenvalues: &[f64], k: usize) -> f64 {
    let top = eigenvalues[0];
    let kth = eigenvalues[k - 1];
    if kth <= top / RATIO_CAP {
        RATIO_CAP
    } else {
        top / kth
    }
}

pub fn spectrum_report(
    sgd: &NoiseCovariance,
    baseline: &NoiseCovariance,
    k: usize,
) -> SpectrumReport {
    let k = k.min(sgd.eigenvalues.len()).min(baseline.eigenvalues.len());
    assert!(k >= 1, "need at least one eigenvalue");
    SpectrumReport {
        k,
        sgd_top: sgd.eigenvalues[..k].to_vec(),
        baseline_top: baseline.eigenvalues[..k].to_vec(),
        sgd_ratio: anisotropy_ratio(&sgd.eigenvalues, k),
        baseline_ratio: anisotropy_ratio(&baseline.eigenvalues, k),
    }
}

/// PCA projection of latent vectors; see [`linalg::pca`].
pub fn pca_project(features: &[Vec<f64>], k: usize) -> Result<linalg::Pca, NoiseError> {
    Ok(linalg::pca(features, k)?)
}
