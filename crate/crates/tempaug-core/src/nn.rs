//! Dense feed-forward networks: forward evaluation with feature capture,
//! reverse-mode gradients for softmax cross-entropy, and deterministic SGD
//! training with freeze / reinitialization protocol variants.

use crate::dataio::LabeledDataset;
use crate::linalg::Matrix;
use crate::rng;
use crate::trajectory::Checkpoint;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch at layer {layer}: expected input width {expected}, got {got}")]
    ShapeMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
}

/// Activation applied at a layer boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn deriv_from_output(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Layer widths plus the activation at each boundary. The final boundary is
/// always identity (logits).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkArch {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl NetworkArch {
    /// ReLU everywhere except the last boundary.
    pub fn relu(widths: Vec<usize>) -> Result<Self, NnError> {
        let n = widths.len();
        if n < 2 {
            return Err(NnError::InvalidArch("need at least 2 layers".into()));
        }
        let mut activations = vec![Activation::Relu; n - 1];
        activations[n - 2] = Activation::Identity;
        NetworkArch::new(widths, activations)
    }

    /// ReLU everywhere except the last two boundaries, giving a linear
    /// (visualizable) bottleneck before the classifier head.
    pub fn relu_with_linear_bottleneck(widths: Vec<usize>) -> Result<Self, NnError> {
        let n = widths.len();
        if n < 3 {
            return Err(NnError::InvalidArch(
                "bottleneck arch needs at least 3 layers".into(),
            ));
        }
        let mut activations = vec![Activation::Relu; n - 1];
        activations[n - 2] = Activation::Identity;
        activations[n - 3] = Activation::Identity;
        NetworkArch::new(widths, activations)
    }

    pub fn new(layer_widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self, NnError> {
        if layer_widths.len() < 2 {
            return Err(NnError::InvalidArch("need at least 2 layers".into()));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(NnError::InvalidArch("zero-width layer".into()));
        }
        if activations.len() != layer_widths.len() - 1 {
            return Err(NnError::InvalidArch(format!(
                "{} widths need {} activations, got {}",
                layer_widths.len(),
                layer_widths.len() - 1,
                activations.len()
            )));
        }
        if *activations.last().unwrap() != Activation::Identity {
            return Err(NnError::InvalidArch(
                "last boundary must be identity (logits)".into(),
            ));
        }
        Ok(NetworkArch {
            layer_widths,
            activations,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }
}

/// Weights (out x in, row-major) and bias of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(out: usize, input: usize) -> Self {
        LayerParams {
            weight: Matrix::zeros(out, input),
            bias: vec![0.0; out],
        }
    }

    pub fn out_width(&self) -> usize {
        self.weight.rows
    }

    pub fn in_width(&self) -> usize {
        self.weight.cols
    }
}

/// Freeze layers below `depth` for every step from `from_epoch` onward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezeBelow {
    pub depth: usize,
    pub from_epoch: usize,
}

/// Re-draw layers at and above `depth` from the initializer once the
/// trajectory reaches `at_epoch`, then continue training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReinitAbove {
    pub depth: usize,
    pub at_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub freeze_below: Option<FreezeBelow>,
    pub reinit_above: Option<ReinitAbove>,
    /// Optional step schedule: at each listed epoch the base learning rate is
    /// replaced by `learning_rate * multiplier` for that epoch onward.
    pub lr_schedule: Vec<(usize, f64)>,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, batch_size: usize, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size,
            epochs,
            seed,
            freeze_below: None,
            reinit_above: None,
            lr_schedule: Vec::new(),
        }
    }

    fn validate(&self, arch: &NetworkArch) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0) {
            return Err(NnError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NnError::InvalidConfig("momentum must be in [0,1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(NnError::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch_size must be positive".into()));
        }
        if let Some(f) = self.freeze_below {
            if f.depth >= arch.layer_count() {
                return Err(NnError::InvalidConfig(format!(
                    "freeze depth {} >= layer count {}",
                    f.depth,
                    arch.layer_count()
                )));
            }
        }
        if let Some(r) = self.reinit_above {
            if r.depth >= arch.layer_count() {
                return Err(NnError::InvalidConfig(format!(
                    "reinit depth {} >= layer count {}",
                    r.depth,
                    arch.layer_count()
                )));
            }
        }
        Ok(())
    }

    fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let mut lr = self.learning_rate;
        for &(e, mult) in &self.lr_schedule {
            if epoch >= e {
                lr = self.learning_rate * mult;
            }
        }
        lr
    }
}

/// All intermediate features of one forward pass from `capture_from` onward.
/// The last feature is the logits vector.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Index of the first captured feature (0 = the input itself).
    pub capture_from: usize,
    /// Features `z_capture_from .. z_n`; the last entry is the logits.
    pub features: Vec<Vec<f64>>,
    /// Argmax of logits, lowest index on ties.
    pub prediction: usize,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.features.last().expect("trace has at least logits")
    }

    /// Feature at absolute depth `k` (input = 0, logits = layer count).
    pub fn feature(&self, k: usize) -> &[f64] {
        &self.features[k - self.capture_from]
    }
}

/// Argmax with lowest-index tie-break.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_shapes(arch: &NetworkArch, params: &[LayerParams]) -> Result<(), NnError> {
    if params.len() != arch.layer_count() {
        return Err(NnError::InvalidArch(format!(
            "arch has {} layers, params have {}",
            arch.layer_count(),
            params.len()
        )));
    }
    for (k, p) in params.iter().enumerate() {
        if p.in_width() != arch.layer_widths[k] {
            return Err(NnError::ShapeMismatch {
                layer: k,
                expected: arch.layer_widths[k],
                got: p.in_width(),
            });
        }
        if p.out_width() != arch.layer_widths[k + 1] || p.bias.len() != p.out_width() {
            return Err(NnError::ShapeMismatch {
                layer: k,
                expected: arch.layer_widths[k + 1],
                got: p.out_width(),
            });
        }
    }
    Ok(())
}

/// Forward pass capturing features from depth `capture_from` onward.
pub fn forward(
    arch: &NetworkArch,
    params: &[LayerParams],
    x: &[f64],
    capture_from: usize,
) -> Result<ForwardTrace, NnError> {
    check_shapes(arch, params)?;
    if x.len() != arch.input_width() {
        return Err(NnError::ShapeMismatch {
            layer: 0,
            expected: arch.input_width(),
            got: x.len(),
        });
    }
    let mut features = Vec::with_capacity(arch.layer_count() + 1 - capture_from);
    let mut z = x.to_vec();
    if capture_from == 0 {
        features.push(z.clone());
    }
    for (k, p) in params.iter().enumerate() {
        let mut next = p.weight.matvec(&z);
        let act = arch.activations[k];
        for (ni, bi) in next.iter_mut().zip(&p.bias) {
            *ni = act.apply(*ni + bi);
        }
        z = next;
        if k + 1 >= capture_from {
            features.push(z.clone());
        }
    }
    let prediction = argmax(&z);
    Ok(ForwardTrace {
        capture_from,
        features,
        prediction,
    })
}

/// Forward through layers `[from_depth, to_depth)` starting from a latent
/// vector at depth `from_depth`. Used by composite networks and region maps.
pub fn forward_partial(
    arch: &NetworkArch,
    params: &[LayerParams],
    z0: &[f64],
    from_depth: usize,
    to_depth: usize,
) -> Result<Vec<f64>, NnError> {
    check_shapes(arch, params)?;
    assert!(from_depth <= to_depth && to_depth <= arch.layer_count());
    if z0.len() != arch.layer_widths[from_depth] {
        return Err(NnError::ShapeMismatch {
            layer: from_depth,
            expected: arch.layer_widths[from_depth],
            got: z0.len(),
        });
    }
    let mut z = z0.to_vec();
    for k in from_depth..to_depth {
        let p = &params[k];
        let mut next = p.weight.matvec(&z);
        let act = arch.activations[k];
        for (ni, bi) in next.iter_mut().zip(&p.bias) {
            *ni = act.apply(*ni + bi);
        }
        z = next;
    }
    Ok(z)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of one sample from logits, via log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Hessian of `-log softmax_j` at the given logits: `diag(s) - s s^T`.
/// Independent of `j`.
pub fn neg_log_softmax_hessian(logits: &[f64]) -> Matrix {
    let s = softmax(logits);
    let n = s.len();
    let mut h = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = if i == j {
                s[i] - s[i] * s[j]
            } else {
                -s[i] * s[j]
            };
            h.set(i, j, v);
        }
    }
    h
}

/// Gradients of mean softmax cross-entropy over a batch, same shapes as
/// the parameters. Returns the mean batch loss alongside.
pub fn grad(
    arch: &NetworkArch,
    params: &[LayerParams],
    batch: &[(&[f64], usize)],
) -> Result<(Vec<LayerParams>, f64), NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    check_shapes(arch, params)?;
    let n_layers = arch.layer_count();
    let mut grads: Vec<LayerParams> = params
        .iter()
        .map(|p| LayerParams::zeros(p.out_width(), p.in_width()))
        .collect();
    let mut loss_sum = 0.0;
    let inv_b = 1.0 / batch.len() as f64;

    for &(x, label) in batch {
        if label >= arch.class_count() {
            return Err(NnError::InvalidConfig(format!(
                "label {label} out of range for {} classes",
                arch.class_count()
            )));
        }
        let trace = forward(arch, params, x, 0)?;
        loss_sum += cross_entropy(trace.logits(), label);

        // delta = dL/d(pre-activation) of the current layer's output.
        let mut delta = softmax(trace.logits());
        delta[label] -= 1.0;
        for k in (0..n_layers).rev() {
            let z_in = &trace.features[k];
            let g = &mut grads[k];
            for (i, &di) in delta.iter().enumerate() {
                let scaled = di * inv_b;
                g.bias[i] += scaled;
                let row = &mut g.weight.data[i * z_in.len()..(i + 1) * z_in.len()];
                for (wij, zj) in row.iter_mut().zip(z_in) {
                    *wij += scaled * zj;
                }
            }
            if k > 0 {
                let w = &params[k].weight;
                let mut prev = vec![0.0; z_in.len()];
                for (i, &di) in delta.iter().enumerate() {
                    let row = w.row(i);
                    for (pj, wij) in prev.iter_mut().zip(row) {
                        *pj += wij * di;
                    }
                }
                let act = arch.activations[k - 1];
                for (pj, zj) in prev.iter_mut().zip(z_in) {
                    *pj *= act.deriv_from_output(*zj);
                }
                delta = prev;
            }
        }
    }
    Ok((grads, loss_sum * inv_b))
}

/// Heavy-ball momentum state, one velocity buffer per layer.
#[derive(Debug, Clone)]
pub struct MomentumState {
    pub velocity: Vec<LayerParams>,
}

impl MomentumState {
    pub fn zeros(params: &[LayerParams]) -> Self {
        MomentumState {
            velocity: params
                .iter()
                .map(|p| LayerParams::zeros(p.out_width(), p.in_width()))
                .collect(),
        }
    }
}

/// One SGD step: `v <- momentum*v + g + wd*theta; theta <- theta - lr*v`.
/// Layers below an active freeze directive are left untouched, velocity
/// included.
pub fn sgd_step(
    params: &mut [LayerParams],
    state: &mut MomentumState,
    grads: &[LayerParams],
    config: &TrainConfig,
    epoch: usize,
) {
    let lr = config.lr_at_epoch(epoch);
    let frozen_below = match config.freeze_below {
        Some(f) if epoch >= f.from_epoch => f.depth,
        _ => 0,
    };
    for (k, ((p, v), g)) in params
        .iter_mut()
        .zip(&mut state.velocity)
        .zip(grads)
        .enumerate()
    {
        if k < frozen_below {
            continue;
        }
        for ((wv, wg), wp) in v
            .weight
            .data
            .iter_mut()
            .zip(&g.weight.data)
            .zip(&mut p.weight.data)
        {
            *wv = config.momentum * *wv + *wg + config.weight_decay * *wp;
            *wp -= lr * *wv;
        }
        for ((bv, bg), bp) in v.bias.iter_mut().zip(&g.bias).zip(&mut p.bias) {
            *bv = config.momentum * *bv + *bg + config.weight_decay * *bp;
            *bp -= lr * *bv;
        }
    }
}

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.
pub fn init_params<R: Rng>(arch: &NetworkArch, rng: &mut R) -> Vec<LayerParams> {
    arch.layer_widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut p = LayerParams::zeros(fan_out, fan_in);
            for v in &mut p.weight.data {
                *v = rng.gen_range(-bound..bound);
            }
            p
        })
        .collect()
}

/// Per-epoch training metrics (mean batch loss and accuracy over the
/// batches as they were trained).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Result of a training run: one checkpoint per epoch plus epoch 0.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoints: Vec<Checkpoint>,
    pub metrics: Vec<EpochMetrics>,
}

/// Deterministic SGD training. Initialization, per-epoch shuffles, and
/// reinit draws all derive from `config.seed` via independent streams.
pub fn train(
    arch: &NetworkArch,
    dataset: &LabeledDataset,
    config: &TrainConfig,
    run_id: &str,
) -> Result<TrainRun, NnError> {
    config.validate(arch)?;
    if dataset.inputs.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    if dataset.input_width() != arch.input_width() {
        return Err(NnError::ShapeMismatch {
            layer: 0,
            expected: arch.input_width(),
            got: dataset.input_width(),
        });
    }

    let mut init_rng = rng::named_stream(config.seed, "init");
    let mut params = init_params(arch, &mut init_rng);
    let mut state = MomentumState::zeros(&params);

    let mut checkpoints = Vec::with_capacity(config.epochs + 1);
    checkpoints.push(Checkpoint {
        epoch: 0,
        arch: arch.clone(),
        params: params.clone(),
        run_id: run_id.to_string(),
    });
    let mut metrics = Vec::with_capacity(config.epochs);

    let n = dataset.inputs.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=config.epochs {
        if let Some(r) = config.reinit_above {
            if r.at_epoch + 1 == epoch {
                let mut rng = rng::named_stream(config.seed, &format!("reinit:{}", r.at_epoch));
                let fresh = init_params(arch, &mut rng);
                for k in r.depth..params.len() {
                    params[k] = fresh[k].clone();
                    state.velocity[k] = LayerParams::zeros(
                        params[k].out_width(),
                        params[k].in_width(),
                    );
                }
            }
        }

        let mut shuffle_rng = rng::named_stream(config.seed, &format!("shuffle:{epoch}"));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&i| (dataset.inputs[i].as_slice(), dataset.labels[i]))
                .collect();
            // Accuracy is measured on the pre-step network for each batch.
            for &(x, label) in &batch {
                let trace = forward(arch, &params, x, arch.layer_count())?;
                if trace.prediction == label {
                    correct += 1;
                }
            }
            seen += batch.len();
            let (grads, loss) = grad(arch, &params, &batch)?;
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch });
            }
            loss_sum += loss;
            n_batches += 1;
            sgd_step(&mut params, &mut state, &grads, config, epoch - 1);
        }

        checkpoints.push(Checkpoint {
            epoch,
            arch: arch.clone(),
            params: params.clone(),
            run_id: run_id.to_string(),
        });
        metrics.push(EpochMetrics {
            epoch,
            mean_loss: loss_sum / n_batches as f64,
            accuracy: correct as f64 / seen as f64,
        });
    }

    Ok(TrainRun {
        checkpoints,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn small_net(widths: &[usize], seed: u64) -> (NetworkArch, Vec<LayerParams>) {
        let arch = NetworkArch::relu(widths.to_vec()).unwrap();
        let mut rng = rng::named_stream(seed, "test-net");
        let params = init_params(&arch, &mut rng);
        (arch, params)
    }

    #[test]
    fn zero_network_predicts_class_zero() {
        let arch = NetworkArch::relu(vec![3, 4, 2]).unwrap();
        let params = vec![LayerParams::zeros(4, 3), LayerParams::zeros(2, 4)];
        let t = forward(&arch, &params, &[0.5, -0.2, 1.0], 0).unwrap();
        assert!(t.features.iter().skip(1).flatten().all(|&v| v == 0.0));
        assert_eq!(t.prediction, 0);
    }

    #[test]
    fn relu_clips_negative_hidden() {
        // 2-layer net with identity weights in the first layer.
        let arch = NetworkArch::relu(vec![2, 2, 2]).unwrap();
        let mut l0 = LayerParams::zeros(2, 2);
        l0.weight.set(0, 0, 1.0);
        l0.weight.set(1, 1, 1.0);
        let l1 = LayerParams::zeros(2, 2);
        let t = forward(&arch, &[l0, l1], &[1.0, -1.0], 0).unwrap();
        assert_eq!(t.feature(1), &[1.0, 0.0]);
    }

    // Independent naive triple-loop forward used as the oracle.
    fn naive_forward(arch: &NetworkArch, params: &[LayerParams], x: &[f64]) -> Vec<f64> {
        let mut z = x.to_vec();
        for (k, p) in params.iter().enumerate() {
            let mut out = vec![0.0; p.out_width()];
            #[allow(clippy::needless_range_loop)]
            for i in 0..p.out_width() {
                let mut acc = 0.0;
                for j in 0..p.in_width() {
                    acc += p.weight.get(i, j) * z[j];
                }
                acc += p.bias[i];
                out[i] = match arch.activations[k] {
                    Activation::Relu => {
                        if acc > 0.0 {
                            acc
                        } else {
                            0.0
                        }
                    }
                    Activation::Identity => acc,
                };
            }
            z = out;
        }
        z
    }

    #[test]
    fn forward_matches_naive_matmul_oracle() {
        let arch = NetworkArch::relu_with_linear_bottleneck(vec![784, 100, 2, 10]).unwrap();
        let mut rng = rng::named_stream(42, "oracle-net");
        let params = init_params(&arch, &mut rng);
        let x: Vec<f64> = (0..784).map(|_| rng.gen_range(0.0..1.0)).collect();
        let t = forward(&arch, &params, &x, 0).unwrap();
        let oracle = naive_forward(&arch, &params, &x);
        for (a, b) in t.logits().iter().zip(&oracle) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn saturated_softmax_has_tiny_final_gradient() {
        let arch = NetworkArch::relu(vec![2, 3]).unwrap();
        let mut p = LayerParams::zeros(3, 2);
        // Huge margin toward class 0.
        p.bias = vec![100.0, 0.0, 0.0];
        let x = [0.1, 0.2];
        let (g, _) = grad(&arch, &[p], &[(&x, 0)]).unwrap();
        let norm: f64 = g[0]
            .weight
            .data
            .iter()
            .chain(&g[0].bias)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(norm < 1e-6, "norm = {norm}");
    }

    #[test]
    fn duplicated_batch_matches_single_sample() {
        let (arch, params) = small_net(&[4, 5, 3], 9);
        let x = [0.3, -0.1, 0.5, 0.9];
        let (g1, l1) = grad(&arch, &params, &[(&x, 2)]).unwrap();
        let batch: Vec<(&[f64], usize)> = (0..7).map(|_| (&x[..], 2)).collect();
        let (gk, lk) = grad(&arch, &params, &batch).unwrap();
        assert_relative_eq!(l1, lk, max_relative = 1e-12);
        for (a, b) in g1.iter().zip(&gk) {
            for (va, vb) in a.weight.data.iter().zip(&b.weight.data) {
                assert_relative_eq!(va, vb, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let (arch, params) = small_net(&[2, 2], 1);
        assert!(matches!(
            grad(&arch, &params, &[]),
            Err(NnError::EmptyBatch)
        ));
    }

    /// Central finite-difference gradient oracle.
    fn fd_grad(
        arch: &NetworkArch,
        params: &[LayerParams],
        batch: &[(&[f64], usize)],
        layer: usize,
        is_bias: bool,
        idx: usize,
    ) -> f64 {
        let h = 1e-5;
        let loss_at = |delta: f64| {
            let mut p = params.to_vec();
            if is_bias {
                p[layer].bias[idx] += delta;
            } else {
                p[layer].weight.data[idx] += delta;
            }
            let mut sum = 0.0;
            for &(x, label) in batch {
                let t = forward(arch, &p, x, arch.layer_count()).unwrap();
                sum += cross_entropy(t.logits(), label);
            }
            sum / batch.len() as f64
        };
        (loss_at(h) - loss_at(-h)) / (2.0 * h)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng::named_stream(7, "fd-data");
        for trial in 0..5 {
            let (arch, params) = small_net(&[4, 6, 3], 100 + trial);
            let xs: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let batch: Vec<(&[f64], usize)> = xs
                .iter()
                .enumerate()
                .map(|(i, x)| (x.as_slice(), i % 3))
                .collect();
            let (g, _) = grad(&arch, &params, &batch).unwrap();
            for layer in 0..arch.layer_count() {
                for idx in 0..g[layer].weight.data.len() {
                    let fd = fd_grad(&arch, &params, &batch, layer, false, idx);
                    let an = g[layer].weight.data[idx];
                    let denom = fd.abs().max(an.abs()).max(1e-4);
                    assert!(
                        (fd - an).abs() / denom < 1e-5,
                        "layer {layer} w[{idx}]: fd {fd} vs analytic {an}"
                    );
                }
                for idx in 0..g[layer].bias.len() {
                    let fd = fd_grad(&arch, &params, &batch, layer, true, idx);
                    let an = g[layer].bias[idx];
                    let denom = fd.abs().max(an.abs()).max(1e-4);
                    assert!((fd - an).abs() / denom < 1e-5);
                }
            }
        }
    }

    #[test]
    fn plain_sgd_step_is_theta_minus_lr_g() {
        let (arch, params) = small_net(&[3, 2], 5);
        let _ = arch;
        let mut p = params.clone();
        let mut g = vec![LayerParams::zeros(2, 3)];
        for (i, v) in g[0].weight.data.iter_mut().enumerate() {
            *v = i as f64 * 0.1;
        }
        let config = TrainConfig::new(0.5, 1, 1, 0);
        let mut state = MomentumState::zeros(&p);
        sgd_step(&mut p, &mut state, &g, &config, 0);
        for ((after, before), gi) in p[0]
            .weight
            .data
            .iter()
            .zip(&params[0].weight.data)
            .zip(&g[0].weight.data)
        {
            assert_abs_diff_eq!(*after, before - 0.5 * gi, epsilon = 0.0);
        }
    }

    #[test]
    fn momentum_two_steps_displacement() {
        // Two steps on constant gradient g with momentum 0.9:
        // v1 = g, v2 = 1.9 g, total displacement lr * g * 2.9.
        let (_, params) = small_net(&[3, 2], 6);
        let arch = NetworkArch::relu(vec![3, 2]).unwrap();
        let _ = arch;
        let mut p = params.clone();
        let mut g = vec![LayerParams::zeros(2, 3)];
        g[0].weight.data.fill(1.0);
        let mut config = TrainConfig::new(0.1, 1, 1, 0);
        config.momentum = 0.9;
        let mut state = MomentumState::zeros(&p);
        sgd_step(&mut p, &mut state, &g, &config, 0);
        sgd_step(&mut p, &mut state, &g, &config, 0);
        for (after, before) in p[0].weight.data.iter().zip(&params[0].weight.data) {
            assert_relative_eq!(before - after, 0.1 * 2.9, max_relative = 1e-12);
        }
    }

    #[test]
    fn freeze_below_keeps_layer_bit_identical() {
        let (_arch, params) = small_net(&[3, 4, 2], 8);
        let mut p = params.clone();
        let mut config = TrainConfig::new(0.1, 1, 1, 0);
        config.freeze_below = Some(FreezeBelow {
            depth: 1,
            from_epoch: 0,
        });
        let mut state = MomentumState::zeros(&p);
        let mut g: Vec<LayerParams> = p
            .iter()
            .map(|l| LayerParams::zeros(l.out_width(), l.in_width()))
            .collect();
        for layer in &mut g {
            layer.weight.data.fill(0.3);
        }
        for _ in 0..10 {
            sgd_step(&mut p, &mut state, &g, &config, 0);
        }
        assert_eq!(p[0], params[0]);
        assert_ne!(p[1], params[1]);
    }

    #[test]
    fn hessian_two_class_uniform() {
        let h = neg_log_softmax_hessian(&[0.0, 0.0]);
        assert_abs_diff_eq!(h.get(0, 0), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(h.get(0, 1), -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(h.get(1, 0), -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(h.get(1, 1), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn hessian_row_sums_zero_and_psd() {
        let mut rng = rng::named_stream(13, "hessian");
        for _ in 0..200 {
            let dim = rng.gen_range(2..=10);
            let logits: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let h = neg_log_softmax_hessian(&logits);
            for i in 0..dim {
                let row_sum: f64 = (0..dim).map(|j| h.get(i, j)).sum();
                assert_abs_diff_eq!(row_sum, 0.0, epsilon = 1e-12);
                let off: f64 = (0..dim)
                    .filter(|&j| j != i)
                    .map(|j| h.get(i, j).abs())
                    .sum();
                assert!(h.get(i, i).abs() >= off - 1e-12);
            }
            let eig = crate::linalg::sym_eigen(&h).unwrap();
            assert!(*eig.values.last().unwrap() >= -1e-10);
        }
    }

    #[test]
    fn zero_epochs_yields_only_initialization() {
        let ds = crate::dataio::synth_blobs(2, 10, 3, 0.1, 4).unwrap();
        let arch = NetworkArch::relu(vec![3, 4, 2]).unwrap();
        let run = train(&arch, &ds, &TrainConfig::new(0.1, 4, 0, 3), "t").unwrap();
        assert_eq!(run.checkpoints.len(), 1);
        assert_eq!(run.checkpoints[0].epoch, 0);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = crate::dataio::synth_blobs(3, 20, 4, 0.2, 5).unwrap();
        let arch = NetworkArch::relu(vec![4, 8, 3]).unwrap();
        let config = TrainConfig::new(0.1, 8, 5, 77);
        let a = train(&arch, &ds, &config, "r").unwrap();
        let b = train(&arch, &ds, &config, "r").unwrap();
        for (ca, cb) in a.checkpoints.iter().zip(&b.checkpoints) {
            assert_eq!(ca.params, cb.params);
        }
    }

    #[test]
    fn training_learns_blobs() {
        let ds = crate::dataio::synth_blobs(3, 50, 4, 0.15, 5).unwrap();
        let arch = NetworkArch::relu(vec![4, 16, 3]).unwrap();
        let config = TrainConfig::new(0.2, 10, 40, 2).clone();
        let run = train(&arch, &ds, &config, "r").unwrap();
        let last = run.metrics.last().unwrap();
        assert!(last.accuracy > 0.95, "accuracy {}", last.accuracy);
        assert!(last.mean_loss < run.metrics[0].mean_loss);
    }

    #[test]
    fn divergence_reported_with_epoch() {
        let ds = crate::dataio::synth_blobs(2, 20, 3, 0.5, 5).unwrap();
        let arch = NetworkArch::relu(vec![3, 8, 2]).unwrap();
        let config = TrainConfig::new(1e200, 5, 10, 1);
        match train(&arch, &ds, &config, "r") {
            Err(NnError::Diverged { epoch }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn reinit_redraws_deep_layers_only() {
        let ds = crate::dataio::synth_blobs(2, 30, 3, 0.2, 5).unwrap();
        let arch = NetworkArch::relu(vec![3, 6, 2]).unwrap();
        let mut config = TrainConfig::new(0.05, 10, 6, 21);
        let base = train(&arch, &ds, &config, "r").unwrap();
        config.reinit_above = Some(ReinitAbove {
            depth: 1,
            at_epoch: 3,
        });
        let re = train(&arch, &ds, &config, "r").unwrap();
        // Identical up to and including the reinit epoch.
        for t in 0..=3 {
            assert_eq!(base.checkpoints[t].params, re.checkpoints[t].params);
        }
        assert_ne!(base.checkpoints[4].params[1], re.checkpoints[4].params[1]);
    }
}
