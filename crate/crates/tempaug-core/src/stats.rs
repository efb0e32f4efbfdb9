//! Statistical machinery: bootstrap sphericity test for covariance
//! isotropy, Welch's t-test, Gaussian KDE, and histogram total-variation
//! distance.

use crate::linalg;
use crate::rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("degenerate sample: covariance trace is zero")]
    ZeroTrace,
    #[error("bootstrap_b must be >= 99, got {0}")]
    BootstrapTooSmall(usize),
    #[error("both samples have zero variance")]
    ZeroVariance,
    #[error("q must be > 1, got {0}")]
    InvalidQ(f64),
    #[error("histogram masses mismatched or invalid: {0}")]
    BadHistogram(String),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

/// Outcome of the bootstrap test of H0: Sigma = sigma^2 I.
#[derive(Debug, Clone)]
pub struct SphericityResult {
    /// tr(S)/d, the isotropic variance estimate.
    pub tau: f64,
    /// (1/d) * ||S/tau - I||_F^2.
    pub t_obs: f64,
    pub bootstrap_b: usize,
    /// Right-tail p = (1 + #{T_b >= T_obs}) / (B + 1); never below 1/(B+1).
    pub p_value: f64,
    pub n_samples: usize,
    pub dim: usize,
    /// Set when N < d + 1, where the covariance estimate is rank-deficient.
    pub underdetermined: bool,
}

fn sphericity_statistic(rows: &[Vec<f64>]) -> Result<(f64, f64), StatError> {
    let s = linalg::covariance_of_rows(rows, true)?;
    let d = s.rows as f64;
    let tau = s.trace() / d;
    if tau <= 0.0 {
        return Err(StatError::ZeroTrace);
    }
    let mut t = 0.0;
    for i in 0..s.rows {
        for j in 0..s.cols {
            let v = s.get(i, j) / tau - if i == j { 1.0 } else { 0.0 };
            t += v * v;
        }
    }
    Ok((tau, t / d))
}

/// Parametric bootstrap sphericity test. The null replicates are B
/// standard-Gaussian N x d matrices; no variance re-estimation is needed
/// because the statistic is invariant to overall scale.
pub fn sphericity_test(
    deltas: &[Vec<f64>],
    bootstrap_b: usize,
    seed: u64,
) -> Result<SphericityResult, StatError> {
    if deltas.len() < 2 {
        return Err(StatError::TooFewSamples {
            need: 2,
            got: deltas.len(),
        });
    }
    if bootstrap_b < 99 {
        return Err(StatError::BootstrapTooSmall(bootstrap_b));
    }
    let n = deltas.len();
    let d = deltas[0].len();
    let (tau, t_obs) = sphericity_statistic(deltas)?;
    let mut exceed = 0usize;
    for b in 0..bootstrap_b {
        let mut rng = rng::stream(seed, rng::fnv1a(b"sphericity") ^ b as u64);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let (_, t_b) = sphericity_statistic(&rows)?;
        if t_b >= t_obs {
            exceed += 1;
        }
    }
    Ok(SphericityResult {
        tau,
        t_obs,
        bootstrap_b,
        p_value: (1 + exceed) as f64 / (bootstrap_b + 1) as f64,
        n_samples: n,
        dim: d,
        underdetermined: n < d + 1,
    })
}

/// Welch's unequal-variance t-test result.
#[derive(Debug, Clone)]
pub struct WelchResult {
    pub t_stat: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub nu: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
    pub n1: usize,
    pub n2: usize,
}

fn mean_var(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn welch_ttest(sample1: &[f64], sample2: &[f64]) -> Result<WelchResult, StatError> {
    for s in [sample1, sample2] {
        if s.len() < 2 {
            return Err(StatError::TooFewSamples { need: 2, got: s.len() });
        }
    }
    let (m1, v1) = mean_var(sample1);
    let (m2, v2) = mean_var(sample2);
    if v1 == 0.0 && v2 == 0.0 {
        return Err(StatError::ZeroVariance);
    }
    let (n1, n2) = (sample1.len() as f64, sample2.len() as f64);
    let se2 = v1 / n1 + v2 / n2;
    let t = (m1 - m2) / se2.sqrt();
    let nu = se2 * se2
        / ((v1 / n1).powi(2) / (n1 - 1.0) + (v2 / n2).powi(2) / (n2 - 1.0));
    // Two-sided p from the Student-t survival function:
    // 2 P(T_nu > |t|) = I_x(nu/2, 1/2) with x = nu / (nu + t^2).
    let x = nu / (nu + t * t);
    let p = reg_inc_beta(nu / 2.0, 0.5, x).clamp(0.0, 1.0);
    Ok(WelchResult {
        t_stat: t,
        nu,
        p_value: p,
        mean1: m1,
        mean2: m2,
        var1: v1,
        var2: v2,
        n1: sample1.len(),
        n2: sample2.len(),
    })
}

/// ln Gamma(x) via the Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEFFS[0];
    let t = x + 7.5;
    for (i, c) in COEFFS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta I_x(a, b) via the Lentz continued
/// fraction, tolerance 1e-12. Accurate far into the tails (p ~ 1e-14).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x), "x out of range: {x}");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // Use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) to stay in the
    // rapidly-converging region of the continued fraction.
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const TOL: f64 = 1e-12;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        // Even step.
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < TOL {
            break;
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// h = 1.06 * sigma_hat * n^(-1/5), floored at 1e-3.
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct KdeResult {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    /// Set when a zero-variance sample forced the h = 0.01 fallback.
    pub degenerate_fallback: bool,
}

/// Gaussian-kernel density estimate evaluated on `grid`.
pub fn kde(values: &[f64], bandwidth: Bandwidth, grid: &[f64]) -> Result<KdeResult, StatError> {
    if values.len() < 2 {
        return Err(StatError::TooFewSamples { need: 2, got: values.len() });
    }
    let n = values.len() as f64;
    let mut degenerate_fallback = false;
    let h = match bandwidth {
        Bandwidth::Fixed(h) => {
            assert!(h > 0.0, "bandwidth must be positive");
            h
        }
        Bandwidth::Silverman => {
            let (_, var) = mean_var(values);
            if var == 0.0 {
                degenerate_fallback = true;
                0.01
            } else {
                (1.06 * var.sqrt() * n.powf(-0.2)).max(1e-3)
            }
        }
    };
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|&g| {
            norm * values
                .iter()
                .map(|&v| (-0.5 * ((g - v) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    Ok(KdeResult {
        grid: grid.to_vec(),
        density,
        bandwidth: h,
        degenerate_fallback,
    })
}

/// A pair of probability mass vectors over one shared binning.
#[derive(Debug, Clone)]
pub struct Histogram2 {
    /// Shared bin edges (flattened description; informational only).
    pub edges: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Histogram2 {
    pub fn new(edges: Vec<f64>, p: Vec<f64>, q: Vec<f64>) -> Result<Self, StatError> {
        if p.len() != q.len() {
            return Err(StatError::BadHistogram(format!(
                "mass vectors have {} vs {} bins",
                p.len(),
                q.len()
            )));
        }
        for (name, m) in [("p", &p), ("q", &q)] {
            if m.iter().any(|&v| v < 0.0) {
                return Err(StatError::BadHistogram(format!("{name} has negative mass")));
            }
            let sum: f64 = m.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(StatError::BadHistogram(format!("{name} sums to {sum}")));
            }
        }
        Ok(Self { edges, p, q })
    }
}

/// Total variation distance (1/2) * sum |p_i - q_i| over shared bins.
pub fn tv_distance(h: &Histogram2) -> f64 {
    0.5 * h.p.iter().zip(&h.q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
