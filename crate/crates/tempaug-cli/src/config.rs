//! TOML experiment configuration. Every section is fully
//! self-describing — no defaults come from the environment — and unknown
//! keys are rejected so typos fail loudly before any compute runs.

use crate::error::CliError;
use serde::Deserialize;
use std::path::Path;
use tempaug_core::dataio::{self, LabeledDataset};
use tempaug_core::memory::WindowMode;
use tempaug_core::nn::{
    Activation, FreezeBelow, NetworkArch, ReinitAbove, TrainConfig,
};
use tempaug_core::noise::Centering;
use tempaug_core::trajectory::SplitSpec;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub arch: ArchSection,
    pub train: Option<TrainSection>,
    pub consistency: Option<ConsistencySection>,
    pub sweep: Option<SweepSection>,
    pub perturb: Option<PerturbSection>,
    pub isotropy: Option<IsotropySection>,
    pub ttest: Option<TtestSection>,
    pub memory: Option<MemorySection>,
    pub bound: Option<BoundSection>,
    pub region: Option<RegionSection>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::MissingData(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn section<'a, T>(opt: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        opt.as_ref()
            .ok_or_else(|| CliError::Config(format!("missing [{name}] section in config")))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct DatasetSection {
    pub source: DatasetSource,
    /// Optional truncation to the first n samples.
    pub take: Option<usize>,
    /// Fraction of labels to corrupt, with its own seed.
    pub label_noise_fraction: Option<f64>,
    pub label_noise_seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum DatasetSource {
    /// Gaussian blobs around per-class means.
    Blobs {
        class_count: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        seed: u64,
    },
    /// Procedural 28x28 digit renderings, 10 classes.
    Digits { per_class: usize, seed: u64 },
    /// IDX image/label file pair.
    Idx { images: String, labels: String },
    /// CSV with x0..x{d-1},label columns.
    Csv { path: String, class_count: usize },
}

impl DatasetSection {
    pub fn load(&self) -> Result<LabeledDataset, CliError> {
        let mut ds = match &self.source {
            DatasetSource::Blobs {
                class_count,
                per_class,
                dim,
                spread,
                seed,
            } => dataio::synth_blobs(*class_count, *per_class, *dim, *spread, *seed)?,
            DatasetSource::Digits { per_class, seed } => dataio::synth_digits(*per_class, *seed)?,
            DatasetSource::Idx { images, labels } => {
                dataio::load_idx(Path::new(images), Path::new(labels))?
            }
            DatasetSource::Csv { path, class_count } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::MissingData(format!("{path}: {e}")))?;
                LabeledDataset::from_csv(&text, *class_count, path)?
            }
        };
        if let Some(n) = self.take {
            ds = ds.take(n);
        }
        match (self.label_noise_fraction, self.label_noise_seed) {
            (Some(fraction), Some(seed)) => {
                ds = dataio::corrupt_labels(&ds, fraction, seed)?;
            }
            (Some(_), None) | (None, Some(_)) => {
                return Err(CliError::Config(
                    "label_noise_fraction and label_noise_seed must be set together".into(),
                ));
            }
            (None, None) => {}
        }
        Ok(ds)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub widths: Vec<usize>,
    /// One of "relu" (ReLU except the output boundary) or
    /// "linear_bottleneck" (additionally no activation after the
    /// penultimate layer), or an explicit per-boundary list.
    pub activations: ActivationSpec,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ActivationSpec {
    Preset(String),
    Explicit(Vec<String>),
}

impl ArchSection {
    pub fn build(&self) -> Result<NetworkArch, CliError> {
        match &self.activations {
            ActivationSpec::Preset(name) => match name.as_str() {
                "relu" => Ok(NetworkArch::relu(self.widths.clone())?),
                "linear_bottleneck" => {
                    Ok(NetworkArch::relu_with_linear_bottleneck(self.widths.clone())?)
                }
                other => Err(CliError::Config(format!(
                    "unknown activation preset {other:?} (use \"relu\", \"linear_bottleneck\", or a list)"
                ))),
            },
            ActivationSpec::Explicit(names) => {
                let acts = names
                    .iter()
                    .map(|n| match n.as_str() {
                        "relu" => Ok(Activation::Relu),
                        "identity" => Ok(Activation::Identity),
                        other => Err(CliError::Config(format!(
                            "unknown activation {other:?} (use \"relu\" or \"identity\")"
                        ))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(NetworkArch::new(self.widths.clone(), acts)?)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub run_id: String,
    pub freeze_below: Option<FreezeSection>,
    pub reinit_above: Option<ReinitSection>,
    /// Pairs [epoch, multiplier]: from each listed epoch on, the base
    /// learning rate is scaled by the multiplier.
    #[serde(default)]
    pub lr_schedule: Vec<(usize, f64)>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreezeSection {
    pub depth: usize,
    pub from_epoch: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReinitSection {
    pub depth: usize,
    pub at_epoch: usize,
}

impl TrainSection {
    pub fn build(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            freeze_below: self.freeze_below.as_ref().map(|f| FreezeBelow {
                depth: f.depth,
                from_epoch: f.from_epoch,
            }),
            reinit_above: self.reinit_above.as_ref().map(|r| ReinitAbove {
                depth: r.depth,
                at_epoch: r.at_epoch,
            }),
            lr_schedule: self.lr_schedule.clone(),
        }
    }
}

fn default_threshold() -> f64 {
    0.8
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencySection {
    pub t_grid: Vec<usize>,
    pub depth: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub max_samples: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum SweepMode {
    /// Head fixed at `fixed`, shallow extractor swept over `grid`.
    Memory,
    /// Head fixed at the earlier `fixed`, shallow swept over later `grid`.
    Transfer,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub mode: SweepMode,
    pub fixed: usize,
    pub grid: Vec<usize>,
    pub depth: usize,
    pub max_samples: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSection {
    pub epoch: usize,
    pub depth: usize,
    pub batch_size: usize,
    pub count: usize,
    /// Step size; omit to reuse the training learning rate.
    pub eta: Option<f64>,
    pub seed: u64,
    pub sample_index: usize,
    #[serde(default = "default_center")]
    pub center: String,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_center() -> String {
    "mean".into()
}

fn default_top_k() -> usize {
    5
}

impl PerturbSection {
    pub fn centering(&self) -> Result<Centering, CliError> {
        match self.center.as_str() {
            "mean" => Ok(Centering::Mean),
            "zero" => Ok(Centering::Zero),
            other => Err(CliError::Config(format!(
                "unknown centering {other:?} (use \"mean\" or \"zero\")"
            ))),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsotropySection {
    pub bootstrap_b: usize,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtestSection {
    /// Files with one numeric value per line ('#' lines skipped).
    pub file1: String,
    pub file2: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySection {
    pub delta: f64,
    pub window: usize,
    pub anchor: usize,
    pub depth: usize,
    #[serde(default = "default_window_mode")]
    pub mode: String,
    #[serde(default)]
    pub q: Vec<f64>,
    pub max_samples: Option<usize>,
}

fn default_window_mode() -> String {
    "two-sided".into()
}

pub fn parse_window_mode(mode: &str) -> Result<WindowMode, CliError> {
    match mode {
        "two-sided" => Ok(WindowMode::TwoSided),
        "one-sided" => Ok(WindowMode::OneSided),
        other => Err(CliError::Config(format!(
            "unknown window mode {other:?} (use \"two-sided\" or \"one-sided\")"
        ))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    pub class: usize,
    pub window: usize,
    pub anchor: usize,
    pub depth: usize,
    #[serde(default = "default_window_mode")]
    pub mode: String,
    pub bins_per_axis: Option<usize>,
    /// Held-out sample standing in for the true class distribution.
    pub heldout: DatasetSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    pub epoch: usize,
    pub depth: usize,
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub resolution: usize,
}

/// Build a validated split from a configured depth.
pub fn split_for(depth: usize, arch: &NetworkArch) -> Result<SplitSpec, CliError> {
    Ok(SplitSpec::new(depth, arch)?)
}
