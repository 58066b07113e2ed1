//! TOML run configuration and its resolution into core types.
//!
//! Every section has working defaults, so an empty (or absent) config
//! trains the stock 4-block net on the synthetic scale-cue set. Flags
//! given on the command line win over file values.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use earlynet::budget::{BudgetDensity, ExitSchedule, WeightScheme};
use earlynet::data::{
    load_csv, load_idx, synthetic_scale_cue, Dataset, Normalizer, SyntheticSpec, SYNTHETIC_CLASSES,
};
use earlynet::inference::{CostModel, StopCriterion};
use earlynet::net::HeadKind;
use earlynet::trainer::{TrainConfig, DEFAULT_LR_BATCHNORM, DEFAULT_LR_PLAIN};
use earlynet::Net32;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub arch: ArchSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub cascade: CascadeSection,
    #[serde(default)]
    pub anytime: AnytimeSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// "synthetic", "idx" or "csv".
    #[serde(default = "default_kind")]
    pub kind: String,
    /// IDX image / label file pair (kind = "idx").
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// CSV file (kind = "csv"): label column first, then pixels.
    pub path: Option<PathBuf>,
    /// Number of classes; required for idx and csv.
    pub classes: Option<usize>,
    /// Synthetic generator parameters.
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_easy_fraction")]
    pub easy_fraction: f64,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    /// Stratified train/val/test fractions; the last split is the
    /// evaluation set, the middle one (when present) the validation set.
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    /// Per-channel standardisation fitted on the train split.
    #[serde(default)]
    pub normalize: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section deserialises via field defaults")
    }
}

fn default_kind() -> String {
    "synthetic".into()
}
fn default_per_class() -> usize {
    100
}
fn default_easy_fraction() -> f64 {
    0.35
}
fn default_noise_sigma() -> f64 {
    0.1
}
fn default_fractions() -> Vec<f64> {
    vec![0.8, 0.1, 0.1]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    /// Input shape [channels, height, width].
    #[serde(default = "default_input")]
    pub input: Vec<usize>,
    /// Output channels of each conv block; one exit head per block.
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
    #[serde(default = "default_true")]
    pub batchnorm: bool,
    /// One head kind for every block: "fc", "avg" or "avg4x4".
    pub head: Option<String>,
    /// Per-block head kinds; wins over `head`. When neither is given,
    /// each head pools onto a 4x4 grid while the feature map still has
    /// at least 4x4 extent and falls back to global averaging after.
    pub heads: Option<Vec<String>>,
    /// Optional hidden layer width inside every head.
    pub hidden: Option<usize>,
}

impl Default for ArchSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section deserialises via field defaults")
    }
}

fn default_input() -> Vec<usize> {
    vec![1, 28, 28]
}
fn default_channels() -> Vec<usize> {
    vec![6, 10, 16, 24]
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Defaults by architecture: 0.01 with batch norm, 1e-4 without.
    pub learning_rate: Option<f64>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// "std", "eq", "lin", "poly", "ilin", "ipoly", "norm" or "density"
    /// (the latter reads the [budget] section).
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section deserialises via field defaults")
    }
}

fn default_epochs() -> usize {
    24
}
fn default_batch_size() -> usize {
    32
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_seed() -> u64 {
    7
}
fn default_scheme() -> String {
    "eq".into()
}
fn default_gamma() -> f64 {
    2.0
}
fn default_beta() -> f64 {
    0.34
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    /// "uniform", "exponential", "pointmass" or "piecewise".
    #[serde(default = "default_density_kind")]
    pub kind: String,
    #[serde(default)]
    pub start: f64,
    #[serde(default = "default_one")]
    pub end: f64,
    #[serde(default = "default_one")]
    pub rate: f64,
    #[serde(default = "default_half")]
    pub at: f64,
    #[serde(default)]
    pub breakpoints: Vec<f64>,
    #[serde(default)]
    pub densities: Vec<f64>,
    /// When true (default) the time axis is in units of the full
    /// network's budgeted cost, so `end = 1.0` means "up to a full
    /// forward pass"; when false, times are raw MAC counts.
    #[serde(default = "default_true")]
    pub relative: bool,
}

impl Default for BudgetSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section deserialises via field defaults")
    }
}

fn default_density_kind() -> String {
    "uniform".into()
}
fn default_one() -> f64 {
    1.0
}
fn default_half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeSection {
    /// "ratio", "entropy" or "both".
    #[serde(default = "default_criterion")]
    pub criterion: String,
    /// Ascending ratio thresholds (stop when top1/top2 >= threshold).
    #[serde(default = "default_ratio_thresholds")]
    pub thresholds: Vec<f64>,
    /// Ascending entropy thresholds (stop when normalised entropy <=
    /// threshold), used by the entropy sweep.
    #[serde(default = "default_entropy_thresholds")]
    pub entropy_thresholds: Vec<f64>,
}

impl Default for CascadeSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section deserialises via field defaults")
    }
}

fn default_criterion() -> String {
    "ratio".into()
}
fn default_ratio_thresholds() -> Vec<f64> {
    vec![
        1.0, 1.05, 1.1, 1.2, 1.35, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0, 6.0, 10.0, 20.0, 50.0, 1e3,
    ]
}
fn default_entropy_thresholds() -> Vec<f64> {
    vec![0.0, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.65, 0.8, 1.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnytimeSection {
    /// Grid points over [first head done, last head done].
    #[serde(default = "default_points")]
    pub points: usize,
}

impl Default for AnytimeSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section deserialises via field defaults")
    }
}

fn default_points() -> usize {
    9
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Apply command-line overrides; flags win over file values.
    pub fn override_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.train.seed = s;
        }
    }

    /// Compact `--data` forms: "synthetic", "idx:<images>:<labels>", or
    /// a CSV path.
    pub fn override_data(&mut self, data: Option<&str>) -> Result<()> {
        let Some(d) = data else { return Ok(()) };
        if d == "synthetic" {
            self.data.kind = "synthetic".into();
        } else if let Some(rest) = d.strip_prefix("idx:") {
            let (images, labels) = rest
                .split_once(':')
                .context("--data idx form is idx:<images>:<labels>")?;
            self.data.kind = "idx".into();
            self.data.images = Some(images.into());
            self.data.labels = Some(labels.into());
        } else if d.ends_with(".csv") {
            self.data.kind = "csv".into();
            self.data.path = Some(d.into());
        } else {
            bail!("--data wants 'synthetic', 'idx:<images>:<labels>' or a .csv path, got '{d}'");
        }
        Ok(())
    }

    /// Load the configured dataset and split it. Returns (train, val,
    /// eval); val is None for fewer than three fractions, and a single
    /// fraction means train == eval == the whole set.
    pub fn splits(&self) -> Result<(Dataset<f32>, Option<Dataset<f32>>, Dataset<f32>)> {
        let full = self.full_dataset()?;
        let (mut train, mut val, mut eval) = if self.data.fractions.len() < 2 {
            (full.clone(), None, full)
        } else {
            let mut parts = full
                .stratified_split(&self.data.fractions, self.train.seed.wrapping_add(1))
                .context("splitting dataset")?;
            let eval = parts.pop().expect("at least two splits");
            let val = if parts.len() >= 2 { Some(parts.remove(1)) } else { None };
            (parts.remove(0), val, eval)
        };
        if self.data.normalize {
            let norm = Normalizer::fit(&train)?;
            norm.apply(&mut train)?;
            if let Some(v) = val.as_mut() {
                norm.apply(v)?;
            }
            norm.apply(&mut eval)?;
        }
        Ok((train, val, eval))
    }

    fn full_dataset(&self) -> Result<Dataset<f32>> {
        match self.data.kind.as_str() {
            "synthetic" => {
                let spec = SyntheticSpec {
                    per_class: self.data.per_class,
                    easy_fraction: self.data.easy_fraction,
                    noise_sigma: self.data.noise_sigma,
                    seed: self.train.seed,
                };
                if let Some(c) = self.data.classes {
                    if c != SYNTHETIC_CLASSES {
                        bail!("the synthetic set has {SYNTHETIC_CLASSES} classes, config says {c}");
                    }
                }
                Ok(synthetic_scale_cue(&spec)?)
            }
            "idx" => {
                let images = self.data.images.as_deref().context("[data] images path missing")?;
                let labels = self.data.labels.as_deref().context("[data] labels path missing")?;
                let classes = self.data.classes.context("[data] classes missing for idx data")?;
                Ok(load_idx(images, labels, classes)?)
            }
            "csv" => {
                let path = self.data.path.as_deref().context("[data] path missing")?;
                let classes = self.data.classes.context("[data] classes missing for csv data")?;
                // rows come in flat; fold them into the configured shape
                Ok(load_csv(path, classes)?.reshaped_images(&self.arch.input)?)
            }
            other => bail!("[data] kind must be synthetic, idx or csv, got '{other}'"),
        }
    }

    /// Build the configured architecture with freshly seeded parameters.
    pub fn build_net(&self, num_classes: usize) -> Result<Net32> {
        let kinds = self.head_kinds()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed.wrapping_add(2));
        let net = Net32::conv_blocks_with_kinds(
            &self.arch.input,
            &self.arch.channels,
            self.arch.batchnorm,
            &kinds,
            self.arch.hidden,
            num_classes,
            &mut rng,
        )?;
        Ok(net)
    }

    fn head_kinds(&self) -> Result<Vec<HeadKind>> {
        if let Some(names) = &self.arch.heads {
            if names.len() != self.arch.channels.len() {
                bail!(
                    "[arch] lists {} heads for {} blocks",
                    names.len(),
                    self.arch.channels.len()
                );
            }
            return names.iter().map(|n| parse_head_kind(n)).collect();
        }
        if let Some(name) = &self.arch.head {
            let kind = parse_head_kind(name)?;
            return Ok(vec![kind; self.arch.channels.len()]);
        }
        // default: 4x4 pooling while the map is big enough, then global
        let [_, mut h, mut w] = self.arch.input[..] else {
            bail!("[arch] input must be [channels, height, width], got {:?}", self.arch.input);
        };
        let mut kinds = Vec::with_capacity(self.arch.channels.len());
        for _ in &self.arch.channels {
            h /= 2;
            w /= 2;
            kinds.push(if h.min(w) >= 4 { HeadKind::Avg4x4 } else { HeadKind::Avg });
        }
        Ok(kinds)
    }

    /// Class count without touching the data files; needed by commands
    /// that only look at shapes.
    pub fn num_classes(&self) -> Result<usize> {
        if self.data.kind == "synthetic" {
            Ok(SYNTHETIC_CLASSES)
        } else {
            self.data.classes.context("[data] classes missing")
        }
    }

    /// The training configuration; the cost model feeds scheme
    /// "density", which weighs heads by when their budget runs out.
    pub fn train_config(&self, model: Option<&CostModel>) -> Result<TrainConfig> {
        let lr = self.train.learning_rate.unwrap_or(if self.arch.batchnorm {
            DEFAULT_LR_BATCHNORM
        } else {
            DEFAULT_LR_PLAIN
        });
        Ok(TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: lr,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            seed: self.train.seed,
            scheme: self.scheme(&self.train.scheme, model)?,
        })
    }

    /// Resolve a scheme name. "density" needs the trained net's cost
    /// model, supplied by the caller.
    pub fn scheme(&self, name: &str, model: Option<&CostModel>) -> Result<WeightScheme> {
        Ok(match name {
            "std" => WeightScheme::Std,
            "eq" => WeightScheme::Eq,
            "lin" => WeightScheme::Lin,
            "poly" => WeightScheme::Poly { gamma: self.train.gamma },
            "ilin" => WeightScheme::ILin,
            "ipoly" => WeightScheme::IPoly { gamma: self.train.gamma },
            "norm" => WeightScheme::Norm { beta: self.train.beta },
            "density" => {
                let model = model
                    .context("scheme 'density' needs per-head costs; not available here")?;
                let density = self.density(model)?;
                let schedule = ExitSchedule::new(model.skip.clone())?;
                WeightScheme::FromDensity { density, schedule }
            }
            other => bail!(
                "unknown scheme '{other}' (want std, eq, lin, poly, ilin, ipoly, norm or density)"
            ),
        })
    }

    /// The [budget] density, rescaled from fractions of a full forward
    /// pass to raw cost units unless `relative = false`.
    pub fn density(&self, model: &CostModel) -> Result<BudgetDensity> {
        let t = if self.budget.relative { *model.skip.last().expect("nonempty") } else { 1.0 };
        let b = &self.budget;
        let density = match b.kind.as_str() {
            "uniform" => BudgetDensity::Uniform { start: b.start * t, end: b.end * t },
            "exponential" => BudgetDensity::Exponential { rate: b.rate / t },
            "pointmass" => BudgetDensity::PointMass { at: b.at * t },
            "piecewise" => BudgetDensity::Piecewise {
                breakpoints: b.breakpoints.iter().map(|x| x * t).collect(),
                // masses must stay put under the change of variable
                densities: b.densities.iter().map(|d| d / t).collect(),
            },
            other => bail!(
                "[budget] kind must be uniform, exponential, pointmass or piecewise, got '{other}'"
            ),
        };
        density.validate()?;
        Ok(density)
    }

    pub fn stop_criteria(&self) -> Result<Vec<StopCriterion>> {
        Ok(match self.cascade.criterion.as_str() {
            "ratio" => vec![StopCriterion::Ratio],
            "entropy" => vec![StopCriterion::Entropy],
            "both" => vec![StopCriterion::Ratio, StopCriterion::Entropy],
            other => bail!("[cascade] criterion must be ratio, entropy or both, got '{other}'"),
        })
    }

    pub fn thresholds_for(&self, criterion: StopCriterion) -> &[f64] {
        match criterion {
            StopCriterion::Ratio => &self.cascade.thresholds,
            StopCriterion::Entropy => &self.cascade.entropy_thresholds,
        }
    }
}

fn parse_head_kind(name: &str) -> Result<HeadKind> {
    Ok(match name {
        "fc" => HeadKind::FcOnly,
        "avg" => HeadKind::Avg,
        "avg4x4" => HeadKind::Avg4x4,
        other => bail!("unknown head kind '{other}' (want fc, avg or avg4x4)"),
    })
}
