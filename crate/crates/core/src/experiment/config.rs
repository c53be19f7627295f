use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::angular::K_MIN;
use crate::data::{self, AugmentMode, Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossSpec};
use crate::network::{
    preset, LayerSpec, NetworkSpec, OperatorConfig, PresetOptions, Regularization, RescaleConfig,
};
use crate::train::{OptimizerConfig, Schedule, StepConfig};

/// Shipped configurations, addressable as `preset:<name>`.
pub const PRESETS: &[(&str, &str)] = &[
    ("table1-desk", include_str!("../../../../configs/table1-desk.toml")),
    ("fig3-convergence", include_str!("../../../../configs/fig3-convergence.toml")),
    ("fig4-spherenorm", include_str!("../../../../configs/fig4-spherenorm.toml")),
    ("lemma-sweep", include_str!("../../../../configs/lemma-sweep.toml")),
    ("gradcheck-matrix", include_str!("../../../../configs/gradcheck-matrix.toml")),
];

/// Text of a config given as a file path or `preset:<name>`.
pub fn config_text(arg: &str) -> Result<String> {
    if let Some(name) = arg.strip_prefix("preset:") {
        return PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.to_string())
            .ok_or_else(|| {
                let known: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
                Error::Config(format!("unknown preset {name:?} (known: {})", known.join(", ")))
            });
    }
    std::fs::read_to_string(arg).map_err(|e| Error::io(arg, e))
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

/// Parses and validates a config file or preset.
pub fn load<T: DeserializeOwned + Validate>(arg: &str) -> Result<T> {
    let cfg: T = parse(&config_text(arg)?)?;
    cfg.validate()?;
    Ok(cfg)
}

pub trait Validate {
    fn validate(&self) -> Result<()>;
}

fn default_name() -> String {
    "run".into()
}
fn default_true() -> bool {
    true
}
fn default_lambda() -> f64 {
    1e-4
}
fn default_k_min() -> f64 {
    K_MIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    #[serde(default = "default_lambda")]
    pub lambda_orth: f64,
    #[serde(default)]
    pub orth_head: bool,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            lambda_orth: default_lambda(),
            orth_head: false,
        }
    }
}

impl RegConfig {
    pub fn build(&self) -> Regularization {
        Regularization {
            lambda_orth: self.lambda_orth,
            orth_head: self.orth_head,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NetworkConfig {
    /// A named architecture; without `op` the dot-product network is built.
    Preset {
        name: String,
        #[serde(default)]
        op: Option<OperatorConfig>,
        #[serde(default)]
        batchnorm: bool,
        #[serde(default)]
        rescale: Option<RescaleConfig>,
        #[serde(default)]
        widths: Option<[usize; 3]>,
        #[serde(default)]
        fc: Option<usize>,
    },
    Custom {
        layers: Vec<LayerSpec>,
        #[serde(default)]
        head_bias: bool,
    },
}

impl NetworkConfig {
    pub fn build(&self, input: [usize; 3], classes: usize) -> Result<NetworkSpec> {
        match self {
            NetworkConfig::Preset {
                name,
                op,
                batchnorm,
                rescale,
                widths,
                fc,
            } => preset(
                name,
                input,
                classes,
                &PresetOptions {
                    op: op.clone(),
                    batchnorm: *batchnorm,
                    rescale: *rescale,
                    widths: *widths,
                    fc: *fc,
                },
            ),
            NetworkConfig::Custom { layers, head_bias } => {
                let spec = NetworkSpec {
                    name: "custom".into(),
                    input,
                    classes,
                    layers: layers.clone(),
                    head_bias: *head_bias,
                };
                spec.check_shapes()?;
                Ok(spec)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Gaussian clusters; the test split holds further draws from the same
    /// clusters.
    Blobs {
        #[serde(default = "default_classes")]
        classes: usize,
        per_class: usize,
        #[serde(default)]
        test_per_class: usize,
        shape: [usize; 3],
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    /// The four IDX files under `dir`, relative to the data root.
    Mnist {
        #[serde(default = "default_mnist_dir")]
        dir: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Cifar10 {
        #[serde(default = "default_cifar_dir")]
        dir: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

fn default_classes() -> usize {
    2
}
fn default_mnist_dir() -> PathBuf {
    "mnist".into()
}
fn default_cifar_dir() -> PathBuf {
    "cifar-10-batches-bin".into()
}

impl DatasetConfig {
    pub fn shape(&self) -> [usize; 3] {
        match self {
            DatasetConfig::Blobs { shape, .. } => *shape,
            DatasetConfig::Mnist { .. } => [1, 28, 28],
            DatasetConfig::Cifar10 { .. } => [3, 32, 32],
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            DatasetConfig::Blobs { classes, .. } => *classes,
            _ => 10,
        }
    }

    fn validate(&self) -> Result<()> {
        if let DatasetConfig::Blobs {
            classes,
            per_class,
            shape,
            separation,
            ..
        } = self
        {
            if *classes == 0 || *per_class == 0 || shape.contains(&0) {
                return Err(Error::Config("blobs need classes, per_class and shape > 0".into()));
            }
            if !(*separation >= 0.0 && separation.is_finite()) {
                return Err(Error::Config(format!("blob separation must be >= 0, got {separation}")));
            }
        }
        Ok(())
    }

    /// Train and optional test split. Relative directories resolve against
    /// `root`, then `SPHERE_DATA_DIR`, then `./data`.
    pub fn load(&self, root: Option<&Path>) -> Result<(Dataset, Option<Dataset>)> {
        let resolve = |dir: &Path| -> PathBuf {
            if dir.is_absolute() {
                return dir.to_path_buf();
            }
            data::data_root(root).unwrap_or_else(|| PathBuf::from("data")).join(dir)
        };
        let limit = |ds: Dataset, n: &Option<usize>| match n {
            Some(n) => ds.take(*n),
            None => ds,
        };
        match self {
            DatasetConfig::Blobs {
                classes,
                per_class,
                test_per_class,
                shape,
                separation,
                seed,
            } => {
                let all = data::synthetic_blobs(*classes, per_class + test_per_class, *shape, *separation, *seed)?;
                let cut = classes * per_class;
                let train = all.take(cut);
                let test = (*test_per_class > 0).then(|| Dataset {
                    images: all.images[cut..].to_vec(),
                    labels: all.labels[cut..].to_vec(),
                    split: Split::Test,
                    ..all.clone()
                });
                Ok((train, test))
            }
            DatasetConfig::Mnist {
                dir,
                train_limit,
                test_limit,
            } => {
                let (tr, te) = data::load_mnist_dir(&resolve(dir))?;
                Ok((limit(tr, train_limit), Some(limit(te, test_limit))))
            }
            DatasetConfig::Cifar10 {
                dir,
                train_limit,
                test_limit,
            } => {
                let (tr, te) = data::load_cifar10_dir(&resolve(dir))?;
                Ok((limit(tr, train_limit), Some(limit(te, test_limit))))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainAcceptance {
    #[serde(default)]
    pub min_final_train_acc: Option<f64>,
    #[serde(default)]
    pub min_final_test_acc: Option<f64>,
}

/// Sections a grid cell may replace wholesale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub name: String,
    #[serde(default)]
    pub network: Option<NetworkConfig>,
    #[serde(default)]
    pub loss: Option<LossConfig>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub regularization: Option<RegConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub iterations: usize,
    pub batch_size: usize,
    /// Test accuracy every this many iterations and at the last one;
    /// 0 evaluates only at the end.
    #[serde(default)]
    pub eval_every: usize,
    pub schedule: Schedule,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    pub network: NetworkConfig,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub augment: AugmentMode,
    #[serde(default)]
    pub regularization: RegConfig,
    #[serde(default = "default_k_min")]
    pub k_min: f64,
    /// Also train the dot-product twin with the same seed and settings.
    #[serde(default)]
    pub paired_baseline: bool,
    #[serde(default = "default_true")]
    pub checkpoint: bool,
    #[serde(default)]
    pub grid: Vec<CellConfig>,
    #[serde(default)]
    pub parallel_cells: bool,
    #[serde(default)]
    pub acceptance: Option<TrainAcceptance>,
}

impl TrainConfig {
    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            reg: self.regularization.build(),
            k_min: self.k_min,
        }
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        self.network.build(self.dataset.shape(), self.dataset.classes())
    }

    pub fn loss_spec(&self) -> Result<LossSpec> {
        self.loss.build().map_err(|e| Error::Config(e.to_string()))
    }

    /// One config per grid cell (the config itself when there is no grid).
    pub fn cells(&self) -> Vec<(Option<String>, TrainConfig)> {
        if self.grid.is_empty() {
            return vec![(None, self.clone())];
        }
        self.grid
            .iter()
            .map(|c| {
                let mut t = self.clone();
                t.grid.clear();
                if let Some(n) = &c.network {
                    t.network = n.clone();
                }
                if let Some(l) = &c.loss {
                    t.loss = l.clone();
                }
                if let Some(b) = c.batch_size {
                    t.batch_size = b;
                }
                if let Some(o) = c.optimizer {
                    t.optimizer = o;
                }
                if let Some(r) = &c.regularization {
                    t.regularization = r.clone();
                }
                t.name = format!("{}/{}", self.name, c.name);
                (Some(c.name.clone()), t)
            })
            .collect()
    }

    fn validate_one(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return fail("iterations must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.k_min > 0.0) {
            return fail(format!("k_min must be positive, got {}", self.k_min));
        }
        if !(self.regularization.lambda_orth >= 0.0) {
            return fail("lambda_orth must be non-negative".into());
        }
        if let OptimizerConfig::Sgd { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return fail(format!("momentum must be in [0, 1), got {momentum}"));
            }
        }
        self.schedule.validate(self.iterations)?;
        self.dataset.validate()?;
        self.loss_spec()?;
        let spec = self.network_spec().map_err(|e| Error::Config(e.to_string()))?;
        if self.paired_baseline {
            spec.baseline_twin().check_shapes().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

impl Validate for TrainConfig {
    fn validate(&self) -> Result<()> {
        let mut names = std::collections::HashSet::new();
        for c in &self.grid {
            if c.name.is_empty() || c.name.contains(['/', '\\']) || !names.insert(&c.name) {
                return Err(Error::Config(format!("grid cell names must be unique path-safe words, got {:?}", c.name)));
            }
        }
        for (cell, cfg) in self.cells() {
            cfg.validate_one().map_err(|e| match cell {
                Some(c) => Error::Config(format!("cell {c:?}: {e}")),
                None => e,
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_per_block")]
    pub per_block: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_gc_batch")]
    pub batch_size: usize,
    #[serde(default = "default_gc_input")]
    pub input: [usize; 3],
    #[serde(default = "default_gc_classes")]
    pub classes: usize,
    /// Keep only cells whose operator name is listed (e.g. "cosine").
    #[serde(default)]
    pub ops: Option<Vec<String>>,
    /// Keep only cells whose loss name is listed (e.g. "w-softmax-cosine").
    #[serde(default)]
    pub losses: Option<Vec<String>>,
    #[serde(default = "default_true")]
    pub baseline: bool,
    /// Orthogonality weight during the check. Sized so the penalty is
    /// comparable to the data loss: much smaller and its share of a gradient
    /// drowns in central-difference noise, much larger and the loss itself
    /// grows enough to raise that noise.
    #[serde(default = "default_gc_lambda")]
    pub lambda_orth: f64,
    /// Corrupts one analytic gradient in the named cell, to exercise the
    /// detector.
    #[serde(default)]
    pub inject_fault: Option<String>,
}

fn default_h() -> f64 {
    1e-5
}
fn default_per_block() -> usize {
    64
}
fn default_tolerance() -> f64 {
    1e-4
}
fn default_gc_batch() -> usize {
    3
}
fn default_gc_input() -> [usize; 3] {
    [3, 8, 8]
}
fn default_gc_lambda() -> f64 {
    0.01
}
fn default_gc_classes() -> usize {
    5
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        parse("").expect("defaults")
    }
}

impl Validate for GradcheckConfig {
    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.tolerance > 0.0) {
            return Err(Error::Config("h and tolerance must be positive".into()));
        }
        if !(self.lambda_orth >= 0.0) {
            return Err(Error::Config("lambda_orth must be non-negative".into()));
        }
        if self.batch_size == 0 || self.per_block == 0 || self.classes < 2 || self.input.contains(&0) {
            return Err(Error::Config("batch_size, per_block, input must be positive and classes >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningAcceptance {
    pub slope_min: f64,
    pub slope_max: f64,
    #[serde(default = "default_gs_tol")]
    pub spectrum_gs_tol: f64,
    #[serde(default = "default_trace_tol")]
    pub trace_tol: f64,
}

fn default_gs_tol() -> f64 {
    1e-8
}
fn default_trace_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningConfig {
    #[serde(default = "default_eight")]
    pub n: usize,
    #[serde(default = "default_eight")]
    pub m: usize,
    #[serde(default = "default_two")]
    pub k: usize,
    #[serde(default = "default_c_list")]
    pub c_list: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub acceptance: Option<ConditioningAcceptance>,
}

fn default_eight() -> usize {
    8
}
fn default_two() -> usize {
    2
}
fn default_c_list() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0]
}
fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        parse("").expect("defaults")
    }
}

impl Validate for ConditioningConfig {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.k == 0 {
            return Err(Error::Config("n, m and k must be positive".into()));
        }
        if self.c_list.is_empty() || self.c_list.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config(format!("c_list must hold positive scales, got {:?}", self.c_list)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KhistConfig {
    /// Relative paths resolve against the config file's directory.
    pub checkpoint: PathBuf,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    20
}

impl Validate for KhistConfig {
    fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::Config("bins must be positive".into()));
        }
        Ok(())
    }
}
