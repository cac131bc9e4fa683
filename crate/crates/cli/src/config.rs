//! Run configuration: one TOML file per run, unknown keys rejected.

use std::path::{Path, PathBuf};

use fairwash::attack::{AttackConfig, Surrogate};
use fairwash::explain::Method;
use fairwash::models::{Activation, OptimizerKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory; every random choice of a run derives from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub explain: ExplainSpec,
    #[serde(default)]
    pub tangent: TangentSpec,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub credit: CreditSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// IDX image files (optionally gzipped). Limits keep the first samples.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    /// Generated credit applicants; the test split uses `seed + 1`.
    Credit {
        #[serde(default = "default_credit_train")]
        train_samples: usize,
        #[serde(default = "default_credit_test")]
        test_samples: usize,
    },
}

fn default_credit_train() -> usize {
    10_000
}

fn default_credit_test() -> usize {
    1_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    Relu,
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub activation: ActivationName,
    pub softplus_beta: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![256],
            activation: ActivationName::Relu,
            softplus_beta: Activation::DEFAULT_SOFTPLUS_BETA,
        }
    }
}

impl ModelSpec {
    pub fn activation(&self) -> Activation {
        match self.activation {
            ActivationName::Relu => Activation::Relu,
            ActivationName::Softplus => Activation::Softplus {
                beta: self.softplus_beta,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            optimizer: t.optimizer,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            batch_size: t.batch_size,
            epochs: t.epochs,
        }
    }
}

impl TrainSpec {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSpec {
    /// `"42"` for the built-in digits, otherwise the path of a map file.
    pub target: String,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub patience: usize,
    pub surrogate: Surrogate,
    pub accuracy_guard: f64,
    /// Attack the projected explanation instead of the raw one.
    pub tsp: bool,
}

impl Default for AttackSpec {
    fn default() -> Self {
        let a = AttackConfig::default();
        Self {
            target: "42".into(),
            gamma: a.gamma,
            learning_rate: a.learning_rate,
            batch_size: a.batch_size,
            max_epochs: a.max_epochs,
            tolerance: a.tolerance,
            patience: a.patience,
            surrogate: a.surrogate,
            accuracy_guard: a.accuracy_guard,
            tsp: false,
        }
    }
}

impl AttackSpec {
    pub fn to_config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            tolerance: self.tolerance,
            patience: self.patience,
            surrogate: self.surrogate,
            accuracy_guard: self.accuracy_guard,
            seed,
            ..AttackConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainSpec {
    pub methods: Vec<Method>,
    /// Leading test samples that are explained and evaluated.
    pub samples: usize,
    pub intgrad_steps: usize,
    pub lrp_epsilon: f64,
}

impl Default for ExplainSpec {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            samples: 500,
            intgrad_steps: 128,
            lrp_epsilon: fairwash::explain::LrpConfig::DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TangentMethod {
    Hyperplane,
    Autoencoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TangentSpec {
    pub method: TangentMethod,
    /// Neighbours for the hyperplane method.
    pub k: usize,
    /// Tangent dimension (also the autoencoder's latent size).
    pub d: usize,
    /// Hidden widths of the per-class autoencoders' encoder; the decoder
    /// mirrors them.
    pub ae_hidden: Vec<usize>,
    pub ae_epochs: usize,
    pub ae_learning_rate: f64,
}

impl Default for TangentSpec {
    fn default() -> Self {
        Self {
            method: TangentMethod::Hyperplane,
            k: 200,
            d: 30,
            ae_hidden: vec![128],
            ae_epochs: 30,
            ae_learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    /// Test samples used for pixel flipping (0 disables it).
    pub flip_samples: usize,
    pub random_orders: usize,
    pub flip_steps: usize,
    /// Test samples and largest dimension for the tangent sweep.
    pub sweep_samples: usize,
    pub sweep_max_d: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            flip_samples: 100,
            random_orders: 20,
            flip_steps: 100,
            sweep_samples: 20,
            sweep_max_d: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CreditSpec {
    pub samples: usize,
    pub lambda: f64,
}

impl Default for CreditSpec {
    fn default() -> Self {
        Self {
            samples: 100_000,
            lambda: 1000.0,
        }
    }
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads, applies overrides, resolves relative paths against the config
    /// file's directory and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &overrides.output_dir {
            cfg.output_dir = dir.clone();
        }
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base, overrides.output_dir.is_some());
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path, output_from_flag: bool) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if !output_from_flag {
            fix(&mut self.output_dir);
        }
        if let DataSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = &mut self.data
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                fix(p);
            }
        }
        if self.attack.target != "42" {
            let mut t = PathBuf::from(&self.attack.target);
            fix(&mut t);
            self.attack.target = t.to_string_lossy().into_owned();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if let DataSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
        } = &self.data
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                if !p.is_file() {
                    return bad(format!("data file {} does not exist", p.display()));
                }
            }
            if *train_limit == Some(0) || *test_limit == Some(0) {
                return bad("data limits must be positive".into());
            }
        }
        if self.attack.target != "42" && !Path::new(&self.attack.target).is_file() {
            return bad(format!("target map {} does not exist", self.attack.target));
        }
        if self.model.hidden.contains(&0) || self.tangent.ae_hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.explain.methods.is_empty() || self.explain.samples == 0 {
            return bad("explain needs at least one method and one sample".into());
        }
        if self.explain.intgrad_steps == 0 {
            return bad("intgrad_steps must be positive".into());
        }
        if self.tangent.d == 0 || self.tangent.k < self.tangent.d {
            return bad("tangent spec needs 0 < d <= k".into());
        }
        if self.eval.flip_steps == 0 || (self.eval.flip_samples > 0 && self.eval.random_orders == 0) {
            return bad("pixel flipping needs steps and random orders".into());
        }
        if self.credit.samples == 0 {
            return bad("credit demo needs samples".into());
        }
        self.train
            .to_config(self.seed)
            .validate()
            .map_err(|e| CliError::Config(format!("[train]: {e}")))?;
        self.attack
            .to_config(self.seed)
            .validate()
            .map_err(|e| CliError::Config(format!("[attack]: {e}")))?;
        Ok(())
    }
}
