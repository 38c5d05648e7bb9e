//! The run configuration document (TOML). Unknown keys are rejected; every
//! key has a default. Schedule keys and meta-learning rates default from the
//! selected profile.

use std::path::{Path, PathBuf};

use crossdepict_core::data::{GeneratorConfig, Style};
use crossdepict_core::eval::{BenchmarkConfig, DEFAULT_KL_BINS};
use crossdepict_core::model::Activation;
use crossdepict_core::train::{GradientMode, MetaRegConfig, Method, MldgConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 45k iterations, decay period 15k.
    Paper,
    /// 3k iterations, decay period 1k.
    #[default]
    Desk,
}

impl Profile {
    pub fn train_config(self) -> TrainConfig {
        match self {
            Profile::Paper => TrainConfig::paper(),
            Profile::Desk => TrainConfig::desk(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Generate,
    Load,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Output directory; relative paths resolve against the working directory.
    pub out: PathBuf,
    pub profile: Profile,
    /// Base seed of training runs; benchmarks use `seed .. seed + repeats`.
    pub seed: u64,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub method: MethodSection,
    pub schedule: ScheduleSection,
    pub bench: BenchSection,
    pub analyze: AnalyzeSection,
    /// Directory of the config file; relative dataset paths resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("crossdepict-out"),
            profile: Profile::Desk,
            seed: 0,
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            method: MethodSection::default(),
            schedule: ScheduleSection::default(),
            bench: BenchSection::default(),
            analyze: AnalyzeSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub source: DataSource,
    /// Manifest to read when `source = "load"`.
    pub manifest: Option<PathBuf>,
    pub classes: usize,
    pub domains: Vec<String>,
    pub per_class: usize,
    pub side: usize,
    pub noise: f64,
    pub max_shift: usize,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            source: DataSource::Generate,
            manifest: None,
            classes: g.classes,
            domains: g.domains.iter().map(|s| s.name().to_string()).collect(),
            per_class: g.per_class,
            side: g.side,
            noise: g.noise,
            max_shift: g.max_shift,
            seed: g.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Widths after the input layer; the last is the representation width.
    pub hidden: Vec<usize>,
    pub activation: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            activation: "relu".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodSection {
    /// One of baseline, fixed-head, fixed-orthogonal-head, mldg, metareg.
    pub name: String,
    /// Domain held out by `train`.
    pub held_out: String,
    pub mldg: MldgSection,
    pub metareg: MetaRegSection,
}

impl Default for MethodSection {
    fn default() -> Self {
        Self {
            name: "baseline".into(),
            held_out: "sketch".into(),
            mldg: MldgSection::default(),
            metareg: MetaRegSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MldgSection {
    /// Defaults to the schedule's learning rate.
    pub alpha: Option<f64>,
    pub beta: f64,
    /// Defaults to the schedule's learning rate.
    pub gamma: Option<f64>,
    pub constant_gamma: bool,
    pub mode: String,
}

impl Default for MldgSection {
    fn default() -> Self {
        let d = MldgConfig::default();
        Self {
            alpha: None,
            beta: d.beta,
            gamma: None,
            constant_gamma: d.constant_gamma,
            mode: d.mode.name().into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaRegSection {
    /// Defaults to the schedule's learning rate.
    pub alpha1: Option<f64>,
    /// Defaults to the schedule's learning rate.
    pub alpha2: Option<f64>,
    pub inner_steps: usize,
    pub phi_init: f64,
    pub phase1_iterations: usize,
    pub meta_iterations: usize,
    pub mode: String,
}

impl Default for MetaRegSection {
    fn default() -> Self {
        let d = MetaRegConfig::default();
        Self {
            alpha1: None,
            alpha2: None,
            inner_steps: d.inner_steps,
            phi_init: d.phi_init,
            phase1_iterations: d.phase1_iterations,
            meta_iterations: d.meta_iterations,
            mode: d.mode.name().into(),
        }
    }
}

/// Optimizer settings; unset keys take the profile's values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub decay: Option<f64>,
    pub decay_period: Option<usize>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub eval_interval: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub methods: Vec<String>,
    pub repeats: u64,
    /// Worker threads; 0 means one per available core.
    pub workers: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            methods: Method::NAMES.iter().map(|s| s.to_string()).collect(),
            repeats: 5,
            workers: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSection {
    pub bins: usize,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self { bins: DEFAULT_KL_BINS }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

fn bad(key: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {message}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config =
            Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    /// Applies overrides, fills profile-dependent defaults and validates
    /// every section.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(p) = o.profile {
            self.profile = p;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.workers {
            self.bench.workers = w;
        }
        let p = self.profile.train_config();
        let s = &mut self.schedule;
        s.iterations.get_or_insert(p.iterations);
        s.batch_size.get_or_insert(p.batch_size);
        s.decay.get_or_insert(p.decay);
        s.decay_period.get_or_insert(p.decay_period);
        s.momentum.get_or_insert(p.momentum);
        s.weight_decay.get_or_insert(p.weight_decay);
        s.eval_interval.get_or_insert(p.eval_interval);
        let lr = *s.lr.get_or_insert(p.lr);
        self.method.mldg.alpha.get_or_insert(lr);
        self.method.mldg.gamma.get_or_insert(lr);
        self.method.metareg.alpha1.get_or_insert(lr);
        self.method.metareg.alpha2.get_or_insert(lr);

        self.train_config().validate().map_err(|e| bad("schedule", e))?;
        self.activation()?;
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(bad("model.hidden", "needs at least one positive width"));
        }
        let hidden = self.model.hidden.len();
        check_method(&self.method(&self.method.name)?, hidden)?;
        for name in &self.bench.methods {
            check_method(&self.method(name).map_err(|e| bad("bench.methods", e))?, hidden)?;
        }
        if self.bench.methods.is_empty() {
            return Err(bad("bench.methods", "needs at least one method"));
        }
        if self.bench.repeats == 0 {
            return Err(bad("bench.repeats", "must be at least 1"));
        }
        if self.analyze.bins < 2 {
            return Err(bad("analyze.bins", "must be at least 2"));
        }
        match self.dataset.source {
            DataSource::Generate => {
                self.generator_config()?;
            }
            DataSource::Load => {
                if self.dataset.manifest.is_none() {
                    return Err(bad("dataset.manifest", "required when dataset.source = \"load\""));
                }
            }
        }
        Ok(self)
    }

    pub fn train_config(&self) -> TrainConfig {
        let p = self.profile.train_config();
        let s = &self.schedule;
        TrainConfig {
            iterations: s.iterations.unwrap_or(p.iterations),
            batch_size: s.batch_size.unwrap_or(p.batch_size),
            lr: s.lr.unwrap_or(p.lr),
            decay: s.decay.unwrap_or(p.decay),
            decay_period: s.decay_period.unwrap_or(p.decay_period),
            momentum: s.momentum.unwrap_or(p.momentum),
            weight_decay: s.weight_decay.unwrap_or(p.weight_decay),
            eval_interval: s.eval_interval.unwrap_or(p.eval_interval),
            seed: self.seed,
        }
    }

    pub fn activation(&self) -> Result<Activation> {
        Activation::parse(&self.model.activation)
            .ok_or_else(|| bad("model.activation", format!("unknown activation `{}`", self.model.activation)))
    }

    fn gradient_mode(key: &str, s: &str) -> Result<GradientMode> {
        GradientMode::parse(s).ok_or_else(|| bad(key, format!("unknown gradient mode `{s}` (exact or first-order)")))
    }

    /// The named method with this file's hyperparameters.
    pub fn method(&self, name: &str) -> Result<Method> {
        let lr = self.schedule.lr.unwrap_or(self.profile.train_config().lr);
        let m = &self.method;
        let method = match name {
            "mldg" => Method::Mldg(MldgConfig {
                alpha: m.mldg.alpha.unwrap_or(lr),
                beta: m.mldg.beta,
                gamma: m.mldg.gamma.unwrap_or(lr),
                constant_gamma: m.mldg.constant_gamma,
                mode: Self::gradient_mode("method.mldg.mode", &m.mldg.mode)?,
            }),
            "metareg" => Method::MetaReg(MetaRegConfig {
                alpha1: m.metareg.alpha1.unwrap_or(lr),
                alpha2: m.metareg.alpha2.unwrap_or(lr),
                inner_steps: m.metareg.inner_steps,
                phi_init: m.metareg.phi_init,
                phase1_iterations: m.metareg.phase1_iterations,
                meta_iterations: m.metareg.meta_iterations,
                mode: Self::gradient_mode("method.metareg.mode", &m.metareg.mode)?,
            }),
            other => Method::from_name(other, lr).ok_or_else(|| {
                bad(
                    "method.name",
                    format!("unknown method `{other}` (one of {})", Method::NAMES.join(", ")),
                )
            })?,
        };
        Ok(method)
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        let d = &self.dataset;
        let domains = d
            .domains
            .iter()
            .map(|s| Style::parse(s).ok_or_else(|| bad("dataset.domains", format!("unknown style `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(GeneratorConfig {
            classes: d.classes,
            domains,
            per_class: d.per_class,
            side: d.side,
            noise: d.noise,
            max_shift: d.max_shift,
            seed: d.seed,
        })
    }

    pub fn manifest_path(&self) -> Option<PathBuf> {
        self.dataset.manifest.as_ref().map(|m| self.base_dir.join(m))
    }

    pub fn bench_seeds(&self) -> Vec<u64> {
        (0..self.bench.repeats).map(|k| self.seed + k).collect()
    }

    pub fn benchmark_config(&self) -> Result<BenchmarkConfig> {
        let methods = self
            .bench
            .methods
            .iter()
            .map(|n| self.method(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(BenchmarkConfig {
            methods,
            seeds: self.bench_seeds(),
            train: self.train_config(),
            hidden: self.model.hidden.clone(),
            activation: self.activation()?,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn check_method(method: &Method, hidden_layers: usize) -> Result<()> {
    match method {
        Method::Mldg(m) => m.validate().map_err(|e| bad("method.mldg", e)),
        Method::MetaReg(_) if hidden_layers < 2 => Err(bad(
            "model.hidden",
            "metareg needs at least two hidden layers (shared features plus task layer)",
        )),
        Method::MetaReg(m) => m.validate().map_err(|e| bad("method.metareg", e)),
        _ => Ok(()),
    }
}
