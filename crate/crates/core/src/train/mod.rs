//! SGD with momentum and weight decay, and the training procedures built on
//! it: aggregated baseline, fixed-head, MLDG and MetaReg.

mod metareg;
mod mldg;

pub use metareg::{
    metareg_final_train, metareg_inner_unroll, metareg_inner_unroll_with, metareg_meta_update, metareg_phase1_step, split_task, train_metareg,
    MetaRegConfig, MetaRegOutcome, Sensitivity, Unroll,
};
pub use mldg::{mldg_meta_gradient, mldg_meta_gradient_with, train_mldg, GradientMode, MldgConfig};

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{gradient, softmax_cross_entropy, Tape, Var};
use crate::data::{split_meta, Batch, MetaMode, ScenarioSplit};
use crate::error::{Error, Result};
use crate::eval::accuracy_on_batch;
use crate::model::{logits_from_vars, Activation, HeadMode, Model};
use crate::params::ParamSet;
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier applied once per `decay_period` steps.
    pub decay: f64,
    pub decay_period: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Validation accuracy is recorded every this many steps and after the
    /// last step.
    pub eval_interval: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// 45k iterations, decay every 15k.
    pub fn paper() -> Self {
        Self {
            iterations: 45_000,
            batch_size: 64,
            lr: 5e-4,
            decay: 0.96,
            decay_period: 15_000,
            momentum: 0.9,
            weight_decay: 5e-5,
            eval_interval: 1000,
            seed: 0,
        }
    }

    /// 3k iterations, decay every 1k, base rate 5e-3.
    pub fn desk() -> Self {
        Self {
            iterations: 3000,
            lr: 5e-3,
            decay_period: 1000,
            eval_interval: 100,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("training config: {what}")));
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if self.decay_period == 0 {
            return bad("decay_period must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and non-negative");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be positive");
        }
        Ok(())
    }
}

/// `lr * decay^floor(t / decay_period)`.
pub fn lr_schedule(t: usize, config: &TrainConfig) -> f64 {
    let k = (t / config.decay_period) as i32;
    config.lr * libm::pow(config.decay, k as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub velocity: ParamSet,
    pub step: usize,
}

impl SgdState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            velocity: params.zeros_like(),
            step: 0,
        }
    }
}

/// One momentum step at the scheduled rate for `state.step`:
/// `v <- mu v + (g + lambda theta)`, `theta <- theta - lr v`.
/// Entries whose mask is false keep both parameter and velocity.
pub fn sgd_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut SgdState,
    config: &TrainConfig,
    mask: &[bool],
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.velocity) {
        return Err(Error::ParamMismatch("gradient or velocity layout differs from parameters".into()));
    }
    if mask.len() != params.len() {
        return Err(Error::ParamMismatch(format!(
            "mask has {} entries for {} parameters",
            mask.len(),
            params.len()
        )));
    }
    let lr = lr_schedule(state.step, config);
    let (mu, lambda) = (config.momentum, config.weight_decay);
    let mut velocity = state.velocity.clone();
    let mut updated = params.clone();
    for (i, &trainable) in mask.iter().enumerate() {
        if !trainable {
            continue;
        }
        let name = params.names()[i].clone();
        let theta = params.tensors()[i].data();
        let g = grads.tensors()[i].data();
        let mut v = state.velocity.tensors()[i].clone();
        let mut t = params.tensors()[i].clone();
        for (k, vk) in v.data_mut().iter_mut().enumerate() {
            *vk = mu * *vk + (g[k] + lambda * theta[k]);
        }
        for (tk, vk) in t.data_mut().iter_mut().zip(v.data()) {
            *tk -= lr * vk;
        }
        velocity.set(&name, v)?;
        updated.set(&name, t)?;
    }
    *params = updated;
    state.velocity = velocity;
    state.step += 1;
    Ok(())
}

/// Mean cross-entropy of the network over `[w, b, ...]` variables.
pub fn batch_loss(tape: &mut Tape, act: Activation, vars: &[Var], batch: &Batch) -> Result<Var> {
    let x = tape.constant(batch.features.clone());
    let logits = logits_from_vars(tape, act, vars, x)?;
    softmax_cross_entropy(tape, logits, &batch.labels)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Validation score of the parameters after `step` updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub val_acc: f64,
    /// [`ParamSet::digest`] of the parameters at this step.
    pub digest: [u8; 32],
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the last step.
    pub last: Model,
    /// Earliest checkpoint with the highest validation accuracy.
    pub best: Model,
    pub best_index: usize,
    pub curve: Vec<StepRecord>,
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainOutcome {
    pub fn best_checkpoint(&self) -> &Checkpoint {
        &self.checkpoints[self.best_index]
    }

    pub fn best_val_acc(&self) -> f64 {
        self.best_checkpoint().val_acc
    }
}

/// A training procedure with its hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    Baseline,
    FixedHead,
    FixedOrthogonalHead,
    Mldg(MldgConfig),
    MetaReg(MetaRegConfig),
}

impl Method {
    pub const NAMES: [&'static str; 5] = ["baseline", "fixed-head", "fixed-orthogonal-head", "mldg", "metareg"];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::FixedHead => "fixed-head",
            Method::FixedOrthogonalHead => "fixed-orthogonal-head",
            Method::Mldg(_) => "mldg",
            Method::MetaReg(_) => "metareg",
        }
    }

    /// The method with default hyperparameters and meta rates equal to `lr`.
    pub fn from_name(name: &str, lr: f64) -> Option<Self> {
        Some(match name {
            "baseline" => Method::Baseline,
            "fixed-head" => Method::FixedHead,
            "fixed-orthogonal-head" => Method::FixedOrthogonalHead,
            "mldg" => Method::Mldg(MldgConfig::with_rate(lr)),
            "metareg" => Method::MetaReg(MetaRegConfig::with_rate(lr)),
            _ => return None,
        })
    }

    pub fn head_mode(&self) -> HeadMode {
        match self {
            Method::FixedHead => HeadMode::FixedRandom,
            Method::FixedOrthogonalHead => HeadMode::FixedOrthogonal,
            _ => HeadMode::Trainable,
        }
    }

    /// Minimum number of training domains the method can run on.
    pub fn min_train_domains(&self) -> usize {
        match self {
            Method::Mldg(_) | Method::MetaReg(_) => 2,
            _ => 1,
        }
    }

    pub fn train(&self, model: Model, scenario: &ScenarioSplit<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
        match self {
            Method::Baseline => train_baseline(model, scenario, config),
            Method::FixedHead | Method::FixedOrthogonalHead => train_fixed_head(model, scenario, config),
            Method::Mldg(m) => train_mldg(model, scenario, config, m),
            Method::MetaReg(m) => Ok(train_metareg(model, scenario, config, m)?.outcome),
        }
    }
}

/// Where the baseline draws its batches from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Union of all training domains.
    Aggregate,
    /// Union of the meta-train domains of an MLDG split drawn each step
    /// from the same stream MLDG uses, so the two trainers see identical
    /// meta-train batches.
    MetaTrainOnly,
}

pub(crate) const BATCH_STREAM: &str = "train/batches";
pub(crate) const SPLIT_STREAM: &str = "train/meta-split";
pub(crate) const META_TEST_STREAM: &str = "train/meta-test-batches";

/// Runs `config.iterations` optimizer steps; `step_fn` returns the recorded
/// loss and the gradient for the current parameters.
pub(crate) fn run_loop<F>(
    model: Model,
    scenario: &ScenarioSplit<'_>,
    config: &TrainConfig,
    optimizer: &TrainConfig,
    mut step_fn: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &ParamSet) -> Result<(f64, ParamSet)>,
{
    config.validate()?;
    optimizer.validate()?;
    let validation = crate::data::stack(&scenario.all_validation())?;
    if validation.labels.is_empty() {
        return Err(Error::Data("training domains have no validation examples".into()));
    }
    let mask = model.trainable_mask();
    let frozen_head = model.head.mode.is_frozen().then(|| model.head.to_bytes());
    let mut params = model.param_set();
    let mut state = SgdState::new(&params);
    let mut current = model;
    let mut best = current.clone();
    let mut best_index = 0;
    let mut curve = Vec::with_capacity(config.iterations);
    let mut checkpoints = Vec::new();
    for t in 0..config.iterations {
        let (loss, grads) = step_fn(t, &params)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        curve.push(StepRecord {
            step: t,
            lr: lr_schedule(state.step, optimizer),
            loss,
        });
        sgd_step(&mut params, &grads, &mut state, optimizer, &mask)?;
        let done = t + 1;
        if done % config.eval_interval == 0 || done == config.iterations {
            current.set_params(&params)?;
            let val_acc = accuracy_on_batch(&current, &validation)?;
            checkpoints.push(Checkpoint {
                step: done,
                val_acc,
                digest: params.digest(),
            });
            let k = checkpoints.len() - 1;
            if k == 0 || val_acc > checkpoints[best_index].val_acc {
                best_index = k;
                best = current.clone();
            }
        }
    }
    current.set_params(&params)?;
    if let Some(bytes) = frozen_head {
        if current.head.to_bytes() != bytes || best.head.to_bytes() != bytes {
            return Err(Error::Audit("fixed head changed during training".into()));
        }
    }
    Ok(TrainOutcome {
        last: current,
        best,
        best_index,
        curve,
        checkpoints,
    })
}

/// Plain SGD on batches from the training domains, updating every parameter
/// the model marks trainable.
pub fn train_baseline(model: Model, scenario: &ScenarioSplit<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
    if model.head.mode.is_frozen() {
        return Err(Error::Config("baseline training needs a trainable head".into()));
    }
    train_sgd(model, scenario, config, Sampling::Aggregate)
}

/// SGD with the classifier head excluded from every update. Like every
/// trainer, fails with an audit error if a fixed head's bytes change.
pub fn train_fixed_head(model: Model, scenario: &ScenarioSplit<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
    if !model.head.mode.is_frozen() {
        return Err(Error::Config("fixed-head training needs a fixed-random or fixed-orthogonal head".into()));
    }
    train_sgd(model, scenario, config, Sampling::Aggregate)
}

/// Cross-entropy SGD with the given batch sampler; respects the model's
/// trainable mask.
pub fn train_sgd(
    model: Model,
    scenario: &ScenarioSplit<'_>,
    config: &TrainConfig,
    sampling: Sampling,
) -> Result<TrainOutcome> {
    let act = model.spec.activation;
    let mut batches = rng::stream(config.seed, BATCH_STREAM);
    let mut splits = rng::stream(config.seed, SPLIT_STREAM);
    let domains = scenario.train_domains().to_vec();
    let n_b = config.batch_size;
    let outcome = run_loop(model, scenario, config, config, |_, params| {
        let batch = match sampling {
            Sampling::Aggregate => scenario.sample(&domains, n_b, &mut batches)?,
            Sampling::MetaTrainOnly => {
                let split = split_meta(&domains, MetaMode::Mldg, &mut splits)?;
                scenario.sample(&split.meta_train, n_b, &mut batches)?
            }
        };
        gradient(params, |tape, vars| batch_loss(tape, act, vars, &batch))
    })?;
    scenario.audit()?;
    Ok(outcome)
}

pub(crate) fn sample_rngs(seed: u64) -> (Rng, Rng, Rng) {
    (
        rng::stream(seed, BATCH_STREAM),
        rng::stream(seed, SPLIT_STREAM),
        rng::stream(seed, META_TEST_STREAM),
    )
}
