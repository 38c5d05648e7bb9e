//! Meta-learning domain generalization: descend on the meta-train loss plus
//! the meta-test loss after a virtual meta-train step.

use alloc::format;
use alloc::vec::Vec;

use super::{batch_loss, run_loop, sample_rngs, TrainConfig, TrainOutcome};
use crate::autodiff::{gradient, Tape, Var};
use crate::data::{split_meta, Batch, MetaMode, ScenarioSplit};
use crate::error::{Error, Result};
use crate::model::{Activation, Model};
use crate::params::ParamSet;

/// Whether meta-gradients differentiate through the inner gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientMode {
    Exact,
    /// Treats the inner gradient as a constant.
    FirstOrder,
}

impl GradientMode {
    pub fn name(self) -> &'static str {
        match self {
            GradientMode::Exact => "exact",
            GradientMode::FirstOrder => "first-order",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exact" => Some(GradientMode::Exact),
            "first-order" => Some(GradientMode::FirstOrder),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MldgConfig {
    /// Virtual-step rate.
    pub alpha: f64,
    /// Weight of the meta-test loss.
    pub beta: f64,
    /// Outer rate; follows the training schedule unless `constant_gamma`.
    pub gamma: f64,
    pub constant_gamma: bool,
    pub mode: GradientMode,
}

impl Default for MldgConfig {
    fn default() -> Self {
        Self {
            alpha: 5e-4,
            beta: 1.0,
            gamma: 5e-4,
            constant_gamma: false,
            mode: GradientMode::Exact,
        }
    }
}

impl MldgConfig {
    /// Defaults with the virtual-step and outer rates set to `lr`.
    pub fn with_rate(lr: f64) -> Self {
        Self {
            alpha: lr,
            gamma: lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("mldg alpha must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config("mldg gamma must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("mldg beta must be non-negative".into()));
        }
        Ok(())
    }
}

fn scalar(tape: &Tape, v: Var) -> Result<f64> {
    tape.value(v)
        .item()
        .ok_or_else(|| Error::NonScalarObjective(tape.value(v).shape().to_vec()))
}

/// Value and gradient of `F(p) + beta * G(p - alpha * grad F(p))`, where the
/// virtual step moves only entries whose `mask` is true.
///
/// `f` and `g` receive one variable per entry of `params`. With `beta == 0`
/// this is exactly the gradient of `F`.
pub fn mldg_meta_gradient_with<F, G>(
    params: &ParamSet,
    mask: &[bool],
    config: &MldgConfig,
    mut f: F,
    mut g: G,
) -> Result<(f64, ParamSet)>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
    G: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if mask.len() != params.len() {
        return Err(Error::ParamMismatch(format!(
            "mask has {} entries for {} parameters",
            mask.len(),
            params.len()
        )));
    }
    if config.beta == 0.0 {
        return gradient(params, f);
    }
    let (alpha, beta) = (config.alpha, config.beta);
    match config.mode {
        GradientMode::Exact => {
            let mut tape = Tape::new();
            let vars = params.to_tape(&mut tape);
            let fv = f(&mut tape, &vars)?;
            let grad_f = tape.grad(fv, &vars)?;
            let mut shifted = Vec::with_capacity(vars.len());
            for (i, (&v, &gf)) in vars.iter().zip(&grad_f).enumerate() {
                shifted.push(if mask[i] {
                    let step = tape.scale(gf, alpha)?;
                    tape.sub(v, step)?
                } else {
                    v
                });
            }
            let gv = g(&mut tape, &shifted)?;
            let weighted = tape.scale(gv, beta)?;
            let total = tape.add(fv, weighted)?;
            let value = scalar(&tape, total)?;
            let grads = tape.grad(total, &vars)?;
            Ok((value, params.from_tape(&tape, &grads)?))
        }
        GradientMode::FirstOrder => {
            let (fval, grad_f) = gradient(params, &mut f)?;
            let mut shifted = params.clone();
            for (i, name) in params.names().iter().enumerate() {
                if mask[i] {
                    let mut t = params.tensors()[i].clone();
                    for (x, &dx) in t.data_mut().iter_mut().zip(grad_f.tensors()[i].data()) {
                        *x -= alpha * dx;
                    }
                    shifted.set(name, t)?;
                }
            }
            let (gval, grad_g) = gradient(&shifted, g)?;
            Ok((fval + beta * gval, grad_f.axpy(beta, &grad_g)?))
        }
    }
}

/// [`mldg_meta_gradient_with`] for the network's cross-entropy on a
/// meta-train and a meta-test batch.
pub fn mldg_meta_gradient(
    params: &ParamSet,
    activation: Activation,
    mask: &[bool],
    meta_train: &Batch,
    meta_test: &Batch,
    config: &MldgConfig,
) -> Result<(f64, ParamSet)> {
    if meta_train.labels.is_empty() || meta_test.labels.is_empty() {
        return Err(Error::EmptyPool);
    }
    mldg_meta_gradient_with(
        params,
        mask,
        config,
        |tape, vars| batch_loss(tape, activation, vars, meta_train),
        |tape, vars| batch_loss(tape, activation, vars, meta_test),
    )
}

/// Each step draws an MLDG split, a meta-train batch from the union of the
/// meta-train domains and a meta-test batch from the meta-test domain, then
/// takes one momentum step along the meta-gradient at rate `gamma`.
pub fn train_mldg(
    model: Model,
    scenario: &ScenarioSplit<'_>,
    config: &TrainConfig,
    mldg: &MldgConfig,
) -> Result<TrainOutcome> {
    mldg.validate()?;
    let domains = scenario.train_domains().to_vec();
    if domains.len() < 2 {
        return Err(Error::Config(format!(
            "mldg needs at least 2 training domains, got {}",
            domains.len()
        )));
    }
    let optimizer = TrainConfig {
        lr: mldg.gamma,
        decay: if mldg.constant_gamma { 1.0 } else { config.decay },
        ..config.clone()
    };
    let act = model.spec.activation;
    let mask = model.trainable_mask();
    let (mut batches, mut splits, mut test_batches) = sample_rngs(config.seed);
    let n_b = config.batch_size;
    let outcome = run_loop(model, scenario, config, &optimizer, |_, params| {
        let split = split_meta(&domains, MetaMode::Mldg, &mut splits)?;
        let a = scenario.sample(&split.meta_train, n_b, &mut batches)?;
        let b = scenario.sample(&split.meta_test, n_b, &mut test_batches)?;
        mldg_meta_gradient(params, act, &mask, &a, &b, mldg)
    })?;
    scenario.audit()?;
    Ok(outcome)
}
