//! MetaReg: per-domain task networks on a shared feature network, a learned
//! weighted-L1 regularizer on the task network, then training from scratch
//! with that regularizer fixed.
//!
//! The task network is the last feature layer plus the head; the shared
//! feature network is every earlier layer.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{batch_loss, run_loop, sample_rngs, GradientMode, TrainConfig, TrainOutcome};
use crate::autodiff::{gradient, sign, Tape, Var};
use crate::data::{split_meta, Batch, MetaMode, ScenarioSplit};
use crate::error::{Error, Result};
use crate::model::{dense_stack, Activation, Model};
use crate::params::ParamSet;
use crate::rng;
use crate::tensor::Tensor;

/// Entries of the task network: last feature layer's weight and bias, head
/// weight and bias.
const TASK_ENTRIES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct MetaRegConfig {
    /// Rate of the per-domain supervised updates.
    pub alpha1: f64,
    /// Rate of the inner unroll and of the regularizer update.
    pub alpha2: f64,
    pub inner_steps: usize,
    /// Initial value of every regularizer weight.
    pub phi_init: f64,
    pub phase1_iterations: usize,
    pub meta_iterations: usize,
    pub mode: GradientMode,
}

impl Default for MetaRegConfig {
    fn default() -> Self {
        Self {
            alpha1: 5e-4,
            alpha2: 5e-4,
            inner_steps: 3,
            phi_init: 1e-4,
            phase1_iterations: 300,
            meta_iterations: 300,
            mode: GradientMode::Exact,
        }
    }
}

impl MetaRegConfig {
    /// Defaults with both rates set to `lr`.
    pub fn with_rate(lr: f64) -> Self {
        Self {
            alpha1: lr,
            alpha2: lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 > 0.0 && self.alpha1.is_finite() && self.alpha2 > 0.0 && self.alpha2.is_finite()) {
            return Err(Error::Config("metareg rates must be positive".into()));
        }
        if self.inner_steps == 0 {
            return Err(Error::Config("metareg inner_steps must be at least 1".into()));
        }
        if !self.phi_init.is_finite() {
            return Err(Error::Config("metareg phi_init must be finite".into()));
        }
        Ok(())
    }
}

/// Splits model parameters into the shared feature part and the task part.
pub fn split_task(params: &ParamSet) -> Result<(ParamSet, ParamSet)> {
    let n = params.len();
    if n < TASK_ENTRIES + 2 {
        return Err(Error::Config(
            "metareg needs at least two feature layers (shared features plus task layer)".into(),
        ));
    }
    let take = |range: core::ops::Range<usize>| {
        ParamSet::new(range.map(|i| (params.names()[i].clone(), params.tensors()[i].clone())))
    };
    Ok((take(0..n - TASK_ENTRIES)?, take(n - TASK_ENTRIES..n)?))
}

fn join(a: &ParamSet, b: &ParamSet) -> Result<ParamSet> {
    ParamSet::new(a.iter().chain(b.iter()).map(|(n, t)| (String::from(n), t.clone())))
}

/// Shared-feature activations for a batch, as a batch of task-network inputs.
fn shared_features(psi: &ParamSet, act: Activation, batch: &Batch) -> Result<Batch> {
    let mut tape = Tape::new();
    let vars = psi.to_tape_constant(&mut tape);
    let x = tape.constant(batch.features.clone());
    let h = dense_stack(&mut tape, act, &vars, x)?;
    Ok(Batch {
        features: tape.value(h).clone(),
        labels: batch.labels.clone(),
    })
}

fn descend(p: &ParamSet, g: &ParamSet, rate: f64) -> Result<ParamSet> {
    p.zip_map(g, |x, dx| x - rate * dx)
}

/// One supervised update per domain, in order: domain `i`'s batch updates the
/// shared parameters and task network `i` by plain SGD at `alpha1`. Returns the
/// per-domain losses.
pub fn metareg_phase1_step(
    psi: &mut ParamSet,
    thetas: &mut [ParamSet],
    batches: &[Batch],
    act: Activation,
    alpha1: f64,
) -> Result<Vec<f64>> {
    if batches.len() != thetas.len() {
        return Err(Error::Config(format!(
            "{} batches for {} task networks",
            batches.len(),
            thetas.len()
        )));
    }
    let k = psi.len();
    let mut losses = Vec::with_capacity(batches.len());
    for (theta, batch) in thetas.iter_mut().zip(batches) {
        let joint = join(psi, theta)?;
        let (loss, g) = gradient(&joint, |tape, vars| batch_loss(tape, act, vars, batch))?;
        let updated = descend(&joint, &g, alpha1)?;
        let (new_psi, new_theta) = split_at(&updated, k)?;
        *psi = new_psi;
        *theta = new_theta;
        losses.push(loss);
    }
    Ok(losses)
}

fn split_at(p: &ParamSet, k: usize) -> Result<(ParamSet, ParamSet)> {
    let take = |range: core::ops::Range<usize>| {
        ParamSet::new(range.map(|i| (p.names()[i].clone(), p.tensors()[i].clone())))
    };
    Ok((take(0..k)?, take(k..p.len())?))
}

/// `d beta^l / d phi`, applied transposed to a direction.
#[derive(Debug)]
pub enum Sensitivity {
    /// Reverse pass through the recorded unroll.
    Exact {
        tape: Tape,
        phi: Vec<Var>,
        beta: Vec<Var>,
        layout: ParamSet,
    },
    /// Hessian terms dropped: `-alpha2 * sum_i sign(beta^{i-1})` per coordinate.
    Diagonal(ParamSet),
}

impl Sensitivity {
    /// `J^T u` with `u` laid out like the task network.
    pub fn apply_transpose(&mut self, u: &ParamSet) -> Result<ParamSet> {
        match self {
            Sensitivity::Exact { tape, phi, beta, layout } => {
                if !layout.same_layout(u) {
                    return Err(Error::ParamMismatch("direction layout differs from task network".into()));
                }
                let mark = tape.len();
                let dirs = u.to_tape_constant(tape);
                let mut total: Option<Var> = None;
                for (&b, &d) in beta.iter().zip(&dirs) {
                    let term = tape.dot(b, d)?;
                    total = Some(match total {
                        None => term,
                        Some(t) => tape.add(t, term)?,
                    });
                }
                let total = total.ok_or_else(|| Error::ParamMismatch("empty task network".into()))?;
                let grads = tape.grad(total, phi)?;
                let out = layout.from_tape(tape, &grads);
                tape.truncate(mark);
                out
            }
            Sensitivity::Diagonal(d) => d.zip_map(u, |a, b| a * b),
        }
    }

    /// Dense `J[i][j] = d beta_i / d phi_j` over flattened coordinates.
    pub fn to_dense(&mut self) -> Result<Vec<Vec<f64>>> {
        let layout = match self {
            Sensitivity::Exact { layout, .. } => layout.clone(),
            Sensitivity::Diagonal(d) => d.clone(),
        };
        let n = layout.num_scalars();
        let mut rows = alloc::vec![alloc::vec![0.0; n]; n];
        let mut e = alloc::vec![0.0; n];
        for i in 0..n {
            e[i] = 1.0;
            let col = self.apply_transpose(&layout.unflatten(&e)?)?.flatten();
            rows[i] = col;
            e[i] = 0.0;
        }
        Ok(rows)
    }
}

#[derive(Debug)]
pub struct Unroll {
    /// `beta^l`.
    pub beta: ParamSet,
    /// `beta^0 .. beta^{l-1}`, the iterates the regularizer was evaluated at.
    pub path: Vec<ParamSet>,
    pub sensitivity: Sensitivity,
}

/// `sum_j phi_j |beta_j|`.
fn regularizer(tape: &mut Tape, phi: &[Var], beta: &[Var]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (&p, &b) in phi.iter().zip(beta) {
        let a = tape.abs(b)?;
        let term = tape.dot(p, a)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    total.ok_or_else(|| Error::ParamMismatch("empty task network".into()))
}

/// Starting from `theta_a`, takes one step per batch of
/// `beta <- beta - alpha2 * grad_beta [L(psi, beta) + sum phi |beta|]`, and
/// returns the final iterate with its sensitivity to `phi`.
pub fn metareg_inner_unroll(
    theta_a: &ParamSet,
    phi: &ParamSet,
    psi: &ParamSet,
    batches: &[Batch],
    act: Activation,
    alpha2: f64,
    mode: GradientMode,
) -> Result<Unroll> {
    let inputs: Vec<Batch> = batches
        .iter()
        .map(|b| shared_features(psi, act, b))
        .collect::<Result<_>>()?;
    metareg_inner_unroll_with(theta_a, phi, inputs.len(), alpha2, mode, |tape, beta, i| {
        batch_loss(tape, act, beta, &inputs[i])
    })
}

/// [`metareg_inner_unroll`] with an arbitrary per-step loss `loss(tape, beta, i)`.
pub fn metareg_inner_unroll_with<L>(
    theta_a: &ParamSet,
    phi: &ParamSet,
    steps: usize,
    alpha2: f64,
    mode: GradientMode,
    mut loss: L,
) -> Result<Unroll>
where
    L: FnMut(&mut Tape, &[Var], usize) -> Result<Var>,
{
    if steps == 0 {
        return Err(Error::Config("inner unroll needs at least one step".into()));
    }
    if !theta_a.same_layout(phi) {
        return Err(Error::ParamMismatch("regularizer weights do not match the task network".into()));
    }
    let mut path = Vec::with_capacity(steps);
    match mode {
        GradientMode::Exact => {
            let mut tape = Tape::new();
            let phi_vars = phi.to_tape(&mut tape);
            let mut beta = theta_a.to_tape_constant(&mut tape);
            for i in 0..steps {
                path.push(theta_a.from_tape(&tape, &beta)?);
                let l = loss(&mut tape, &beta, i)?;
                let reg = regularizer(&mut tape, &phi_vars, &beta)?;
                let total = tape.add(l, reg)?;
                let g = tape.grad(total, &beta)?;
                let mut next = Vec::with_capacity(beta.len());
                for (&b, &gb) in beta.iter().zip(&g) {
                    let step = tape.scale(gb, alpha2)?;
                    next.push(tape.sub(b, step)?);
                }
                beta = next;
            }
            Ok(Unroll {
                beta: theta_a.from_tape(&tape, &beta)?,
                path,
                sensitivity: Sensitivity::Exact {
                    tape,
                    phi: phi_vars,
                    beta,
                    layout: theta_a.clone(),
                },
            })
        }
        GradientMode::FirstOrder => {
            let mut beta = theta_a.clone();
            let mut diag = theta_a.zeros_like();
            for i in 0..steps {
                path.push(beta.clone());
                let (_, g) = gradient(&beta, |tape, vars| loss(tape, vars, i))?;
                let signs = beta.map(sign);
                let g = g.zip_map(&phi.zip_map(&signs, |p, s| p * s)?, |a, b| a + b)?;
                diag = diag.zip_map(&signs, |d, s| d - alpha2 * s)?;
                beta = descend(&beta, &g, alpha2)?;
            }
            Ok(Unroll {
                beta,
                path,
                sensitivity: Sensitivity::Diagonal(diag),
            })
        }
    }
}

/// `phi - alpha2 * J^T grad_beta L_b(psi, beta)`.
pub fn metareg_meta_update(
    phi: &ParamSet,
    meta_test: &Batch,
    psi: &ParamSet,
    beta: &ParamSet,
    act: Activation,
    sensitivity: &mut Sensitivity,
    alpha2: f64,
) -> Result<ParamSet> {
    if !phi.same_layout(beta) {
        return Err(Error::ParamMismatch("regularizer weights do not match the task network".into()));
    }
    let input = shared_features(psi, act, meta_test)?;
    let (_, g) = gradient(beta, |tape, vars| batch_loss(tape, act, vars, &input))?;
    let jt = sensitivity.apply_transpose(&g)?;
    descend(phi, &jt, alpha2)
}

/// Baseline training of a fresh model on the aggregated training domains
/// with `sum phi |theta_task|` added to the loss.
pub fn metareg_final_train(
    model: Model,
    scenario: &ScenarioSplit<'_>,
    config: &TrainConfig,
    phi: &ParamSet,
) -> Result<TrainOutcome> {
    let (_, task) = split_task(&model.param_set())?;
    if !task.same_layout(phi) {
        return Err(Error::ParamMismatch("regularizer weights do not match the task network".into()));
    }
    let act = model.spec.activation;
    let (mut batches, _, _) = sample_rngs(config.seed);
    let domains = scenario.train_domains().to_vec();
    let n_b = config.batch_size;
    let phi_flat = phi.flatten();
    let outcome = run_loop(model, scenario, config, config, |_, params| {
        let batch = scenario.sample(&domains, n_b, &mut batches)?;
        let (loss, grads) = gradient(params, |tape, vars| batch_loss(tape, act, vars, &batch))?;
        add_l1(params, grads, loss, &phi_flat)
    })?;
    scenario.audit()?;
    Ok(outcome)
}

/// Adds `phi * sign(theta)` to the task-network gradient entries and
/// `sum phi |theta|` to the loss. Zero weights contribute nothing.
fn add_l1(params: &ParamSet, grads: ParamSet, loss: f64, phi: &[f64]) -> Result<(f64, ParamSet)> {
    let first = params.len() - TASK_ENTRIES;
    let mut out = grads;
    let mut reg = 0.0;
    let mut k = 0;
    for i in first..params.len() {
        let name = params.names()[i].clone();
        let theta = params.tensors()[i].data();
        let mut g: Tensor = out.tensors()[i].clone();
        for (j, gj) in g.data_mut().iter_mut().enumerate() {
            let p = phi[k + j];
            if p != 0.0 {
                *gj += p * sign(theta[j]);
                reg += p * libm::fabs(theta[j]);
            }
        }
        k += theta.len();
        out.set(&name, g)?;
    }
    Ok((if reg != 0.0 { loss + reg } else { loss }, out))
}

#[derive(Clone, Debug)]
pub struct MetaRegOutcome {
    pub phi: ParamSet,
    /// Meta-test loss after each meta iteration.
    pub meta_losses: Vec<f64>,
    pub outcome: TrainOutcome,
}

/// Learns the regularizer with per-domain task networks, then trains a copy
/// of `model` from its initial parameters with the regularizer fixed.
pub fn train_metareg(
    model: Model,
    scenario: &ScenarioSplit<'_>,
    config: &TrainConfig,
    metareg: &MetaRegConfig,
) -> Result<MetaRegOutcome> {
    metareg.validate()?;
    config.validate()?;
    let domains = scenario.train_domains().to_vec();
    if domains.len() < 2 {
        return Err(Error::Config(format!(
            "metareg needs at least 2 training domains, got {}",
            domains.len()
        )));
    }
    let act = model.spec.activation;
    let (mut psi, task) = split_task(&model.param_set())?;
    let mut thetas: Vec<ParamSet> = domains.iter().map(|_| task.clone()).collect();
    let mut phi = task.map(|_| metareg.phi_init);
    let mut batches = rng::stream(config.seed, "metareg/batches");
    let mut pairs = rng::stream(config.seed, "metareg/pairs");
    let n_b = config.batch_size;

    let phase1 = |psi: &mut ParamSet, thetas: &mut [ParamSet], r: &mut rng::Rng| -> Result<()> {
        let per_domain: Vec<Batch> = domains
            .iter()
            .map(|&d| scenario.sample(&[d], n_b, r))
            .collect::<Result<_>>()?;
        let losses = metareg_phase1_step(psi, thetas, &per_domain, act, metareg.alpha1)?;
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("metareg phase-1 loss"));
        }
        Ok(())
    };
    for _ in 0..metareg.phase1_iterations {
        phase1(&mut psi, &mut thetas, &mut batches)?;
    }
    let mut meta_losses = Vec::with_capacity(metareg.meta_iterations);
    for _ in 0..metareg.meta_iterations {
        phase1(&mut psi, &mut thetas, &mut batches)?;
        let split = split_meta(&domains, MetaMode::MetaReg, &mut pairs)?;
        let (a, b) = (split.meta_train[0], split.meta_test[0]);
        let pos_a = domains.iter().position(|&d| d == a).expect("split draws training domains");
        let inner: Vec<Batch> = (0..metareg.inner_steps)
            .map(|_| scenario.sample(&[a], n_b, &mut batches))
            .collect::<Result<_>>()?;
        let test = scenario.sample(&[b], n_b, &mut batches)?;
        let mut unroll = metareg_inner_unroll(&thetas[pos_a], &phi, &psi, &inner, act, metareg.alpha2, metareg.mode)?;
        phi = metareg_meta_update(&phi, &test, &psi, &unroll.beta, act, &mut unroll.sensitivity, metareg.alpha2)?;
        let input = shared_features(&psi, act, &test)?;
        let (loss, _) = gradient(&unroll.beta, |tape, vars| batch_loss(tape, act, vars, &input))?;
        if !loss.is_finite() || phi.flatten().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("metareg meta update"));
        }
        meta_losses.push(loss);
    }
    let outcome = metareg_final_train(model, scenario, config, &phi)?;
    Ok(MetaRegOutcome {
        phi,
        meta_losses,
        outcome,
    })
}
