//! Dense feature networks with a linear classifier head.
//!
//! The head maps an `M`-dimensional representation `x` to `N` class scores
//! `y = W^T x + b`. A head can be trained, or frozen at random values, or
//! frozen at an orthonormalized version of random values. In the frozen case
//! the columns of `W` act as fixed class directions and classification picks
//! the dominant one.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::{argmax, Tape, Var};
use crate::error::{Error, Result};
use crate::linalg;
use crate::params::ParamSet;
use crate::rng;
use crate::tensor::Tensor;

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Layer widths from the input dimension to the representation width `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNetSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl FeatureNetSpec {
    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config("feature net needs at least one layer".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.output_dim() < classes {
            return Err(Error::Config(format!(
                "representation width {} is smaller than class count {classes}",
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights and biases.
    pub fn init_params(&self) -> ParamSet {
        let mut r = rng::stream(self.seed, "features");
        let mut entries = Vec::with_capacity(2 * self.num_layers());
        for (i, pair) in self.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            let w = uniform(&mut r, fan_in * fan_out, bound);
            let b = uniform(&mut r, fan_out, bound);
            entries.push((
                format!("layer{i}.weight"),
                Tensor::matrix(fan_in, fan_out, w).expect("sized"),
            ));
            entries.push((format!("layer{i}.bias"), Tensor::vector(b)));
        }
        ParamSet::new(entries).expect("unique names")
    }
}

fn uniform(r: &mut rng::Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-bound..=bound)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    Trainable,
    FixedRandom,
    FixedOrthogonal,
}

impl HeadMode {
    pub fn is_frozen(self) -> bool {
        self != HeadMode::Trainable
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadMode::Trainable => "trainable",
            HeadMode::FixedRandom => "fixed-random",
            HeadMode::FixedOrthogonal => "fixed-orthogonal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "trainable" => Some(HeadMode::Trainable),
            "fixed-random" => Some(HeadMode::FixedRandom),
            "fixed-orthogonal" => Some(HeadMode::FixedOrthogonal),
            _ => None,
        }
    }
}

/// The final `M x N` projection and its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub weight: Tensor,
    pub bias: Tensor,
    pub mode: HeadMode,
    pub seed: u64,
}

impl ClassifierHead {
    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Weight then bias payload as little-endian bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.weight.to_le_bytes();
        out.extend(self.bias.to_le_bytes());
        out
    }

    /// A trainable head with weights and bias uniform on `[-1/sqrt(M), 1/sqrt(M)]`.
    pub fn trainable(m: usize, n: usize, seed: u64) -> Result<Self> {
        check_head_dims(m, n)?;
        let mut r = rng::stream(seed, "head");
        let bound = 1.0 / libm::sqrt(m as f64);
        let weight = Tensor::matrix(m, n, uniform(&mut r, m * n, bound))?;
        let bias = Tensor::vector(uniform(&mut r, n, bound));
        Ok(Self {
            weight,
            bias,
            mode: HeadMode::Trainable,
            seed,
        })
    }

    pub fn with_mode(m: usize, n: usize, seed: u64, mode: HeadMode) -> Result<Self> {
        match mode {
            HeadMode::Trainable => Self::trainable(m, n, seed),
            HeadMode::FixedRandom => init_head_random(m, n, seed),
            HeadMode::FixedOrthogonal => orthogonalize_head(&init_head_random(m, n, seed)?),
        }
    }
}

fn check_head_dims(m: usize, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {n}")));
    }
    if m < n {
        return Err(Error::Config(format!(
            "head input width {m} is smaller than class count {n}"
        )));
    }
    Ok(())
}

/// A frozen head with entries i.i.d. uniform on `[-b, b]`, `b = 1/sqrt(M)`,
/// and zero bias.
pub fn init_head_random(m: usize, n: usize, seed: u64) -> Result<ClassifierHead> {
    check_head_dims(m, n)?;
    let mut r = rng::stream(seed, "head");
    let bound = 1.0 / libm::sqrt(m as f64);
    Ok(ClassifierHead {
        weight: Tensor::matrix(m, n, uniform(&mut r, m * n, bound))?,
        bias: Tensor::zeros(&[n]),
        mode: HeadMode::FixedRandom,
        seed,
    })
}

/// Replaces `W = U S V^T` by its orthonormal polar factor `U V^T`.
///
/// The result spans the same column space as `W`, has orthonormal columns,
/// and keeps column `k` as close as possible to the original `w_k`. The
/// returned head is frozen with zero bias.
pub fn orthogonalize_head(head: &ClassifierHead) -> Result<ClassifierHead> {
    let (m, n) = head.weight.dims2().expect("head weight is a matrix");
    let d = linalg::svd(head.weight.data(), m, n);
    let largest = d.s[0];
    let smallest = d.s[n - 1];
    if largest == 0.0 || smallest < 1e-10 * largest {
        return Err(Error::RankDeficient {
            ratio: if largest == 0.0 { 0.0 } else { smallest / largest },
        });
    }
    let mut w = alloc::vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            w[i * n + j] = (0..n).map(|k| d.u[i * n + k] * d.v[j * n + k]).sum();
        }
    }
    Ok(ClassifierHead {
        weight: Tensor::matrix(m, n, w)?,
        bias: Tensor::zeros(&[n]),
        mode: HeadMode::FixedOrthogonal,
        seed: head.seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadAngleStats {
    pub mean_abs_cos: f64,
    pub max_abs_cos: f64,
    pub min_norm: f64,
    pub max_norm: f64,
}

/// Pairwise column cosines and column norms of a head.
pub fn head_angle_stats(head: &ClassifierHead) -> Result<HeadAngleStats> {
    let (m, n) = head.weight.dims2().expect("head weight is a matrix");
    if n < 2 {
        return Err(Error::Config("need at least 2 columns".into()));
    }
    let w = head.weight.data();
    let col = |j: usize| (0..m).map(move |i| w[i * n + j]);
    let norms: Vec<f64> = (0..n)
        .map(|j| libm::sqrt(col(j).map(|x| x * x).sum()))
        .collect();
    if let Some(j) = norms.iter().position(|&x| x == 0.0) {
        return Err(Error::ZeroColumn(j));
    }
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut pairs = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            let dot: f64 = col(a).zip(col(b)).map(|(x, y)| x * y).sum();
            let c = libm::fabs(dot / (norms[a] * norms[b]));
            sum += c;
            max = max.max(c);
            pairs += 1;
        }
    }
    Ok(HeadAngleStats {
        mean_abs_cos: sum / pairs as f64,
        max_abs_cos: max,
        min_norm: norms.iter().copied().fold(f64::INFINITY, f64::min),
        max_norm: norms.iter().copied().fold(0.0, f64::max),
    })
}

/// Index of the dominant logit in each row; ties go to the lowest index.
pub fn classify(logits: &Tensor) -> Vec<usize> {
    let rows = logits.shape().first().copied().unwrap_or(0);
    (0..rows).map(|i| argmax(logits.row(i))).collect()
}

/// Feature network plus classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: FeatureNetSpec,
    pub features: ParamSet,
    pub head: ClassifierHead,
}

impl Model {
    pub fn new(spec: FeatureNetSpec, head: ClassifierHead) -> Result<Self> {
        spec.validate(head.classes())?;
        if spec.output_dim() != head.input_dim() {
            return Err(Error::Config(format!(
                "feature width {} does not match head input {}",
                spec.output_dim(),
                head.input_dim()
            )));
        }
        let features = spec.init_params();
        Ok(Self {
            spec,
            features,
            head,
        })
    }

    /// Fresh model with the given head mode.
    pub fn init(spec: FeatureNetSpec, classes: usize, mode: HeadMode, head_seed: u64) -> Result<Self> {
        spec.validate(classes)?;
        let head = ClassifierHead::with_mode(spec.output_dim(), classes, head_seed, mode)?;
        Self::new(spec, head)
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    /// All parameters: feature layers in order, then head weight and bias.
    pub fn param_set(&self) -> ParamSet {
        let mut entries: Vec<(String, Tensor)> = self
            .features
            .iter()
            .map(|(n, t)| (String::from(n), t.clone()))
            .collect();
        entries.push((HEAD_WEIGHT.into(), self.head.weight.clone()));
        entries.push((HEAD_BIAS.into(), self.head.bias.clone()));
        ParamSet::new(entries).expect("unique names")
    }

    /// Which entries of [`Model::param_set`] an optimizer may update.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = alloc::vec![true; self.features.len()];
        mask.extend([!self.head.mode.is_frozen(); 2]);
        mask
    }

    /// Copies values from a set laid out like [`Model::param_set`].
    pub fn set_params(&mut self, params: &ParamSet) -> Result<()> {
        if !params.same_layout(&self.param_set()) {
            return Err(Error::ParamMismatch("model parameter layout differs".into()));
        }
        let k = self.features.len();
        let tensors = params.tensors();
        let mut features = self.features.clone();
        for (i, t) in tensors[..k].iter().enumerate() {
            let name = features.names()[i].clone();
            features.set(&name, t.clone())?;
        }
        self.features = features;
        self.head.weight = tensors[k].clone();
        self.head.bias = tensors[k + 1].clone();
        Ok(())
    }

    /// Logits for a `batch x input_dim` tensor.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let params = self.param_set();
        let vars = params.to_tape_constant(&mut tape);
        let y = self.forward_taped(&mut tape, &vars, xv)?;
        Ok(tape.value(y).clone())
    }

    /// Records the forward pass on `tape` using `vars` laid out like
    /// [`Model::param_set`].
    pub fn forward_taped(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let width = tape.value(x).shape().get(1).copied();
        if width != Some(self.spec.input_dim()) {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: tape.value(x).shape().to_vec(),
                rhs: alloc::vec![self.spec.input_dim()],
            });
        }
        logits_from_vars(tape, self.spec.activation, vars, x)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(classify(&self.forward(x)?))
    }
}

/// `x -> act(x W_0 + b_0) -> ... -> x W_head + b_head` over `[w, b, w, b, ...]`
/// variables; the last pair is the linear head.
pub fn logits_from_vars(tape: &mut Tape, act: Activation, vars: &[Var], x: Var) -> Result<Var> {
    let n = vars.len();
    if n < 2 || n % 2 != 0 {
        return Err(Error::ParamMismatch(format!("{n} layer variables")));
    }
    let h = dense_stack(tape, act, &vars[..n - 2], x)?;
    dense(tape, None, vars[n - 2], vars[n - 1], h)
}

/// Activated dense layers over `[w, b, ...]` pairs.
pub fn dense_stack(tape: &mut Tape, act: Activation, vars: &[Var], x: Var) -> Result<Var> {
    let mut h = x;
    for pair in vars.chunks(2) {
        h = dense(tape, Some(act), pair[0], pair[1], h)?;
    }
    Ok(h)
}

fn dense(tape: &mut Tape, act: Option<Activation>, w: Var, b: Var, x: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    let y = tape.add(y, b)?;
    match act {
        Some(a) => a.apply(tape, y),
        None => Ok(y),
    }
}
