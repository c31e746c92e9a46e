//! Forecasting model families: linear regressor, fully connected DNN,
//! LSTM and encoder-only transformer.
//!
//! Every family maps a window `[batch×window_len×input_dim]` to a forecast
//! `[batch×output_dim]`. Parameter names and shapes are a pure function of
//! the [`ModelSpec`], so any two models built from one spec can be averaged
//! element-wise.

pub mod attention;
pub mod dnn;
pub mod linear;
pub mod lstm;
pub mod snapshot;
pub mod train;
pub mod transformer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NamedTensor, Tape, Tensor, Var};

pub use train::{gather_rows, train_epochs, train_with_loss, Samples, TrainConfig, TrainStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Dnn,
    Lstm,
    Transformer,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Dnn => "dnn",
            Family::Lstm => "lstm",
            Family::Transformer => "transformer",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Family::Linear => 0,
            Family::Dnn => 1,
            Family::Lstm => 2,
            Family::Transformer => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Family::Linear,
            1 => Family::Dnn,
            2 => Family::Lstm,
            3 => Family::Transformer,
            _ => return None,
        })
    }
}

/// Architecture description shared by every node of a federation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub input_dim: usize,
    pub window_len: usize,
    pub output_dim: usize,
    /// DNN hidden widths, or stacked LSTM layer sizes.
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    /// Transformer only.
    #[serde(default = "default_heads")]
    pub num_heads: usize,
    /// Transformer only.
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    /// Transformer encoder blocks.
    #[serde(default = "default_layers")]
    pub num_layers: usize,
}

fn default_heads() -> usize {
    2
}
fn default_d_model() -> usize {
    16
}
fn default_layers() -> usize {
    2
}

/// Pointwise feed-forward inner width as a multiple of `d_model`.
pub const FFN_MULTIPLIER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ParamKind {
    Weight { fan_in: usize },
    Bias,
    Gain,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, window_len: usize, output_dim: usize) -> Self {
        Self {
            family: Family::Linear,
            input_dim,
            window_len,
            output_dim,
            hidden_dims: Vec::new(),
            num_heads: default_heads(),
            d_model: default_d_model(),
            num_layers: default_layers(),
        }
    }

    pub fn dnn(input_dim: usize, window_len: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Self {
            family: Family::Dnn,
            hidden_dims: hidden,
            ..Self::linear(input_dim, window_len, output_dim)
        }
    }

    pub fn lstm(
        input_dim: usize,
        window_len: usize,
        hidden: Vec<usize>,
        output_dim: usize,
    ) -> Self {
        Self {
            family: Family::Lstm,
            hidden_dims: hidden,
            ..Self::linear(input_dim, window_len, output_dim)
        }
    }

    pub fn transformer(
        input_dim: usize,
        window_len: usize,
        d_model: usize,
        num_heads: usize,
        num_layers: usize,
        output_dim: usize,
    ) -> Self {
        Self {
            family: Family::Transformer,
            d_model,
            num_heads,
            num_layers,
            ..Self::linear(input_dim, window_len, output_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.input_dim == 0 || self.window_len == 0 || self.output_dim == 0 {
            return bad("input_dim, window_len and output_dim must be positive".into());
        }
        match self.family {
            Family::Linear => {}
            Family::Dnn | Family::Lstm => {
                if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
                    return bad(format!(
                        "{} needs non-empty positive hidden_dims",
                        self.family.as_str()
                    ));
                }
            }
            Family::Transformer => {
                if self.num_heads == 0 || self.d_model == 0 || self.num_layers == 0 {
                    return bad("transformer dims must be positive".into());
                }
                if !self.d_model.is_multiple_of(self.num_heads) {
                    return bad(format!(
                        "d_model {} not divisible by num_heads {}",
                        self.d_model, self.num_heads
                    ));
                }
                if !self.d_model.is_multiple_of(2) {
                    return bad(format!("d_model {} must be even", self.d_model));
                }
            }
        }
        Ok(())
    }

    /// Ordered `(name, shape, kind)` for every parameter.
    pub(crate) fn layout(&self) -> Vec<(String, Vec<usize>, ParamKind)> {
        let mut out = Vec::new();
        let dense = |out: &mut Vec<_>, prefix: &str, i: usize, o: usize| {
            out.push((
                format!("{prefix}.w"),
                vec![i, o],
                ParamKind::Weight { fan_in: i },
            ));
            out.push((format!("{prefix}.b"), vec![o], ParamKind::Bias));
        };
        let flat = self.window_len * self.input_dim;
        match self.family {
            Family::Linear => dense(&mut out, "out", flat, self.output_dim),
            Family::Dnn => {
                let mut prev = flat;
                for (l, &h) in self.hidden_dims.iter().enumerate() {
                    dense(&mut out, &format!("hidden{l}"), prev, h);
                    prev = h;
                }
                dense(&mut out, "out", prev, self.output_dim);
            }
            Family::Lstm => {
                let mut prev = self.input_dim;
                for (l, &h) in self.hidden_dims.iter().enumerate() {
                    for gate in lstm::GATES {
                        out.push((
                            format!("lstm{l}.w_{gate}"),
                            vec![h + prev, h],
                            ParamKind::Weight { fan_in: h + prev },
                        ));
                        out.push((format!("lstm{l}.b_{gate}"), vec![h], ParamKind::Bias));
                    }
                    prev = h;
                }
                dense(&mut out, "head", prev, self.output_dim);
            }
            Family::Transformer => {
                let d = self.d_model;
                let dk = d / self.num_heads;
                dense(&mut out, "embed", self.input_dim, d);
                for l in 0..self.num_layers {
                    for h in 0..self.num_heads {
                        for proj in ["q", "k", "v"] {
                            out.push((
                                format!("block{l}.head{h}.w_{proj}"),
                                vec![d, dk],
                                ParamKind::Weight { fan_in: d },
                            ));
                        }
                    }
                    dense(&mut out, &format!("block{l}.attn_out"), d, d);
                    out.push((format!("block{l}.ln1.gain"), vec![d], ParamKind::Gain));
                    out.push((format!("block{l}.ln1.bias"), vec![d], ParamKind::Bias));
                    dense(&mut out, &format!("block{l}.ffn1"), d, FFN_MULTIPLIER * d);
                    dense(&mut out, &format!("block{l}.ffn2"), FFN_MULTIPLIER * d, d);
                    out.push((format!("block{l}.ln2.gain"), vec![d], ParamKind::Gain));
                    out.push((format!("block{l}.ln2.bias"), vec![d], ParamKind::Bias));
                }
                dense(&mut out, "head", d, self.output_dim);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }
}

/// Named parameter tensors of one model instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    family: Family,
    tensors: Vec<NamedTensor>,
}

impl ModelParams {
    pub fn new(family: Family, tensors: Vec<NamedTensor>) -> Self {
        Self { family, tensors }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.tensor)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .iter_mut()
            .find(|t| t.name == name)
            .map(|t| &mut t.tensor)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.tensor.len()).sum()
    }

    /// All parameter values concatenated in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.tensor.data().iter().copied())
            .collect()
    }

    /// Checks that `other` has the same family, names and shapes in order.
    pub fn check_compatible(&self, other: &ModelParams) -> Result<()> {
        if self.family != other.family {
            return Err(Error::StructureMismatch(format!(
                "family {} vs {}",
                self.family.as_str(),
                other.family.as_str()
            )));
        }
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::StructureMismatch(format!(
                "{} vs {} tensors",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::StructureMismatch(format!(
                    "`{}` {:?} vs `{}` {:?}",
                    a.name,
                    a.tensor.shape(),
                    b.name,
                    b.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    /// Checks that the parameters are exactly those `spec` lays out.
    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        let layout = spec.layout();
        let ok = self.family == spec.family
            && layout.len() == self.tensors.len()
            && layout
                .iter()
                .zip(&self.tensors)
                .all(|((n, s, _), t)| *n == t.name && s.as_slice() == t.tensor.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::StructureMismatch(format!(
                "parameters do not match {} spec",
                spec.family.as_str()
            )))
        }
    }

    /// Records every parameter on `tape` as a gradient-tracked leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape) -> Bound<'a> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.param(t.tensor.clone()))
            .collect();
        Bound { params: self, vars }
    }

    /// Moves gradients computed on `tape` into the parameter grad slots.
    pub fn absorb_grads(&mut self, tape: &mut Tape, vars: &[Var]) -> Result<()> {
        for (t, &v) in self.tensors.iter_mut().zip(vars) {
            let g = tape
                .take_grad(v)
                .ok_or_else(|| Error::MissingGrad(t.name.clone()))?;
            t.tensor.set_grad(g)?;
        }
        Ok(())
    }
}

/// Parameters recorded on a tape, addressable by name.
pub struct Bound<'a> {
    params: &'a ModelParams,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.params
            .tensors
            .iter()
            .position(|t| t.name == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn into_vars(self) -> Vec<Var> {
        self.vars
    }

    /// `x·W + b` for a dense layer registered under `prefix`.
    pub(crate) fn dense(&self, tape: &mut Tape, prefix: &str, x: Var) -> Result<Var> {
        let w = self.var(&format!("{prefix}.w"))?;
        let b = self.var(&format!("{prefix}.b"))?;
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

/// Deterministic initialization: weights `~ U(−√(1/fan_in), √(1/fan_in))`,
/// biases zero, layer-norm gains one.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = spec
        .layout()
        .into_iter()
        .map(|(name, shape, kind)| {
            let n: usize = shape.iter().product();
            let data = match kind {
                ParamKind::Weight { fan_in } => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
                }
                ParamKind::Bias => vec![0.0; n],
                ParamKind::Gain => vec![1.0; n],
            };
            NamedTensor::new(name, Tensor::from_parts(shape, data))
        })
        .collect();
    Ok(ModelParams::new(spec.family, tensors))
}

/// A model instance: architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ModelParams,
}

impl Model {
    pub fn new(spec: ModelSpec, params: ModelParams) -> Result<Self> {
        spec.validate()?;
        params.check_spec(&spec)?;
        Ok(Self { spec, params })
    }

    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = init_params(&spec, seed)?;
        Ok(Self { spec, params })
    }

    /// Forward pass on a tape. `x` is `[batch×window_len×input_dim]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound<'_>, x: Var) -> Result<Var> {
        forward(&self.spec, tape, bound, x)
    }

    /// Mean-squared loss of the forecast against `targets` `[batch×output_dim]`.
    pub fn loss(&self, tape: &mut Tape, bound: &Bound<'_>, x: Var, targets: Var) -> Result<Var> {
        let pred = self.forward(tape, bound, x)?;
        tape.mse(pred, targets)
    }

    /// Batched inference without gradient tracking.
    pub fn predict(&self, windows: &Tensor) -> Result<Tensor> {
        predict(&self.spec, &self.params, windows)
    }
}

pub fn forward(spec: &ModelSpec, tape: &mut Tape, bound: &Bound<'_>, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 || s[2] != spec.input_dim {
        return Err(Error::ShapeMismatch {
            op: "forward",
            left: s,
            right: vec![spec.window_len, spec.input_dim],
        });
    }
    match spec.family {
        Family::Linear => linear::linear_forward(tape, bound, x),
        Family::Dnn => dnn::dnn_forward(spec, tape, bound, x),
        Family::Lstm => lstm::lstm_forward(spec, tape, bound, x),
        Family::Transformer => transformer::transformer_forward(spec, tape, bound, x),
    }
}

const PREDICT_CHUNK: usize = 256;

pub fn predict(spec: &ModelSpec, params: &ModelParams, windows: &Tensor) -> Result<Tensor> {
    let s = windows.shape();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "predict",
            left: s.to_vec(),
            right: vec![spec.window_len, spec.input_dim],
        });
    }
    let n = s[0];
    let per = s[1] * s[2];
    let mut out = Vec::with_capacity(n * spec.output_dim);
    for start in (0..n).step_by(PREDICT_CHUNK) {
        let end = (start + PREDICT_CHUNK).min(n);
        let chunk = Tensor::from_parts(
            vec![end - start, s[1], s[2]],
            windows.data()[start * per..end * per].to_vec(),
        );
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(chunk);
        let y = forward(spec, &mut tape, &bound, x)?;
        out.extend_from_slice(tape.value(y).data());
    }
    Ok(Tensor::from_parts(vec![n, spec.output_dim], out))
}
