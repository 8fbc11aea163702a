//! Multilayer perceptrons over the autodiff tape.
//!
//! An [`MlpSpec`] describes architecture only; all learnable state lives in a
//! [`ParamStore`], a named list of flat `f64` segments (one per layer weight
//! or bias). The same spec + store pair can be evaluated two ways:
//!
//! * [`forward_mlp`] — records the computation on a [`Tape`] so gradients
//!   with respect to parameters and inputs are available;
//! * [`forward_mlp_values`] — a plain evaluation fast path used for
//!   sampling, metric evaluation, and frozen ("stop-gradient") networks.
//!
//! Time conditioning is appended to the input features: either the raw
//! scalar, or a sinusoidal code `[sin(2^i t), cos(2^i t)]`, `i < k`, giving
//! `2k` extra features. Embedding features are constants with respect to both
//! parameters and spatial input, so they enter the tape as frozen leaves.

use crate::rng::DetRng;
use crate::tape::{NodeId, Tape, TapeError};
use crate::tensor::{all_finite, Tensor};
use thiserror::Error;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Smooth rectifier `ln(1 + e^x)` (softplus).
    SmoothRectifier,
    Tanh,
}

/// How the scalar diffusion time is presented to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeEmbedding {
    None,
    /// Append `t` itself as one extra feature.
    ConcatScalar,
    /// Append `sin(2^i t), cos(2^i t)` for `i < k`: `2k` extra features.
    Sinusoidal(usize),
}

impl TimeEmbedding {
    /// Number of extra input features the embedding contributes.
    pub fn extra_features(&self) -> usize {
        match self {
            TimeEmbedding::None => 0,
            TimeEmbedding::ConcatScalar => 1,
            TimeEmbedding::Sinusoidal(k) => 2 * k,
        }
    }
}

/// Architecture of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub time_embedding: TimeEmbedding,
}

/// Errors from network construction and evaluation.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    BadSpec(String),
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch { what: String, expected: usize, got: usize },
    #[error("time input must be supplied iff the spec has a time embedding")]
    TimeMismatch,
    #[error(transparent)]
    Numeric(#[from] TapeError),
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        activation: Activation,
        time_embedding: TimeEmbedding,
    ) -> Result<Self, NnError> {
        let spec = MlpSpec { input_dim, hidden_dims, output_dim, activation, time_embedding };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(NnError::BadSpec("input and output dims must be >= 1".into()));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(NnError::BadSpec("hidden dims must be >= 1".into()));
        }
        if let TimeEmbedding::Sinusoidal(0) = self.time_embedding {
            return Err(NnError::BadSpec("sinusoidal embedding needs k >= 1".into()));
        }
        Ok(())
    }

    /// Input width after the time embedding is appended.
    pub fn feature_dim(&self) -> usize {
        self.input_dim + self.time_embedding.extra_features()
    }

    /// `(fan_in, fan_out)` per linear layer, first to last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.feature_dim()];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Embedding features for a `(B,1)` column of times; result is `(B, extra)`.
pub fn time_features(embedding: TimeEmbedding, t: &Tensor) -> Tensor {
    let b = t.nrows();
    match embedding {
        TimeEmbedding::None => Tensor::zeros((b, 0)),
        TimeEmbedding::ConcatScalar => t.clone(),
        TimeEmbedding::Sinusoidal(k) => {
            let mut out = Tensor::zeros((b, 2 * k));
            for i in 0..b {
                let ti = t[(i, 0)];
                for j in 0..k {
                    let freq = (1u64 << j) as f64;
                    out[(i, j)] = (freq * ti).sin();
                    out[(i, k + j)] = (freq * ti).cos();
                }
            }
            out
        }
    }
}

// ───────────────────────── parameter storage ─────────────────────────

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    name: String,
    values: Vec<f64>,
}

/// Named contiguous parameter vectors; their concatenation is the canonical
/// flat parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    segments: Vec<Segment>,
}

impl ParamStore {
    /// Gaussian initialization: weights `N(0, 1/fan_in)`, biases zero.
    pub fn init_mlp(spec: &MlpSpec, rng: &mut DetRng) -> Self {
        let mut segments = Vec::new();
        for (i, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let scale = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| scale * rng.normal()).collect();
            segments.push(Segment { name: format!("layer{i}.weight"), values: w });
            segments.push(Segment { name: format!("layer{i}.bias"), values: vec![0.0; fan_out] });
        }
        ParamStore { segments }
    }

    /// Identity initialization for a zero-hidden-layer square MLP.
    pub fn identity_mlp(spec: &MlpSpec) -> Result<Self, NnError> {
        if !spec.hidden_dims.is_empty() || spec.feature_dim() != spec.output_dim {
            return Err(NnError::BadSpec(
                "identity init needs zero hidden layers and square dims".into(),
            ));
        }
        let n = spec.output_dim;
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Ok(ParamStore {
            segments: vec![
                Segment { name: "layer0.weight".into(), values: w },
                Segment { name: "layer0.bias".into(), values: vec![0.0; n] },
            ],
        })
    }

    /// Build directly from `(name, values)` pairs; names must be unique.
    pub fn from_segments(pairs: Vec<(String, Vec<f64>)>) -> Result<Self, NnError> {
        for (i, (name, _)) in pairs.iter().enumerate() {
            if pairs.iter().skip(i + 1).any(|(other, _)| other == name) {
                return Err(NnError::BadSpec(format!("duplicate segment name `{name}`")));
            }
        }
        Ok(ParamStore {
            segments: pairs.into_iter().map(|(name, values)| Segment { name, values }).collect(),
        })
    }

    /// Detached copy: value-equal, shares nothing with the source.
    pub fn snapshot(&self) -> Self {
        self.clone()
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|s| s.values.len()).sum()
    }

    pub fn segment_names(&self) -> Vec<&str> {
        self.segments.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments.iter().find(|s| s.name == name).map(|s| s.values.as_slice())
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.segments
            .iter_mut()
            .find(|s| s.name == name)
            .map(|s| s.values.as_mut_slice())
    }

    /// Name of the segment containing flat index `i`.
    pub fn segment_name_at(&self, mut i: usize) -> &str {
        for s in &self.segments {
            if i < s.values.len() {
                return &s.name;
            }
            i -= s.values.len();
        }
        "<out of range>"
    }

    /// Canonical flat parameter vector (segments concatenated in order).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for s in &self.segments {
            out.extend_from_slice(&s.values);
        }
        out
    }

    /// Overwrite all values from a flat vector of matching length.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.total_len() {
            return Err(NnError::ShapeMismatch {
                what: "flat parameter vector".into(),
                expected: self.total_len(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for s in &mut self.segments {
            let len = s.values.len();
            s.values.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Mutable view over all values in canonical order.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.segments.iter_mut().flat_map(|s| s.values.iter_mut())
    }
}

// ───────────────────────── tape integration ─────────────────────────

/// Tape handles for one network's parameters, aligned with the layer order.
pub struct MlpNodes {
    pub weights: Vec<NodeId>,
    pub biases: Vec<NodeId>,
}

/// Push a store's parameters onto the tape as leaves.
///
/// `requires_grad = false` realizes the stop-gradient operator: the values
/// participate, but no gradient reaches the store.
pub fn mlp_leaves(
    tape: &mut Tape,
    spec: &MlpSpec,
    params: &ParamStore,
    requires_grad: bool,
) -> Result<MlpNodes, NnError> {
    let dims = spec.layer_dims();
    let mut weights = Vec::with_capacity(dims.len());
    let mut biases = Vec::with_capacity(dims.len());
    for (i, (fan_in, fan_out)) in dims.into_iter().enumerate() {
        let w = params
            .segment(&format!("layer{i}.weight"))
            .ok_or_else(|| NnError::BadSpec(format!("missing segment layer{i}.weight")))?;
        let b = params
            .segment(&format!("layer{i}.bias"))
            .ok_or_else(|| NnError::BadSpec(format!("missing segment layer{i}.bias")))?;
        if w.len() != fan_in * fan_out {
            return Err(NnError::ShapeMismatch {
                what: format!("layer{i}.weight"),
                expected: fan_in * fan_out,
                got: w.len(),
            });
        }
        if b.len() != fan_out {
            return Err(NnError::ShapeMismatch {
                what: format!("layer{i}.bias"),
                expected: fan_out,
                got: b.len(),
            });
        }
        let wt = crate::tensor::matrix(fan_in, fan_out, w.to_vec());
        let bt = crate::tensor::row(b);
        weights.push(tape.leaf(wt, requires_grad));
        biases.push(tape.leaf(bt, requires_grad));
    }
    Ok(MlpNodes { weights, biases })
}

/// Differentiable forward pass. `x` is a `(B, input_dim)` node; `t` (times as
/// a `(B,1)` tensor) must be given iff the spec embeds time. Output is a
/// `(B, output_dim)` node differentiable w.r.t. parameters and `x`.
pub fn forward_mlp(
    tape: &mut Tape,
    spec: &MlpSpec,
    nodes: &MlpNodes,
    x: NodeId,
    t: Option<&Tensor>,
) -> Result<NodeId, NnError> {
    spec.validate()?;
    let xv = tape.value(x);
    if xv.ncols() != spec.input_dim {
        return Err(NnError::ShapeMismatch {
            what: "input features".into(),
            expected: spec.input_dim,
            got: xv.ncols(),
        });
    }
    Tape::check_finite(xv, "mlp input")?;
    let needs_t = spec.time_embedding != TimeEmbedding::None;
    if needs_t != t.is_some() {
        return Err(NnError::TimeMismatch);
    }

    let mut h = x;
    if let Some(times) = t {
        if times.nrows() != tape.value(x).nrows() {
            return Err(NnError::ShapeMismatch {
                what: "time column rows".into(),
                expected: tape.value(x).nrows(),
                got: times.nrows(),
            });
        }
        Tape::check_finite(times, "mlp time input")?;
        let emb = tape.constant(time_features(spec.time_embedding, times));
        h = tape.concat_cols(x, emb);
    }

    let n_layers = nodes.weights.len();
    for i in 0..n_layers {
        let z = tape.matmul(h, nodes.weights[i]);
        let z = tape.add(z, nodes.biases[i]);
        h = if i + 1 < n_layers {
            match spec.activation {
                Activation::Tanh => tape.tanh(z),
                Activation::SmoothRectifier => tape.softplus(z),
            }
        } else {
            z
        };
    }
    Ok(h)
}

/// Plain (non-differentiable) forward pass; must agree exactly with
/// [`forward_mlp`] on the same inputs.
pub fn forward_mlp_values(
    spec: &MlpSpec,
    params: &ParamStore,
    x: &Tensor,
    t: Option<&Tensor>,
) -> Result<Tensor, NnError> {
    spec.validate()?;
    if x.ncols() != spec.input_dim {
        return Err(NnError::ShapeMismatch {
            what: "input features".into(),
            expected: spec.input_dim,
            got: x.ncols(),
        });
    }
    if !all_finite(x) {
        return Err(NnError::Numeric(TapeError::NonFinite { context: "mlp input".into() }));
    }
    let needs_t = spec.time_embedding != TimeEmbedding::None;
    if needs_t != t.is_some() {
        return Err(NnError::TimeMismatch);
    }
    let mut h = match t {
        Some(times) => {
            let emb = time_features(spec.time_embedding, times);
            let mut cat = Tensor::zeros((x.nrows(), x.ncols() + emb.ncols()));
            cat.slice_mut(ndarray::s![.., ..x.ncols()]).assign(x);
            cat.slice_mut(ndarray::s![.., x.ncols()..]).assign(&emb);
            cat
        }
        None => x.clone(),
    };
    let dims = spec.layer_dims();
    for (i, (fan_in, fan_out)) in dims.iter().copied().enumerate() {
        let w = params
            .segment(&format!("layer{i}.weight"))
            .ok_or_else(|| NnError::BadSpec(format!("missing segment layer{i}.weight")))?;
        let b = params
            .segment(&format!("layer{i}.bias"))
            .ok_or_else(|| NnError::BadSpec(format!("missing segment layer{i}.bias")))?;
        let wt = crate::tensor::matrix(fan_in, fan_out, w.to_vec());
        let mut z = h.dot(&wt);
        for mut row in z.rows_mut() {
            for (zj, bj) in row.iter_mut().zip(b) {
                *zj += bj;
            }
        }
        h = if i + 1 < dims.len() {
            match spec.activation {
                Activation::Tanh => z.mapv(f64::tanh),
                Activation::SmoothRectifier => z.mapv(|v| v.max(0.0) + (-v.abs()).exp().ln_1p()),
            }
        } else {
            z
        };
    }
    Ok(h)
}

/// Collect the flat gradient vector for a network after `backward`.
pub fn collect_mlp_grad(tape: &Tape, grads: &crate::tape::Gradients, nodes: &MlpNodes) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in nodes.weights.iter().zip(&nodes.biases) {
        out.extend(grads.dense(tape, *w).iter().copied());
        out.extend(grads.dense(tape, *b).iter().copied());
    }
    out
}

// ───────────────────────── tests ─────────────────────────
