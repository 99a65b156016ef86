//! Minimal dense feed-forward network engine: forward pass, softmax
//! cross-entropy loss with exact backpropagation, and SGD with classical
//! momentum.
//!
//! Parameters live in one flat `f64` vector. For a layer with `in_dim` inputs
//! and `out_dim` outputs the layout is the row-major weight matrix
//! (`out_dim x in_dim`) followed by the biases, layers in network order:
//!
//! ```text
//! [ W0 (row-major) | b0 | W1 | b1 | ... ]
//! ```
//!
//! Hidden layers apply the configured activation; the final layer is linear
//! and produces logits. The softmax is computed with max-subtraction so that
//! boosted models cannot overflow it. Transcendental functions go through
//! `libm`, so results are bit-identical across platforms and feature sets.
//!
//! Everything here is a pure function of its inputs (plus an explicit seed
//! where noted); values are immutable once constructed and safe to share
//! across threads.

use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::seeds;

/// Activation applied to all hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => libm::tanh(z),
        }
    }

    /// Derivative expressed in terms of the activation output `a`.
    /// For ReLU the subgradient at 0 is taken as 0.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Architecture of an MLP: `layer_dims = [input, hidden..., num_classes]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    layer_dims: Vec<usize>,
    activation: Activation,
}

/// Offsets of one layer's weights and biases inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerLayout {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: usize,
    pub biases: usize,
}

impl ModelSpec {
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "model needs at least an input and an output layer".into(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("layer dims must be > 0".into()));
        }
        Ok(Self {
            layer_dims,
            activation,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().expect("validated: >= 2 dims")
    }

    /// Number of affine layers.
    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// Total parameter count: sum over layers of `(in_dim + 1) * out_dim`.
    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    pub(crate) fn layouts(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_dims
            .windows(2)
            .map(|w| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let layout = LayerLayout {
                    in_dim,
                    out_dim,
                    weights: offset,
                    biases: offset + in_dim * out_dim,
                };
                offset += (in_dim + 1) * out_dim;
                layout
            })
            .collect()
    }
}

/// Flat model parameters plus the spec they conform to.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    spec: ModelSpec,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, spec: ModelSpec) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.param_count(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self { values, spec })
    }

    pub fn zeros(spec: ModelSpec) -> Self {
        let values = vec![0.0; spec.param_count()];
        Self { values, spec }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rebuilds a parameter vector from raw values without the finiteness
    /// scan; callers guarantee the values came from finite arithmetic.
    pub(crate) fn from_raw(values: Vec<f64>, spec: ModelSpec) -> Self {
        debug_assert_eq!(values.len(), spec.param_count());
        Self { values, spec }
    }
}

/// Flat gradient (or update direction) with the same length and ordering as
/// the `ParamVector` it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    values: Vec<f64>,
}

impl GradVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient vector"));
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self += c * other`.
    pub fn scaled_add(&mut self, c: f64, other: &GradVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        for (s, &o) in self.values.iter_mut().zip(&other.values) {
            *s += c * o;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// Momentum buffer for SGD; `coefficient` is the decay mu in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    velocity: Vec<f64>,
    coefficient: f64,
}

impl MomentumState {
    pub fn new(len: usize, coefficient: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&coefficient) {
            return Err(Error::OutOfRange("momentum coefficient"));
        }
        Ok(Self {
            velocity: vec![0.0; len],
            coefficient,
        })
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    pub(crate) fn velocity_mut(&mut self) -> &mut [f64] {
        &mut self.velocity
    }
}

/// A labelled mini-batch. Inputs are stored row-major as
/// `len * input_dim` scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    input_dim: usize,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, input_dim: usize, labels: Vec<usize>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidConfig("batch input_dim must be > 0".into()));
        }
        if inputs.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * input_dim,
                got: inputs.len(),
            });
        }
        Ok(Self {
            inputs,
            input_dim,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

/// Index of the largest entry; ties break toward the lowest index so that
/// predictions (and hence attack success rates) are platform-independent.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws initial parameters: weights uniform in `[-1/sqrt(fan_in),
/// 1/sqrt(fan_in)]` per layer, biases zero. Deterministic given `seed`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = seeds::rng(seed);
    let mut values = vec![0.0; spec.param_count()];
    for layout in spec.layouts() {
        let limit = 1.0 / libm::sqrt(layout.in_dim as f64);
        let dist = Uniform::new_inclusive(-limit, limit);
        for w in &mut values[layout.weights..layout.weights + layout.in_dim * layout.out_dim] {
            *w = dist.sample(&mut rng);
        }
        // biases stay zero
    }
    ParamVector::from_raw(values, spec.clone())
}

/// Forward pass for a single input; returns the logits.
pub fn forward(params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    let spec = params.spec();
    if input.len() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim(),
            got: input.len(),
        });
    }
    let layouts = spec.layouts();
    let last = layouts.len() - 1;
    let mut act = input.to_vec();
    for (l, layout) in layouts.iter().enumerate() {
        let mut next = vec![0.0; layout.out_dim];
        affine(params.values(), layout, &act, &mut next);
        if l != last {
            for v in &mut next {
                *v = spec.activation().apply(*v);
            }
        }
        act = next;
    }
    Ok(act)
}

/// Predicted class: argmax over logits, lowest index on ties.
pub fn predict(params: &ParamVector, input: &[f64]) -> Result<usize> {
    Ok(argmax(&forward(params, input)?))
}

#[inline]
fn affine(values: &[f64], layout: &LayerLayout, input: &[f64], out: &mut [f64]) {
    for (o, out_v) in out.iter_mut().enumerate() {
        let row = layout.weights + o * layout.in_dim;
        let mut sum = values[layout.biases + o];
        for (i, &x) in input.iter().enumerate() {
            sum += values[row + i] * x;
        }
        *out_v = sum;
    }
}

/// `log(sum(exp(z)))` with max-subtraction.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for &z in logits {
        sum += libm::exp(z - max);
    }
    max + libm::log(sum)
}

/// Softmax probabilities with max-subtraction, written into `out`.
fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for (p, &z) in out.iter_mut().zip(logits) {
        *p = libm::exp(z - max);
        sum += *p;
    }
    for p in out.iter_mut() {
        *p /= sum;
    }
}

/// Mean softmax cross-entropy over the batch and its exact gradient.
///
/// The gradient is accumulated over examples and divided by the batch size
/// once at the end, so the result follows mean semantics exactly.
pub fn loss_and_grad(params: &ParamVector, batch: &Batch) -> Result<(f64, GradVector)> {
    let spec = params.spec();
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if batch.input_dim() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim(),
            got: batch.input_dim(),
        });
    }
    let classes = spec.num_classes();
    let layouts = spec.layouts();
    let last = layouts.len() - 1;
    let values = params.values();

    // Per-layer scratch reused across examples.
    let mut acts: Vec<Vec<f64>> = layouts.iter().map(|l| vec![0.0; l.out_dim]).collect();
    let mut deltas: Vec<Vec<f64>> = layouts.iter().map(|l| vec![0.0; l.out_dim]).collect();
    let mut probs = vec![0.0; classes];

    let mut grad = vec![0.0; params.len()];
    let mut loss_sum = 0.0;

    for k in 0..batch.len() {
        let input = batch.input(k);
        let label = batch.label(k);
        if label >= classes {
            return Err(Error::OutOfRange("batch label"));
        }

        // Forward, keeping post-activation values per layer.
        for (l, layout) in layouts.iter().enumerate() {
            let (lower, upper) = acts.split_at_mut(l);
            let a_in: &[f64] = if l == 0 { input } else { &lower[l - 1] };
            affine(values, layout, a_in, &mut upper[0]);
            if l != last {
                for v in upper[0].iter_mut() {
                    *v = spec.activation().apply(*v);
                }
            }
        }

        let logits = &acts[last];
        loss_sum += log_sum_exp(logits) - logits[label];

        // Output delta: softmax(z) - onehot(y).
        softmax_into(logits, &mut probs);
        for (d, &p) in deltas[last].iter_mut().zip(&probs) {
            *d = p;
        }
        deltas[last][label] -= 1.0;

        // Backward through the layers, accumulating parameter gradients.
        for l in (0..layouts.len()).rev() {
            let layout = &layouts[l];
            // dW, db from this layer's delta and its input activation.
            {
                let a_in: &[f64] = if l == 0 { input } else { &acts[l - 1] };
                for o in 0..layout.out_dim {
                    let d = deltas[l][o];
                    let row = layout.weights + o * layout.in_dim;
                    for (i, &a) in a_in.iter().enumerate() {
                        grad[row + i] += d * a;
                    }
                    grad[layout.biases + o] += d;
                }
            }
            // Delta for the layer below (through the activation).
            if l > 0 {
                let (below, here) = deltas.split_at_mut(l);
                let prev = &mut below[l - 1];
                prev.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..layout.out_dim {
                    let d = here[0][o];
                    let row = layout.weights + o * layout.in_dim;
                    for (i, p) in prev.iter_mut().enumerate() {
                        *p += values[row + i] * d;
                    }
                }
                for (p, &a) in prev.iter_mut().zip(acts[l - 1].iter()) {
                    *p *= spec.activation().grad_from_output(a);
                }
            }
        }
    }

    let scale = 1.0 / batch.len() as f64;
    let loss = loss_sum * scale;
    for g in &mut grad {
        *g *= scale;
    }

    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("loss or gradient"));
    }
    Ok((loss, GradVector::from_raw(grad)))
}

/// One SGD step with classical momentum:
/// `v <- mu * v + g`, `theta <- theta - lr * v`.
pub fn sgd_step(
    params: &ParamVector,
    grad: &GradVector,
    lr: f64,
    state: &MomentumState,
) -> Result<(ParamVector, MomentumState)> {
    if grad.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grad.len(),
        });
    }
    if state.velocity.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: state.velocity.len(),
        });
    }
    if !(lr > 0.0) {
        return Err(Error::OutOfRange("learning rate"));
    }
    let mu = state.coefficient;
    let mut velocity = state.velocity.clone();
    let mut values = params.values.clone();
    for ((v, &g), p) in velocity.iter_mut().zip(grad.values()).zip(&mut values) {
        *v = mu * *v + g;
        *p -= lr * *v;
    }
    Ok((
        ParamVector::from_raw(values, params.spec.clone()),
        MomentumState {
            velocity,
            coefficient: mu,
        },
    ))
}

/// Accuracy (argmax with lowest-index tie-break) and mean cross-entropy.
pub fn evaluate(params: &ParamVector, data: &Batch) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation data"));
    }
    if data.input_dim() != params.spec().input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.spec().input_dim(),
            got: data.input_dim(),
        });
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    for k in 0..data.len() {
        let logits = forward(params, data.input(k))?;
        let label = data.label(k);
        if label >= logits.len() {
            return Err(Error::OutOfRange("batch label"));
        }
        if argmax(&logits) == label {
            correct += 1;
        }
        loss_sum += log_sum_exp(&logits) - logits[label];
    }
    Ok((
        correct as f64 / data.len() as f64,
        loss_sum / data.len() as f64,
    ))
}

/// Draws a random batch and a small random model; test support.
#[cfg(test)]
pub(crate) fn random_instance(
    dims: &[usize],
    activation: Activation,
    batch_len: usize,
    seed: u64,
) -> (ParamVector, Batch) {
    use rand::Rng;
    let spec = ModelSpec::new(dims.to_vec(), activation).unwrap();
    let params = init_params(&spec, seed);
    let mut rng = seeds::rng(seed ^ 0xABCD);
    let dim = spec.input_dim();
    let inputs: Vec<f64> = (0..batch_len * dim).map(|_| rng.gen::<f64>()).collect();
    let labels: Vec<usize> = (0..batch_len)
        .map(|_| rng.gen_range(0..spec.num_classes()))
        .collect();
    (params, Batch::new(inputs, dim, labels).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spec(dims: &[usize]) -> ModelSpec {
        ModelSpec::new(dims.to_vec(), Activation::Tanh).unwrap()
    }

    #[test]
    fn spec_rejects_degenerate_dims() {
        assert!(ModelSpec::new(vec![4], Activation::Relu).is_err());
        assert!(ModelSpec::new(vec![4, 0, 3], Activation::Relu).is_err());
    }

    #[test]
    fn param_count_matches_hand_count() {
        // (4+1)*8 + (8+1)*3 = 67
        assert_eq!(spec(&[4, 8, 3]).param_count(), 67);
        assert_eq!(init_params(&spec(&[4, 8, 3]), 1).len(), 67);
    }

    #[test]
    fn init_biases_are_zero() {
        let s = spec(&[2, 2]);
        let p = init_params(&s, 99);
        for layout in s.layouts() {
            for o in 0..layout.out_dim {
                assert_eq!(p.values()[layout.biases + o], 0.0);
            }
        }
    }

    #[test]
    fn init_is_bit_identical_for_same_seed() {
        let s = spec(&[5, 7, 3]);
        let a = init_params(&s, 42);
        let b = init_params(&s, 42);
        assert_eq!(a.values(), b.values());
        let c = init_params(&s, 43);
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn forward_zero_params_gives_zero_logits() {
        let p = ParamVector::zeros(spec(&[3, 4, 2]));
        let logits = forward(&p, &[0.3, -0.2, 0.9]).unwrap();
        assert_eq!(logits, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_identity_embedding_selects_coordinates() {
        // Single layer [4, 2]; row o reads input coordinate o.
        let s = spec(&[4, 2]);
        let mut values = vec![0.0; s.param_count()];
        values[0] = 1.0; // W[0][0]
        values[4 + 1] = 1.0; // W[1][1]
        let p = ParamVector::new(values, s).unwrap();
        let logits = forward(&p, &[0.5, -0.25, 9.0, 9.0]).unwrap();
        assert_eq!(logits, vec![0.5, -0.25]);
    }

    /// Independent naive re-implementation of the forward pass using nested
    /// `Vec<Vec<f64>>` matrices read straight from the flat layout.
    fn naive_forward(params: &ParamVector, input: &[f64]) -> Vec<f64> {
        let s = params.spec();
        let dims = s.layer_dims();
        let mut off = 0;
        let mut act: Vec<f64> = input.to_vec();
        for l in 0..dims.len() - 1 {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let mut w = vec![vec![0.0; n_in]; n_out];
            for (o, row) in w.iter_mut().enumerate() {
                for (i, cell) in row.iter_mut().enumerate() {
                    *cell = params.values()[off + o * n_in + i];
                }
            }
            let b = &params.values()[off + n_in * n_out..off + (n_in + 1) * n_out];
            let mut next = vec![0.0; n_out];
            for o in 0..n_out {
                next[o] = b[o] + w[o].iter().zip(act.iter()).map(|(x, y)| x * y).sum::<f64>();
                if l != dims.len() - 2 {
                    next[o] = match s.activation() {
                        Activation::Relu => next[o].max(0.0),
                        Activation::Tanh => next[o].tanh(),
                    };
                }
            }
            act = next;
            off += (n_in + 1) * n_out;
        }
        act
    }

    #[test]
    fn forward_matches_naive_reimplementation() {
        let (params, batch) = random_instance(&[6, 5, 4, 3], Activation::Tanh, 4, 7);
        for k in 0..batch.len() {
            let ours = forward(&params, batch.input(k)).unwrap();
            let naive = naive_forward(&params, batch.input(k));
            for (a, b) in ours.iter().zip(&naive) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let p = ParamVector::zeros(spec(&[3, 2]));
        assert!(matches!(
            forward(&p, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        for c in [2usize, 5, 10] {
            let p = ParamVector::zeros(spec(&[3, c]));
            let batch = Batch::new(vec![0.4, 0.5, 0.6], 3, vec![c - 1]).unwrap();
            let (loss, _) = loss_and_grad(&p, &batch).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_rejects_empty_batch() {
        let p = ParamVector::zeros(spec(&[3, 2]));
        let batch = Batch::new(vec![], 3, vec![]).unwrap();
        assert!(matches!(loss_and_grad(&p, &batch), Err(Error::Empty(_))));
    }

    /// Central finite differences on the mean loss.
    fn fd_gradient(params: &ParamVector, batch: &Batch, step: f64) -> Vec<f64> {
        let mut out = vec![0.0; params.len()];
        for i in 0..params.len() {
            let mut plus = params.values().to_vec();
            let mut minus = plus.clone();
            plus[i] += step;
            minus[i] -= step;
            let lp = loss_and_grad(
                &ParamVector::new(plus, params.spec().clone()).unwrap(),
                batch,
            )
            .unwrap()
            .0;
            let lm = loss_and_grad(
                &ParamVector::new(minus, params.spec().clone()).unwrap(),
                batch,
            )
            .unwrap()
            .0;
            out[i] = (lp - lm) / (2.0 * step);
        }
        out
    }

    fn max_norm(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (params, batch) = random_instance(&[3, 4, 2], Activation::Tanh, 8, 11);
        let (_, grad) = loss_and_grad(&params, &batch).unwrap();
        let fd = fd_gradient(&params, &batch, 1e-5);
        let diff: Vec<f64> = grad
            .values()
            .iter()
            .zip(&fd)
            .map(|(a, b)| a - b)
            .collect();
        let rel = max_norm(&diff) / (1.0 + max_norm(grad.values()));
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn gradient_matches_finite_differences_relu() {
        let (params, batch) = random_instance(&[4, 6, 3], Activation::Relu, 6, 5);
        let (_, grad) = loss_and_grad(&params, &batch).unwrap();
        let fd = fd_gradient(&params, &batch, 1e-5);
        let diff: Vec<f64> = grad
            .values()
            .iter()
            .zip(&fd)
            .map(|(a, b)| a - b)
            .collect();
        let rel = max_norm(&diff) / (1.0 + max_norm(grad.values()));
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn duplicated_singleton_batch_is_bit_identical() {
        let (params, _) = random_instance(&[3, 4, 2], Activation::Tanh, 1, 3);
        let one = Batch::new(vec![0.1, 0.7, 0.3], 3, vec![1]).unwrap();
        let two = Batch::new(vec![0.1, 0.7, 0.3, 0.1, 0.7, 0.3], 3, vec![1, 1]).unwrap();
        let (l1, g1) = loss_and_grad(&params, &one).unwrap();
        let (l2, g2) = loss_and_grad(&params, &two).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1.values(), g2.values());
    }

    #[test]
    fn duplicated_batch_keeps_mean_semantics() {
        let (params, batch) = random_instance(&[3, 4, 2], Activation::Tanh, 4, 9);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..2 {
            for k in 0..batch.len() {
                inputs.extend_from_slice(batch.input(k));
                labels.push(batch.label(k));
            }
        }
        let doubled = Batch::new(inputs, 3, labels).unwrap();
        let (l1, g1) = loss_and_grad(&params, &batch).unwrap();
        let (l2, g2) = loss_and_grad(&params, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    /// Batch gradient equals the mean of per-example gradients; this
    /// linearity is what the aggregation decomposition rests on.
    #[test]
    fn batch_gradient_is_mean_of_per_example_gradients() {
        let (params, batch) = random_instance(&[4, 5, 3], Activation::Tanh, 6, 13);
        let (batch_loss, batch_grad) = loss_and_grad(&params, &batch).unwrap();
        let mut mean = vec![0.0; params.len()];
        let mut mean_loss = 0.0;
        for k in 0..batch.len() {
            let single =
                Batch::new(batch.input(k).to_vec(), batch.input_dim(), vec![batch.label(k)])
                    .unwrap();
            let (l, g) = loss_and_grad(&params, &single).unwrap();
            mean_loss += l;
            for (m, &v) in mean.iter_mut().zip(g.values()) {
                *m += v;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        mean_loss *= scale;
        for m in &mut mean {
            *m *= scale;
        }
        assert!((batch_loss - mean_loss).abs() < 1e-12);
        for (a, b) in batch_grad.values().iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_zero_grad_zero_velocity_is_fixed_point() {
        let (params, _) = random_instance(&[3, 2], Activation::Relu, 1, 1);
        let grad = GradVector::zeros(params.len());
        let state = MomentumState::new(params.len(), 0.9).unwrap();
        let (next, _) = sgd_step(&params, &grad, 0.1, &state).unwrap();
        assert_eq!(next.values(), params.values());
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let (params, _) = random_instance(&[3, 2], Activation::Relu, 1, 2);
        let grad = GradVector::new(vec![0.5; params.len()]).unwrap();
        let state = MomentumState::new(params.len(), 0.0).unwrap();
        let (next, _) = sgd_step(&params, &grad, 0.01, &state).unwrap();
        for (n, p) in next.values().iter().zip(params.values()) {
            assert_eq!(*n, p - 0.01 * 0.5);
        }
    }

    #[test]
    fn sgd_two_steps_match_hand_unrolled_recurrence() {
        // v1 = g, v2 = 0.9 g + g = 1.9 g; theta2 = theta0 - 0.01 g - 0.01 * 1.9 g.
        let (params, _) = random_instance(&[4, 3], Activation::Relu, 1, 8);
        let g = GradVector::new((0..params.len()).map(|i| 0.1 + i as f64 * 0.01).collect())
            .unwrap();
        let state = MomentumState::new(params.len(), 0.9).unwrap();
        let (p1, s1) = sgd_step(&params, &g, 0.01, &state).unwrap();
        let (p2, _) = sgd_step(&p1, &g, 0.01, &s1).unwrap();
        for (i, (out, start)) in p2.values().iter().zip(params.values()).enumerate() {
            let gi = g.values()[i];
            let expected = start - 0.01 * gi - 0.01 * 1.9 * gi;
            assert!((out - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_rejects_length_mismatch() {
        let (params, _) = random_instance(&[3, 2], Activation::Relu, 1, 2);
        let grad = GradVector::zeros(params.len() + 1);
        let state = MomentumState::new(params.len(), 0.0).unwrap();
        assert!(sgd_step(&params, &grad, 0.1, &state).is_err());
    }

    #[test]
    fn evaluate_all_correct_and_all_wrong() {
        // Single layer [2, 2] reading coordinates directly.
        let s = spec(&[2, 2]);
        let mut values = vec![0.0; s.param_count()];
        values[0] = 1.0;
        values[2 + 1] = 1.0;
        let p = ParamVector::new(values, s).unwrap();
        let inputs = vec![1.0, 0.0, 0.0, 1.0];
        let right = Batch::new(inputs.clone(), 2, vec![0, 1]).unwrap();
        let wrong = Batch::new(inputs, 2, vec![1, 0]).unwrap();
        assert_eq!(evaluate(&p, &right).unwrap().0, 1.0);
        assert_eq!(evaluate(&p, &wrong).unwrap().0, 0.0);
    }

    #[test]
    fn evaluate_zero_params_ties_break_to_class_zero() {
        let p = ParamVector::zeros(spec(&[3, 10]));
        // Balanced 10-class set: one example per class.
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for c in 0..10 {
            inputs.extend_from_slice(&[0.1, 0.2, 0.3]);
            labels.push(c);
        }
        let batch = Batch::new(inputs, 3, labels).unwrap();
        let (acc, _) = evaluate(&p, &batch).unwrap();
        // All logits tie at zero, so everything predicts class 0.
        assert_eq!(acc, 0.1);
    }

    #[test]
    fn loss_is_nonnegative() {
        for seed in 0..5 {
            let (params, batch) = random_instance(&[4, 6, 3], Activation::Tanh, 5, seed);
            let (loss, _) = loss_and_grad(&params, &batch).unwrap();
            assert!(loss >= 0.0);
        }
    }
}
