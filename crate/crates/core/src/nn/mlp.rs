//! Dense feed-forward networks with batched forward and reverse passes.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`. Batches are
//! row-major `(batch, dim)` buffers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{check_len, Error, Result};

/// Element-wise activation applied after the affine map of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
    /// `scale · tanh(z)`, used for bounded action outputs.
    Tanh {
        scale: f64,
    },
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Identity => z,
            Activation::Tanh { scale } => T::from_f64(scale) * z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
            Activation::Tanh { scale } => {
                let s = T::from_f64(scale);
                let t = y / s;
                s * (T::one() - t * t)
            }
        }
    }

    pub(crate) fn tag(self) -> (u32, f64) {
        match self {
            Activation::Relu => (0, 0.0),
            Activation::Identity => (1, 0.0),
            Activation::Tanh { scale } => (2, scale),
        }
    }

    pub(crate) fn from_tag(tag: u32, scale: f64) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            2 => Some(Activation::Tanh { scale }),
            _ => None,
        }
    }
}

/// A dense layer: `y = activation(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Layer<T> {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidArgument("layer dims must be > 0".into()));
        }
        check_len("layer weights", in_dim * out_dim, weights.len())?;
        check_len("layer bias", out_dim, bias.len())?;
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        })
    }

    /// Uniform init in `±1/√fan_in` for weights and biases.
    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        let limit = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || T::from_f64(rng.random_range(-limit..limit));
        let weights = (0..in_dim * out_dim).map(|_| draw()).collect();
        let bias = (0..out_dim).map(|_| draw()).collect();
        Self::new(in_dim, out_dim, activation, weights, bias)
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        Self::new(
            in_dim,
            out_dim,
            activation,
            vec![T::zero(); in_dim * out_dim],
            vec![T::zero(); out_dim],
        )
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward_batch(&self, input: &[T], batch: usize, out: &mut Vec<T>) {
        out.clear();
        out.reserve(batch * self.out_dim);
        for _ in 0..batch {
            out.extend_from_slice(&self.bias);
        }
        // out += input · Wᵀ
        T::gemm(
            batch,
            self.in_dim,
            self.out_dim,
            input,
            self.in_dim,
            1,
            &self.weights,
            1,
            self.in_dim,
            T::one(),
            out,
        );
        for v in out.iter_mut() {
            *v = self.activation.apply(*v);
        }
    }
}

/// A chain of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Mlp<T> {
    layers: Vec<Layer<T>>,
}

/// Per-layer activations recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    batch: usize,
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().expect("cache holds at least the input")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Output of the second-to-last layer (the input for a single-layer net).
    pub fn last_hidden(&self) -> &[T] {
        &self.acts[self.acts.len() - 2]
    }
}

impl<T: Scalar> Mlp<T> {
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an Mlp needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_len("layer chain", pair[0].out_dim, pair[1].in_dim)?;
        }
        Ok(Self { layers })
    }

    /// Random network with layer widths `dims` (input first, output last).
    pub fn random<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output dims".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Layer::random(dims[i], dims[i + 1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output dims".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Layer::zeros(dims[i], dims[i + 1], act)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    /// Concatenates the layers of `self` and `next` (`next ∘ self`).
    pub fn compose(&self, next: &Mlp<T>) -> Result<Self> {
        let mut layers = self.layers.clone();
        layers.extend(next.layers.iter().cloned());
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Layer dims and activations match.
    pub fn is_congruent(&self, other: &Mlp<T>) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim && a.activation == b.activation)
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        self.forward_batch(input, 1)
    }

    pub fn forward_batch(&self, input: &[T], batch: usize) -> Result<Vec<T>> {
        check_len("mlp input", batch * self.input_dim(), input.len())?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_batch(&cur, batch, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, input: &[T], batch: usize) -> Result<ForwardCache<T>> {
        check_len("mlp input", batch * self.input_dim(), input.len())?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for layer in &self.layers {
            let mut out = Vec::new();
            layer.forward_batch(acts.last().unwrap(), batch, &mut out);
            acts.push(out);
        }
        Ok(ForwardCache { batch, acts })
    }

    /// Activations of the last hidden layer for a single input.
    pub fn last_hidden(&self, input: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_cached(input, 1)?.last_hidden().to_vec())
    }

    /// Reverse pass: accumulates `∂L/∂θ` into `grads` and returns
    /// `∂L/∂input` when `want_input_grad` is set.
    pub fn backward_into(
        &self,
        cache: &ForwardCache<T>,
        grad_out: &[T],
        grads: &mut Gradients<T>,
        want_input_grad: bool,
    ) -> Result<Option<Vec<T>>> {
        if !grads.is_congruent(self) {
            return Err(Error::Shape {
                context: "gradient set",
                expected: self.param_count(),
                got: grads.len(),
            });
        }
        self.reverse(cache, grad_out, Some(grads), want_input_grad)
    }

    /// Reverse pass for `∂L/∂input` only; parameter gradients are skipped.
    pub fn input_gradient(&self, cache: &ForwardCache<T>, grad_out: &[T]) -> Result<Vec<T>> {
        Ok(self.reverse(cache, grad_out, None, true)?.unwrap_or_default())
    }

    fn reverse(
        &self,
        cache: &ForwardCache<T>,
        grad_out: &[T],
        mut grads: Option<&mut Gradients<T>>,
        want_input_grad: bool,
    ) -> Result<Option<Vec<T>>> {
        let batch = cache.batch;
        check_len("mlp grad_out", batch * self.output_dim(), grad_out.len())?;
        check_len("forward cache depth", self.layers.len() + 1, cache.acts.len())?;
        let mut delta = grad_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.acts[i + 1];
            for (d, &y) in delta.iter_mut().zip(out) {
                *d = *d * layer.activation.derivative_from_output(y);
            }
            if let Some(grads) = grads.as_deref_mut() {
                let input = &cache.acts[i];
                let g = &mut grads.layers[i];
                // dW += deltaᵀ · input
                T::gemm(
                    layer.out_dim,
                    batch,
                    layer.in_dim,
                    &delta,
                    1,
                    layer.out_dim,
                    input,
                    layer.in_dim,
                    1,
                    T::one(),
                    &mut g.weights,
                );
                for row in delta.chunks_exact(layer.out_dim) {
                    for (b, &d) in g.bias.iter_mut().zip(row) {
                        *b = *b + d;
                    }
                }
            }
            if i > 0 || want_input_grad {
                let mut prev = vec![T::zero(); batch * layer.in_dim];
                // prev = delta · W
                T::gemm(
                    batch,
                    layer.out_dim,
                    layer.in_dim,
                    &delta,
                    layer.out_dim,
                    1,
                    &layer.weights,
                    layer.in_dim,
                    1,
                    T::zero(),
                    &mut prev,
                );
                delta = prev;
            }
        }
        Ok(want_input_grad.then_some(delta))
    }

    /// Convenience wrapper returning fresh gradients and the input gradient.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &[T]) -> Result<(Gradients<T>, Vec<T>)> {
        let mut grads = Gradients::zeros_like(self);
        let dx = self.backward_into(cache, grad_out, &mut grads, true)?;
        Ok((grads, dx.unwrap_or_default()))
    }

    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[T]) -> Result<()> {
        check_len("flat parameters", self.param_count(), params.len())?;
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct LayerGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Parameter-shaped container for gradients (and optimizer moments).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![T::zero(); l.weights.len()],
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn is_congruent(&self, net: &Mlp<T>) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Same layout as [`Mlp::params_flat`].
    pub fn flat(&self) -> Vec<T> {
        self.iter().copied().collect()
    }

    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        check_len("flat gradients", self.len(), values.len())?;
        for (dst, &src) in self.iter_mut().zip(values) {
            *dst = src;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for v in self.iter_mut() {
            *v = *v * s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Mean loss and parameter gradients of `net` over a batch.
///
/// `loss` receives the sample index and that sample's network output, writes
/// `∂loss/∂output` into its third argument and returns the sample loss. The
/// reported loss and gradients are batch means.
pub fn compute_gradients<T, F>(net: &Mlp<T>, inputs: &[T], batch: usize, mut loss: F) -> Result<(T, Gradients<T>)>
where
    T: Scalar,
    F: FnMut(usize, &[T], &mut [T]) -> T,
{
    if batch == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let cache = net.forward_cached(inputs, batch)?;
    let od = net.output_dim();
    let out = cache.output();
    let inv = T::one() / T::from_f64(batch as f64);
    let mut grad_out = vec![T::zero(); out.len()];
    let mut total = T::zero();
    for i in 0..batch {
        let g = &mut grad_out[i * od..(i + 1) * od];
        let l = loss(i, &out[i * od..(i + 1) * od], g);
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { index: i });
        }
        total = total + l;
        for v in g.iter_mut() {
            *v = *v * inv;
        }
    }
    let mut grads = Gradients::zeros_like(net);
    net.backward_into(&cache, &grad_out, &mut grads, false)?;
    Ok((total * inv, grads))
}
