//! Randomly initialized MLP classification head and its parameter gradients.
//!
//! Parameters are flattened layer by layer: weights of layer 1 (row-major,
//! `out x in`), biases of layer 1, weights of layer 2, and so on. Hidden
//! layers apply the activation; the output layer is affine.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    // ReLU subgradient at exactly 0 is 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    widths: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
    init_seed: u64,
    // false: biases are fixed at zero and not parameters
    bias: bool,
}

/// Pre- and post-activation values of a batch forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `pre[l]` is `z_{l+1}`, shape `B x widths[l+1]`.
    pub pre: Vec<Array2<f64>>,
    /// `post[0]` is the input; `post[l]` is the activation feeding layer `l+1`.
    pub post: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.pre.last().expect("at least one layer")
    }
}

/// `init_head(D, H1, H2, K, seed)`: the default two-hidden-layer ReLU head.
pub fn init_head(d: usize, h1: usize, h2: usize, k: usize, seed: u64) -> Result<MlpHead> {
    MlpHead::new(&[d, h1, h2, k], seed, Activation::Relu)
}

impl MlpHead {
    /// Weights drawn from `N(0, 2 / fan_in)`, biases zero.
    pub fn new(widths: &[usize], seed: u64, activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "head widths must be at least two positive sizes, got {widths:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            weights.push(Array2::from_shape_simple_fn((fan_out, fan_in), || {
                normal.sample(&mut rng)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(MlpHead {
            widths: widths.to_vec(),
            weights,
            biases,
            activation,
            init_seed: seed,
            bias: true,
        })
    }

    /// Affine map `x ↦ W x` with no bias parameters.
    pub fn linear(weights: Array2<f64>) -> Self {
        let widths = vec![weights.ncols(), weights.nrows()];
        let out = weights.nrows();
        MlpHead {
            widths,
            weights: vec![weights],
            biases: vec![Array1::zeros(out)],
            activation: Activation::Relu,
            init_seed: 0,
            bias: false,
        }
    }

    /// Drops the bias parameters (biases are zeroed and frozen).
    pub fn without_bias(mut self) -> Self {
        for b in self.biases.iter_mut() {
            b.fill(0.0);
        }
        self.bias = false;
        self
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    /// Builds a head from explicit parameters; `weights[l]` is `out x in`.
    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::DimensionMismatch(
                "need one bias vector per weight matrix".into(),
            ));
        }
        let mut widths = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *widths.last().unwrap() || b.len() != w.nrows() {
                return Err(Error::DimensionMismatch(format!("layer {l} shapes disagree")));
            }
            widths.push(w.nrows());
        }
        Ok(MlpHead {
            widths,
            weights,
            biases,
            activation,
            init_seed: 0,
            bias: true,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn weights(&self, layer: usize) -> &Array2<f64> {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &Array1<f64> {
        &self.biases[layer]
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + if self.bias { b.len() } else { 0 })
            .sum()
    }

    /// Offsets of each layer's weight block and bias block in the flat vector.
    pub fn block_offsets(&self) -> Vec<(usize, usize)> {
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut at = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            offsets.push((at, at + w.len()));
            at += w.len() + if self.bias { b.len() } else { 0 };
        }
        offsets
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            if self.bias {
                out.extend(b.iter());
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = params[at];
                at += 1;
            }
            if self.bias {
                for v in b.iter_mut() {
                    *v = params[at];
                    at += 1;
                }
            }
        }
        Ok(())
    }

    /// `θ ← θ − lr · grad` on the flat parameter vector.
    pub fn apply_step(&mut self, grad: &[f64], lr: f64) {
        assert_eq!(grad.len(), self.num_params());
        let mut at = 0;
        let bias = self.bias;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v -= lr * grad[at];
                at += 1;
            }
            if bias {
                for v in b.iter_mut() {
                    *v -= lr * grad[at];
                    at += 1;
                }
            }
        }
    }

    /// Mutable access to one entry of the flat parameter vector.
    pub fn param_mut(&mut self, index: usize) -> &mut f64 {
        let mut at = index;
        let bias = self.bias;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if at < w.len() {
                let cols = w.ncols();
                return &mut w[[at / cols, at % cols]];
            }
            at -= w.len();
            if bias {
                if at < b.len() {
                    return &mut b[at];
                }
                at -= b.len();
            }
        }
        panic!("parameter index {index} out of range");
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "head expects D = {}, got {cols}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// `head_forward`: logits for a single input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward_batch(batch)?.row(0).to_vec())
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cache(x)?.pre.pop().unwrap())
    }

    pub fn forward_cache(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        let last = self.num_layers() - 1;
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut post = vec![x.to_owned()];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = post[l].dot(&w.t());
            z += &b.view().insert_axis(Axis(0));
            if l < last {
                let act = self.activation;
                post.push(z.mapv(|v| act.apply(v)));
            }
            pre.push(z);
        }
        Ok(ForwardCache { pre, post })
    }

    /// Backpropagates output seeds (`B x K`) and returns `∂/∂z_l` per layer.
    pub fn backward_deltas(&self, cache: &ForwardCache, seeds: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let layers = self.num_layers();
        let mut deltas = vec![Array2::zeros((0, 0)); layers];
        deltas[layers - 1] = seeds.to_owned();
        for l in (0..layers - 1).rev() {
            let mut d = deltas[l + 1].dot(&self.weights[l + 1]);
            let act = self.activation;
            d.zip_mut_with(&cache.pre[l], |dv, &z| *dv *= act.derivative(z));
            deltas[l] = d;
        }
        deltas
    }

    /// Gradient of `Σ_b seeds[b] · F(x_b)` with respect to all parameters, flattened.
    pub fn vjp(&self, x: ArrayView2<f64>, seeds: ArrayView2<f64>) -> Result<Vec<f64>> {
        if seeds.nrows() != x.nrows() || seeds.ncols() != self.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "seeds are {}x{}, expected {}x{}",
                seeds.nrows(),
                seeds.ncols(),
                x.nrows(),
                self.output_dim()
            )));
        }
        let cache = self.forward_cache(x)?;
        Ok(self.vjp_cached(&cache, seeds))
    }

    /// `vjp` reusing a forward pass; `seeds` must match the cached batch.
    pub fn vjp_cached(&self, cache: &ForwardCache, seeds: ArrayView2<f64>) -> Vec<f64> {
        let deltas = self.backward_deltas(cache, seeds);
        let mut grad = Vec::with_capacity(self.num_params());
        for (delta, a_prev) in deltas.iter().zip(&cache.post) {
            let gw = delta.t().dot(a_prev);
            grad.extend(gw.iter());
            if self.bias {
                grad.extend(delta.sum_axis(Axis(0)).iter());
            }
        }
        grad
    }

    /// `∇_θ Σ_k F_k(x)`, flattened in the canonical parameter order.
    pub fn grad_sum_outputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let ones = Array2::ones((1, self.output_dim()));
        self.vjp(batch, ones.view())
    }

    /// Gram matrix of `∇_θ Σ_k F_k(x_i)` over the rows of `x`.
    ///
    /// Uses the per-layer factorization `∂F/∂W_l = δ_l a_{l-1}ᵀ`, so that
    /// `⟨g_i, g_j⟩ = Σ_l (δ_l^i · δ_l^j) (a_{l-1}^i · a_{l-1}^j + 1)` without
    /// materializing the per-sample gradient vectors. The `+1` is the bias
    /// block and is dropped for heads without biases.
    pub fn sum_output_gram(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let cache = self.forward_cache(x)?;
        let ones = Array2::ones((x.nrows(), self.output_dim()));
        let deltas = self.backward_deltas(&cache, ones.view());
        let s = x.nrows();
        let mut gram = Array2::<f64>::zeros((s, s));
        for (delta, a_prev) in deltas.iter().zip(&cache.post) {
            let dd = delta.dot(&delta.t());
            let aa = a_prev.dot(&a_prev.t());
            if self.bias {
                gram += &dd;
            }
            let mut prod = dd;
            prod.zip_mut_with(&aa, |p, &a| *p *= a);
            gram += &prod;
        }
        // exact symmetry
        for i in 0..s {
            for j in i + 1..s {
                gram[[j, i]] = gram[[i, j]];
            }
        }
        Ok(gram)
    }

    /// `Σ_n Σ_k ‖∇_θ F_k(x_n)‖²`: the trace of the full output NTK, an upper
    /// bound on its largest eigenvalue.
    pub fn output_ntk_trace(&self, x: ArrayView2<f64>) -> Result<f64> {
        let cache = self.forward_cache(x)?;
        let bias_term = if self.bias { 1.0 } else { 0.0 };
        let act_norms: Vec<Array1<f64>> = cache
            .post
            .iter()
            .map(|a| a.map_axis(Axis(1), |r| r.dot(&r) + bias_term))
            .collect();
        let mut total = 0.0;
        for k in 0..self.output_dim() {
            let mut seeds = Array2::zeros((x.nrows(), self.output_dim()));
            seeds.column_mut(k).fill(1.0);
            let deltas = self.backward_deltas(&cache, seeds.view());
            for (delta, norms) in deltas.iter().zip(&act_norms) {
                let dn = delta.map_axis(Axis(1), |r| r.dot(&r));
                total += dn.dot(norms);
            }
        }
        Ok(total)
    }
}
