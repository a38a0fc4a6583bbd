//! Multilayer-perceptron likelihood with a mean-field Gaussian variational
//! family over its flattened weights.
//!
//! A network is described by [`Architecture`] (layer widths plus a hidden
//! activation). Weights are flattened layer by layer — each layer contributes
//! its weight matrix in row-major `(out × in)` order followed by its bias
//! vector — so a parameter vector of length [`Architecture::param_count`]
//! fully determines the function.
//!
//! The variational family [`VarParams`] holds a mean `m` and a raw spread
//! parameter `s` per weight; the actual standard deviation is
//! `σ = σ0 + softplus(s)`, which keeps every σ above the floor `σ0 > 0` and
//! makes the `s ↦ σ` map 1-Lipschitz (slope `sigmoid(s) ∈ (0, 1)`), so
//! distances measured in `s`-space dominate the corresponding distances in
//! σ-space. Weight draws use the reparameterization `w = m + σ ⊙ ε` with
//! `ε ~ N(0, I)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::gauss::DiagGaussian;
use crate::numeric::{log_sum_exp, sigmoid, softplus, softplus_inv};
use crate::Result;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at `z`. For ReLU the kink at `z = 0` takes slope 0.
    fn slope(self, z: f64) -> f64 {
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

/// Fully-connected feed-forward architecture: `layer_sizes[0]` inputs through
/// hidden layers to `layer_sizes.last()` output logits (one per class).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

impl Architecture {
    /// Requires at least input and output layers, every width ≥ 1, and at
    /// least two classes.
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::out_of_range(
                "layer_sizes",
                "need at least an input and an output layer",
            ));
        }
        if layer_sizes.iter().any(|&w| w == 0) {
            return Err(Error::out_of_range("layer_sizes", "layer widths must be ≥ 1"));
        }
        if *layer_sizes.last().unwrap() < 2 {
            return Err(Error::out_of_range(
                "layer_sizes",
                "output layer needs at least two classes",
            ));
        }
        Ok(Architecture {
            layer_sizes,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Total flattened weight count: `Σ (in·out + out)` over consecutive layers.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn layer_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

/// A labeled input: feature vector and class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: usize,
}

impl Example {
    pub fn new(x: Vec<f64>, y: usize) -> Self {
        Example { x, y }
    }
}

/// Gradient (or any co-vector) over the two variational blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub m: Vec<f64>,
    pub s: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(dim: usize) -> Self {
        ParamGrad {
            m: vec![0.0; dim],
            s: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Adds `scale · other` in place.
    pub fn add_scaled(&mut self, other: &ParamGrad, scale: f64) {
        for (a, b) in self.m.iter_mut().zip(&other.m) {
            *a += scale * b;
        }
        for (a, b) in self.s.iter_mut().zip(&other.s) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.m.iter_mut().chain(self.s.iter_mut()) {
            *a *= factor;
        }
    }

    /// Euclidean norm over the concatenated `(m, s)` blocks.
    pub fn joint_l2(&self) -> f64 {
        self.m
            .iter()
            .chain(self.s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().chain(self.s.iter()).all(|v| v.is_finite())
    }
}

/// Mean-field variational parameters over the flattened network weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VarParams {
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    sigma0: f64,
}

impl VarParams {
    /// Validates equal block lengths, finite entries, and `sigma0 > 0`.
    pub fn new(m: Vec<f64>, s: Vec<f64>, sigma0: f64) -> Result<Self> {
        if m.len() != s.len() {
            return Err(Error::DimensionMismatch {
                expected: m.len(),
                got: s.len(),
            });
        }
        if m.is_empty() {
            return Err(Error::out_of_range("m", "dimension must be at least 1"));
        }
        if !(sigma0.is_finite() && sigma0 > 0.0) {
            return Err(Error::NonPositive {
                name: "sigma0",
                value: sigma0,
                index: 0,
            });
        }
        if m.iter().chain(s.iter()).any(|v| !v.is_finite()) {
            return Err(Error::out_of_range("params", "non-finite entry"));
        }
        Ok(VarParams { m, s, sigma0 })
    }

    /// He-style initialization: weight means drawn `N(0, 2/fan_in)` per layer,
    /// bias means zero, every σ started at `sigma_init > sigma0`.
    pub fn he_init(
        arch: &Architecture,
        sigma_init: f64,
        sigma0: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if !(sigma_init.is_finite() && sigma_init > sigma0) {
            return Err(Error::out_of_range(
                "sigma_init",
                format!("must exceed sigma0 = {sigma0}, got {sigma_init}"),
            ));
        }
        let dim = arch.param_count();
        let mut m = Vec::with_capacity(dim);
        for w in arch.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let z: f64 = rng.sample(StandardNormal);
                m.push(std * z);
            }
            m.extend(std::iter::repeat(0.0).take(fan_out));
        }
        let s_init = softplus_inv(sigma_init - sigma0);
        VarParams::new(m, vec![s_init; dim], sigma0)
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    /// Per-coordinate standard deviation `σ_j = σ0 + softplus(s_j)`.
    pub fn sigma(&self) -> Vec<f64> {
        self.s.iter().map(|&s| self.sigma0 + softplus(s)).collect()
    }

    /// Slope of the `s ↦ σ` map per coordinate, `sigmoid(s_j)`.
    pub fn sigma_slope(&self) -> Vec<f64> {
        self.s.iter().map(|&s| sigmoid(s)).collect()
    }

    /// Reparameterized weight draw `w = m + σ ⊙ ε` for a given noise vector.
    pub fn sample_weights(&self, noise: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: noise.len(),
            });
        }
        Ok(self
            .m
            .iter()
            .zip(self.s.iter())
            .zip(noise)
            .map(|((&m, &s), &e)| m + (self.sigma0 + softplus(s)) * e)
            .collect())
    }

    /// The posterior as a diagonal Gaussian over the weights.
    pub fn posterior(&self) -> DiagGaussian {
        DiagGaussian::new(self.m.clone(), self.sigma())
            .expect("validated parameters always form a distribution")
    }
}

fn check_example(arch: &Architecture, z: &Example) -> Result<()> {
    if z.x.len() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim(),
            got: z.x.len(),
        });
    }
    if z.y >= arch.class_count() {
        return Err(Error::LabelOutOfRange {
            label: z.y,
            classes: arch.class_count(),
        });
    }
    Ok(())
}

fn check_weights(arch: &Architecture, w: &[f64]) -> Result<()> {
    if w.len() != arch.param_count() {
        return Err(Error::DimensionMismatch {
            expected: arch.param_count(),
            got: w.len(),
        });
    }
    Ok(())
}

/// Full forward pass keeping per-layer pre-activations and activations,
/// as needed by backpropagation. `acts[0]` is the input, `preacts[l]` the
/// affine output of layer `l`, and the final pre-activation is the logits.
struct ForwardCache {
    acts: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

fn forward(arch: &Architecture, w: &[f64], x: &[f64]) -> ForwardCache {
    let layers = arch.layer_count();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
    let mut preacts: Vec<Vec<f64>> = Vec::with_capacity(layers);
    acts.push(x.to_vec());
    let mut offset = 0;
    for l in 0..layers {
        let fan_in = arch.layer_sizes[l];
        let fan_out = arch.layer_sizes[l + 1];
        let input = &acts[l];
        let mut z = vec![0.0; fan_out];
        for o in 0..fan_out {
            let row = &w[offset + o * fan_in..offset + (o + 1) * fan_in];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(input) {
                acc += wi * xi;
            }
            z[o] = acc + w[offset + fan_in * fan_out + o];
        }
        offset += fan_in * fan_out + fan_out;
        if l + 1 < layers {
            acts.push(z.iter().map(|&v| arch.activation.apply(v)).collect());
        } else {
            acts.push(z.clone());
        }
        preacts.push(z);
    }
    ForwardCache { acts, preacts }
}

/// Class logits for weights `w` on input `x`.
pub fn logits(w: &[f64], x: &[f64], arch: &Architecture) -> Result<Vec<f64>> {
    check_weights(arch, w)?;
    if x.len() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim(),
            got: x.len(),
        });
    }
    Ok(forward(arch, w, x).preacts.last().unwrap().clone())
}

/// Negative log-likelihood of example `z` under softmax logits:
/// `logsumexp(logits) − logits[y]`. Always ≥ 0.
pub fn nll(w: &[f64], z: &Example, arch: &Architecture) -> Result<f64> {
    check_weights(arch, w)?;
    check_example(arch, z)?;
    let cache = forward(arch, w, &z.x);
    let lg = cache.preacts.last().unwrap();
    Ok(log_sum_exp(lg) - lg[z.y])
}

/// Zero-one loss: `0.0` exactly when the arg-max logit (ties broken toward
/// the lowest class index) equals the label, else `1.0`.
pub fn zero_one(w: &[f64], z: &Example, arch: &Architecture) -> Result<f64> {
    check_weights(arch, w)?;
    check_example(arch, z)?;
    let lg = forward(arch, w, &z.x).preacts.last().unwrap().clone();
    let mut best = 0usize;
    for (i, &v) in lg.iter().enumerate() {
        if v > lg[best] {
            best = i;
        }
    }
    Ok(if best == z.y { 0.0 } else { 1.0 })
}

/// Gradient of [`nll`] with respect to the flattened weights, by reverse-mode
/// accumulation through the cached forward pass.
pub fn grad_nll(w: &[f64], z: &Example, arch: &Architecture) -> Result<Vec<f64>> {
    Ok(nll_and_grad(w, z, arch)?.1)
}

/// [`nll`] and its weight gradient from one shared forward pass.
pub fn nll_and_grad(w: &[f64], z: &Example, arch: &Architecture) -> Result<(f64, Vec<f64>)> {
    check_weights(arch, w)?;
    check_example(arch, z)?;
    let cache = forward(arch, w, &z.x);
    let lg = cache.preacts.last().unwrap();
    let lse = log_sum_exp(lg);
    let value = lse - lg[z.y];

    // Logit gradient of the softmax NLL: softmax − one-hot(y).
    let mut delta: Vec<f64> = lg.iter().map(|&v| (v - lse).exp()).collect();
    delta[z.y] -= 1.0;

    let layers = arch.layer_count();
    let mut grad = vec![0.0; w.len()];
    // Per-layer flat offsets, front to back.
    let mut offsets = Vec::with_capacity(layers);
    {
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += arch.layer_sizes[l] * arch.layer_sizes[l + 1] + arch.layer_sizes[l + 1];
        }
    }
    for l in (0..layers).rev() {
        let fan_in = arch.layer_sizes[l];
        let fan_out = arch.layer_sizes[l + 1];
        let off = offsets[l];
        let input = &cache.acts[l];
        for o in 0..fan_out {
            let d = delta[o];
            let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
            for (g, xi) in row.iter_mut().zip(input) {
                *g += d * xi;
            }
            grad[off + fan_in * fan_out + o] += d;
        }
        if l > 0 {
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                let row = &w[off + o * fan_in..off + (o + 1) * fan_in];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            for (p, &zpre) in prev.iter_mut().zip(&cache.preacts[l - 1]) {
                *p *= arch.activation.slope(zpre);
            }
            delta = prev;
        }
    }
    Ok((value, grad))
}

/// Smallest absolute hidden pre-activation on input `x` — a kink-proximity
/// diagnostic: finite-difference probes of ReLU networks are only well posed
/// when this margin comfortably exceeds the probe step.
pub fn preact_margin(w: &[f64], x: &[f64], arch: &Architecture) -> Result<f64> {
    check_weights(arch, w)?;
    if x.len() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim(),
            got: x.len(),
        });
    }
    let cache = forward(arch, w, x);
    let hidden = &cache.preacts[..cache.preacts.len() - 1];
    Ok(hidden
        .iter()
        .flat_map(|layer| layer.iter())
        .map(|z| z.abs())
        .fold(f64::INFINITY, f64::min))
}
