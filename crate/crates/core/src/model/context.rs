//! Context embeddings `c_θ(x)` for the contextual bandit.

use rand_distr::{Distribution, Normal};

use super::ops::{self, ConvSpec};
use crate::error::{invalid, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const DEFAULT_CONTEXT_DIM: usize = 16;

const FEATURES: usize = 4;

/// A differentiable map from an input to a `K`-vector with trainable parameters θ.
pub trait ContextModel: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, x: &Tensor) -> Result<Vec<f64>>;

    /// Context plus the vector-Jacobian product `upstreamᵀ ∂c/∂θ`.
    fn embed_vjp(&self, x: &Tensor, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];
}

/// Constant context, ignoring the input. Has no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedContext(pub Vec<f64>);

impl ContextModel for FixedContext {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn embed(&self, _x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }

    fn embed_vjp(&self, _x: &Tensor, _upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.0.clone(), Vec::new()))
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut []
    }
}

/// Reduced clone of the CNN feature extractor (two stride-2 tanh convolutions
/// and global pooling) followed by a fresh linear head of width `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextNetwork {
    input_shape: [usize; 3],
    dim: usize,
    conv1: ConvSpec,
    conv2: ConvSpec,
    theta: Vec<f64>,
}

struct Offsets {
    w1: std::ops::Range<usize>,
    b1: std::ops::Range<usize>,
    w2: std::ops::Range<usize>,
    b2: std::ops::Range<usize>,
    hw: std::ops::Range<usize>,
    hb: std::ops::Range<usize>,
}

impl ContextNetwork {
    pub fn zeroed(input_shape: &[usize], dim: usize) -> Result<Self> {
        let [c, h, w] = input_shape else {
            return invalid(format!("context input must be rank 3, got {input_shape:?}"));
        };
        if dim == 0 {
            return invalid("context dimension must be >= 1");
        }
        let conv1 = ConvSpec { cin: *c, cout: FEATURES, stride: 2 };
        let conv2 = ConvSpec { cin: FEATURES, cout: FEATURES, stride: 2 };
        let len = conv1.param_len() + conv2.param_len() + dim * FEATURES + dim;
        Ok(Self { input_shape: [*c, *h, *w], dim, conv1, conv2, theta: vec![0.0; len] })
    }

    pub fn build(seed: u64, input_shape: &[usize], dim: usize) -> Result<Self> {
        let mut net = Self::zeroed(input_shape, dim)?;
        let mut rng = rng::derive(seed, "model/context", 0);
        let o = net.offsets();
        let mut fill = |range: std::ops::Range<usize>, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            net.theta[range].iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        };
        fill(o.w1, 1.0 / ((input_shape[0] * 9) as f64).sqrt());
        fill(o.b1, 0.1);
        fill(o.w2, 1.0 / ((FEATURES * 9) as f64).sqrt());
        fill(o.b2, 0.1);
        fill(o.hw, 2.0 / (FEATURES as f64).sqrt());
        fill(o.hb, 0.1);
        Ok(net)
    }

    pub fn from_params(input_shape: &[usize], dim: usize, theta: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeroed(input_shape, dim)?;
        if theta.len() != net.theta.len() {
            return invalid(format!(
                "context parameter count {} does not match expected {}",
                theta.len(),
                net.theta.len()
            ));
        }
        net.theta = theta;
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    fn offsets(&self) -> Offsets {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Offsets {
            w1: take(self.conv1.weight_len()),
            b1: take(self.conv1.cout),
            w2: take(self.conv2.weight_len()),
            b2: take(self.conv2.cout),
            hw: take(self.dim * FEATURES),
            hb: take(self.dim),
        }
    }

    fn activations(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let o = self.offsets();
        let [_, h, w] = self.input_shape;
        let mut a1 = self.conv1.forward(&self.theta[o.w1], &self.theta[o.b1], x, h, w);
        ops::tanh_in_place(&mut a1);
        let (h1, w1) = self.conv1.out_dims(h, w);
        let mut a2 = self.conv2.forward(&self.theta[o.w2], &self.theta[o.b2], &a1, h1, w1);
        ops::tanh_in_place(&mut a2);
        let pooled = ops::global_mean_pool(&a2, FEATURES);
        (a1, a2, pooled)
    }
}

impl ContextModel for ContextNetwork {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, x: &Tensor) -> Result<Vec<f64>> {
        x.ensure_shape(&self.input_shape)?;
        let o = self.offsets();
        let (_, _, pooled) = self.activations(x.data());
        Ok(ops::affine(&self.theta[o.hw], &self.theta[o.hb], &pooled))
    }

    fn embed_vjp(&self, x: &Tensor, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        x.ensure_shape(&self.input_shape)?;
        if upstream.len() != self.dim {
            return invalid("upstream gradient length must equal context dimension");
        }
        let o = self.offsets();
        let [_, h, w] = self.input_shape;
        let (h1, w1) = self.conv1.out_dims(h, w);
        let (a1, a2, pooled) = self.activations(x.data());
        let c = ops::affine(&self.theta[o.hw.clone()], &self.theta[o.hb.clone()], &pooled);

        let mut grad = vec![0.0; self.theta.len()];
        for (k, g) in upstream.iter().enumerate() {
            for j in 0..FEATURES {
                grad[o.hw.start + k * FEATURES + j] = g * pooled[j];
            }
            grad[o.hb.start + k] = *g;
        }
        let dpooled = ops::affine_backward_input(&self.theta[o.hw], FEATURES, upstream);
        let da2 = ops::global_mean_pool_backward(&dpooled, a2.len() / FEATURES);
        let dpre2 = ops::tanh_backward(&a2, &da2);
        {
            let (head, tail) = grad.split_at_mut(o.b2.start);
            self.conv2.backward_params(&a1, &dpre2, h1, w1, &mut head[o.w2.clone()], &mut tail[..o.b2.len()]);
        }
        let da1 = self.conv2.backward_input(&self.theta[o.w2], &dpre2, h1, w1);
        let dpre1 = ops::tanh_backward(&a1, &da1);
        {
            let (head, tail) = grad.split_at_mut(o.b1.start);
            self.conv1.backward_params(x.data(), &dpre1, h, w, &mut head[o.w1.clone()], &mut tail[..o.b1.len()]);
        }
        Ok((c, grad))
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }
}
