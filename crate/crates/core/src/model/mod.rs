//! The differentiable-model contract and the two seeded reference models.
//!
//! Layer indices run `0..=L`: representation 0 is the input itself and
//! representation `L` is the last one before the classification head. Class
//! scores are the pre-softmax logits.

mod attention;
mod cnn;
mod context;
pub(crate) mod ops;

pub use attention::{AttentionConfig, AttentionTrace, TinyAttention};
pub use cnn::{CnnConfig, TinyCnn};
pub use context::{ContextModel, ContextNetwork, FixedContext, DEFAULT_CONTEXT_DIM};

use crate::error::{invalid, BeeError, Result};
use crate::tensor::{softmax, Tensor};

/// Anything that maps an input tensor to class logits.
pub trait Classifier: Send + Sync {
    fn input_shape(&self) -> &[usize];
    fn class_count(&self) -> usize;
    fn logits(&self, x: &Tensor) -> Result<Vec<f64>>;

    fn probabilities(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }
}

/// Output of a full forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    /// `L + 1` representations; index 0 is the input.
    pub representations: Vec<Tensor>,
    pub logits: Vec<f64>,
}

pub trait DifferentiableModel: Classifier {
    /// Index of the last representation layer, `L`.
    fn layer_count(&self) -> usize;

    fn layer_shape(&self, l: usize) -> Result<Vec<usize>>;

    fn forward(&self, x: &Tensor) -> Result<ForwardPass>;

    /// Logits of the sub-network that starts at layer `l`.
    fn forward_from(&self, l: usize, r: &Tensor) -> Result<Vec<f64>>;

    /// Exact gradient of logit `y` of the layer-`l` sub-network at `r`.
    fn grad_wrt_layer(&self, l: usize, r: &Tensor, y: usize) -> Result<Tensor>;

    fn representation(&self, l: usize, x: &Tensor) -> Result<Tensor> {
        let mut pass = self.forward(x)?;
        if l >= pass.representations.len() {
            return invalid(format!("layer {l} out of range"));
        }
        Ok(pass.representations.swap_remove(l))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_layer(l: usize, layer_count: usize) -> Result<()> {
    if l > layer_count {
        invalid(format!("layer {l} out of range 0..={layer_count}"))
    } else {
        Ok(())
    }
}

pub(crate) fn check_class(y: usize, classes: usize) -> Result<()> {
    if y >= classes {
        Err(BeeError::InvalidArgument(format!("class index {y} out of range for {classes} classes")))
    } else {
        Ok(())
    }
}

/// Central-difference gradient of a scalar function of a tensor.
pub fn finite_diff(f: impl Fn(&Tensor) -> Result<f64>, r: &Tensor, eps: f64) -> Result<Tensor> {
    if !(eps > 0.0) {
        return invalid(format!("finite-difference step must be > 0, got {eps}"));
    }
    let mut probe = r.clone();
    let mut grad = Tensor::zeros(r.shape());
    for i in 0..r.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

/// Central-difference estimate of `∂ f^l_y / ∂ r`.
pub fn finite_diff_grad<M: DifferentiableModel + ?Sized>(
    model: &M,
    l: usize,
    r: &Tensor,
    y: usize,
    eps: f64,
) -> Result<Tensor> {
    check_class(y, model.class_count())?;
    finite_diff(|p| Ok(model.forward_from(l, p)?[y]), r, eps)
}

/// Relative error with a denominator floor, used for gradient checks:
/// `|a - b| / max(|a|, |b|, floor)`, maximized over elements.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}

/// Logit margin of the most separated prototype pair; sets the head temperature.
const HEAD_MARGIN: f64 = 4.0;

/// Nearest-centroid linear head over prototype features.
///
/// Logit `k` is `α (f_k·f - |f_k|²/2)`, centred across classes, with `α` chosen
/// so the best-separated prototype pair differs by [`HEAD_MARGIN`].
pub(crate) fn centroid_head(features: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let classes = features.len();
    let dim = features[0].len();
    let mut max_gap: f64 = 0.0;
    for i in 0..classes {
        for j in 0..classes {
            if i != j {
                let d2: f64 = features[i].iter().zip(&features[j]).map(|(a, b)| (a - b).powi(2)).sum();
                max_gap = max_gap.max(d2 / 2.0);
            }
        }
    }
    let alpha = if max_gap > 0.0 && max_gap.is_finite() { HEAD_MARGIN / max_gap } else { 1.0 };
    let mut weight: Vec<f64> = features.iter().flatten().map(|v| alpha * v).collect();
    let mut bias: Vec<f64> = features.iter().map(|f| -alpha * f.iter().map(|v| v * v).sum::<f64>() / 2.0).collect();
    for d in 0..dim {
        let mean = (0..classes).map(|k| weight[k * dim + d]).sum::<f64>() / classes as f64;
        (0..classes).for_each(|k| weight[k * dim + d] -= mean);
    }
    let bmean = bias.iter().sum::<f64>() / classes as f64;
    bias.iter_mut().for_each(|b| *b -= bmean);
    (weight, bias)
}

/// One of the two reference models, selected at run time.
#[derive(Debug, Clone)]
pub enum ReferenceModel {
    Cnn(TinyCnn),
    Attention(TinyAttention),
}

impl ReferenceModel {
    pub fn as_attention(&self) -> Option<&TinyAttention> {
        match self {
            ReferenceModel::Attention(m) => Some(m),
            ReferenceModel::Cnn(_) => None,
        }
    }
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            ReferenceModel::Cnn($m) => $e,
            ReferenceModel::Attention($m) => $e,
        }
    };
}

impl Classifier for ReferenceModel {
    fn input_shape(&self) -> &[usize] {
        delegate!(self, m => m.input_shape())
    }
    fn class_count(&self) -> usize {
        delegate!(self, m => m.class_count())
    }
    fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        delegate!(self, m => m.logits(x))
    }
}

impl DifferentiableModel for ReferenceModel {
    fn layer_count(&self) -> usize {
        delegate!(self, m => m.layer_count())
    }
    fn layer_shape(&self, l: usize) -> Result<Vec<usize>> {
        delegate!(self, m => m.layer_shape(l))
    }
    fn forward(&self, x: &Tensor) -> Result<ForwardPass> {
        delegate!(self, m => m.forward(x))
    }
    fn forward_from(&self, l: usize, r: &Tensor) -> Result<Vec<f64>> {
        delegate!(self, m => m.forward_from(l, r))
    }
    fn grad_wrt_layer(&self, l: usize, r: &Tensor, y: usize) -> Result<Tensor> {
        delegate!(self, m => m.grad_wrt_layer(l, r, y))
    }
}
