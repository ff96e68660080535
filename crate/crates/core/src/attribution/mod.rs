//! Path-integrated explanation maps, Gradient Rollout and metric-driven selection.

mod rollout;

pub use rollout::gradient_rollout;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineDraw, BaselineParams, BaselineType};
use crate::error::{invalid, BeeError, Result};
use crate::imgproc::bicubic_resize;
use crate::metrics::Direction;
use crate::model::{DifferentiableModel, TinyAttention};
use crate::tensor::{minmax_normalize, Tensor};

/// Tolerance for the row-stochastic check on attention baselines.
const ROW_SUM_TOL: f64 = 1e-9;

/// A normalized per-pixel map at input resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMap {
    /// `height x width`, values in `[0, 1]`.
    pub map: Tensor,
    /// Representation layer (CNN) or 1-based block (attention) the path ran through.
    pub layer: usize,
    pub baseline: Option<BaselineType>,
    pub params: Vec<BaselineParams>,
    pub score: Option<f64>,
}

impl ExplanationMap {
    pub fn new(map: Tensor, layer: usize, draw: Option<&BaselineDraw>) -> Result<Self> {
        if map.rank() != 2 {
            return invalid(format!("explanation map must be rank 2, got {:?}", map.shape()));
        }
        map.ensure_finite("explanation map")?;
        Ok(Self {
            map,
            layer,
            baseline: draw.map(|d| d.kind),
            params: draw.map(|d| vec![d.params.clone()]).unwrap_or_default(),
            score: None,
        })
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }
}

/// What is accumulated along the path at each node `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrand {
    /// `∂f/∂v`, the classic integrated-gradients integrand.
    Gradient,
    /// `∂f/∂v ∘ v`.
    GradientTimesInput,
}

/// Node `k` of the straight path from `b` to `x` split into `n` steps.
pub fn interpolate(b: &Tensor, x: &Tensor, k: usize, n: usize) -> Result<Tensor> {
    if n == 0 || k == 0 || k > n {
        return invalid(format!("interpolation step {k} of {n} out of range"));
    }
    let t = k as f64 / n as f64;
    b.zip_with(x, |bv, xv| (1.0 - t) * bv + t * xv)
}

/// `(rep - b)/n ∘ Σ_{k=1..n} ψ(v_k)` at layer `l`, with the integrand chosen by `integrand`.
pub fn path_integral<M: DifferentiableModel + ?Sized>(
    model: &M,
    l: usize,
    rep: &Tensor,
    baseline: &Tensor,
    y: usize,
    n: usize,
    integrand: Integrand,
) -> Result<Tensor> {
    if n == 0 {
        return invalid("interpolation step count must be >= 1");
    }
    rep.ensure_shape(baseline.shape())?;
    baseline.ensure_finite("baseline")?;
    let mut acc = Tensor::zeros(rep.shape());
    for k in 1..=n {
        let v = interpolate(baseline, rep, k, n)?;
        let grad = model.grad_wrt_layer(l, &v, y)?;
        match integrand {
            Integrand::Gradient => acc.add_assign(&grad)?,
            Integrand::GradientTimesInput => acc.add_assign(&grad.hadamard(&v)?)?,
        }
    }
    rep.sub(baseline)?.scale(1.0 / n as f64).hadamard(&acc)
}

/// Channel mean (if any), bicubic resize to `h x w`, then min-max normalize.
pub fn project_to_input(raw: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let plane = match raw.rank() {
        3 => crate::tensor::channel_stats(raw)?.mean_map,
        2 => raw.clone(),
        _ => return invalid(format!("cannot project a rank-{} tensor onto the input grid", raw.rank())),
    };
    let (ph, pw) = plane.spatial()?;
    let resized = if (ph, pw) == (h, w) { plane } else { bicubic_resize(&plane, h, w)? };
    Ok(minmax_normalize(&resized))
}

fn input_dims<M: DifferentiableModel + ?Sized>(model: &M) -> Result<(usize, usize)> {
    match model.input_shape() {
        [_, h, w] => Ok((*h, *w)),
        [h, w] => Ok((*h, *w)),
        s => invalid(format!("input shape {s:?} has no spatial layout")),
    }
}

/// Un-normalized input-space integrated gradients, same shape as `x`.
pub fn integrated_gradients_raw<M: DifferentiableModel + ?Sized>(
    model: &M,
    x: &Tensor,
    b: &Tensor,
    y: usize,
    n: usize,
) -> Result<Tensor> {
    x.ensure_shape(model.input_shape())?;
    path_integral(model, 0, x, b, y, n, Integrand::Gradient)
}

pub fn integrated_gradients<M: DifferentiableModel + ?Sized>(
    model: &M,
    x: &Tensor,
    b: &Tensor,
    y: usize,
    n: usize,
) -> Result<ExplanationMap> {
    let raw = integrated_gradients_raw(model, x, b, y, n)?;
    let (h, w) = input_dims(model)?;
    ExplanationMap::new(project_to_input(&raw, h, w)?, 0, None)
}

/// Path integral at layer `l` from `baseline` to the layer-`l` representation of `x`,
/// projected to input resolution.
pub fn layer_map<M: DifferentiableModel + ?Sized>(
    model: &M,
    l: usize,
    x: &Tensor,
    baseline: &Tensor,
    y: usize,
    n: usize,
    integrand: Integrand,
) -> Result<Tensor> {
    let shape = model.layer_shape(l)?;
    if shape.len() != 3 {
        return invalid(format!("layer {l} has no channel x spatial structure: {shape:?}"));
    }
    let rep = model.representation(l, x)?;
    let raw = path_integral(model, l, &rep, baseline, y, n, integrand)?;
    let (h, w) = input_dims(model)?;
    project_to_input(&raw, h, w)
}

/// Baseline-path map at CNN layer `l` with the gradient-times-input integrand.
pub fn bee_map_cnn<M: DifferentiableModel + ?Sized>(
    model: &M,
    l: usize,
    x: &Tensor,
    draw: &BaselineDraw,
    y: usize,
    n: usize,
) -> Result<ExplanationMap> {
    let map = layer_map(model, l, x, &draw.tensor, y, n, Integrand::GradientTimesInput)?;
    ExplanationMap::new(map, l, Some(draw))
}

fn check_row_stochastic(t: &Tensor) -> Result<()> {
    let cols = t.shape()[2];
    for row in t.data().chunks(cols) {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOL {
            return invalid("attention baseline rows must be probability distributions");
        }
    }
    Ok(())
}

/// Baseline-path map for the attention model at 1-based block `block`.
///
/// The path runs over block `block`'s attention tensor. The accumulated
/// difference-weighted integrand replaces that block's factor in the rollout,
/// while the other blocks contribute their usual `I + mean_h(A ∘ G)`.
pub fn bee_map_vit(
    model: &TinyAttention,
    block: usize,
    x: &Tensor,
    draw: &BaselineDraw,
    y: usize,
    n: usize,
) -> Result<ExplanationMap> {
    let map = attention_path_map(model, block, x, &draw.tensor, y, n, Integrand::GradientTimesInput)?;
    ExplanationMap::new(map, block, Some(draw))
}

/// Attention-level path map with a chosen integrand, projected to input resolution.
pub fn attention_path_map(
    model: &TinyAttention,
    block: usize,
    x: &Tensor,
    baseline: &Tensor,
    y: usize,
    n: usize,
    integrand: Integrand,
) -> Result<Tensor> {
    if block == 0 || block > model.block_count() {
        return invalid(format!("block {block} out of range 1..={}", model.block_count()));
    }
    if n == 0 {
        return invalid("interpolation step count must be >= 1");
    }
    let idx = block - 1;
    baseline.ensure_shape(&model.attention_shape())?;
    baseline.ensure_finite("attention baseline")?;
    check_row_stochastic(baseline)?;

    let (_, trace) = model.attention_trace(x, y)?;
    let tokens = rollout::check_tokens(&trace)?;
    let patches = tokens - 1;
    let grid = (patches as f64).sqrt().round() as usize;
    if grid * grid != patches {
        return invalid(format!("{patches} patch tokens do not form a square grid"));
    }

    let actual = &trace.attentions[idx];
    let mut acc = Tensor::zeros(actual.shape());
    for k in 1..=n {
        let v = interpolate(baseline, actual, k, n)?;
        let (_, local) = model.attention_trace_with(x, y, Some((idx, &v)))?;
        match integrand {
            Integrand::Gradient => acc.add_assign(&local.grads[idx])?,
            Integrand::GradientTimesInput => acc.add_assign(&local.grads[idx].hadamard(&v)?)?,
        }
    }
    let accumulated = actual.sub(baseline)?.scale(1.0 / n as f64).hadamard(&acc)?;

    let mut factors = Vec::with_capacity(trace.blocks());
    for (j, (a, g)) in trace.attentions.iter().zip(&trace.grads).enumerate() {
        factors.push(if j == idx {
            rollout::identity_plus(rollout::head_mean(&accumulated), tokens)
        } else {
            rollout::rollout_factor(a, g)?
        });
    }
    let row = rollout::class_row(&factors, tokens);
    let plane = Tensor::new(vec![grid, grid], row[1..].to_vec())?;
    let (h, w) = input_dims(model)?;
    project_to_input(&plane, h, w)
}

/// Elementwise mean of maps, min-max normalized.
pub fn average_maps(maps: &[ExplanationMap]) -> Result<ExplanationMap> {
    let first = maps.first().ok_or_else(|| BeeError::Empty("cannot average an empty map list".into()))?;
    let mut acc = Tensor::zeros(first.map.shape());
    for m in maps {
        acc.add_assign(&m.map)?;
    }
    let mean = acc.scale(1.0 / maps.len() as f64);
    let mut out = ExplanationMap::new(minmax_normalize(&mean), first.layer, None)?;
    out.baseline = first.baseline;
    out.params = maps.iter().flat_map(|m| m.params.iter().cloned()).collect();
    Ok(out)
}

/// Candidate maps gathered over one or more layers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapPool {
    pub maps: Vec<ExplanationMap>,
    pub layers: Vec<usize>,
}

impl MapPool {
    pub fn new(layers: Vec<usize>) -> Self {
        Self { maps: Vec::new(), layers }
    }

    pub fn push(&mut self, map: ExplanationMap) {
        self.maps.push(map);
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// Index of the best direction-adjusted score; ties go to the lowest index.
pub fn best_index(scores: &[f64], direction: Direction) -> Result<usize> {
    if scores.is_empty() {
        return Err(BeeError::Empty("no scores to select from".into()));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if direction.better(s, scores[best]) {
            best = i;
        }
    }
    Ok(best)
}

/// The pool member with the best score, with that score attached.
pub fn select_best(pool: &MapPool, scores: &[f64], direction: Direction) -> Result<ExplanationMap> {
    if pool.is_empty() {
        return Err(BeeError::Empty("cannot select from an empty map pool".into()));
    }
    if scores.len() != pool.len() {
        return invalid(format!("{} scores for a pool of {} maps", scores.len(), pool.len()));
    }
    let i = best_index(scores, direction)?;
    Ok(pool.maps[i].clone().with_score(scores[i]))
}

#[cfg(test)]
mod tests;
