//! Quick invariant checks run by `bee selftest`.

use bee::attribution::{
    bee_map_cnn, bee_map_vit, integrated_gradients, integrated_gradients_raw, select_best, ExplanationMap, MapPool,
};
use bee::bandit::{init_state, map_update, precision_update, ArmState, Context, SolverConfig};
use bee::baselines::{BaselineDraw, BaselineParams, BaselineType};
use bee::data::{synth_dataset, ImageShape, Split};
use bee::harness::{snapshot, Pretrained};
use bee::metrics::{apply_mask, evaluate, Direction, Fill, MetricConfig, MetricId, Order};
use bee::model::{
    finite_diff_grad, max_relative_error, AttentionConfig, Classifier, DifferentiableModel, TinyAttention, TinyCnn,
};
use bee::tensor::softmax_rows;
use bee::Tensor;

pub struct Check {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

type Outcome = Result<(), String>;

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Outcome {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

fn err(e: bee::BeeError) -> String {
    e.to_string()
}

fn wave(shape: &[usize], phase: f64) -> Tensor {
    Tensor::from_fn(shape, |i| 0.5 + 0.45 * (i as f64 * 0.731 + phase).sin())
}

fn gradients<M: DifferentiableModel>(m: &M, x: &Tensor, y: usize) -> Outcome {
    for l in 0..=m.layer_count() {
        let r = m.representation(l, x).map_err(err)?;
        let g = m.grad_wrt_layer(l, &r, y).map_err(err)?;
        let fd = finite_diff_grad(m, l, &r, y, 1e-5).map_err(err)?;
        let e = max_relative_error(g.data(), fd.data(), 1e-4);
        ensure(e <= 1e-5, || format!("layer {l}: relative error {e:e}"))?;
    }
    Ok(())
}

fn cnn_gradients() -> Outcome {
    let m = TinyCnn::build(1);
    gradients(&m, &wave(m.input_shape(), 0.3), 0)
}

fn attention_gradients() -> Outcome {
    let m = TinyAttention::build(1);
    gradients(&m, &wave(m.input_shape(), 0.9), 1)
}

fn ig_completeness() -> Outcome {
    let m = TinyCnn::build(2);
    let shape = ImageShape { channels: 3, height: 16, width: 16 };
    let item = &synth_dataset(5, 1, Split::Test, shape, m.class_count()).map_err(err)?.items[0];
    let (x, y) = (&item.input, item.label);
    let b = Tensor::zeros(x.shape());
    let target = m.logits(x).map_err(err)?[y] - m.logits(&b).map_err(err)?[y];
    let raw = integrated_gradients_raw(&m, x, &b, y, 512).map_err(err)?;
    let e = (raw.sum() - target).abs() / target.abs();
    ensure(e <= 1e-3, || format!("relative gap {e:e}"))
}

fn all_zero(map: &ExplanationMap) -> bool {
    map.map.data().iter().all(|&v| v == 0.0)
}

fn zero_path() -> Outcome {
    let cnn = TinyCnn::build(3);
    let x = wave(cnn.input_shape(), 0.1);
    ensure(all_zero(&integrated_gradients(&cnn, &x, &x, 0, 8).map_err(err)?), || "input path".into())?;
    let rep = cnn.representation(cnn.layer_count(), &x).map_err(err)?;
    let draw = BaselineDraw {
        kind: BaselineType::Constant,
        tensor: rep,
        params: BaselineParams::Constant { values: Vec::new() },
    };
    ensure(all_zero(&bee_map_cnn(&cnn, cnn.layer_count(), &x, &draw, 0, 8).map_err(err)?), || {
        "representation path".into()
    })?;
    let vit = TinyAttention::with_config(3, AttentionConfig { blocks: 1, ..AttentionConfig::default() });
    let x = wave(vit.input_shape(), 0.2);
    let (_, trace) = vit.attention_trace(&x, 0).map_err(err)?;
    let block = vit.block_count();
    let draw = BaselineDraw {
        kind: BaselineType::Constant,
        tensor: trace.attentions[block - 1].clone(),
        params: BaselineParams::Constant { values: Vec::new() },
    };
    ensure(all_zero(&bee_map_vit(&vit, block, &x, &draw, 0, 8).map_err(err)?), || "attention path".into())
}

fn precision_step() -> Outcome {
    let mut arm = ArmState { g: vec![0.0, 0.0], q: vec![1.0, 1.0] };
    precision_update(&mut arm, &[1.0, 2.0]);
    ensure(arm.q == [1.25, 2.0], || format!("q = {:?}", arm.q))
}

fn scalar_fixed_point() -> Outcome {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if 1.0 / (1.0 + mid.exp()) > mid {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    let mut arm = ArmState::fresh(1);
    map_update(&mut arm, 1.0, Context::Fixed(&[1.0]), &SolverConfig::default()).map_err(err)?;
    ensure((arm.g[0] - root).abs() <= 1e-4, || format!("{} vs root {root}", arm.g[0]))
}

fn selection_optimum() -> Outcome {
    for n in 1..=6 {
        let mut pool = MapPool::new(vec![1]);
        let scores: Vec<f64> = (0..n).map(|i| ((i * 7 + n) % 5) as f64 / 4.0).collect();
        for i in 0..n {
            let map = Tensor::full(&[2, 2], i as f64);
            pool.push(ExplanationMap::new(map, 1, None).map_err(err)?);
        }
        for direction in [Direction::HigherBetter, Direction::LowerBetter] {
            let best = select_best(&pool, &scores, direction).map_err(err)?;
            let want = scores.iter().map(|&s| direction.adjust(s)).fold(f64::NEG_INFINITY, f64::max);
            ensure(best.score.map(|s| direction.adjust(s)) == Some(want), || {
                format!("pool of {n}: {:?} vs {want}", best.score)
            })?;
        }
    }
    Ok(())
}

/// Two-class model whose class-0 logit is a fixed weighting of four pixels.
struct FourPixel([f64; 4]);

impl Classifier for FourPixel {
    fn input_shape(&self) -> &[usize] {
        &[1, 2, 2]
    }
    fn class_count(&self) -> usize {
        2
    }
    fn logits(&self, x: &Tensor) -> bee::Result<Vec<f64>> {
        Ok(vec![self.0.iter().zip(x.data()).map(|(w, v)| w * v).sum(), 0.0])
    }
}

fn toy_metric_ordering() -> Outcome {
    let w = [1.5, -0.7, 0.4, 2.2];
    let model = FourPixel(w);
    let x = Tensor::new(vec![1, 2, 2], vec![0.9, 0.6, -1.1, 0.3]).map_err(err)?;
    let truth = Tensor::from_fn(&[2, 2], |i| w[i] * x.data()[i]);
    let reversed = truth.map(|v| -v);
    let cfg = MetricConfig::default();
    for metric in [MetricId::Pos, MetricId::Neg, MetricId::Ins, MetricId::Del] {
        let good = evaluate(metric, &model, &x, &truth, 0, &cfg).map_err(err)?;
        let bad = evaluate(metric, &model, &x, &reversed, 0, &cfg).map_err(err)?;
        let d = metric.direction();
        ensure(d.adjust(good) > d.adjust(bad), || format!("{metric}: {good} vs reversed {bad}"))?;
    }
    Ok(())
}

fn softmax_rows_sum_to_one() -> Outcome {
    let m = Tensor::from_fn(&[5, 7], |i| (i as f64 * 1.3).cos() * 40.0);
    let s = softmax_rows(&m).map_err(err)?;
    for row in s.data().chunks(7) {
        let total: f64 = row.iter().sum();
        ensure((total - 1.0).abs() <= 1e-12, || format!("row sums to {total}"))?;
    }
    Ok(())
}

fn mask_idempotent() -> Outcome {
    let x = wave(&[3, 4, 4], 0.4);
    let map = wave(&[4, 4], 2.0);
    for fraction in [0.0, 0.3, 1.0] {
        let once = apply_mask(&x, &map, fraction, Order::Descending, &Fill::Scalar(0.0)).map_err(err)?;
        let twice = apply_mask(&once, &map, fraction, Order::Descending, &Fill::Scalar(0.0)).map_err(err)?;
        ensure(once == twice, || format!("fraction {fraction}"))?;
    }
    Ok(())
}

fn snapshot_round_trip() -> Outcome {
    let mut state = init_state(MetricId::Ins, 3);
    state.arms[2] = ArmState { g: vec![0.1, -1.0 / 3.0, 2.5e-7], q: vec![1.0, 4.25, 1.0 + 1e-9] };
    state.history = vec![0.2, 0.7];
    let p = Pretrained {
        model_seed: 42,
        theta: vec![0.5, -0.125, 1e-300],
        states: [(MetricId::Ins, state)].into_iter().collect(),
    };
    let text = snapshot::to_json(&p).map_err(err)?;
    let back = snapshot::from_json(&text).map_err(err)?;
    ensure(back == p && snapshot::to_json(&back).map_err(err)? == text, || "round trip changed the snapshot".into())
}

pub fn run_selftest() -> Vec<Check> {
    let checks: [(&'static str, fn() -> Outcome); 12] = [
        ("cnn gradients match finite differences", cnn_gradients),
        ("attention gradients match finite differences", attention_gradients),
        ("integrated gradients completeness at 512 steps", ig_completeness),
        ("zero path gives zero maps", zero_path),
        ("precision step example", precision_step),
        ("single-arm fixed point", scalar_fixed_point),
        ("selection returns the pool optimum", selection_optimum),
        ("toy metric prefers the influence ordering", toy_metric_ordering),
        ("softmax rows sum to one", softmax_rows_sum_to_one),
        ("masking is idempotent", mask_idempotent),
        ("snapshot round trip", snapshot_round_trip),
        ("reference models are finite", finite_models),
    ];
    checks.into_iter().map(|(name, f)| Check { name, outcome: f() }).collect()
}

fn finite_models() -> Outcome {
    let cnn = TinyCnn::build(5);
    let vit = TinyAttention::build(5);
    let a = cnn.logits(&wave(cnn.input_shape(), 0.0)).map_err(err)?;
    let b = vit.logits(&wave(vit.input_shape(), 0.0)).map_err(err)?;
    ensure(a.iter().chain(&b).all(|v| v.is_finite()), || "non-finite logits".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        for c in run_selftest() {
            assert!(c.outcome.is_ok(), "{}: {:?}", c.name, c.outcome);
        }
    }
}
