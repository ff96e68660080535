use super::*;
use crate::baselines::{sample_baseline, softmax_normalize_baseline, BaselineConfig};
use crate::data::{synth_dataset, ImageShape, Split};
use crate::model::{AttentionConfig, Classifier, ForwardPass, TinyCnn};
use crate::rng::stream;
use proptest::prelude::*;
use rand::Rng;

fn keys_cubic(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        1.5 * t * t * t - 2.5 * t * t + 1.0
    } else if t < 2.0 {
        -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// Direct 16-tap bicubic evaluation with clamped borders.
fn oracle_resize(src: &[f64], ih: usize, iw: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        let sy = (r as f64 + 0.5) * ih as f64 / oh as f64 - 0.5;
        for c in 0..ow {
            let sx = (c as f64 + 0.5) * iw as f64 / ow as f64 - 0.5;
            let mut v = 0.0;
            for dy in -1..=2i64 {
                let yy = sy.floor() as i64 + dy;
                let wy = keys_cubic(sy - yy as f64);
                for dx in -1..=2i64 {
                    let xx = sx.floor() as i64 + dx;
                    let wx = keys_cubic(sx - xx as f64);
                    let yc = yy.clamp(0, ih as i64 - 1) as usize;
                    let xc = xx.clamp(0, iw as i64 - 1) as usize;
                    v += wy * wx * src[yc * iw + xc];
                }
            }
            out[r * ow + c] = v;
        }
    }
    out
}

fn oracle_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    v.iter().map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 }).collect()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

/// `f_0 = w·x`, `f_1 = -w·x` on a 1 x 2 x 2 input.
struct Linear {
    w: Vec<f64>,
}

impl Classifier for Linear {
    fn input_shape(&self) -> &[usize] {
        &[1, 2, 2]
    }
    fn class_count(&self) -> usize {
        2
    }
    fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.forward_from(0, x)
    }
}

impl DifferentiableModel for Linear {
    fn layer_count(&self) -> usize {
        0
    }
    fn layer_shape(&self, _l: usize) -> Result<Vec<usize>> {
        Ok(vec![1, 2, 2])
    }
    fn forward(&self, x: &Tensor) -> Result<ForwardPass> {
        Ok(ForwardPass { representations: vec![x.clone()], logits: self.logits(x)? })
    }
    fn forward_from(&self, _l: usize, r: &Tensor) -> Result<Vec<f64>> {
        let s: f64 = self.w.iter().zip(r.data()).map(|(a, b)| a * b).sum();
        Ok(vec![s, -s])
    }
    fn grad_wrt_layer(&self, _l: usize, _r: &Tensor, y: usize) -> Result<Tensor> {
        let sign = if y == 0 { 1.0 } else { -1.0 };
        Tensor::new(vec![1, 2, 2], self.w.iter().map(|v| sign * v).collect())
    }
}

fn sample_input(seed: u64) -> (Tensor, usize) {
    let shape = ImageShape { channels: 3, height: 16, width: 16 };
    let d = synth_dataset(seed, 1, Split::Test, shape, 4).unwrap();
    (d.items[0].input.clone(), d.items[0].label)
}

fn attention_input(seed: u64) -> Tensor {
    let mut rng = stream(seed);
    Tensor::from_fn(&[3, 12, 12], |_| rng.random_range(0.0..1.0))
}

#[test]
fn interpolate_examples() {
    let b = Tensor::zeros(&[1]);
    let x = Tensor::full(&[1], 4.0);
    assert_eq!(interpolate(&b, &x, 4, 4).unwrap(), x);
    assert_eq!(interpolate(&b, &x, 1, 4).unwrap().data(), &[1.0]);
    assert_eq!(interpolate(&x, &x, 3, 7).unwrap(), x);
    assert!(interpolate(&b, &x, 0, 4).is_err());
    assert!(interpolate(&b, &x, 5, 4).is_err());
    assert!(interpolate(&b, &Tensor::zeros(&[2]), 1, 4).is_err());
}

#[test]
fn linear_model_ig_is_weight_times_difference() {
    let m = Linear { w: vec![0.5, -1.0, 2.0, 3.0] };
    let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
    let b = Tensor::new(vec![1, 2, 2], vec![0.2, 0.0, 1.0, -0.5]).unwrap();
    for n in [1, 3, 10, 64] {
        let raw = integrated_gradients_raw(&m, &x, &b, 0, n).unwrap();
        let expected: Vec<f64> = (0..4).map(|i| m.w[i] * (x.data()[i] - b.data()[i])).collect();
        assert_close(raw.data(), &expected, 1e-12);
    }
}

#[test]
fn zero_path_integrated_gradients() {
    let model = TinyCnn::build(3);
    let (x, y) = sample_input(1);
    let raw = integrated_gradients_raw(&model, &x, &x, y, 10).unwrap();
    assert!(raw.data().iter().all(|&v| v == 0.0));
    let map = integrated_gradients(&model, &x, &x, y, 10).unwrap();
    assert!(map.map.data().iter().all(|&v| v == 0.0));
}

#[test]
fn completeness_improves_with_steps() {
    let model = TinyCnn::build(11);
    let (x, y) = sample_input(5);
    let b = Tensor::zeros(x.shape());
    let target = model.logits(&x).unwrap()[y] - model.logits(&b).unwrap()[y];
    assert!(target.abs() > 1e-3);
    let mut last = f64::INFINITY;
    for n in [32, 64, 128, 256, 512] {
        let raw = integrated_gradients_raw(&model, &x, &b, y, n).unwrap();
        let err = (raw.sum() - target).abs() / target.abs();
        assert!(err < last, "n = {n}: {err} !< {last}");
        last = err;
    }
    assert!(last <= 1e-3, "{last}");
}

#[test]
fn cnn_zero_path_and_determinism() {
    let model = TinyCnn::build(2);
    let (x, y) = sample_input(3);
    for l in 0..=2 {
        let rep = model.representation(l, &x).unwrap();
        let draw = BaselineDraw { kind: BaselineType::Blur, tensor: rep, params: BaselineParams::Blur { sigma: 0.0 } };
        let m = bee_map_cnn(&model, l, &x, &draw, y, 5).unwrap();
        assert!(m.map.data().iter().all(|&v| v == 0.0));
        assert_eq!(m.map.shape(), &[16, 16]);
    }
    let rep = model.representation(2, &x).unwrap();
    let cfg = BaselineConfig::default();
    let a = sample_baseline(BaselineType::Uniform, &rep, &mut stream(9), None, &cfg).unwrap();
    let b = sample_baseline(BaselineType::Uniform, &rep, &mut stream(9), None, &cfg).unwrap();
    let ma = bee_map_cnn(&model, 2, &x, &a, y, 7).unwrap();
    let mb = bee_map_cnn(&model, 2, &x, &b, y, 7).unwrap();
    assert_eq!(ma, mb);
    assert!(ma.map.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn cnn_single_step_matches_loop_oracle() {
    let model = TinyCnn::build(4);
    let (x, y) = sample_input(8);
    let l = 2;
    let rep = model.representation(l, &x).unwrap();
    let draw = sample_baseline(BaselineType::Normal, &rep, &mut stream(1), None, &BaselineConfig::default()).unwrap();
    let got = bee_map_cnn(&model, l, &x, &draw, y, 1).unwrap();

    let grad = model.grad_wrt_layer(l, &rep, y).unwrap();
    let (c, h, w) = (8, 8, 8);
    let mut mean = vec![0.0; h * w];
    for ch in 0..c {
        for p in 0..h * w {
            let i = ch * h * w + p;
            let diff = rep.data()[i] - draw.tensor.data()[i];
            mean[p] += diff * grad.data()[i] * rep.data()[i] / c as f64;
        }
    }
    let expected = oracle_normalize(&oracle_resize(&mean, h, w, 16, 16));
    assert_close(got.map.data(), &expected, 1e-12);
}

#[test]
fn cnn_rejects_layer_without_spatial_structure() {
    let model = crate::model::TinyAttention::build(1);
    let x = attention_input(1);
    let rep = model.representation(1, &x).unwrap();
    let draw = BaselineDraw { kind: BaselineType::Blur, tensor: rep, params: BaselineParams::Blur { sigma: 0.0 } };
    assert!(bee_map_cnn(&model, 1, &x, &draw, 0, 2).is_err());
}

fn one_block() -> TinyAttention {
    TinyAttention::with_config(6, AttentionConfig { blocks: 1, ..AttentionConfig::default() })
}

#[test]
fn vit_zero_path_single_block() {
    let model = one_block();
    let x = attention_input(2);
    let (_, trace) = model.attention_trace(&x, 1).unwrap();
    let draw = BaselineDraw {
        kind: BaselineType::Blur,
        tensor: trace.attentions[0].clone(),
        params: BaselineParams::Blur { sigma: 0.0 },
    };
    let m = bee_map_vit(&model, 1, &x, &draw, 1, 4).unwrap();
    assert!(m.map.data().iter().all(|&v| v == 0.0));
    assert_eq!(m.map.shape(), &[12, 12]);
}

#[test]
fn vit_single_step_matches_hand_composition() {
    let model = one_block();
    let x = attention_input(3);
    let y = 2;
    let (_, trace) = model.attention_trace(&x, y).unwrap();
    let actual = &trace.attentions[0];
    let raw = sample_baseline(BaselineType::Uniform, actual, &mut stream(4), None, &BaselineConfig::default()).unwrap();
    let draw = softmax_normalize_baseline(raw).unwrap();
    for row in draw.tensor.data().chunks(10) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let got = bee_map_vit(&model, 1, &x, &draw, y, 1).unwrap();

    let (heads, t) = (2, 10);
    let grad = &trace.grads[0];
    let mut factor = vec![vec![0.0; t]; t];
    for h in 0..heads {
        for i in 0..t {
            for j in 0..t {
                let idx = h * t * t + i * t + j;
                let a = actual.data()[idx];
                factor[i][j] += (a - draw.tensor.data()[idx]) * grad.data()[idx] * a / heads as f64;
            }
        }
    }
    for (i, row) in factor.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let tokens: Vec<f64> = factor[0][1..].to_vec();
    let expected = oracle_normalize(&oracle_resize(&tokens, 3, 3, 12, 12));
    assert_close(got.map.data(), &expected, 1e-12);
}

#[test]
fn vit_rejects_unnormalized_baseline_and_bad_block() {
    let model = TinyAttention::build(1);
    let x = attention_input(1);
    let draw = BaselineDraw {
        kind: BaselineType::Constant,
        tensor: Tensor::full(&model.attention_shape(), 0.5),
        params: BaselineParams::Constant { values: vec![0.5, 0.5] },
    };
    assert!(bee_map_vit(&model, 1, &x, &draw, 0, 2).is_err());
    let ok = softmax_normalize_baseline(draw).unwrap();
    assert!(bee_map_vit(&model, 0, &x, &ok, 0, 2).is_err());
    assert!(bee_map_vit(&model, 3, &x, &ok, 0, 2).is_err());
    assert!(bee_map_vit(&model, 2, &x, &ok, 0, 2).is_ok());
}

fn raw_map(values: Vec<f64>) -> ExplanationMap {
    ExplanationMap::new(Tensor::new(vec![2, 2], values).unwrap(), 1, None).unwrap()
}

#[test]
fn average_maps_examples() {
    let m = raw_map(vec![0.0, 0.25, 1.0, 0.5]);
    assert_eq!(average_maps(std::slice::from_ref(&m)).unwrap().map, m.map);

    let pos = raw_map(vec![1.0, -2.0, 3.0, 0.5]);
    let neg = raw_map(vec![-1.0, 2.0, -3.0, -0.5]);
    assert!(average_maps(&[pos, neg]).unwrap().map.data().iter().all(|&v| v == 0.0));

    assert!(average_maps(&[]).is_err());

    let mut rng = stream(12);
    let maps: Vec<ExplanationMap> =
        (0..3).map(|_| raw_map((0..4).map(|_| rng.random_range(0.0..1.0)).collect())).collect();
    let mut mean = vec![0.0; 4];
    for m in &maps {
        for (o, v) in mean.iter_mut().zip(m.map.data()) {
            *o += v / 3.0;
        }
    }
    assert_close(average_maps(&maps).unwrap().map.data(), &oracle_normalize(&mean), 1e-12);
}

fn pool_of(n: usize) -> MapPool {
    let mut pool = MapPool::new(vec![1]);
    for i in 0..n {
        pool.push(raw_map(vec![i as f64, 0.0, 0.0, 0.0]));
    }
    pool
}

#[test]
fn select_best_examples() {
    let pool = pool_of(3);
    let scores = [0.2, 0.9, 0.5];
    let hi = select_best(&pool, &scores, Direction::HigherBetter).unwrap();
    assert_eq!(hi.map, pool.maps[1].map);
    assert_eq!(hi.score, Some(0.9));
    let lo = select_best(&pool, &scores, Direction::LowerBetter).unwrap();
    assert_eq!(lo.map, pool.maps[0].map);
    assert_eq!(best_index(&[0.4; 3], Direction::HigherBetter).unwrap(), 0);
    assert_eq!(best_index(&[0.4; 3], Direction::LowerBetter).unwrap(), 0);
    assert!(select_best(&MapPool::default(), &[], Direction::HigherBetter).is_err());
    assert!(select_best(&pool, &[0.1], Direction::HigherBetter).is_err());
}

proptest! {
    #[test]
    fn selection_invariant_under_increasing_transform(
        scores in prop::collection::vec(-5.0f64..5.0, 1..12),
        shift in -3.0f64..3.0,
        scale in 0.1f64..4.0,
    ) {
        for dir in [Direction::HigherBetter, Direction::LowerBetter] {
            let plain = best_index(&scores, dir).unwrap();
            let moved: Vec<f64> = scores.iter().map(|s| (scale * s + shift).exp()).collect();
            prop_assert_eq!(plain, best_index(&moved, dir).unwrap());
        }
    }

    #[test]
    fn selected_score_is_pool_optimum(scores in prop::collection::vec(0.0f64..1.0, 1..10)) {
        let pool = pool_of(scores.len());
        for dir in [Direction::HigherBetter, Direction::LowerBetter] {
            let best = select_best(&pool, &scores, dir).unwrap().score.unwrap();
            let opt = scores.iter().map(|&s| dir.adjust(s)).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(dir.adjust(best), opt);
        }
    }
}
