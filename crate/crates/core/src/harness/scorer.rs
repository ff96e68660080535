//! Scoring explanation maps under one metric.

use rand::Rng;

use crate::attribution::ExplanationMap;
use crate::baselines::BaselineType;
use crate::error::Result;
use crate::metrics::{evaluate, Direction, MetricConfig, MetricId, RewardKind};
use crate::model::ReferenceModel;
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Per-instance metric values for maps, on the metric's native scale
/// (percent for ADP and PIC, AUC in `[0, 1]` otherwise).
pub trait MapScorer: Send + Sync {
    fn metric(&self) -> MetricId;

    fn score(&self, x: &Tensor, class: usize, map: &ExplanationMap, rng: &mut Stream) -> Result<f64>;
}

/// The real faithfulness metric evaluated on the reference model.
pub struct MetricScorer<'a> {
    pub metric: MetricId,
    pub model: &'a ReferenceModel,
    pub config: MetricConfig,
}

impl MapScorer for MetricScorer<'_> {
    fn metric(&self) -> MetricId {
        self.metric
    }

    fn score(&self, x: &Tensor, class: usize, map: &ExplanationMap, _rng: &mut Stream) -> Result<f64> {
        evaluate(self.metric, self.model, x, &map.map, class, &self.config)
    }
}

/// Probability that a winner map succeeds on a binary metric; losers succeed
/// with the complement.
pub const RIGGED_BINARY_WIN: f64 = 0.9;
/// Continuous winner scores are uniform on `[RIGGED_WIN_LOW, 1]`, losers on
/// `[0, 1 - RIGGED_WIN_LOW]`, before orienting by direction.
pub const RIGGED_WIN_LOW: f64 = 0.6;

/// Synthetic metric under which maps from one baseline type stochastically
/// dominate every other map, regardless of the pixels.
pub struct RiggedScorer {
    pub metric: MetricId,
    pub winner: BaselineType,
}

impl MapScorer for RiggedScorer {
    fn metric(&self) -> MetricId {
        self.metric
    }

    fn score(&self, _x: &Tensor, _class: usize, map: &ExplanationMap, rng: &mut Stream) -> Result<f64> {
        let wins = map.baseline == Some(self.winner);
        let full = 100.0 / self.metric.report_scale();
        Ok(match self.metric.kind() {
            RewardKind::Binary => {
                let p = if wins { RIGGED_BINARY_WIN } else { 1.0 - RIGGED_BINARY_WIN };
                let success = rng.random_bool(p);
                let good = match self.metric.direction() {
                    Direction::HigherBetter => full,
                    Direction::LowerBetter => 0.0,
                };
                if success {
                    good
                } else {
                    full - good
                }
            }
            RewardKind::Continuous => {
                let v = if wins {
                    rng.random_range(RIGGED_WIN_LOW..=1.0)
                } else {
                    rng.random_range(0.0..=1.0 - RIGGED_WIN_LOW)
                };
                let oriented = match self.metric.direction() {
                    Direction::HigherBetter => v,
                    Direction::LowerBetter => 1.0 - v,
                };
                oriented * full
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn map_of(kind: Option<BaselineType>) -> ExplanationMap {
        let mut m = ExplanationMap::new(Tensor::zeros(&[2, 2]), 0, None).unwrap();
        m.baseline = kind;
        m
    }

    #[test]
    fn rigged_continuous_separates_winner() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let mut rng = stream(3);
        for metric in [MetricId::Ins, MetricId::Del, MetricId::Adp] {
            let s = RiggedScorer { metric, winner: BaselineType::Blur };
            let d = metric.direction();
            for _ in 0..200 {
                let w = s.score(&x, 0, &map_of(Some(BaselineType::Blur)), &mut rng).unwrap();
                let l = s.score(&x, 0, &map_of(Some(BaselineType::Normal)), &mut rng).unwrap();
                let n = s.score(&x, 0, &map_of(None), &mut rng).unwrap();
                assert!(d.better(w, l) || d.adjust(w) == d.adjust(l));
                assert!(d.adjust(w) >= d.adjust(n));
                let top = 100.0 / metric.report_scale();
                assert!((0.0..=top).contains(&w));
            }
        }
    }

    #[test]
    fn rigged_binary_success_rates() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let s = RiggedScorer { metric: MetricId::Pic, winner: BaselineType::Constant };
        let mut rng = stream(5);
        let trials = 20_000;
        let rate = |kind| {
            let mut rng = stream(kind as u64);
            (0..trials)
                .filter(|_| MetricId::Pic.is_success(s.score(&x, 0, &map_of(Some(kind)), &mut rng).unwrap()))
                .count() as f64
                / trials as f64
        };
        assert!((rate(BaselineType::Constant) - 0.9).abs() < 0.01);
        assert!((rate(BaselineType::Uniform) - 0.1).abs() < 0.01);
        let v = s.score(&x, 0, &map_of(None), &mut rng).unwrap();
        assert!(v == 0.0 || v == 100.0);
    }
}
