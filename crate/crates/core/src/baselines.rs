//! Baseline samplers over channel-first representations.
//!
//! "Channel" means an activation channel for CNN representations and an
//! attention head for `heads x tokens x tokens` attention tensors.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, BeeError, Result};
use crate::imgproc::gaussian_blur;
use crate::rng::Stream;
use crate::tensor::{channel_stats, softmax_in_place, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineType {
    Normal,
    Uniform,
    Blur,
    Constant,
    TrainData,
}

impl BaselineType {
    pub const ALL: [BaselineType; 5] = [
        BaselineType::Normal,
        BaselineType::Uniform,
        BaselineType::Blur,
        BaselineType::Constant,
        BaselineType::TrainData,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BaselineType::Normal => "normal",
            BaselineType::Uniform => "uniform",
            BaselineType::Blur => "blur",
            BaselineType::Constant => "constant",
            BaselineType::TrainData => "train_data",
        }
    }
}

impl fmt::Display for BaselineType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineType {
    type Err = BeeError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s.to_ascii_lowercase())
            .ok_or_else(|| BeeError::Parse(format!("unknown baseline type '{s}'")))
    }
}

/// Hyperparameters that, together with the RNG stream, reproduce a draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaselineParams {
    Normal { sigma: f64 },
    Uniform,
    Blur { sigma: f64 },
    Constant { values: Vec<f64> },
    TrainData { indices: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineDraw {
    pub kind: BaselineType,
    pub tensor: Tensor,
    pub params: BaselineParams,
}

/// Sampling ranges for the parametrized baseline types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// σ range for the Normal baseline, sampled uniformly.
    pub normal_sigma: (f64, f64),
    /// σ range for the Blur baseline, sampled uniformly.
    pub blur_sigma: (f64, f64),
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { normal_sigma: (0.1, 0.5), blur_sigma: (0.0, 50.0) }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("normal_sigma", self.normal_sigma), ("blur_sigma", self.blur_sigma)] {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return Err(BeeError::Config(format!("{name} must satisfy 0 <= lo <= hi < inf, got ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

/// Draw one baseline of type `kind` for the representation `x_l`.
///
/// `pool` holds training-set representations of the same shape and is only
/// consulted for [`BaselineType::TrainData`].
pub fn sample_baseline(
    kind: BaselineType,
    x_l: &Tensor,
    rng: &mut Stream,
    pool: Option<&[Tensor]>,
    cfg: &BaselineConfig,
) -> Result<BaselineDraw> {
    if x_l.rank() != 3 {
        return invalid(format!("baseline target must be rank 3 (channels x h x w), got {:?}", x_l.shape()));
    }
    x_l.ensure_finite("baseline target representation")?;
    let stats = channel_stats(x_l)?;
    let channels = x_l.shape()[0];
    let (tensor, params) = match kind {
        BaselineType::Normal => {
            let sigma = rng.random_range(cfg.normal_sigma.0..=cfg.normal_sigma.1);
            let mut t = x_l.clone();
            for c in 0..channels {
                let range = stats.max[c] - stats.min[c];
                if range <= 0.0 {
                    continue;
                }
                let dist = Normal::new(0.0, sigma / range).map_err(|e| BeeError::InvalidArgument(e.to_string()))?;
                for v in t.channel_mut(c) {
                    *v += dist.sample(rng);
                }
            }
            (t, BaselineParams::Normal { sigma })
        }
        BaselineType::Uniform => {
            let mut t = x_l.clone();
            for c in 0..channels {
                let (lo, hi) = (stats.min[c], stats.max[c]);
                for v in t.channel_mut(c) {
                    *v = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                }
            }
            (t, BaselineParams::Uniform)
        }
        BaselineType::Blur => {
            let sigma = rng.random_range(cfg.blur_sigma.0..=cfg.blur_sigma.1);
            (gaussian_blur(x_l, sigma)?, BaselineParams::Blur { sigma })
        }
        BaselineType::Constant => {
            let mut t = x_l.clone();
            let mut values = Vec::with_capacity(channels);
            for c in 0..channels {
                let (lo, hi) = (stats.min[c], stats.max[c]);
                let value = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                t.channel_mut(c).iter_mut().for_each(|v| *v = value);
                values.push(value);
            }
            (t, BaselineParams::Constant { values })
        }
        BaselineType::TrainData => {
            let pool = pool
                .filter(|p| !p.is_empty())
                .ok_or_else(|| BeeError::Empty("train-data baseline requires a non-empty pool".into()))?;
            let index = rng.random_range(0..pool.len());
            let member = &pool[index];
            member.ensure_shape(x_l.shape())?;
            (member.clone(), BaselineParams::TrainData { indices: vec![index] })
        }
    };
    Ok(BaselineDraw { kind, tensor, params })
}

/// Softmax every row of every head so each row is a probability distribution.
pub fn softmax_normalize_baseline(mut draw: BaselineDraw) -> Result<BaselineDraw> {
    let shape = draw.tensor.shape().to_vec();
    let [_, rows, cols] = shape.as_slice() else {
        return invalid(format!("attention baseline must be rank 3, got {shape:?}"));
    };
    if rows != cols {
        return invalid(format!("attention baseline must be square per head, got {shape:?}"));
    }
    for row in draw.tensor.data_mut().chunks_mut(*cols) {
        softmax_in_place(row);
    }
    Ok(draw)
}
