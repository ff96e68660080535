//! Faithfulness metrics and the masking engine behind them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BeeError, Result};
use crate::imgproc::gaussian_blur;
use crate::model::Classifier;
use crate::tensor::{trapezoid_auc, Curve, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    /// Map a score so that larger is always better.
    pub fn adjust(self, score: f64) -> f64 {
        match self {
            Direction::HigherBetter => score,
            Direction::LowerBetter => -score,
        }
    }

    /// Strictly better under this direction.
    pub fn better(self, a: f64, b: f64) -> bool {
        self.adjust(a) > self.adjust(b)
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::HigherBetter => "higher",
            Direction::LowerBetter => "lower",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricId {
    #[serde(rename = "POS")]
    Pos,
    #[serde(rename = "NEG")]
    Neg,
    #[serde(rename = "INS")]
    Ins,
    #[serde(rename = "DEL")]
    Del,
    #[serde(rename = "ADP")]
    Adp,
    #[serde(rename = "PIC")]
    Pic,
    #[serde(rename = "SIC")]
    Sic,
    #[serde(rename = "AIC")]
    Aic,
}

impl MetricId {
    pub const ALL: [MetricId; 8] = [
        MetricId::Pos,
        MetricId::Neg,
        MetricId::Ins,
        MetricId::Del,
        MetricId::Adp,
        MetricId::Pic,
        MetricId::Sic,
        MetricId::Aic,
    ];

    pub fn direction(self) -> Direction {
        match self {
            MetricId::Pos | MetricId::Del | MetricId::Adp => Direction::LowerBetter,
            _ => Direction::HigherBetter,
        }
    }

    pub fn kind(self) -> RewardKind {
        match self {
            MetricId::Pic => RewardKind::Binary,
            _ => RewardKind::Continuous,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Pos => "POS",
            MetricId::Neg => "NEG",
            MetricId::Ins => "INS",
            MetricId::Del => "DEL",
            MetricId::Adp => "ADP",
            MetricId::Pic => "PIC",
            MetricId::Sic => "SIC",
            MetricId::Aic => "AIC",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = BeeError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| BeeError::Parse(format!("unknown metric '{s}'")))
    }
}

/// Settings shared by the masking and revealing metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    /// Value written into removed pixels for POS, NEG, INS and DEL.
    pub fill: f64,
    /// Blur strength of the fully-uninformative SIC/AIC start image.
    pub info_blur_sigma: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { fill: 0.0, info_blur_sigma: 3.0 }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.fill.is_finite() {
            return Err(BeeError::Config("metric fill must be finite".into()));
        }
        if !(self.info_blur_sigma > 0.0 && self.info_blur_sigma.is_finite()) {
            return Err(BeeError::Config("info_blur_sigma must be a positive finite value".into()));
        }
        Ok(())
    }
}

/// Result of a metric: its scalar value plus the curve or per-instance values behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricScore {
    pub value: f64,
    pub curve: Option<Curve>,
    pub per_instance: Option<Vec<f64>>,
    /// Instances excluded from the mean (zero reference confidence).
    pub skipped: usize,
}

impl MetricScore {
    fn from_curve(curve: Curve) -> Result<Self> {
        Ok(Self { value: trapezoid_auc(&curve)?, curve: Some(curve), per_instance: None, skipped: 0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    /// Highest map values first.
    Descending,
    /// Lowest map values first.
    Ascending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassRef {
    Target,
    Predicted,
}

impl ClassRef {
    pub fn resolve<C: Classifier + ?Sized>(self, model: &C, x: &Tensor, target: usize) -> Result<usize> {
        match self {
            ClassRef::Target => Ok(target),
            ClassRef::Predicted => model.predict(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fill<'a> {
    Scalar(f64),
    /// Per-element replacement values, same shape as the input.
    Tensor(&'a Tensor),
}

const FRACTION_EPS: f64 = 1e-9;

/// Number of pixels covered by `fraction` of `pixels`, robust to float noise.
pub fn masked_count(fraction: f64, pixels: usize) -> usize {
    ((fraction * pixels as f64 + FRACTION_EPS).floor() as usize).min(pixels)
}

/// Pixel indices in the given order; equal values keep row-major order.
pub fn pixel_ranking(map: &Tensor, order: Order) -> Vec<usize> {
    let v = map.data();
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| {
        let ord = match order {
            Order::Descending => v[b].total_cmp(&v[a]),
            Order::Ascending => v[a].total_cmp(&v[b]),
        };
        ord.then(a.cmp(&b))
    });
    idx
}

fn check_pair(x: &Tensor, map: &Tensor) -> Result<(usize, usize)> {
    let (h, w) = x.spatial()?;
    map.ensure_shape(&[h, w])?;
    map.ensure_finite("explanation map")?;
    Ok((h, w))
}

fn replace_pixels(out: &mut Tensor, pixels: &[usize], fill: &Fill<'_>, plane: usize) {
    let planes = out.len() / plane;
    for c in 0..planes {
        for &p in pixels {
            let i = c * plane + p;
            out.data_mut()[i] = match fill {
                Fill::Scalar(v) => *v,
                Fill::Tensor(t) => t.data()[i],
            };
        }
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(BeeError::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
    }
    Ok(())
}

/// Replace the first `⌊fraction · pixels⌋` pixels of the ranking with `fill` in every channel.
pub fn apply_mask(x: &Tensor, map: &Tensor, fraction: f64, order: Order, fill: &Fill<'_>) -> Result<Tensor> {
    check_fraction(fraction)?;
    let (h, w) = check_pair(x, map)?;
    if let Fill::Tensor(t) = fill {
        t.ensure_shape(x.shape())?;
    }
    let ranking = pixel_ranking(map, order);
    let count = masked_count(fraction, h * w);
    let mut out = x.clone();
    replace_pixels(&mut out, &ranking[..count], fill, h * w);
    Ok(out)
}

fn broadcast_product(x: &Tensor, map: &Tensor) -> Result<Tensor> {
    let (h, w) = check_pair(x, map)?;
    let plane = h * w;
    Ok(Tensor::from_fn(x.shape(), |i| x.data()[i] * map.data()[i % plane]))
}

fn aligned(inputs: usize, maps: usize, classes: usize) -> Result<()> {
    if inputs != maps || inputs != classes {
        return Err(BeeError::InvalidArgument(format!(
            "misaligned metric inputs: {inputs} inputs, {maps} maps, {classes} classes"
        )));
    }
    if inputs == 0 {
        return Err(BeeError::Empty("no instances to score".into()));
    }
    Ok(())
}

fn confidence<C: Classifier + ?Sized>(model: &C, x: &Tensor, class: usize) -> Result<f64> {
    let p = model.probabilities(x)?;
    p.get(class).copied().ok_or_else(|| BeeError::InvalidArgument(format!("class {class} out of range")))
}

/// Reference and masked confidences `(Y, O)` for one instance.
fn confidence_pair<C: Classifier + ?Sized>(model: &C, x: &Tensor, map: &Tensor, class: usize) -> Result<(f64, f64)> {
    let y = confidence(model, x, class)?;
    let o = confidence(model, &broadcast_product(x, map)?, class)?;
    Ok((y, o))
}

/// Mean relative confidence drop, in percent.
pub fn average_drop<C: Classifier + ?Sized>(
    model: &C,
    inputs: &[Tensor],
    maps: &[Tensor],
    classes: &[usize],
) -> Result<MetricScore> {
    aligned(inputs.len(), maps.len(), classes.len())?;
    let mut per = Vec::with_capacity(inputs.len());
    let mut skipped = 0;
    for ((x, m), &c) in inputs.iter().zip(maps).zip(classes) {
        let (y, o) = confidence_pair(model, x, m, c)?;
        if y == 0.0 {
            skipped += 1;
            continue;
        }
        per.push(100.0 * (y - o).max(0.0) / y);
    }
    let value = if per.is_empty() { 0.0 } else { per.iter().sum::<f64>() / per.len() as f64 };
    Ok(MetricScore { value, curve: None, per_instance: Some(per), skipped })
}

/// Percentage of instances whose confidence rises on the map-weighted input.
pub fn pct_increase<C: Classifier + ?Sized>(
    model: &C,
    inputs: &[Tensor],
    maps: &[Tensor],
    classes: &[usize],
) -> Result<MetricScore> {
    aligned(inputs.len(), maps.len(), classes.len())?;
    let mut per = Vec::with_capacity(inputs.len());
    for ((x, m), &c) in inputs.iter().zip(maps).zip(classes) {
        let (y, o) = confidence_pair(model, x, m, c)?;
        per.push(if y < o { 1.0 } else { 0.0 });
    }
    let value = 100.0 * per.iter().sum::<f64>() / per.len() as f64;
    Ok(MetricScore { value, curve: None, per_instance: Some(per), skipped: 0 })
}

fn grid(from: usize, to: usize) -> Vec<f64> {
    (from..=to).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Pos,
    Neg,
}

/// Perturbation test over removal fractions 0.1..=0.9.
pub fn perturbation_auc<C: Classifier + ?Sized>(
    model: &C,
    x: &Tensor,
    map: &Tensor,
    class: usize,
    polarity: Polarity,
    fill: f64,
) -> Result<MetricScore> {
    let order = match polarity {
        Polarity::Pos => Order::Descending,
        Polarity::Neg => Order::Ascending,
    };
    let xs = grid(1, 9);
    let ys = xs
        .iter()
        .map(|&f| confidence(model, &apply_mask(x, map, f, order, &Fill::Scalar(fill))?, class))
        .collect::<Result<Vec<_>>>()?;
    MetricScore::from_curve(Curve::new(xs, ys)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Insertion,
    Deletion,
}

/// Deletion zeroes the top-ranked pixels; insertion restores them onto an all-fill image.
pub fn insertion_deletion_auc<C: Classifier + ?Sized>(
    model: &C,
    x: &Tensor,
    map: &Tensor,
    class: usize,
    mode: Sweep,
    fill: f64,
) -> Result<MetricScore> {
    let xs = grid(0, 10);
    let empty = Tensor::full(x.shape(), fill);
    let ys = xs
        .iter()
        .map(|&f| {
            let probe = match mode {
                Sweep::Deletion => apply_mask(x, map, f, Order::Descending, &Fill::Scalar(fill))?,
                Sweep::Insertion => apply_mask(&empty, map, f, Order::Descending, &Fill::Tensor(x))?,
            };
            confidence(model, &probe, class)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricScore::from_curve(Curve::new(xs, ys)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoCurve {
    /// Normalized target probability.
    Softmax,
    /// Correctness indicator.
    Accuracy,
}

/// Reveal top-ranked sharp pixels on a blurred copy at fractions 0..=1.
pub fn information_curves<C: Classifier + ?Sized>(
    model: &C,
    x: &Tensor,
    map: &Tensor,
    class: usize,
    mode: InfoCurve,
    blur_sigma: f64,
) -> Result<MetricScore> {
    if !(blur_sigma > 0.0) {
        return Err(BeeError::InvalidArgument(format!("information-curve blur sigma must be > 0, got {blur_sigma}")));
    }
    let base = gaussian_blur(x, blur_sigma)?;
    let xs = grid(0, 10);
    let probes = xs
        .iter()
        .map(|&f| apply_mask(&base, map, f, Order::Descending, &Fill::Tensor(x)))
        .collect::<Result<Vec<_>>>()?;
    let ys = match mode {
        InfoCurve::Accuracy => {
            probes.iter().map(|p| Ok(if model.predict(p)? == class { 1.0 } else { 0.0 })).collect::<Result<Vec<_>>>()?
        }
        InfoCurve::Softmax => {
            let raw = probes.iter().map(|p| confidence(model, p, class)).collect::<Result<Vec<_>>>()?;
            let top = *raw.last().expect("non-empty grid");
            raw.iter().map(|p| if top > 0.0 { (p / top).clamp(0.0, 1.0) } else { 0.0 }).collect()
        }
    };
    MetricScore::from_curve(Curve::new(xs, ys)?)
}

/// Per-instance value of `metric`: percent for ADP and PIC, AUC in `[0, 1]` otherwise.
pub fn evaluate<C: Classifier + ?Sized>(
    metric: MetricId,
    model: &C,
    x: &Tensor,
    map: &Tensor,
    class: usize,
    cfg: &MetricConfig,
) -> Result<f64> {
    let one = |f: fn(&C, &[Tensor], &[Tensor], &[usize]) -> Result<MetricScore>| {
        f(model, std::slice::from_ref(x), std::slice::from_ref(map), &[class]).map(|s| s.value)
    };
    let value = match metric {
        MetricId::Adp => one(average_drop)?,
        MetricId::Pic => one(pct_increase)?,
        MetricId::Pos => perturbation_auc(model, x, map, class, Polarity::Pos, cfg.fill)?.value,
        MetricId::Neg => perturbation_auc(model, x, map, class, Polarity::Neg, cfg.fill)?.value,
        MetricId::Ins => insertion_deletion_auc(model, x, map, class, Sweep::Insertion, cfg.fill)?.value,
        MetricId::Del => insertion_deletion_auc(model, x, map, class, Sweep::Deletion, cfg.fill)?.value,
        MetricId::Sic => information_curves(model, x, map, class, InfoCurve::Softmax, cfg.info_blur_sigma)?.value,
        MetricId::Aic => information_curves(model, x, map, class, InfoCurve::Accuracy, cfg.info_blur_sigma)?.value,
    };
    if !value.is_finite() {
        return Err(BeeError::NonFinite(format!("{metric} score")));
    }
    Ok(value)
}

impl MetricId {
    /// Binary success of a per-instance score; only meaningful for binary metrics.
    pub fn is_success(self, score: f64) -> bool {
        self.direction().adjust(score) > self.direction().adjust(0.0)
    }

    /// Factor taking a per-instance value to the percent scale used in reports.
    pub fn report_scale(self) -> f64 {
        match self {
            MetricId::Adp | MetricId::Pic => 1.0,
            _ => 100.0,
        }
    }
}
