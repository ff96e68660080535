//! Dense row-major `f64` tensors and the small set of array primitives the
//! attribution pipeline is built from.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, BeeError, Result};

/// Dense N-dimensional array (rank 1 to 4), row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return invalid(format!("tensor rank must be 1..=4, got {}", shape.len()));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return invalid(format!("data length {} does not match shape {:?} ({} elements)", data.len(), shape, len));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..len).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(BeeError::NonFinite(what.to_string()))
        }
    }

    pub fn ensure_shape(&self, expected: &[usize]) -> Result<()> {
        if self.shape == expected {
            Ok(())
        } else {
            Err(BeeError::ShapeMismatch { expected: expected.to_vec(), actual: self.shape.clone() })
        }
    }

    /// Height and width of a rank-2 or rank-3 (channel-first) tensor.
    pub fn spatial(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [h, w] | [_, h, w] => Ok((*h, *w)),
            _ => invalid(format!("expected rank 2 or 3, got shape {:?}", self.shape)),
        }
    }

    /// Number of channels, treating a rank-2 tensor as one channel.
    pub fn channels(&self) -> Result<usize> {
        match self.shape.as_slice() {
            [_, _] => Ok(1),
            [c, _, _] => Ok(*c),
            _ => invalid(format!("expected rank 2 or 3, got shape {:?}", self.shape)),
        }
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn at3(&self, ch: usize, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(ch * self.shape[1] + r) * self.shape[2] + c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        other.ensure_shape(&self.shape)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        other.ensure_shape(&self.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Borrow channel `c` of a rank-3 tensor as a flat slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let (h, w) = (self.shape[1], self.shape[2]);
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let (h, w) = (self.shape[1], self.shape[2]);
        &mut self.data[c * h * w..(c + 1) * h * w]
    }
}

/// Piecewise-linear curve sampled at non-decreasing abscissae.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Curve {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return invalid(format!("curve abscissae ({}) and ordinates ({}) differ in length", xs.len(), ys.len()));
        }
        if xs.len() < 2 {
            return invalid("curve needs at least two points");
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(BeeError::NonFinite("curve".into()));
        }
        if xs.windows(2).any(|w| w[1] < w[0]) {
            return invalid("curve abscissae must be non-decreasing");
        }
        Ok(Self { xs, ys })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }
}

/// Trapezoid-rule area under `c`, divided by the abscissa span so that a
/// constant curve integrates to its own value.
pub fn trapezoid_auc(c: &Curve) -> Result<f64> {
    let span = c.xs[c.xs.len() - 1] - c.xs[0];
    if span <= 0.0 {
        return invalid("curve has zero abscissa span");
    }
    let area: f64 = c.xs.windows(2).zip(c.ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum();
    Ok(area / span)
}

/// Row-wise softmax of a rank-2 tensor, stabilized by subtracting each row max.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    let [rows, cols] = m.shape() else {
        return invalid(format!("softmax_rows expects rank 2, got {:?}", m.shape()));
    };
    let (rows, cols) = (*rows, *cols);
    let mut out = m.clone();
    for r in 0..rows {
        softmax_in_place(&mut out.data[r * cols..(r + 1) * cols]);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}

/// Per-channel summary of a channel-first rank-3 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean_map: Tensor,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn channel_stats(t: &Tensor) -> Result<ChannelStats> {
    let [c, h, w] = t.shape() else {
        return invalid(format!("channel_stats expects rank 3, got {:?}", t.shape()));
    };
    let (c, h, w) = (*c, *h, *w);
    if c == 0 {
        return Err(BeeError::Empty("channel_stats on zero channels".into()));
    }
    let mut mean = vec![0.0; h * w];
    let mut min = Vec::with_capacity(c);
    let mut max = Vec::with_capacity(c);
    for ch in 0..c {
        let plane = t.channel(ch);
        for (m, v) in mean.iter_mut().zip(plane) {
            *m += v;
        }
        min.push(plane.iter().copied().fold(f64::INFINITY, f64::min));
        max.push(plane.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    let inv = 1.0 / c as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(ChannelStats { mean_map: Tensor::new(vec![h, w], mean)?, min, max })
}

/// Affine rescale to `[0, 1]`. A constant map becomes all zeros.
pub fn minmax_normalize(map: &Tensor) -> Tensor {
    let lo = map.min();
    let hi = map.max();
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return Tensor::zeros(map.shape());
    }
    map.map(|v| (v - lo) / span)
}
