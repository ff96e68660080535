//! Bicubic resampling and separable Gaussian blur on 2D / channel-first 3D tensors.

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

const CATMULL_ROM_A: f64 = -0.5;

/// Cubic convolution kernel with `a = -0.5` (Catmull-Rom).
pub fn cubic_kernel(x: f64) -> f64 {
    let a = CATMULL_ROM_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Source taps and weights for one output coordinate along an axis.
fn axis_taps(out_len: usize, in_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = in_len as f64 / out_len as f64;
    let last = in_len as isize - 1;
    (0..out_len)
        .map(|i| {
            let src = (i as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let t = src - base;
            let base = base as isize;
            let mut idx = [0usize; 4];
            let mut w = [0f64; 4];
            for m in 0..4 {
                let offset = m as isize - 1;
                idx[m] = (base + offset).clamp(0, last) as usize;
                w[m] = cubic_kernel(t - offset as f64);
            }
            (idx, w)
        })
        .collect()
}

/// Resize a 2D map with Catmull-Rom bicubic interpolation and edge clamping.
pub fn bicubic_resize(map: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [in_h, in_w] = map.shape() else {
        return invalid(format!("bicubic_resize expects rank 2, got {:?}", map.shape()));
    };
    let (in_h, in_w) = (*in_h, *in_w);
    if in_h < 2 || in_w < 2 {
        return invalid(format!("bicubic_resize needs input extents >= 2, got {in_h}x{in_w}"));
    }
    if out_h == 0 || out_w == 0 {
        return invalid("bicubic_resize output extents must be >= 1");
    }
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(map.clone());
    }
    let rows = axis_taps(out_h, in_h);
    let cols = axis_taps(out_w, in_w);
    let src = map.data();

    // horizontal pass: in_h x out_w
    let mut tmp = vec![0.0; in_h * out_w];
    for r in 0..in_h {
        let row = &src[r * in_w..(r + 1) * in_w];
        for (j, (idx, w)) in cols.iter().enumerate() {
            tmp[r * out_w + j] = (0..4).map(|m| w[m] * row[idx[m]]).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (i, (idx, w)) in rows.iter().enumerate() {
        for j in 0..out_w {
            out[i * out_w + j] = (0..4).map(|m| w[m] * tmp[idx[m] * out_w + j]).sum();
        }
    }
    Tensor::new(vec![out_h, out_w], out)
}

/// Normalized Gaussian weights over `[-radius, radius]` with `radius = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (-radius..=radius).map(|k| (-((k * k) as f64) / denom).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn blur_plane(plane: &mut [f64], h: usize, w: usize, kernel: &[f64]) {
    let radius = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let cc = (c as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += wt * plane[r * w + cc];
            }
            tmp[r * w + c] = acc;
        }
    }
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, wt) in kernel.iter().enumerate() {
                let rr = (r as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += wt * tmp[rr * w + c];
            }
            plane[r * w + c] = acc;
        }
    }
}

/// Separable Gaussian blur with edge clamping; 3D input is blurred per channel.
pub fn gaussian_blur(t: &Tensor, sigma: f64) -> Result<Tensor> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return invalid(format!("blur sigma must be finite and >= 0, got {sigma}"));
    }
    let (h, w) = t.spatial()?;
    if sigma == 0.0 {
        return Ok(t.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let mut out = t.clone();
    for plane in out.data_mut().chunks_mut(h * w) {
        blur_plane(plane, h, w, &kernel);
    }
    Ok(out)
}
