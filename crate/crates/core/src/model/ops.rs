//! 3x3 convolution (zero padding 1) and row-major matrix products, each with
//! the reverse-mode rules the reference models need.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
}

pub const KSIZE: usize = 3;

impl ConvSpec {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * KSIZE * KSIZE
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.cout
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    #[inline]
    fn widx(&self, o: usize, i: usize, kr: usize, kc: usize) -> usize {
        ((o * self.cin + i) * KSIZE + kr) * KSIZE + kc
    }

    pub fn forward(&self, weight: &[f64], bias: &[f64], x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = self.out_dims(h, w);
        let s = self.stride;
        let mut out = vec![0.0; self.cout * oh * ow];
        for o in 0..self.cout {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = bias[o]);
            for i in 0..self.cin {
                let input = &x[i * h * w..(i + 1) * h * w];
                for kr in 0..KSIZE {
                    for kc in 0..KSIZE {
                        let k = weight[self.widx(o, i, kr, kc)];
                        // Output columns whose source column `c * s + kc - 1` lies inside the image.
                        let c0 = usize::from(kc == 0);
                        let c1 = ow.min((w + 1 - kc).div_ceil(s));
                        for r in 0..oh {
                            let Some(sr) = (r * s + kr).checked_sub(1).filter(|&v| v < h) else {
                                continue;
                            };
                            let src = &input[sr * w..(sr + 1) * w];
                            let dst = &mut plane[r * ow..(r + 1) * ow];
                            if s == 1 {
                                let src = &src[c0 + kc - 1..c1 + kc - 1];
                                for (d, v) in dst[c0..c1].iter_mut().zip(src) {
                                    *d += k * v;
                                }
                            } else {
                                for c in c0..c1 {
                                    dst[c] += k * src[c * s + kc - 1];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Gradient w.r.t. the input given the gradient w.r.t. the (pre-activation) output.
    pub fn backward_input(&self, weight: &[f64], dout: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = self.out_dims(h, w);
        let mut dx = vec![0.0; self.cin * h * w];
        for o in 0..self.cout {
            for r in 0..oh {
                for c in 0..ow {
                    let g = dout[(o * oh + r) * ow + c];
                    if g == 0.0 {
                        continue;
                    }
                    for i in 0..self.cin {
                        for kr in 0..KSIZE {
                            let sr = (r * self.stride + kr) as isize - 1;
                            if sr < 0 || sr >= h as isize {
                                continue;
                            }
                            for kc in 0..KSIZE {
                                let sc = (c * self.stride + kc) as isize - 1;
                                if sc < 0 || sc >= w as isize {
                                    continue;
                                }
                                dx[(i * h + sr as usize) * w + sc as usize] += g * weight[self.widx(o, i, kr, kc)];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Gradients w.r.t. weight and bias, written into `dweight` / `dbias`.
    pub fn backward_params(&self, x: &[f64], dout: &[f64], h: usize, w: usize, dweight: &mut [f64], dbias: &mut [f64]) {
        let (oh, ow) = self.out_dims(h, w);
        for o in 0..self.cout {
            for r in 0..oh {
                for c in 0..ow {
                    let g = dout[(o * oh + r) * ow + c];
                    dbias[o] += g;
                    for i in 0..self.cin {
                        for kr in 0..KSIZE {
                            let sr = (r * self.stride + kr) as isize - 1;
                            if sr < 0 || sr >= h as isize {
                                continue;
                            }
                            for kc in 0..KSIZE {
                                let sc = (c * self.stride + kc) as isize - 1;
                                if sc < 0 || sc >= w as isize {
                                    continue;
                                }
                                dweight[self.widx(o, i, kr, kc)] += g * x[(i * h + sr as usize) * w + sc as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Mean over the spatial extent of each channel.
pub fn global_mean_pool(x: &[f64], channels: usize) -> Vec<f64> {
    let per = x.len() / channels;
    x.chunks(per).map(|ch| ch.iter().sum::<f64>() / per as f64).collect()
}

/// Spread a pooled gradient back over each channel.
pub fn global_mean_pool_backward(dpooled: &[f64], per_channel: usize) -> Vec<f64> {
    let scale = 1.0 / per_channel as f64;
    dpooled.iter().flat_map(|&g| std::iter::repeat_n(g * scale, per_channel)).collect()
}

/// `y = W x + b` for a `rows x cols` weight.
pub fn affine(weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    weight.chunks(x.len()).zip(bias).map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).collect()
}

/// `Wᵀ g` for a `rows x cols` weight.
pub fn affine_backward_input(weight: &[f64], cols: usize, g: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; cols];
    for (row, gi) in weight.chunks(cols).zip(g) {
        for (d, w) in dx.iter_mut().zip(row) {
            *d += gi * w;
        }
    }
    dx
}

/// `tanh` applied in place; returns nothing so callers keep the activation buffer.
pub fn tanh_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

/// `g ∘ (1 - a²)`, the backward rule of `a = tanh(z)`.
pub fn tanh_backward(activation: &[f64], g: &[f64]) -> Vec<f64> {
    activation.iter().zip(g).map(|(a, g)| g * (1.0 - a * a)).collect()
}

/// `a (m x k) · b (k x n)`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ · b` with `a: k x m`, `b: k x n`.
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

/// `a · bᵀ` with `a: m x k`, `b: n x k`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[j * k + p]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let spec = ConvSpec { cin: 1, cout: 1, stride: 1 };
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let x: Vec<f64> = (0..12).map(|v| v as f64).collect();
        assert_eq!(spec.forward(&w, &[0.0], &x, 3, 4), x);
    }

    #[test]
    fn conv_stride_two_dims() {
        let spec = ConvSpec { cin: 2, cout: 3, stride: 2 };
        assert_eq!(spec.out_dims(16, 16), (8, 8));
        assert_eq!(spec.out_dims(12, 12), (6, 6));
        assert_eq!(spec.out_dims(7, 5), (4, 3));
    }

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let ab = matmul(&a, &b, 2, 3, 4);
        // aᵀ stored 3x2
        let at: Vec<f64> = (0..6).map(|idx| a[(idx % 2) * 3 + idx / 2]).collect();
        assert_eq!(matmul_tn(&at, &b, 3, 2, 4), ab);
        let bt: Vec<f64> = (0..12).map(|idx| b[(idx % 3) * 4 + idx / 3]).collect();
        assert_eq!(matmul_nt(&a, &bt, 2, 3, 4), ab);
    }
}
