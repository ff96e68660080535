//! Tiny vision transformer: patch embedding plus a class token, pre-activation
//! free residual blocks of multi-head softmax attention and a tanh MLP, and a
//! linear head that reads the class token (position 0).
//!
//! Representation layers: 0 is the image, 1 is the token embedding, and
//! `1 + b` is the output of block `b` (1-based), so `L = blocks + 1`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops;
use super::{centroid_head, check_class, check_layer, Classifier, DifferentiableModel, ForwardPass};
use crate::data::{self, ImageShape};
use crate::error::{invalid, Result};
use crate::rng;
use crate::tensor::{softmax_in_place, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub channels: usize,
    pub image: usize,
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp: usize,
    pub classes: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { channels: 3, image: 12, patch: 4, dim: 8, heads: 2, blocks: 2, mlp: 16, classes: data::DEFAULT_CLASSES }
    }
}

impl AttentionConfig {
    pub fn grid(&self) -> usize {
        self.image / self.patch
    }

    pub fn tokens(&self) -> usize {
        1 + self.grid() * self.grid()
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn patch_len(&self) -> usize {
        self.channels * self.patch * self.patch
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Per-block attention probabilities and the class-score gradient w.r.t. them.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// One `heads x tokens x tokens` tensor per block.
    pub attentions: Vec<Tensor>,
    /// `∂ f_y / ∂ A_b`, same shapes as `attentions`.
    pub grads: Vec<Tensor>,
}

impl AttentionTrace {
    pub fn new(attentions: Vec<Tensor>, grads: Vec<Tensor>) -> Result<Self> {
        if attentions.len() != grads.len() {
            return invalid("attention and gradient block counts differ");
        }
        for (a, g) in attentions.iter().zip(&grads) {
            if a.rank() != 3 || a.shape()[1] != a.shape()[2] {
                return invalid(format!("attention must be heads x T x T, got {:?}", a.shape()));
            }
            g.ensure_shape(a.shape())?;
        }
        Ok(Self { attentions, grads })
    }

    pub fn blocks(&self) -> usize {
        self.attentions.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyAttention {
    config: AttentionConfig,
    input_shape: [usize; 3],
    patch_w: Vec<f64>,
    patch_b: Vec<f64>,
    cls: Vec<f64>,
    pos: Vec<f64>,
    blocks: Vec<Block>,
    head_w: Vec<f64>,
    head_b: Vec<f64>,
}

struct BlockCache {
    input: Vec<f64>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    attn: Vec<Vec<f64>>,
    hidden: Vec<f64>,
    overridden: bool,
}

impl TinyAttention {
    pub fn build(seed: u64) -> Self {
        Self::with_config(seed, AttentionConfig::default())
    }

    pub fn with_config(seed: u64, config: AttentionConfig) -> Self {
        assert!(config.image.is_multiple_of(config.patch), "image must tile into patches");
        assert!(config.dim.is_multiple_of(config.heads), "dim must split across heads");
        assert!(config.blocks >= 1, "at least one block");
        let mut rng = rng::derive(seed, "model/tiny_attention", 0);
        let mut draw = |len: usize, std: f64| -> Vec<f64> {
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..len).map(|_| dist.sample(&mut rng)).collect()
        };
        let (d, t, m) = (config.dim, config.tokens(), config.mlp);
        let inv = |fan: usize| 1.0 / (fan as f64).sqrt();
        let patch_w = draw(d * config.patch_len(), inv(config.patch_len()));
        let patch_b = draw(d, 0.1);
        let cls = draw(d, 0.5);
        let pos = draw(t * d, 0.5);
        let blocks = (0..config.blocks)
            .map(|_| Block {
                wq: draw(d * d, 2.0 * inv(d)),
                wk: draw(d * d, 2.0 * inv(d)),
                wv: draw(d * d, inv(d)),
                wo: draw(d * d, inv(d)),
                w1: draw(d * m, inv(d)),
                b1: draw(m, 0.1),
                w2: draw(m * d, inv(m)),
                b2: draw(d, 0.1),
            })
            .collect();
        let mut model = Self {
            config,
            input_shape: [config.channels, config.image, config.image],
            patch_w,
            patch_b,
            cls,
            pos,
            blocks,
            head_w: vec![0.0; config.classes * d],
            head_b: vec![0.0; config.classes],
        };
        let shape = ImageShape { channels: config.channels, height: config.image, width: config.image };
        let features: Vec<Vec<f64>> = (0..config.classes)
            .map(|k| {
                let x = data::class_prototype(k, shape);
                let last = model.run_tokens(0, model.embed(x.data()), None).0;
                last[..d].to_vec()
            })
            .collect();
        let (hw, hb) = centroid_head(&features);
        model.head_w = hw;
        model.head_b = hb;
        model
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    pub fn block_count(&self) -> usize {
        self.config.blocks
    }

    pub fn attention_shape(&self) -> [usize; 3] {
        let t = self.config.tokens();
        [self.config.heads, t, t]
    }

    fn patch_index(&self, p: usize, j: usize) -> usize {
        let c = &self.config;
        let (gi, gj) = (p / c.grid(), p % c.grid());
        let ch = j / (c.patch * c.patch);
        let r = (j / c.patch) % c.patch;
        let s = j % c.patch;
        (ch * c.image + gi * c.patch + r) * c.image + gj * c.patch + s
    }

    fn embed(&self, x: &[f64]) -> Vec<f64> {
        let c = &self.config;
        let (d, pl) = (c.dim, c.patch_len());
        let mut z = vec![0.0; c.tokens() * d];
        for k in 0..d {
            z[k] = self.cls[k] + self.pos[k];
        }
        let mut patch = vec![0.0; pl];
        for p in 0..c.grid() * c.grid() {
            for (j, v) in patch.iter_mut().enumerate() {
                *v = x[self.patch_index(p, j)];
            }
            let e = ops::affine(&self.patch_w, &self.patch_b, &patch);
            for k in 0..d {
                z[(1 + p) * d + k] = e[k] + self.pos[(1 + p) * d + k];
            }
        }
        z
    }

    fn embed_backward(&self, dz: &[f64]) -> Vec<f64> {
        let c = &self.config;
        let (d, pl) = (c.dim, c.patch_len());
        let mut dx = vec![0.0; c.channels * c.image * c.image];
        for p in 0..c.grid() * c.grid() {
            let g = &dz[(1 + p) * d..(2 + p) * d];
            let dpatch = ops::affine_backward_input(&self.patch_w, pl, g);
            for (j, v) in dpatch.into_iter().enumerate() {
                dx[self.patch_index(p, j)] += v;
            }
        }
        dx
    }

    fn block_forward(&self, b: usize, z: Vec<f64>, attn_override: Option<&[f64]>) -> (Vec<f64>, BlockCache) {
        let c = &self.config;
        let (t, d, dh, m) = (c.tokens(), c.dim, c.head_dim(), c.mlp);
        let blk = &self.blocks[b];
        let qf = ops::matmul(&z, &blk.wq, t, d, d);
        let kf = ops::matmul(&z, &blk.wk, t, d, d);
        let vf = ops::matmul(&z, &blk.wv, t, d, d);
        let split = |full: &[f64], h: usize| -> Vec<f64> {
            (0..t).flat_map(|i| full[i * d + h * dh..i * d + (h + 1) * dh].iter().copied()).collect()
        };
        let scale = 1.0 / (dh as f64).sqrt();
        let mut cache = BlockCache {
            input: z,
            q: Vec::new(),
            k: Vec::new(),
            v: Vec::new(),
            attn: Vec::new(),
            hidden: Vec::new(),
            overridden: attn_override.is_some(),
        };
        let mut o = vec![0.0; t * d];
        for h in 0..c.heads {
            let (qh, kh, vh) = (split(&qf, h), split(&kf, h), split(&vf, h));
            let a = match attn_override {
                Some(all) => all[h * t * t..(h + 1) * t * t].to_vec(),
                None => {
                    let mut s = ops::matmul_nt(&qh, &kh, t, dh, t);
                    s.iter_mut().for_each(|v| *v *= scale);
                    for row in s.chunks_mut(t) {
                        softmax_in_place(row);
                    }
                    s
                }
            };
            let oh = ops::matmul(&a, &vh, t, t, dh);
            for i in 0..t {
                o[i * d + h * dh..i * d + (h + 1) * dh].copy_from_slice(&oh[i * dh..(i + 1) * dh]);
            }
            cache.q.push(qh);
            cache.k.push(kh);
            cache.v.push(vh);
            cache.attn.push(a);
        }
        let proj = ops::matmul(&o, &blk.wo, t, d, d);
        let z1: Vec<f64> = cache.input.iter().zip(&proj).map(|(a, b)| a + b).collect();
        let mut hidden = ops::matmul(&z1, &blk.w1, t, d, m);
        for row in hidden.chunks_mut(m) {
            for (v, b) in row.iter_mut().zip(&blk.b1) {
                *v = (*v + b).tanh();
            }
        }
        let mlp = ops::matmul(&hidden, &blk.w2, t, m, d);
        let mut z2 = z1;
        for (i, v) in z2.iter_mut().enumerate() {
            *v += mlp[i] + blk.b2[i % d];
        }
        cache.hidden = hidden;
        (z2, cache)
    }

    /// Returns `(∂/∂ block input, ∂/∂ attention)` given `∂/∂ block output`.
    fn block_backward(&self, b: usize, cache: &BlockCache, dz2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = &self.config;
        let (t, d, dh, m) = (c.tokens(), c.dim, c.head_dim(), c.mlp);
        let blk = &self.blocks[b];
        let dhidden = ops::matmul_nt(dz2, &blk.w2, t, d, m);
        let dpre = ops::tanh_backward(&cache.hidden, &dhidden);
        let mut dz1 = ops::matmul_nt(&dpre, &blk.w1, t, m, d);
        dz1.iter_mut().zip(dz2).for_each(|(a, b)| *a += b);
        let dout = ops::matmul_nt(&dz1, &blk.wo, t, d, d);

        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0; t * d];
        let mut dk = vec![0.0; t * d];
        let mut dv = vec![0.0; t * d];
        let mut dattn = Vec::with_capacity(c.heads * t * t);
        for h in 0..c.heads {
            let doh: Vec<f64> =
                (0..t).flat_map(|i| dout[i * d + h * dh..i * d + (h + 1) * dh].iter().copied()).collect();
            let a = &cache.attn[h];
            let da = ops::matmul_nt(&doh, &cache.v[h], t, dh, t);
            let dvh = ops::matmul_tn(a, &doh, t, t, dh);
            let (dqh, dkh) = if cache.overridden {
                (vec![0.0; t * dh], vec![0.0; t * dh])
            } else {
                let mut ds = vec![0.0; t * t];
                for i in 0..t {
                    let row = i * t..(i + 1) * t;
                    let dot: f64 = a[row.clone()].iter().zip(&da[row.clone()]).map(|(p, g)| p * g).sum();
                    for j in row {
                        ds[j] = a[j] * (da[j] - dot) * scale;
                    }
                }
                (ops::matmul(&ds, &cache.k[h], t, t, dh), ops::matmul_tn(&ds, &cache.q[h], t, t, dh))
            };
            for i in 0..t {
                for j in 0..dh {
                    dq[i * d + h * dh + j] = dqh[i * dh + j];
                    dk[i * d + h * dh + j] = dkh[i * dh + j];
                    dv[i * d + h * dh + j] = dvh[i * dh + j];
                }
            }
            dattn.extend(da);
        }
        let mut dz = dz1;
        for (w, g) in [(&blk.wq, &dq), (&blk.wk, &dk), (&blk.wv, &dv)] {
            let contrib = ops::matmul_nt(g, w, t, d, d);
            dz.iter_mut().zip(contrib).for_each(|(a, b)| *a += b);
        }
        (dz, dattn)
    }

    /// Runs blocks `first..` on tokens `z`; returns final tokens and caches.
    fn run_tokens(
        &self,
        first: usize,
        mut z: Vec<f64>,
        attn_override: Option<(usize, &[f64])>,
    ) -> (Vec<f64>, Vec<BlockCache>) {
        let mut caches = Vec::new();
        for b in first..self.config.blocks {
            let ov = attn_override.and_then(|(ob, a)| (ob == b).then_some(a));
            let (next, cache) = self.block_forward(b, z, ov);
            caches.push(cache);
            z = next;
        }
        (z, caches)
    }

    fn head(&self, tokens: &[f64]) -> Vec<f64> {
        ops::affine(&self.head_w, &self.head_b, &tokens[..self.config.dim])
    }

    fn head_grad(&self, y: usize) -> Vec<f64> {
        let d = self.config.dim;
        let mut g = vec![0.0; self.config.tokens() * d];
        g[..d].copy_from_slice(&self.head_w[y * d..(y + 1) * d]);
        g
    }

    fn check_override(&self, block: usize, attn: &Tensor) -> Result<()> {
        if block >= self.config.blocks {
            return invalid(format!("block {block} out of range"));
        }
        attn.ensure_shape(&self.attention_shape())
    }

    /// Logits with block `block`'s attention replaced by `attn`.
    pub fn logits_with_attention(&self, x: &Tensor, block: usize, attn: &Tensor) -> Result<Vec<f64>> {
        x.ensure_shape(&self.input_shape)?;
        self.check_override(block, attn)?;
        let z0 = self.embed(x.data());
        let (last, _) = self.run_tokens(0, z0, Some((block, attn.data())));
        Ok(self.head(&last))
    }

    /// Attention maps and `∂ f_y / ∂ A_b` for every block, optionally with one
    /// block's attention overridden (its gradient is then taken at the override).
    pub fn attention_trace_with(
        &self,
        x: &Tensor,
        y: usize,
        attn_override: Option<(usize, &Tensor)>,
    ) -> Result<(Vec<f64>, AttentionTrace)> {
        x.ensure_shape(&self.input_shape)?;
        check_class(y, self.config.classes)?;
        if let Some((b, a)) = attn_override {
            self.check_override(b, a)?;
        }
        let z0 = self.embed(x.data());
        let (last, caches) = self.run_tokens(0, z0, attn_override.map(|(b, a)| (b, a.data())));
        let logits = self.head(&last);
        let shape = self.attention_shape();
        let mut grads = vec![Tensor::zeros(&shape); self.config.blocks];
        let mut dz = self.head_grad(y);
        for b in (0..self.config.blocks).rev() {
            let (dprev, da) = self.block_backward(b, &caches[b], &dz);
            grads[b] = Tensor::new(shape.to_vec(), da)?;
            dz = dprev;
        }
        let attentions =
            caches.into_iter().map(|c| Tensor::new(shape.to_vec(), c.attn.concat())).collect::<Result<Vec<_>>>()?;
        Ok((logits, AttentionTrace::new(attentions, grads)?))
    }

    pub fn attention_trace(&self, x: &Tensor, y: usize) -> Result<(Vec<f64>, AttentionTrace)> {
        self.attention_trace_with(x, y, None)
    }

    fn token_shape(&self) -> [usize; 2] {
        [self.config.tokens(), self.config.dim]
    }
}

impl Classifier for TinyAttention {
    fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    fn class_count(&self) -> usize {
        self.config.classes
    }

    fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.forward_from(0, x)
    }
}

impl DifferentiableModel for TinyAttention {
    fn layer_count(&self) -> usize {
        self.config.blocks + 1
    }

    fn layer_shape(&self, l: usize) -> Result<Vec<usize>> {
        check_layer(l, self.layer_count())?;
        Ok(if l == 0 { self.input_shape.to_vec() } else { self.token_shape().to_vec() })
    }

    fn forward(&self, x: &Tensor) -> Result<ForwardPass> {
        x.ensure_shape(&self.input_shape)?;
        let shape = self.token_shape().to_vec();
        let mut reps = vec![x.clone()];
        let mut z = self.embed(x.data());
        reps.push(Tensor::new(shape.clone(), z.clone())?);
        for b in 0..self.config.blocks {
            z = self.block_forward(b, z, None).0;
            reps.push(Tensor::new(shape.clone(), z.clone())?);
        }
        Ok(ForwardPass { logits: self.head(&z), representations: reps })
    }

    fn forward_from(&self, l: usize, r: &Tensor) -> Result<Vec<f64>> {
        r.ensure_shape(&self.layer_shape(l)?)?;
        let (z, first) = if l == 0 { (self.embed(r.data()), 0) } else { (r.data().to_vec(), l - 1) };
        Ok(self.head(&self.run_tokens(first, z, None).0))
    }

    fn grad_wrt_layer(&self, l: usize, r: &Tensor, y: usize) -> Result<Tensor> {
        r.ensure_shape(&self.layer_shape(l)?)?;
        check_class(y, self.config.classes)?;
        let (z, first) = if l == 0 { (self.embed(r.data()), 0) } else { (r.data().to_vec(), l - 1) };
        let (_, caches) = self.run_tokens(first, z, None);
        let mut dz = self.head_grad(y);
        for (i, cache) in caches.iter().enumerate().rev() {
            dz = self.block_backward(first + i, cache, &dz).0;
        }
        if l == 0 {
            dz = self.embed_backward(&dz);
        }
        Tensor::new(r.shape().to_vec(), dz)
    }
}
