//! Two-layer tanh CNN with global mean pooling and a linear head.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, ConvSpec};
use super::{centroid_head, check_class, check_layer, Classifier, DifferentiableModel, ForwardPass};
use crate::data::{self, ImageShape};
use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self { channels: 3, height: 16, width: 16, hidden1: 6, hidden2: 8, classes: data::DEFAULT_CLASSES }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyCnn {
    config: CnnConfig,
    input_shape: [usize; 3],
    conv1: ConvSpec,
    conv2: ConvSpec,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    head_w: Vec<f64>,
    head_b: Vec<f64>,
}

const LAYERS: usize = 2;

impl TinyCnn {
    /// Seeded model with the default geometry.
    pub fn build(seed: u64) -> Self {
        Self::with_config(seed, CnnConfig::default())
    }

    /// Seeded convolution weights; the head is the nearest-centroid classifier
    /// of the class prototypes' pooled features.
    pub fn with_config(seed: u64, config: CnnConfig) -> Self {
        let mut model = Self::zeroed(config);
        let mut rng = rng::derive(seed, "model/tiny_cnn", 0);
        let fill = |buf: &mut [f64], std: f64, rng: &mut rng::Stream| {
            let dist = Normal::new(0.0, std).expect("positive std");
            buf.iter_mut().for_each(|v| *v = dist.sample(rng));
        };
        fill(&mut model.w1, 1.0 / ((config.channels * 9) as f64).sqrt(), &mut rng);
        fill(&mut model.b1, 0.1, &mut rng);
        fill(&mut model.w2, 1.0 / ((config.hidden1 * 9) as f64).sqrt(), &mut rng);
        fill(&mut model.b2, 0.1, &mut rng);

        let shape = ImageShape { channels: config.channels, height: config.height, width: config.width };
        let features: Vec<Vec<f64>> =
            (0..config.classes).map(|k| model.pooled_features(data::class_prototype(k, shape).data())).collect();
        let (hw, hb) = centroid_head(&features);
        model.head_w = hw;
        model.head_b = hb;
        model
    }

    /// Every parameter zero.
    pub fn zeroed(config: CnnConfig) -> Self {
        let conv1 = ConvSpec { cin: config.channels, cout: config.hidden1, stride: 1 };
        let conv2 = ConvSpec { cin: config.hidden1, cout: config.hidden2, stride: 2 };
        Self {
            config,
            input_shape: [config.channels, config.height, config.width],
            conv1,
            conv2,
            w1: vec![0.0; conv1.weight_len()],
            b1: vec![0.0; conv1.cout],
            w2: vec![0.0; conv2.weight_len()],
            b2: vec![0.0; conv2.cout],
            head_w: vec![0.0; config.classes * config.hidden2],
            head_b: vec![0.0; config.classes],
        }
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    /// Head weights, `classes x hidden2`, row-major.
    pub fn head_weight(&self) -> &[f64] {
        &self.head_w
    }

    pub fn set_head(&mut self, weight: Vec<f64>, bias: Vec<f64>) {
        assert_eq!(weight.len(), self.head_w.len());
        assert_eq!(bias.len(), self.head_b.len());
        self.head_w = weight;
        self.head_b = bias;
    }

    fn dims(&self, l: usize) -> (usize, usize, usize) {
        let (h, w) = (self.config.height, self.config.width);
        match l {
            0 => (self.config.channels, h, w),
            1 => (self.config.hidden1, h, w),
            _ => {
                let (oh, ow) = self.conv2.out_dims(h, w);
                (self.config.hidden2, oh, ow)
            }
        }
    }

    fn pooled_features(&self, x: &[f64]) -> Vec<f64> {
        let reps = self.run_from(0, x.to_vec());
        ops::global_mean_pool(&reps[LAYERS], self.config.hidden2)
    }

    /// Representations `l..=L`, starting from `r` at layer `l`.
    fn run_from(&self, l: usize, r: Vec<f64>) -> Vec<Vec<f64>> {
        let (h, w) = (self.config.height, self.config.width);
        let mut reps = vec![Vec::new(); LAYERS + 1];
        reps[l] = r;
        if l == 0 {
            let mut a = self.conv1.forward(&self.w1, &self.b1, &reps[0], h, w);
            ops::tanh_in_place(&mut a);
            reps[1] = a;
        }
        if l <= 1 {
            let mut a = self.conv2.forward(&self.w2, &self.b2, &reps[1], h, w);
            ops::tanh_in_place(&mut a);
            reps[2] = a;
        }
        reps
    }

    fn head(&self, last: &[f64]) -> Vec<f64> {
        let pooled = ops::global_mean_pool(last, self.config.hidden2);
        ops::affine(&self.head_w, &self.head_b, &pooled)
    }

    fn to_tensor(&self, l: usize, v: Vec<f64>) -> Tensor {
        let (c, h, w) = self.dims(l);
        Tensor::new(vec![c, h, w], v).expect("layer dims")
    }
}

impl Classifier for TinyCnn {
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

impl DifferentiableModel for TinyCnn {
    fn layer_count(&self) -> usize {
        LAYERS
    }

    fn layer_shape(&self, l: usize) -> Result<Vec<usize>> {
        check_layer(l, LAYERS)?;
        let (c, h, w) = self.dims(l);
        Ok(vec![c, h, w])
    }

    fn forward(&self, x: &Tensor) -> Result<ForwardPass> {
        x.ensure_shape(&self.input_shape)?;
        let reps = self.run_from(0, x.data().to_vec());
        let logits = self.head(&reps[LAYERS]);
        let representations = reps.into_iter().enumerate().map(|(l, v)| self.to_tensor(l, v)).collect();
        Ok(ForwardPass { representations, logits })
    }

    fn forward_from(&self, l: usize, r: &Tensor) -> Result<Vec<f64>> {
        r.ensure_shape(&self.layer_shape(l)?)?;
        let reps = self.run_from(l, r.data().to_vec());
        Ok(self.head(&reps[LAYERS]))
    }

    fn grad_wrt_layer(&self, l: usize, r: &Tensor, y: usize) -> Result<Tensor> {
        r.ensure_shape(&self.layer_shape(l)?)?;
        check_class(y, self.config.classes)?;
        let reps = self.run_from(l, r.data().to_vec());
        let (h, w) = (self.config.height, self.config.width);
        let hid2 = self.config.hidden2;
        let dpooled = &self.head_w[y * hid2..(y + 1) * hid2];
        let per = reps[LAYERS].len() / hid2;
        let mut grad = ops::global_mean_pool_backward(dpooled, per);
        if l <= 1 {
            let dpre = ops::tanh_backward(&reps[2], &grad);
            grad = self.conv2.backward_input(&self.w2, &dpre, h, w);
        }
        if l == 0 {
            let dpre = ops::tanh_backward(&reps[1], &grad);
            grad = self.conv1.backward_input(&self.w1, &dpre, h, w);
        }
        Ok(self.to_tensor(l, grad))
    }
}
