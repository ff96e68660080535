//! Seeded synthetic image classification data: one coloured Gaussian blob per
//! class at a class-specific position, plus pixel noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const DEFAULT_CLASSES: usize = 4;

const CLASS_COLORS: [[f64; 3]; 4] = [[1.0, 0.15, 0.15], [0.15, 1.0, 0.15], [0.15, 0.15, 1.0], [0.9, 0.9, 0.1]];

const NOISE_STD: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> &'static str {
        match self {
            Split::Train => "split/train",
            Split::Test => "split/test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub input: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<Item>,
    pub split: Split,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Image geometry for generated items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

fn class_center(class: usize, h: usize, w: usize) -> (f64, f64) {
    let qy = if class.is_multiple_of(2) { 0.3 } else { 0.7 };
    let qx = if (class / 2).is_multiple_of(2) { 0.3 } else { 0.7 };
    (qy * (h as f64 - 1.0), qx * (w as f64 - 1.0))
}

fn color(class: usize, channel: usize) -> f64 {
    CLASS_COLORS[class % CLASS_COLORS.len()][channel % 3]
}

fn render_blob(shape: ImageShape, class: usize, cy: f64, cx: f64, amplitude: f64) -> Tensor {
    let spread = shape.height.min(shape.width) as f64 / 6.0;
    let denom = 2.0 * spread * spread;
    let (h, w) = (shape.height, shape.width);
    Tensor::from_fn(&shape.dims(), |idx| {
        let ch = idx / (h * w);
        let r = (idx / w) % h;
        let c = idx % w;
        let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
        amplitude * color(class, ch) * (-d2 / denom).exp()
    })
}

/// Noise-free, centred exemplar of `class`.
pub fn class_prototype(class: usize, shape: ImageShape) -> Tensor {
    let (cy, cx) = class_center(class, shape.height, shape.width);
    render_blob(shape, class, cy, cx, 1.0)
}

/// Generate `count` labelled items. The split is folded into the seed so the
/// train and test streams never coincide.
pub fn synth_dataset(seed: u64, count: usize, split: Split, shape: ImageShape, classes: usize) -> Result<Dataset> {
    if count == 0 {
        return invalid("dataset count must be >= 1");
    }
    if classes == 0 || classes > CLASS_COLORS.len() {
        return invalid(format!("classes must be in 1..={}, got {classes}", CLASS_COLORS.len()));
    }
    let mut rng = rng::derive(seed, split.tag(), 0);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let items = (0..count)
        .map(|_| {
            let label = rng.random_range(0..classes);
            let (cy, cx) = class_center(label, shape.height, shape.width);
            let jy = rng.random_range(-1.0..=1.0);
            let jx = rng.random_range(-1.0..=1.0);
            let amp = rng.random_range(0.8..1.2);
            let mut input = render_blob(shape, label, cy + jy, cx + jx, amp);
            for v in input.data_mut() {
                *v += noise.sample(&mut rng);
            }
            Item { input, label }
        })
        .collect();
    Ok(Dataset { items, split, seed })
}
