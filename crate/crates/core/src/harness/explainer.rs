//! Turning a baseline type into explanation maps for one instance.

use crate::attribution::{
    attention_path_map, average_maps, bee_map_cnn, bee_map_vit, integrated_gradients, layer_map, ExplanationMap,
    Integrand,
};
use crate::baselines::{sample_baseline, softmax_normalize_baseline, BaselineConfig, BaselineDraw, BaselineType};
use crate::error::{invalid, Result};
use crate::model::{DifferentiableModel, ReferenceModel};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Where the integration path runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathSpace {
    /// Intermediate representations (CNN layers or attention blocks).
    Representation,
    /// The input image itself.
    Input,
}

/// Map builder bound to one model, one set of layers and one train-data pool.
pub struct Explainer<'a> {
    model: &'a ReferenceModel,
    layers: Vec<usize>,
    steps: usize,
    baselines: BaselineConfig,
    train_average: usize,
    space: PathSpace,
    /// Train-data baselines, one list per entry of `layers`.
    pools: Vec<Vec<Tensor>>,
}

/// Default layer set: the last CNN representation or the last attention block.
pub fn default_layers(model: &ReferenceModel) -> Vec<usize> {
    match model {
        ReferenceModel::Cnn(m) => vec![m.layer_count()],
        ReferenceModel::Attention(m) => vec![m.block_count()],
    }
}

/// Check that every layer can carry a baseline path.
pub fn check_layers(model: &ReferenceModel, layers: &[usize]) -> Result<()> {
    if layers.is_empty() {
        return invalid("layer set must not be empty");
    }
    for &l in layers {
        let ok = match model {
            ReferenceModel::Cnn(m) => l <= m.layer_count(),
            ReferenceModel::Attention(m) => (1..=m.block_count()).contains(&l),
        };
        if !ok {
            return invalid(format!("layer {l} is out of range for this model"));
        }
    }
    Ok(())
}

impl<'a> Explainer<'a> {
    pub fn new(
        model: &'a ReferenceModel,
        layers: Vec<usize>,
        steps: usize,
        baselines: BaselineConfig,
        train_average: usize,
        space: PathSpace,
        train_inputs: &[Tensor],
    ) -> Result<Self> {
        if steps == 0 || train_average == 0 {
            return invalid("steps and train_average must be >= 1");
        }
        let layers = match space {
            PathSpace::Input => vec![0],
            PathSpace::Representation => {
                check_layers(model, &layers)?;
                layers
            }
        };
        let mut me = Self { model, layers, steps, baselines, train_average, space, pools: Vec::new() };
        me.pools =
            me.layers.iter().map(|&l| train_inputs.iter().map(|x| me.target(l, x)).collect()).collect::<Result<_>>()?;
        Ok(me)
    }

    pub fn model(&self) -> &'a ReferenceModel {
        self.model
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn space(&self) -> PathSpace {
        self.space
    }

    /// The tensor a baseline is drawn around: image, representation or attention.
    fn target(&self, layer: usize, x: &Tensor) -> Result<Tensor> {
        match (self.space, self.model) {
            (PathSpace::Input, _) => Ok(x.clone()),
            (PathSpace::Representation, ReferenceModel::Cnn(m)) => m.representation(layer, x),
            (PathSpace::Representation, ReferenceModel::Attention(m)) => {
                let (_, trace) = m.attention_trace(x, 0)?;
                Ok(trace.attentions[layer - 1].clone())
            }
        }
    }

    fn path_map(&self, layer: usize, x: &Tensor, y: usize, draw: &BaselineDraw) -> Result<ExplanationMap> {
        match (self.space, self.model) {
            (PathSpace::Input, m) => {
                let mut map = integrated_gradients(m, x, &draw.tensor, y, self.steps)?;
                map.baseline = Some(draw.kind);
                map.params = vec![draw.params.clone()];
                Ok(map)
            }
            (PathSpace::Representation, ReferenceModel::Cnn(m)) => bee_map_cnn(m, layer, x, draw, y, self.steps),
            (PathSpace::Representation, ReferenceModel::Attention(m)) => bee_map_vit(m, layer, x, draw, y, self.steps),
        }
    }

    fn draw(&self, kind: BaselineType, target: &Tensor, pool: &[Tensor], rng: &mut Stream) -> Result<BaselineDraw> {
        let draw = sample_baseline(kind, target, rng, Some(pool), &self.baselines)?;
        let attention = matches!((self.space, self.model), (PathSpace::Representation, ReferenceModel::Attention(_)));
        if attention && kind != BaselineType::TrainData {
            softmax_normalize_baseline(draw)
        } else {
            Ok(draw)
        }
    }

    /// One map per layer for a baseline of type `kind`. Train-data draws average
    /// `train_average` maps built from distinct pool members.
    pub fn build(&self, x: &Tensor, y: usize, kind: BaselineType, rng: &mut Stream) -> Result<Vec<ExplanationMap>> {
        let mut out = Vec::with_capacity(self.layers.len());
        for (&layer, pool) in self.layers.iter().zip(&self.pools) {
            let target = self.target(layer, x)?;
            let map = if kind == BaselineType::TrainData {
                let maps = (0..self.train_average)
                    .map(|_| {
                        let draw = self.draw(kind, &target, pool, rng)?;
                        self.path_map(layer, x, y, &draw)
                    })
                    .collect::<Result<Vec<_>>>()?;
                average_maps(&maps)?
            } else {
                let draw = self.draw(kind, &target, pool, rng)?;
                self.path_map(layer, x, y, &draw)?
            };
            out.push(map);
        }
        Ok(out)
    }

    /// Integrated gradients from the black image.
    pub fn black_ig(&self, x: &Tensor, y: usize) -> Result<ExplanationMap> {
        integrated_gradients(self.model, x, &Tensor::zeros(x.shape()), y, self.steps)
    }

    /// Integrated gradients at the deepest configured layer, starting from the
    /// black image's representation there.
    pub fn activation_ig(&self, x: &Tensor, y: usize) -> Result<ExplanationMap> {
        let layer = match self.space {
            PathSpace::Representation => *self.layers.iter().max().expect("non-empty layers"),
            PathSpace::Input => default_layers(self.model)[0],
        };
        let black = Tensor::zeros(x.shape());
        let map = match self.model {
            ReferenceModel::Cnn(m) => {
                let base = m.representation(layer, &black)?;
                layer_map(m, layer, x, &base, y, self.steps, Integrand::Gradient)?
            }
            ReferenceModel::Attention(m) => {
                let (_, trace) = m.attention_trace(&black, y)?;
                attention_path_map(m, layer, x, &trace.attentions[layer - 1], y, self.steps, Integrand::Gradient)?
            }
        };
        ExplanationMap::new(map, layer, None)
    }
}
