//! Pretraining, per-instance inference and the comparison experiments.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Method, ModelKind, RunConfig};
use super::explainer::{check_layers, default_layers, Explainer, PathSpace};
use super::scorer::{MapScorer, MetricScorer, RiggedScorer};
use crate::attribution::{best_index, select_best, ExplanationMap, MapPool};
use crate::bandit::{init_state, uniform_type, win_rate_table, BanditState, BetaArms, Context, WinRecord};
use crate::baselines::BaselineType;
use crate::data::{synth_dataset, Dataset, ImageShape, Split};
use crate::error::{invalid, BeeError, Result};
use crate::metrics::MetricId;
use crate::model::{Classifier, ContextModel, ContextNetwork, ReferenceModel, TinyAttention, TinyCnn};
use crate::rng::{derive, derive_seed, Stream};
use crate::tensor::Tensor;

/// Model, data and derived seeds for one configuration.
pub struct Workbench {
    pub cfg: RunConfig,
    pub model: ReferenceModel,
    pub train: Dataset,
    pub test: Dataset,
    pub layers: Vec<usize>,
    pub model_seed: u64,
}

/// Pretrained bandit states sharing one context network.
#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub model_seed: u64,
    pub theta: Vec<f64>,
    pub states: BTreeMap<MetricId, BanditState>,
}

/// Per-epoch, per-metric pretraining summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub metric: MetricId,
    pub mean_reward: f64,
    pub mean_score: f64,
    pub updates: usize,
    pub skipped: usize,
}

/// One round of per-instance sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub round: usize,
    pub baseline: BaselineType,
    pub score: f64,
    /// `+1` or `-1`; zero for strategies that never compute a reward.
    pub reward: f64,
    /// Best score so far, direction-adjusted comparison.
    pub best: f64,
}

/// Outcome of explaining one instance.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub map: ExplanationMap,
    pub trials: Vec<Trial>,
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub metric: MetricId,
    pub direction: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Mean best-so-far curve of one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    pub strategy: Method,
    pub mean: Vec<f64>,
}

impl Workbench {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model_seed = derive_seed(cfg.seed, "model", 0);
        let model = match cfg.model {
            ModelKind::TinyCnn => ReferenceModel::Cnn(TinyCnn::build(model_seed)),
            ModelKind::TinyAttention => ReferenceModel::Attention(TinyAttention::build(model_seed)),
        };
        let layers = if cfg.layers.is_empty() { default_layers(&model) } else { cfg.layers.clone() };
        check_layers(&model, &layers).map_err(|e| BeeError::Config(e.to_string()))?;
        let [c, h, w] = model.input_shape() else {
            return invalid("reference model input must be rank 3");
        };
        let shape = ImageShape { channels: *c, height: *h, width: *w };
        let data_seed = derive_seed(cfg.seed, "data", 0);
        let classes = model.class_count();
        let train = synth_dataset(data_seed, cfg.pretrain_items, Split::Train, shape, classes)?;
        let test = synth_dataset(data_seed, cfg.test_items, Split::Test, shape, classes)?;
        Ok(Self { cfg, model, train, test, layers, model_seed })
    }

    /// Freshly initialized context network.
    pub fn context_network(&self) -> Result<ContextNetwork> {
        ContextNetwork::build(derive_seed(self.cfg.seed, "context", 0), self.model.input_shape(), self.cfg.context_dim)
    }

    /// Context network carrying pretrained parameters.
    pub fn restore_context(&self, theta: &[f64]) -> Result<ContextNetwork> {
        ContextNetwork::from_params(self.model.input_shape(), self.cfg.context_dim, theta.to_vec())
    }

    pub fn scorer(&self, metric: MetricId) -> Box<dyn MapScorer + '_> {
        match self.cfg.rigged {
            Some(r) => Box::new(RiggedScorer { metric, winner: r.winner }),
            None => Box::new(MetricScorer { metric, model: &self.model, config: self.cfg.metric_config }),
        }
    }

    pub fn explainer(&self, space: PathSpace) -> Result<Explainer<'_>> {
        let pool: Vec<Tensor> = self.train.items[..self.cfg.train_pool].iter().map(|i| i.input.clone()).collect();
        Explainer::new(
            &self.model,
            self.layers.clone(),
            self.cfg.steps,
            self.cfg.baseline,
            self.cfg.train_average,
            space,
            &pool,
        )
    }

    /// Class used for maps and metrics on a test or train item.
    pub fn class_of(&self, x: &Tensor, label: usize) -> Result<usize> {
        self.cfg.class_ref.resolve(&self.model, x, label)
    }

    /// Fresh states for every configured metric.
    pub fn fresh(&self) -> Result<Pretrained> {
        Ok(Pretrained {
            model_seed: self.model_seed,
            theta: self.context_network()?.params().to_vec(),
            states: self.cfg.metrics.iter().map(|&m| (m, init_state(m, self.cfg.context_dim))).collect(),
        })
    }

    /// Check that a loaded bundle belongs to this configuration.
    pub fn check_pretrained(&self, p: &Pretrained) -> Result<()> {
        if p.model_seed != self.model_seed {
            return Err(BeeError::Snapshot(format!(
                "snapshot model seed {} does not match configured model seed {}",
                p.model_seed, self.model_seed
            )));
        }
        self.restore_context(&p.theta).map_err(|e| BeeError::Snapshot(e.to_string()))?;
        for (m, s) in &p.states {
            s.validate()?;
            if s.context_dim() != self.cfg.context_dim {
                return Err(BeeError::Snapshot(format!(
                    "{m} arms have dimension {}, configuration expects {}",
                    s.context_dim(),
                    self.cfg.context_dim
                )));
            }
        }
        Ok(())
    }

    fn state_for<'p>(&self, p: &'p Pretrained, metric: MetricId) -> Result<&'p BanditState> {
        p.states.get(&metric).ok_or_else(|| BeeError::Snapshot(format!("snapshot has no state for metric {metric}")))
    }

    /// Run every configured metric's bandit once per training item per epoch.
    pub fn pretrain(&self) -> Result<(Pretrained, Vec<EpochRecord>)> {
        let mut bundle = self.fresh()?;
        let mut net = self.context_network()?;
        let explainer = self.explainer(PathSpace::Representation)?;
        let scorers: Vec<_> = self.cfg.metrics.iter().map(|&m| self.scorer(m)).collect();
        let mut rng = derive(self.cfg.seed, "pretrain", 0);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut log = Vec::new();
        for epoch in 0..self.cfg.epochs {
            order.shuffle(&mut derive(self.cfg.seed, "epoch", epoch as u64));
            let mut sums: BTreeMap<MetricId, (f64, f64, usize, usize)> = BTreeMap::new();
            for &i in &order {
                let item = &self.train.items[i];
                let class = self.class_of(&item.input, item.label)?;
                for scorer in &scorers {
                    let metric = scorer.metric();
                    let state = bundle.states.get_mut(&metric).expect("state per metric");
                    let entry = sums.entry(metric).or_default();
                    let c = net.embed(&item.input)?;
                    let kind = state.thompson_select(&c, &mut rng);
                    let score = match explainer
                        .build(&item.input, class, kind, &mut rng)
                        .and_then(|maps| best_score(&maps, &item.input, class, scorer.as_ref(), &mut rng))
                    {
                        Ok(s) => s,
                        Err(BeeError::NonFinite(what)) => {
                            log::warn!("epoch {epoch}, item {i}, {metric}: skipped, non-finite {what}");
                            entry.3 += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    let reward = state.extract_reward(score, &mut rng)?;
                    state.update(
                        kind,
                        reward.y,
                        Context::Learned { model: &mut net, x: &item.input, train: true },
                        &self.cfg.solver,
                    )?;
                    entry.0 += reward.y;
                    entry.1 += score;
                    entry.2 += 1;
                }
            }
            for (metric, (r, s, n, skipped)) in sums {
                let d = n.max(1) as f64;
                log.push(EpochRecord { epoch, metric, mean_reward: r / d, mean_score: s / d, updates: n, skipped });
            }
        }
        bundle.theta = net.params().to_vec();
        Ok((bundle, log))
    }

    /// Draw `draws` baselines from the frozen state, build and score every map,
    /// and keep the best. Draws run in parallel with per-draw streams.
    pub fn explain_pbee(
        &self,
        p: &Pretrained,
        metric: MetricId,
        x: &Tensor,
        class: usize,
        draws: usize,
        seed: u64,
    ) -> Result<(Explanation, MapPool, Vec<f64>)> {
        if draws == 0 {
            return invalid("draw count must be >= 1");
        }
        let state = self.state_for(p, metric)?;
        let net = self.restore_context(&p.theta)?;
        let c = net.embed(x)?;
        let explainer = self.explainer(PathSpace::Representation)?;
        let scorer = self.scorer(metric);
        let results: Vec<(BaselineType, Vec<ExplanationMap>, Vec<f64>)> = (0..draws)
            .into_par_iter()
            .map(|t| {
                let mut rng = derive(seed, "draw", t as u64);
                let kind = state.thompson_select(&c, &mut rng);
                let maps = explainer.build(x, class, kind, &mut rng)?;
                let scores = maps.iter().map(|m| scorer.score(x, class, m, &mut rng)).collect::<Result<Vec<_>>>()?;
                Ok((kind, maps, scores))
            })
            .collect::<Result<_>>()?;
        let direction = metric.direction();
        let mut pool = MapPool::new(self.layers.clone());
        let mut scores = Vec::new();
        let mut trials = Vec::new();
        for (round, (kind, maps, s)) in results.into_iter().enumerate() {
            let local = s[best_index(&s, direction)?];
            let best =
                trials.last().map_or(local, |t: &Trial| if direction.better(local, t.best) { local } else { t.best });
            trials.push(Trial { round, baseline: kind, score: local, reward: 0.0, best });
            maps.into_iter().for_each(|m| pool.push(m));
            scores.extend(s);
        }
        let map = select_best(&pool, &scores, direction)?;
        Ok((Explanation { map, trials }, pool, scores))
    }

    /// Sequential rounds of one strategy on one instance, keeping the best map.
    /// Bandit-driven strategies refine a private copy of the pretrained state.
    #[allow(clippy::too_many_arguments)]
    pub fn run_trials(
        &self,
        method: Method,
        p: Option<&Pretrained>,
        metric: MetricId,
        x: &Tensor,
        class: usize,
        rounds: usize,
        rng: &mut Stream,
    ) -> Result<Explanation> {
        if rounds == 0 {
            return invalid("round count must be >= 1");
        }
        let space = if method == Method::IgFbee { PathSpace::Input } else { PathSpace::Representation };
        let explainer = self.explainer(space)?;
        let scorer = self.scorer(metric);
        let direction = metric.direction();
        let mut chooser = match method {
            Method::Fbee | Method::IgFbee | Method::Pbee => {
                let p = p.ok_or_else(|| BeeError::Snapshot(format!("{method} needs a pretrained snapshot")))?;
                let mut state = self.state_for(p, metric)?.clone();
                state.finetune = true;
                let keep = state.history.len().saturating_sub(self.cfg.history_tail);
                state.history.drain(..keep);
                let c = self.restore_context(&p.theta)?.embed(x)?;
                Chooser::Bandit { state, c, learn: method != Method::Pbee }
            }
            Method::Nbee => Chooser::Uniform,
            Method::Ncbee => Chooser::Beta(BetaArms::fresh(BaselineType::ALL.len())),
            Method::Single(t) => Chooser::Single(t),
            Method::Ig | Method::ActIg => return invalid(format!("{method} does not sample baselines")),
        };
        let mut history = Vec::new();
        let mut best: Option<ExplanationMap> = None;
        let mut trials = Vec::with_capacity(rounds);
        for round in 0..rounds {
            let kind = chooser.choose(rng);
            let maps = explainer.build(x, class, kind, rng)?;
            let scores = maps.iter().map(|m| scorer.score(x, class, m, rng)).collect::<Result<Vec<_>>>()?;
            let i = best_index(&scores, direction)?;
            let score = scores[i];
            let reward = chooser.learn(kind, metric, score, &mut history, rng, &self.cfg.solver)?;
            if best.as_ref().is_none_or(|b| direction.better(score, b.score.expect("scored"))) {
                best = Some(maps[i].clone().with_score(score));
            }
            trials.push(Trial {
                round,
                baseline: kind,
                score,
                reward,
                best: best.as_ref().and_then(|b| b.score).expect("scored"),
            });
        }
        Ok(Explanation { map: best.expect("at least one round"), trials })
    }

    /// Explain one instance with `method`, using `rounds` draws for sampling methods.
    pub fn explain(
        &self,
        method: Method,
        p: Option<&Pretrained>,
        metric: MetricId,
        x: &Tensor,
        class: usize,
        rounds: usize,
        seed: u64,
    ) -> Result<Explanation> {
        let scorer = self.scorer(metric);
        let fixed = |map: ExplanationMap| -> Result<Explanation> {
            let mut rng = derive(seed, "fixed", 0);
            let score = scorer.score(x, class, &map, &mut rng)?;
            Ok(Explanation { map: map.with_score(score), trials: Vec::new() })
        };
        match method {
            Method::Ig => fixed(self.explainer(PathSpace::Representation)?.black_ig(x, class)?),
            Method::ActIg => fixed(self.explainer(PathSpace::Representation)?.activation_ig(x, class)?),
            Method::Pbee => {
                let p = p.ok_or_else(|| BeeError::Snapshot("pbee needs a pretrained snapshot".into()))?;
                Ok(self.explain_pbee(p, metric, x, class, rounds, seed)?.0)
            }
            _ => self.run_trials(method, p, metric, x, class, rounds, &mut derive(seed, "trials", 0)),
        }
    }

    /// Mean best-so-far curve per strategy over the test split, on the report scale.
    pub fn convergence_experiment(&self, p: Option<&Pretrained>, metric: MetricId) -> Result<Vec<CurveSeries>> {
        let iters = self.cfg.iterations;
        let scale = metric.report_scale();
        self.cfg
            .strategies
            .iter()
            .map(|&strategy| {
                let tag = format!("curves/{strategy}");
                let curves: Vec<Vec<f64>> = (0..self.test.len())
                    .into_par_iter()
                    .map(|i| {
                        let item = &self.test.items[i];
                        let class = self.class_of(&item.input, item.label)?;
                        let seed = derive_seed(self.cfg.seed, &tag, i as u64);
                        let e = self.explain(strategy, p, metric, &item.input, class, iters, seed)?;
                        Ok(e.trials.iter().map(|t| t.best).collect())
                    })
                    .collect::<Result<_>>()?;
                let mean = (0..iters)
                    .map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / curves.len() as f64 * scale)
                    .collect();
                Ok(CurveSeries { strategy, mean })
            })
            .collect()
    }

    /// Mean selected score per method and metric over the test split, on the report scale.
    pub fn evaluate_suite(&self, p: Option<&Pretrained>) -> Result<Vec<ResultRow>> {
        let mut rows = Vec::new();
        for &method in &self.cfg.methods {
            for &metric in &self.cfg.metrics {
                let tag = format!("eval/{method}/{metric}");
                let values: Vec<f64> = (0..self.test.len())
                    .into_par_iter()
                    .map(|i| {
                        let item = &self.test.items[i];
                        let class = self.class_of(&item.input, item.label)?;
                        let seed = derive_seed(self.cfg.seed, &tag, i as u64);
                        let e = self.explain(method, p, metric, &item.input, class, self.cfg.draws, seed)?;
                        Ok(e.map.score.expect("scored map") * metric.report_scale())
                    })
                    .collect::<Result<_>>()?;
                let (mean, stderr) = mean_stderr(&values);
                rows.push(ResultRow {
                    method,
                    metric,
                    direction: metric.direction().label().to_string(),
                    mean,
                    stderr,
                    n: values.len(),
                });
            }
        }
        Ok(rows)
    }

    /// Baseline type of the selected pBEE map for every test instance and metric.
    pub fn win_log(&self, p: &Pretrained) -> Result<Vec<WinRecord>> {
        let mut log = Vec::new();
        for &metric in &self.cfg.metrics {
            let tag = format!("wins/{metric}");
            let winners: Vec<BaselineType> = (0..self.test.len())
                .into_par_iter()
                .map(|i| {
                    let item = &self.test.items[i];
                    let class = self.class_of(&item.input, item.label)?;
                    let seed = derive_seed(self.cfg.seed, &tag, i as u64);
                    let (e, _, _) = self.explain_pbee(p, metric, &item.input, class, self.cfg.draws, seed)?;
                    e.map.baseline.ok_or_else(|| BeeError::InvalidArgument("selected map has no baseline type".into()))
                })
                .collect::<Result<_>>()?;
            log.extend(winners.into_iter().map(|winner| WinRecord { metric, winner }));
        }
        Ok(log)
    }

    pub fn win_rates(&self, p: &Pretrained) -> Result<BTreeMap<MetricId, [f64; 5]>> {
        win_rate_table(&self.win_log(p)?)
    }
}

fn best_score(
    maps: &[ExplanationMap],
    x: &Tensor,
    class: usize,
    scorer: &dyn MapScorer,
    rng: &mut Stream,
) -> Result<f64> {
    let scores = maps.iter().map(|m| scorer.score(x, class, m, rng)).collect::<Result<Vec<_>>>()?;
    Ok(scores[best_index(&scores, scorer.metric().direction())?])
}

/// Sample mean and standard error of the mean (zero for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

enum Chooser {
    Bandit { state: BanditState, c: Vec<f64>, learn: bool },
    Uniform,
    Beta(BetaArms),
    Single(BaselineType),
}

impl Chooser {
    fn choose(&self, rng: &mut Stream) -> BaselineType {
        match self {
            Chooser::Bandit { state, c, .. } => state.thompson_select(c, rng),
            Chooser::Uniform => uniform_type(rng),
            Chooser::Beta(b) => BaselineType::ALL[b.select(rng)],
            Chooser::Single(t) => *t,
        }
    }

    fn learn(
        &mut self,
        kind: BaselineType,
        metric: MetricId,
        score: f64,
        history: &mut Vec<f64>,
        rng: &mut Stream,
        solver: &crate::bandit::SolverConfig,
    ) -> Result<f64> {
        match self {
            Chooser::Bandit { state, c, learn: true } => {
                let r = state.extract_reward(score, rng)?;
                state.update(kind, r.y, Context::Fixed(c), solver)?;
                Ok(r.y)
            }
            Chooser::Beta(b) => {
                let r = crate::bandit::extract_reward(metric.kind(), metric.direction(), score, history, rng)?;
                b.record(kind.index(), &r);
                Ok(r.y)
            }
            _ => Ok(0.0),
        }
    }
}
