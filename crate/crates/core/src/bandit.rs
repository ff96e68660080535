//! Contextual Thompson sampling over baseline types, plus the non-contextual
//! and uniform ablations and the post-hoc analysis helpers.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::BaselineType;
use crate::error::{invalid, BeeError, Result};
use crate::metrics::{Direction, MetricId, RewardKind};
use crate::model::ContextModel;
use crate::rng::Stream;
use crate::tensor::Tensor;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Diagonal Gaussian posterior over one arm's reward hyperplane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub g: Vec<f64>,
    pub q: Vec<f64>,
}

impl ArmState {
    pub fn fresh(k: usize) -> Self {
        Self { g: vec![0.0; k], q: vec![1.0; k] }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.g.len() != self.q.len() {
            return invalid("arm mean and precision lengths differ");
        }
        if self.g.iter().chain(&self.q).any(|v| !v.is_finite()) {
            return Err(BeeError::NonFinite("arm parameters".into()));
        }
        if self.q.iter().any(|&v| v <= 0.0) {
            return invalid("arm precision must be elementwise positive");
        }
        Ok(())
    }

    /// `c · w` for one posterior draw `w ~ N(g, diag(1/q))`.
    pub fn sample_logit(&self, c: &[f64], rng: &mut Stream) -> f64 {
        self.g
            .iter()
            .zip(&self.q)
            .zip(c)
            .map(|((g, q), ci)| {
                let z: f64 = StandardNormal.sample(rng);
                ci * (g + z / q.sqrt())
            })
            .sum()
    }
}

/// Index of the largest value; exact ties are broken uniformly with `rng`.
fn argmax_random_ties(values: &[f64], rng: &mut Stream) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..values.len()).filter(|&i| values[i] == best).collect();
    if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.random_range(0..tied.len())]
    }
}

/// One Thompson draw per arm, returning the arm with the largest sampled logit.
///
/// The sigmoid is monotone, so ranking raw logits avoids saturation ties.
pub fn thompson_pick(arms: &[ArmState], c: &[f64], rng: &mut Stream) -> usize {
    let logits: Vec<f64> = arms.iter().map(|a| a.sample_logit(c, rng)).collect();
    argmax_random_ties(&logits, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    /// `+1` or `-1`.
    pub y: f64,
    /// Success probability used for continuous metrics.
    pub h: Option<f64>,
}

impl Reward {
    pub fn is_success(&self) -> bool {
        self.y > 0.0
    }
}

/// Fraction of `history` strictly worse than `score`, counting ties as half.
pub fn normalized_rank(direction: Direction, score: f64, history: &[f64]) -> f64 {
    if history.is_empty() {
        return 0.5;
    }
    let s = direction.adjust(score);
    let mut worse = 0.0;
    for &past in history {
        let p = direction.adjust(past);
        if p < s {
            worse += 1.0;
        } else if p == s {
            worse += 0.5;
        }
    }
    worse / history.len().max(1) as f64
}

/// Turn a metric score into a ±1 reward. Continuous scores are ranked against
/// `history` and then appended to it.
pub fn extract_reward(
    kind: RewardKind,
    direction: Direction,
    score: f64,
    history: &mut Vec<f64>,
    rng: &mut Stream,
) -> Result<Reward> {
    if !score.is_finite() {
        return Err(BeeError::NonFinite("metric score".into()));
    }
    Ok(match kind {
        RewardKind::Binary => Reward { y: if direction.adjust(score) > 0.0 { 1.0 } else { -1.0 }, h: None },
        RewardKind::Continuous => {
            let h = normalized_rank(direction, score, history);
            history.push(score);
            let y = if rng.random_bool(h) { 1.0 } else { -1.0 };
            Reward { y, h: Some(h) }
        }
    })
}

/// Budget for the joint mean/context optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Gradient-descent step for the context parameters.
    pub theta_lr: f64,
    /// Context-parameter steps per update.
    pub theta_steps: usize,
    /// Cap on mean iterations.
    pub max_iters: usize,
    /// Stop once the mean gradient norm falls below this.
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { theta_lr: 3e-5, theta_steps: 25, max_iters: 500, tol: 1e-6 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_lr >= 0.0 && self.theta_lr.is_finite()) {
            return Err(BeeError::Config("theta_lr must be finite and >= 0".into()));
        }
        if self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(BeeError::Config("max_iters must be >= 1 and tol > 0".into()));
        }
        Ok(())
    }
}

/// Where the context vector comes from during an update.
pub enum Context<'a> {
    Fixed(&'a [f64]),
    Learned {
        model: &'a mut dyn ContextModel,
        x: &'a Tensor,
        /// Whether θ takes gradient steps.
        train: bool,
    },
}

impl Context<'_> {
    fn value(&self) -> Result<Vec<f64>> {
        match self {
            Context::Fixed(c) => Ok(c.to_vec()),
            Context::Learned { model, x, .. } => model.embed(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    /// Context after the update, used by the precision step.
    pub context: Vec<f64>,
}

fn objective(u: &[f64], arm: &ArmState, c: &[f64], y: f64) -> f64 {
    let z = y * dot(u, c);
    let nll = if z >= 0.0 { (-z).exp().ln_1p() } else { -z + z.exp().ln_1p() };
    let prior: f64 = u.iter().zip(&arm.g).zip(&arm.q).map(|((ui, gi), qi)| qi * (ui - gi).powi(2)).sum();
    nll + 0.5 * prior
}

/// Minimize `-log σ(y u·c_θ) + ½ Σ q (u - g)²` over `u` (and θ when trainable),
/// then set `g ← u*`.
///
/// The mean uses diagonally preconditioned descent with curvature bound
/// `q_i + |c|²/4`, so each step decreases the objective. θ takes
/// `theta_steps` plain gradient steps interleaved with the first iterations.
pub fn map_update(arm: &mut ArmState, y: f64, mut ctx: Context<'_>, cfg: &SolverConfig) -> Result<UpdateOutcome> {
    if y != 1.0 && y != -1.0 {
        return invalid(format!("reward must be +1 or -1, got {y}"));
    }
    let mut c = ctx.value()?;
    if c.len() != arm.dim() {
        return invalid(format!("context length {} does not match arm dimension {}", c.len(), arm.dim()));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(BeeError::NonFinite("context".into()));
    }
    let mut u = arm.g.clone();
    let mut theta_left = match &ctx {
        Context::Learned { train: true, model, .. } if !model.params().is_empty() => cfg.theta_steps,
        _ => 0,
    };
    let mut best = (objective(&u, arm, &c, y), u.clone());
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let z = y * dot(&u, &c);
        let pull = y * sigmoid(-z);
        let grad_u: Vec<f64> = (0..u.len()).map(|i| -pull * c[i] + arm.q[i] * (u[i] - arm.g[i])).collect();
        let norm = grad_u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < cfg.tol && theta_left == 0 {
            converged = true;
            break;
        }
        if theta_left > 0 {
            if let Context::Learned { model, x, .. } = &mut ctx {
                let upstream: Vec<f64> = u.iter().map(|ui| -pull * ui).collect();
                let (_, grad_theta) = model.embed_vjp(x, &upstream)?;
                for (p, g) in model.params_mut().iter_mut().zip(&grad_theta) {
                    *p -= cfg.theta_lr * g;
                }
            }
            theta_left -= 1;
        }
        let c2: f64 = c.iter().map(|v| v * v).sum();
        for i in 0..u.len() {
            u[i] -= grad_u[i] / (arm.q[i] + 0.25 * c2);
        }
        if matches!(ctx, Context::Learned { .. }) && (theta_left > 0 || iterations <= cfg.theta_steps) {
            c = ctx.value()?;
        }
        let obj = objective(&u, arm, &c, y);
        if !obj.is_finite() || u.iter().any(|v| !v.is_finite()) {
            return Err(BeeError::NonFinite("bandit mean update".into()));
        }
        if obj <= best.0 {
            best = (obj, u.clone());
        }
    }
    let (obj, u) = if converged { (objective(&u, arm, &c, y), u) } else { best };
    if !converged {
        log::warn!("bandit mean update stopped after {iterations} iterations without converging");
    }
    arm.g = u;
    Ok(UpdateOutcome { converged, iterations, objective: obj, context: c })
}

/// Laplace precision step `q_i += σ(g·c) σ(-g·c) c_i²`.
pub fn precision_update(arm: &mut ArmState, c: &[f64]) {
    let z = dot(&arm.g, c);
    let w = sigmoid(z) * sigmoid(-z);
    for (q, ci) in arm.q.iter_mut().zip(c) {
        *q += w * ci * ci;
    }
}

/// Per-metric bandit over the five baseline types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pub metric: MetricId,
    /// Indexed by [`BaselineType::index`].
    pub arms: Vec<ArmState>,
    pub history: Vec<f64>,
    /// Freezes θ during updates.
    #[serde(skip)]
    pub finetune: bool,
}

/// Fresh state: every arm at `g = 0`, `q = 1`, with an empty history.
pub fn init_state(metric: MetricId, k: usize) -> BanditState {
    BanditState {
        metric,
        arms: BaselineType::ALL.iter().map(|_| ArmState::fresh(k)).collect(),
        history: Vec::new(),
        finetune: false,
    }
}

impl BanditState {
    pub fn arm(&self, kind: BaselineType) -> &ArmState {
        &self.arms[kind.index()]
    }

    pub fn context_dim(&self) -> usize {
        self.arms.first().map_or(0, ArmState::dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.len() != BaselineType::ALL.len() {
            return invalid(format!("expected {} arms, found {}", BaselineType::ALL.len(), self.arms.len()));
        }
        let k = self.context_dim();
        for a in &self.arms {
            a.validate()?;
            if a.dim() != k {
                return invalid("arms have differing dimensions");
            }
        }
        if self.history.iter().any(|v| !v.is_finite()) {
            return Err(BeeError::NonFinite("score history".into()));
        }
        Ok(())
    }

    pub fn thompson_select(&self, c: &[f64], rng: &mut Stream) -> BaselineType {
        BaselineType::ALL[thompson_pick(&self.arms, c, rng)]
    }

    pub fn extract_reward(&mut self, score: f64, rng: &mut Stream) -> Result<Reward> {
        extract_reward(self.metric.kind(), self.metric.direction(), score, &mut self.history, rng)
    }

    /// Steps 4–6 for arm `kind`: mean/context update followed by the precision step.
    pub fn update(
        &mut self,
        kind: BaselineType,
        y: f64,
        ctx: Context<'_>,
        cfg: &SolverConfig,
    ) -> Result<UpdateOutcome> {
        let ctx = match ctx {
            Context::Learned { model, x, train } => Context::Learned { model, x, train: train && !self.finetune },
            fixed => fixed,
        };
        let arm = &mut self.arms[kind.index()];
        let outcome = map_update(arm, y, ctx, cfg)?;
        precision_update(arm, &outcome.context);
        Ok(outcome)
    }
}

/// Beta-count bandit that ignores the context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaArms {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BetaArms {
    pub fn fresh(arms: usize) -> Self {
        Self { alpha: vec![1.0; arms], beta: vec![1.0; arms] }
    }

    pub fn select(&self, rng: &mut Stream) -> usize {
        let draws: Vec<f64> = self
            .alpha
            .iter()
            .zip(&self.beta)
            .map(|(&a, &b)| Beta::new(a, b).expect("positive counts").sample(rng))
            .collect();
        argmax_random_ties(&draws, rng)
    }

    pub fn record(&mut self, arm: usize, reward: &Reward) {
        if reward.is_success() {
            self.alpha[arm] += 1.0;
        } else {
            self.beta[arm] += 1.0;
        }
    }
}

/// Uniform draw over the baseline types.
pub fn uniform_type(rng: &mut Stream) -> BaselineType {
    BaselineType::ALL[rng.random_range(0..BaselineType::ALL.len())]
}

/// Which baseline type produced the best map for one instance under one metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinRecord {
    pub metric: MetricId,
    pub winner: BaselineType,
}

/// Normalized win counts per metric, one rate per baseline type.
pub fn win_rate_table(log: &[WinRecord]) -> Result<BTreeMap<MetricId, [f64; 5]>> {
    if log.is_empty() {
        return Err(BeeError::Empty("win-rate log is empty".into()));
    }
    let mut counts: BTreeMap<MetricId, [f64; 5]> = BTreeMap::new();
    for r in log {
        counts.entry(r.metric).or_insert([0.0; 5])[r.winner.index()] += 1.0;
    }
    for row in counts.values_mut() {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(counts)
}

/// Monte Carlo samples of `σ(c·w)` with `w` drawn from each arm's posterior.
pub fn arm_score_distribution(
    state: &BanditState,
    c: &[f64],
    samples: usize,
    rng: &mut Stream,
) -> Result<Vec<Vec<f64>>> {
    if samples == 0 {
        return invalid("sample count must be >= 1");
    }
    Ok(state.arms.iter().map(|a| (0..samples).map(|_| sigmoid(a.sample_logit(c, rng))).collect()).collect())
}

/// Equal-width histogram over `[0, 1]`; the value 1 falls into the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut out = vec![0; bins.max(1)];
    let n = out.len();
    for &v in values {
        let i = ((v.clamp(0.0, 1.0) * n as f64) as usize).min(n - 1);
        out[i] += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ContextNetwork, FixedContext};
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn frequencies(picks: impl Iterator<Item = usize>, arms: usize) -> Vec<f64> {
        let mut counts = vec![0.0; arms];
        let mut n = 0.0;
        for p in picks {
            counts[p] += 1.0;
            n += 1.0;
        }
        counts.iter().map(|c| c / n).collect()
    }

    #[test]
    fn fresh_state() {
        let s = init_state(MetricId::Ins, 16);
        assert_eq!(s.arms.len(), 5);
        assert_eq!(s.arm(BaselineType::Normal).g, vec![0.0; 16]);
        assert_eq!(s.arm(BaselineType::Normal).q, vec![1.0; 16]);
        assert!(s.history.is_empty());
        assert_eq!(s, init_state(MetricId::Ins, 16));
        s.validate().unwrap();
    }

    #[test]
    fn fresh_selection_is_uniform() {
        let s = init_state(MetricId::Del, 4);
        let c = [0.5, -1.0, 0.25, 2.0];
        let mut rng = stream(1);
        let f = frequencies((0..100_000).map(|_| s.thompson_select(&c, &mut rng).index()), 5);
        assert!(f.iter().all(|&p| (0.17..=0.23).contains(&p)), "{f:?}");
    }

    #[test]
    fn zero_context_selection_is_uniform() {
        let s = init_state(MetricId::Del, 4);
        let mut rng = stream(2);
        let f = frequencies((0..100_000).map(|_| s.thompson_select(&[0.0; 4], &mut rng).index()), 5);
        assert!(f.iter().all(|&p| (0.17..=0.23).contains(&p)), "{f:?}");
    }

    #[test]
    fn dominant_arm_is_selected() {
        let c = [1.0, 2.0, -0.5];
        let c2: f64 = c.iter().map(|v| v * v).sum();
        let mut s = init_state(MetricId::Pos, 3);
        s.arms[BaselineType::Blur.index()] = ArmState { g: c.iter().map(|v| 1e3 * v / c2).collect(), q: vec![1e12; 3] };
        let mut rng = stream(3);
        let f = frequencies((0..100_000).map(|_| s.thompson_select(&c, &mut rng).index()), 5);
        assert!(f[BaselineType::Blur.index()] >= 0.999, "{f:?}");
    }

    #[test]
    fn reward_examples() {
        let mut rng = stream(4);
        let mut hist = vec![];
        let r = extract_reward(RewardKind::Binary, Direction::HigherBetter, 100.0, &mut hist, &mut rng).unwrap();
        assert_eq!(r.y, 1.0);
        let r = extract_reward(RewardKind::Binary, Direction::HigherBetter, 0.0, &mut hist, &mut rng).unwrap();
        assert_eq!(r.y, -1.0);
        assert!(hist.is_empty());

        let mut hist = vec![0.1, 0.2, 0.3];
        let r = extract_reward(RewardKind::Continuous, Direction::HigherBetter, 0.4, &mut hist, &mut rng).unwrap();
        assert_eq!(r.h, Some(1.0));
        assert_eq!(r.y, 1.0);
        assert_eq!(hist.len(), 4);

        let mut hist = vec![0.5];
        let r = extract_reward(RewardKind::Continuous, Direction::LowerBetter, 0.5, &mut hist, &mut rng).unwrap();
        assert_eq!(r.h, Some(0.5));

        let mut hist = vec![];
        let r = extract_reward(RewardKind::Continuous, Direction::LowerBetter, 0.5, &mut hist, &mut rng).unwrap();
        assert_eq!(r.h, Some(0.5));
        assert!(extract_reward(RewardKind::Continuous, Direction::LowerBetter, f64::NAN, &mut hist, &mut rng).is_err());
    }

    #[test]
    fn lower_better_rank() {
        assert_eq!(normalized_rank(Direction::LowerBetter, 0.1, &[0.2, 0.3]), 1.0);
        assert_eq!(normalized_rank(Direction::LowerBetter, 0.4, &[0.2, 0.3]), 0.0);
    }

    #[test]
    fn zero_context_keeps_mean() {
        let mut arm = ArmState { g: vec![0.3, -0.2], q: vec![2.0, 1.0] };
        let before = arm.clone();
        let out = map_update(&mut arm, 1.0, Context::Fixed(&[0.0, 0.0]), &SolverConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(arm.g, before.g);

        let mut net = ContextNetwork::zeroed(&[3, 8, 8], 2).unwrap();
        let x = Tensor::full(&[3, 8, 8], 0.5);
        let mut arm = ArmState::fresh(2);
        let out = map_update(
            &mut arm,
            1.0,
            Context::Learned { model: &mut net, x: &x, train: true },
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(arm.g, vec![0.0, 0.0]);
        assert!(net.params().iter().all(|&p| p == 0.0));
    }

    fn fixed_point_oracle() -> f64 {
        // σ(-u) - u is strictly decreasing; bisect on [0, 1].
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 1.0 / (1.0 + mid.exp()) - mid > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn scalar_fixed_point() {
        let root = fixed_point_oracle();
        assert!((1.0 / (1.0 + root.exp()) - root).abs() < 1e-12);
        assert!((root - 0.401058).abs() < 1e-6);
        let mut arm = ArmState::fresh(1);
        let out = map_update(&mut arm, 1.0, Context::Fixed(&[1.0]), &SolverConfig::default()).unwrap();
        assert!(out.converged);
        assert!((arm.g[0] - root).abs() <= 1e-4, "{}", arm.g[0]);
    }

    #[test]
    fn repeated_success_raises_score() {
        let c = [0.7, -0.3, 1.1];
        let mut arm = ArmState::fresh(3);
        let mut last = sigmoid(dot(&arm.g, &c));
        for _ in 0..50 {
            let out = map_update(&mut arm, 1.0, Context::Fixed(&c), &SolverConfig::default()).unwrap();
            precision_update(&mut arm, &out.context);
            let now = sigmoid(dot(&arm.g, &c));
            assert!(now >= last);
            last = now;
        }
    }

    #[test]
    fn learned_context_updates_theta_unless_frozen() {
        let x = Tensor::from_fn(&[3, 8, 8], |i| (i % 7) as f64 / 7.0);
        let net = ContextNetwork::build(1, &[3, 8, 8], 4).unwrap();
        let cfg = SolverConfig::default();

        let mut trained = net.clone();
        let mut s = init_state(MetricId::Ins, 4);
        s.update(BaselineType::Uniform, 1.0, Context::Learned { model: &mut trained, x: &x, train: true }, &cfg)
            .unwrap();
        assert_ne!(trained.params(), net.params());

        let mut frozen = net.clone();
        let mut s = init_state(MetricId::Ins, 4);
        s.finetune = true;
        s.update(BaselineType::Uniform, 1.0, Context::Learned { model: &mut frozen, x: &x, train: true }, &cfg)
            .unwrap();
        assert_eq!(frozen.params(), net.params());
        assert_ne!(s.arm(BaselineType::Uniform).g, vec![0.0; 4]);
    }

    #[test]
    fn fixed_context_model_has_no_parameters() {
        let mut fixed = FixedContext(vec![1.0]);
        let x = Tensor::zeros(&[1]);
        let mut arm = ArmState::fresh(1);
        map_update(&mut arm, 1.0, Context::Learned { model: &mut fixed, x: &x, train: true }, &SolverConfig::default())
            .unwrap();
        assert!((arm.g[0] - fixed_point_oracle()).abs() <= 1e-4);
    }

    #[test]
    fn budget_exhaustion_reports_best_iterate() {
        let mut arm = ArmState::fresh(1);
        let cfg = SolverConfig { max_iters: 2, ..Default::default() };
        let out = map_update(&mut arm, 1.0, Context::Fixed(&[1.0]), &cfg).unwrap();
        assert!(!out.converged);
        assert!(arm.g[0] > 0.0 && out.objective.is_finite());
        assert!(map_update(&mut arm, 0.5, Context::Fixed(&[1.0]), &cfg).is_err());
    }

    #[test]
    fn precision_examples() {
        let mut arm = ArmState { g: vec![0.0, 0.0], q: vec![1.0, 1.0] };
        precision_update(&mut arm, &[1.0, 2.0]);
        assert_eq!(arm.q, vec![1.25, 2.0]);
        precision_update(&mut arm, &[0.0, 0.0]);
        assert_eq!(arm.q, vec![1.25, 2.0]);

        let mut arm = ArmState { g: vec![10.0, 0.0], q: vec![1.0, 1.0] };
        let c = [1.0, 3.0];
        precision_update(&mut arm, &c);
        assert!(arm.q[0] - 1.0 <= 4.6e-5 * c[0] * c[0]);
        assert!(arm.q[1] - 1.0 <= 4.6e-5 * c[1] * c[1]);
    }

    #[test]
    fn beta_arms_examples() {
        let fresh = BetaArms::fresh(5);
        let mut rng = stream(5);
        let f = frequencies((0..100_000).map(|_| fresh.select(&mut rng)), 5);
        assert!(f.iter().all(|&p| (0.17..=0.23).contains(&p)), "{f:?}");

        let mut trained = BetaArms::fresh(5);
        let win = Reward { y: 1.0, h: None };
        let loss = Reward { y: -1.0, h: None };
        for _ in 0..100 {
            trained.record(2, &win);
            for a in [0, 1, 3, 4] {
                trained.record(a, &loss);
            }
        }
        let f = frequencies((0..1000).map(|_| trained.select(&mut rng)), 5);
        assert!(f[2] >= 0.95);
    }

    #[test]
    fn uniform_type_frequencies() {
        let mut rng = stream(6);
        let f = frequencies((0..100_000).map(|_| uniform_type(&mut rng).index()), 5);
        assert!(f.iter().all(|&p| (0.19..=0.21).contains(&p)), "{f:?}");
    }

    #[test]
    fn win_rate_examples() {
        let always: Vec<WinRecord> =
            (0..7).map(|_| WinRecord { metric: MetricId::Pic, winner: BaselineType::Blur }).collect();
        assert_eq!(win_rate_table(&always).unwrap()[&MetricId::Pic], [0.0, 0.0, 1.0, 0.0, 0.0]);

        let mut log = vec![];
        for (kind, n) in [(BaselineType::Normal, 3), (BaselineType::Uniform, 1)] {
            for _ in 0..n {
                log.push(WinRecord { metric: MetricId::Ins, winner: kind });
            }
        }
        assert_eq!(win_rate_table(&log).unwrap()[&MetricId::Ins], [0.75, 0.25, 0.0, 0.0, 0.0]);
        assert!(win_rate_table(&[]).is_err());
    }

    #[test]
    fn win_rate_matches_counting_oracle() {
        let mut rng = stream(7);
        let log: Vec<WinRecord> = (0..1000)
            .map(|_| WinRecord {
                metric: MetricId::ALL[rng.random_range(0..8)],
                winner: BaselineType::ALL[rng.random_range(0..5)],
            })
            .collect();
        let table = win_rate_table(&log).unwrap();
        for (metric, row) in &table {
            let total = log.iter().filter(|r| r.metric == *metric).count() as f64;
            for kind in BaselineType::ALL {
                let n = log.iter().filter(|r| r.metric == *metric && r.winner == kind).count() as f64;
                assert!((row[kind.index()] - n / total).abs() < 1e-15);
            }
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn score_distribution_examples() {
        let mut s = init_state(MetricId::Sic, 2);
        for a in &mut s.arms {
            a.q = vec![1e12; 2];
        }
        let mut rng = stream(8);
        let d = arm_score_distribution(&s, &[1.0, -1.0], 1000, &mut rng).unwrap();
        assert!(d.iter().flatten().all(|&v| (v - 0.5).abs() < 1e-5));
        let fresh = init_state(MetricId::Sic, 2);
        let d = arm_score_distribution(&fresh, &[0.0, 0.0], 100, &mut rng).unwrap();
        assert!(d.iter().flatten().all(|&v| v == 0.5));

        let mut tight = init_state(MetricId::Sic, 2);
        tight.arms[0] = ArmState { g: vec![1.0, 0.5], q: vec![1e6; 2] };
        let d = arm_score_distribution(&tight, &[1.0, 2.0], 20_000, &mut rng).unwrap();
        let mean = d[0].iter().sum::<f64>() / d[0].len() as f64;
        assert!((mean - sigmoid(2.0)).abs() < 0.01);
        assert_eq!(histogram(&d[0], 10).iter().sum::<usize>(), 20_000);
        assert!(arm_score_distribution(&tight, &[1.0, 2.0], 0, &mut rng).is_err());
    }

    /// Two arms with Bernoulli(0.9) and Bernoulli(0.1) rewards.
    fn two_arm_run(seed: u64, iterations: usize) -> Vec<usize> {
        let c = [1.0, -0.5, 0.25];
        let mut arms = vec![ArmState::fresh(3), ArmState::fresh(3)];
        let mut rng = stream(seed);
        let cfg = SolverConfig::default();
        let mut picks = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let a = thompson_pick(&arms, &c, &mut rng);
            let p = if a == 0 { 0.9 } else { 0.1 };
            let y = if rng.random_bool(p) { 1.0 } else { -1.0 };
            let out = map_update(&mut arms[a], y, Context::Fixed(&c), &cfg).unwrap();
            precision_update(&mut arms[a], &out.context);
            picks.push(a);
        }
        picks
    }

    #[test]
    fn concentrates_on_better_arm() {
        let mut total = 0.0;
        for seed in 0..20 {
            let picks = two_arm_run(seed, 1000);
            total += picks[900..].iter().filter(|&&a| a == 0).count() as f64 / 100.0;
        }
        assert!(total / 20.0 > 0.85);
    }

    proptest! {
        #[test]
        fn precision_never_decreases(
            g in prop::collection::vec(-5.0f64..5.0, 3),
            c in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let mut arm = ArmState { g, q: vec![1.0; 3] };
            let before = arm.q.clone();
            precision_update(&mut arm, &c);
            prop_assert!(arm.q.iter().zip(&before).all(|(a, b)| a >= b));
        }

        #[test]
        fn history_grows_once_per_continuous_reward(scores in prop::collection::vec(-1.0f64..1.0, 0..20)) {
            let mut s = init_state(MetricId::Ins, 2);
            let mut rng = stream(9);
            for (i, &sc) in scores.iter().enumerate() {
                let r = s.extract_reward(sc, &mut rng).unwrap();
                prop_assert!(r.y == 1.0 || r.y == -1.0);
                prop_assert!((0.0..=1.0).contains(&r.h.unwrap()));
                prop_assert_eq!(s.history.len(), i + 1);
            }
            let mut p = init_state(MetricId::Pic, 2);
            for &sc in &scores {
                p.extract_reward(sc, &mut rng).unwrap();
            }
            prop_assert!(p.history.is_empty());
        }

        #[test]
        fn selection_invariant_under_increasing_transform(seed in 0u64..1000, shift in -3.0f64..3.0) {
            let mut s = init_state(MetricId::Ins, 2);
            for (i, a) in s.arms.iter_mut().enumerate() {
                a.g = vec![i as f64 * 0.3 - 0.6, 0.1 * i as f64];
            }
            let c = [0.8, -0.4];
            let logits: Vec<f64> = {
                let mut rng = stream(seed);
                s.arms.iter().map(|a| a.sample_logit(&c, &mut rng)).collect()
            };
            let squashed: Vec<f64> = logits.iter().map(|&z| sigmoid(z + shift).ln()).collect();
            let mut rng = stream(seed);
            let picked = s.thompson_select(&c, &mut rng).index();
            let mut r1 = stream(0);
            let mut r2 = stream(0);
            prop_assert_eq!(argmax_random_ties(&logits, &mut r1), picked);
            prop_assert_eq!(argmax_random_ties(&squashed, &mut r2), picked);
        }
    }
}
