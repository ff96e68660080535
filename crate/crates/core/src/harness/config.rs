//! Run configuration, method names and `key=value` overrides.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::bandit::SolverConfig;
use crate::baselines::{BaselineConfig, BaselineType};
use crate::error::{BeeError, Result};
use crate::metrics::{ClassRef, MetricConfig, MetricId};
use crate::model::DEFAULT_CONTEXT_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    TinyCnn,
    TinyAttention,
}

/// An explanation method or baseline-sampling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Input-space integrated gradients from a black image.
    Ig,
    /// Last-layer integrated gradients from the black image's representation.
    ActIg,
    /// Input-space paths with bandit-refined baselines.
    IgFbee,
    Pbee,
    Fbee,
    Nbee,
    Ncbee,
    Single(BaselineType),
}

impl Method {
    /// Methods that sample baseline types round by round.
    pub fn is_sampling(self) -> bool {
        !matches!(self, Method::Ig | Method::ActIg)
    }

    pub fn needs_snapshot(self) -> bool {
        matches!(self, Method::Pbee | Method::Fbee | Method::IgFbee)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Ig => f.write_str("ig"),
            Method::ActIg => f.write_str("act_ig"),
            Method::IgFbee => f.write_str("ig_fbee"),
            Method::Pbee => f.write_str("pbee"),
            Method::Fbee => f.write_str("fbee"),
            Method::Nbee => f.write_str("nbee"),
            Method::Ncbee => f.write_str("ncbee"),
            Method::Single(t) => write!(f, "single:{t}"),
        }
    }
}

impl FromStr for Method {
    type Err = BeeError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "ig" => Method::Ig,
            "act_ig" | "act-ig" => Method::ActIg,
            "ig_fbee" | "ig-fbee" => Method::IgFbee,
            "pbee" => Method::Pbee,
            "fbee" => Method::Fbee,
            "nbee" => Method::Nbee,
            "ncbee" => Method::Ncbee,
            other => match other.strip_prefix("single:") {
                Some(t) => Method::Single(t.parse()?),
                None => return Err(BeeError::Parse(format!("unknown method '{s}'"))),
            },
        })
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Replaces real metrics by a synthetic scorer that favours one baseline type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiggedConfig {
    pub winner: BaselineType,
}

impl Default for RiggedConfig {
    fn default() -> Self {
        Self { winner: BaselineType::Uniform }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    /// Metrics for `pretrain` and `eval`.
    pub metrics: Vec<MetricId>,
    /// Metric for `explain` and `curves`.
    pub metric: MetricId,
    /// Strategy for `explain`.
    pub strategy: Method,
    /// Methods compared by `eval`.
    pub methods: Vec<Method>,
    /// Strategies compared by `curves`.
    pub strategies: Vec<Method>,
    /// Baselines drawn per test instance.
    pub draws: usize,
    /// Interpolation steps along each path.
    pub steps: usize,
    /// Layers (CNN) or 1-based blocks (attention); empty means the last one.
    pub layers: Vec<usize>,
    pub context_dim: usize,
    pub pretrain_items: usize,
    pub test_items: usize,
    pub epochs: usize,
    /// Training items whose representations serve as train-data baselines.
    pub train_pool: usize,
    /// Maps averaged per train-data draw.
    pub train_average: usize,
    /// Rounds per instance in `curves`.
    pub iterations: usize,
    /// Pretraining scores carried into per-instance refinement.
    pub history_tail: usize,
    /// Test-split index used by `explain`.
    pub instance: usize,
    pub class_ref: ClassRef,
    pub baseline: BaselineConfig,
    pub metric_config: MetricConfig,
    pub solver: SolverConfig,
    pub rigged: Option<RiggedConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::TinyCnn,
            seed: 0,
            metrics: MetricId::ALL.to_vec(),
            metric: MetricId::Ins,
            strategy: Method::Fbee,
            methods: vec![
                Method::Ig,
                Method::ActIg,
                Method::IgFbee,
                Method::Pbee,
                Method::Fbee,
                Method::Nbee,
                Method::Ncbee,
            ],
            strategies: std::iter::once(Method::Fbee)
                .chain([Method::Pbee, Method::Nbee])
                .chain(BaselineType::ALL.map(Method::Single))
                .collect(),
            draws: 8,
            steps: 10,
            layers: Vec::new(),
            context_dim: DEFAULT_CONTEXT_DIM,
            pretrain_items: 256,
            test_items: 32,
            epochs: 20,
            train_pool: 16,
            train_average: 16,
            iterations: 100,
            history_tail: 64,
            instance: 0,
            class_ref: ClassRef::Target,
            baseline: BaselineConfig::default(),
            metric_config: MetricConfig::default(),
            solver: SolverConfig::default(),
            rigged: None,
        }
    }
}

fn require(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(BeeError::Config(msg.to_string()))
    }
}

impl RunConfig {
    /// Range checks that do not need a model; layer bounds are checked by the workbench.
    pub fn validate(&self) -> Result<()> {
        require(self.draws >= 1, "draws must be >= 1")?;
        require(self.steps >= 1, "steps must be >= 1")?;
        require(self.context_dim >= 1, "context_dim must be >= 1")?;
        require(self.pretrain_items >= 1, "pretrain_items must be >= 1")?;
        require(self.test_items >= 1, "test_items must be >= 1")?;
        require(self.train_pool >= 1, "train_pool must be >= 1")?;
        require(self.train_pool <= self.pretrain_items, "train_pool must not exceed pretrain_items")?;
        require(self.train_average >= 1, "train_average must be >= 1")?;
        require(self.iterations >= 1, "iterations must be >= 1")?;
        require(!self.metrics.is_empty(), "metrics must not be empty")?;
        require(self.instance < self.test_items, "instance must index the test split")?;
        require(self.strategy.is_sampling(), "strategy must be a sampling method")?;
        require(
            self.strategies.iter().all(|m| m.is_sampling() && *m != Method::IgFbee),
            "curves strategies must be fbee, pbee, nbee, ncbee or single:<type>",
        )?;
        self.baseline.validate()?;
        self.metric_config.validate()?;
        self.solver.validate()?;
        Ok(())
    }

    /// Parse a JSON document; absent fields take their defaults.
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| BeeError::Config(format!("config: {e}")))
    }

    /// Apply `key=value` pairs, where `key` is a dotted path and `value` is JSON
    /// or, failing that, a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut tree = serde_json::to_value(self).map_err(|e| BeeError::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) =
                o.split_once('=').ok_or_else(|| BeeError::Config(format!("override '{o}' is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut tree, key.trim(), value)?;
        }
        serde_json::from_value(tree).map_err(|e| BeeError::Config(format!("override: {e}")))
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(BeeError::Config(format!("invalid override key '{key}'")));
    }
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| BeeError::Config(format!("override key '{key}' descends into a non-object")))?;
        if i == 0 && !obj.contains_key(*part) {
            return Err(BeeError::Config(format!("unknown config key '{part}'")));
        }
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("non-empty key")
}
