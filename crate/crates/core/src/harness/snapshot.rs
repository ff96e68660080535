//! Versioned JSON persistence of pretrained bandit states.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::engine::Pretrained;
use crate::bandit::{ArmState, BanditState};
use crate::baselines::BaselineType;
use crate::error::{BeeError, Result};
use crate::metrics::MetricId;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotFile {
    version: u32,
    model_seed: u64,
    theta: Vec<f64>,
    metrics: BTreeMap<MetricId, MetricEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricEntry {
    arms: BTreeMap<BaselineType, ArmEntry>,
    history: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmEntry {
    g: Vec<f64>,
    q: Vec<f64>,
}

/// Serialize to pretty-printed JSON with shortest round-trip floats.
pub fn to_json(p: &Pretrained) -> Result<String> {
    if p.theta.iter().any(|v| !v.is_finite()) {
        return Err(BeeError::NonFinite("context parameters".into()));
    }
    let mut metrics = BTreeMap::new();
    for (&m, s) in &p.states {
        s.validate()?;
        let arms = BaselineType::ALL
            .iter()
            .map(|&t| {
                let a = s.arm(t);
                (t, ArmEntry { g: a.g.clone(), q: a.q.clone() })
            })
            .collect();
        metrics.insert(m, MetricEntry { arms, history: s.history.clone() });
    }
    let file = SnapshotFile { version: SNAPSHOT_VERSION, model_seed: p.model_seed, theta: p.theta.clone(), metrics };
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| BeeError::Snapshot(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Parse and validate a snapshot document.
pub fn from_json(text: &str) -> Result<Pretrained> {
    let probe: serde_json::Value = serde_json::from_str(text).map_err(|e| BeeError::Snapshot(format!("parse: {e}")))?;
    match probe.get("version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == SNAPSHOT_VERSION as u64 => {}
        Some(v) => return Err(BeeError::Snapshot(format!("unsupported version {v}, expected {SNAPSHOT_VERSION}"))),
        None => return Err(BeeError::Snapshot("missing or non-integer 'version'".into())),
    }
    let file: SnapshotFile = serde_json::from_value(probe).map_err(|e| BeeError::Snapshot(format!("schema: {e}")))?;
    if file.theta.iter().any(|v| !v.is_finite()) {
        return Err(BeeError::Snapshot("non-finite context parameter".into()));
    }
    let mut states = BTreeMap::new();
    for (metric, entry) in file.metrics {
        let mut arms = Vec::with_capacity(BaselineType::ALL.len());
        for t in BaselineType::ALL {
            let a = entry.arms.get(&t).ok_or_else(|| BeeError::Snapshot(format!("{metric}: missing arm '{t}'")))?;
            if a.g.len() != a.q.len() {
                return Err(BeeError::Snapshot(format!("{metric}/{t}: g and q lengths differ")));
            }
            arms.push(ArmState { g: a.g.clone(), q: a.q.clone() });
        }
        let state = BanditState { metric, arms, history: entry.history, finetune: false };
        state.validate().map_err(|e| BeeError::Snapshot(format!("{metric}: {e}")))?;
        states.insert(metric, state);
    }
    Ok(Pretrained { model_seed: file.model_seed, theta: file.theta, states })
}

pub fn save(p: &Pretrained, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(p)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Pretrained> {
    from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::init_state;
    use crate::rng::stream;
    use rand::Rng;

    fn sample(seed: u64) -> Pretrained {
        let mut rng = stream(seed);
        let mut states = BTreeMap::new();
        for m in [MetricId::Ins, MetricId::Pic] {
            let mut s = init_state(m, 3);
            for a in &mut s.arms {
                a.g.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
                a.q.iter_mut().for_each(|v| *v = rng.random_range(1.0..9.0) / 7.0 + 1.0);
            }
            s.history = (0..5).map(|_| rng.random::<f64>() / 3.0).collect();
            states.insert(m, s);
        }
        Pretrained { model_seed: 99, theta: (0..7).map(|_| rng.random_range(-1.0..1.0) * 1e-7).collect(), states }
    }

    #[test]
    fn round_trip_is_lossless_and_byte_stable() {
        let p = sample(1);
        let a = to_json(&p).unwrap();
        let q = from_json(&a).unwrap();
        assert_eq!(p, q);
        assert_eq!(a, to_json(&q).unwrap());
    }

    #[test]
    fn rejects_bad_documents() {
        let good = to_json(&sample(2)).unwrap();
        assert!(matches!(from_json(&good[..good.len() / 2]), Err(BeeError::Snapshot(_))));
        let v2 = good.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(from_json(&v2).unwrap_err().to_string().contains("version"));
        let neg = good.replacen("\"q\": [\n", "\"q\": [\n-1.0,", 1);
        assert!(from_json(&neg).is_err());
        assert!(from_json("{\"model_seed\": 1}").is_err());
        let missing = good.replacen("\"blur\"", "\"fog\"", 1);
        assert!(from_json(&missing).is_err());
        let mut p = sample(3);
        p.theta[0] = f64::NAN;
        assert!(to_json(&p).is_err());
    }
}
