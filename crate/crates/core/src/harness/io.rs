//! CSV and PGM readers and writers for tables, curves, logs and maps.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::Method;
use super::engine::{CurveSeries, EpochRecord, ResultRow, Trial};
use crate::error::{BeeError, Result};
use crate::tensor::Tensor;

pub const RESULTS_HEADER: [&str; 6] = ["method", "metric", "direction", "mean", "stderr", "n"];
pub const CURVES_HEADER: [&str; 3] = ["strategy", "iteration", "mean_score"];
pub const TRAINING_HEADER: [&str; 6] = ["epoch", "metric", "mean_reward", "mean_score", "updates", "skipped"];
pub const TRIALS_HEADER: [&str; 5] = ["round", "baseline", "score", "reward", "best"];

fn csv_err(e: impl std::fmt::Display) -> BeeError {
    BeeError::Parse(format!("csv: {e}"))
}

fn write_records<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(csv_err)?;
    String::from_utf8(bytes).map_err(csv_err)
}

fn read_records<T: DeserializeOwned>(text: &str, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let found = r.headers().map_err(csv_err)?;
    if found.iter().ne(header.iter().copied()) {
        return Err(BeeError::Parse(format!(
            "expected header {}, found {}",
            header.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn results_csv(rows: &[ResultRow]) -> Result<String> {
    write_records(rows, &RESULTS_HEADER)
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    read_records(text, &RESULTS_HEADER)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub strategy: Method,
    pub iteration: usize,
    pub mean_score: f64,
}

/// One row per strategy and 1-based iteration.
pub fn curves_csv(series: &[CurveSeries]) -> Result<String> {
    let rows: Vec<CurveRow> = series
        .iter()
        .flat_map(|s| {
            s.mean.iter().enumerate().map(|(k, &v)| CurveRow { strategy: s.strategy, iteration: k + 1, mean_score: v })
        })
        .collect();
    write_records(&rows, &CURVES_HEADER)
}

pub fn parse_curves_csv(text: &str) -> Result<Vec<CurveRow>> {
    read_records(text, &CURVES_HEADER)
}

pub fn training_csv(log: &[EpochRecord]) -> Result<String> {
    write_records(log, &TRAINING_HEADER)
}

pub fn parse_training_csv(text: &str) -> Result<Vec<EpochRecord>> {
    read_records(text, &TRAINING_HEADER)
}

pub fn trials_csv(trials: &[Trial]) -> Result<String> {
    write_records(trials, &TRIALS_HEADER)
}

pub fn parse_trials_csv(text: &str) -> Result<Vec<Trial>> {
    read_records(text, &TRIALS_HEADER)
}

/// Headerless grid: one line per row, comma-separated values.
pub fn grid_csv(map: &Tensor) -> Result<String> {
    let (_, w) = map.spatial()?;
    if map.rank() != 2 {
        return Err(BeeError::InvalidArgument("grid export needs a rank-2 map".into()));
    }
    let mut out = String::new();
    for row in map.data().chunks(w) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Parse a headerless rectangular grid of finite numbers into a `rows x cols` tensor.
pub fn parse_grid_csv(text: &str) -> Result<Tensor> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if cols.is_some_and(|c| c != rec.len()) {
            return Err(BeeError::Parse(format!(
                "grid row {} has {} values, expected {}",
                i + 1,
                rec.len(),
                cols.unwrap()
            )));
        }
        cols = Some(rec.len());
        for field in rec.iter() {
            let v: f64 =
                field.parse().map_err(|_| BeeError::Parse(format!("grid row {}: '{field}' is not a number", i + 1)))?;
            if !v.is_finite() {
                return Err(BeeError::Parse(format!("grid row {}: non-finite value", i + 1)));
            }
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| BeeError::Parse("grid is empty".into()))?;
    if cols == 0 {
        return Err(BeeError::Parse("grid rows are empty".into()));
    }
    Tensor::new(vec![rows, cols], data)
}

/// Plain-text PGM (P2) with values in `[0, 1]` scaled to `0..=255`.
pub fn pgm(map: &Tensor) -> Result<String> {
    if map.rank() != 2 {
        return Err(BeeError::InvalidArgument("PGM export needs a rank-2 map".into()));
    }
    let (h, w) = map.spatial()?;
    let mut out = format!("P2\n{w} {h}\n255\n");
    for row in map.data().chunks(w) {
        let line: Vec<String> = row.iter().map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Decode a plain-text PGM into a `height x width` tensor scaled to `[0, 1]`.
pub fn parse_pgm(text: &str) -> Result<Tensor> {
    let mut tokens = text.lines().map(|l| l.split('#').next().unwrap_or("")).flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err(BeeError::Parse("PGM magic 'P2' missing".into()));
    }
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
        let t = tokens.next().ok_or_else(|| BeeError::Parse(format!("PGM {name} missing")))?;
        *slot = t.parse().map_err(|_| BeeError::Parse(format!("PGM {name} '{t}' is not a count")))?;
    }
    let [w, h, maxval] = header;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(BeeError::Parse(format!("PGM header {w}x{h} max {maxval} out of range")));
    }
    let count = w.checked_mul(h).filter(|&c| c <= 1 << 24).ok_or_else(|| BeeError::Parse("PGM is too large".into()))?;
    let mut data = Vec::with_capacity(count);
    for t in tokens.by_ref().take(count) {
        let v: usize = t.parse().map_err(|_| BeeError::Parse(format!("PGM sample '{t}' is not a count")))?;
        if v > maxval {
            return Err(BeeError::Parse(format!("PGM sample {v} exceeds maxval {maxval}")));
        }
        data.push(v as f64 / maxval as f64);
    }
    if data.len() != count {
        return Err(BeeError::Parse(format!("PGM has {} samples, expected {count}", data.len())));
    }
    if tokens.next().is_some() {
        return Err(BeeError::Parse("PGM has trailing samples".into()));
    }
    Tensor::new(vec![h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::BaselineType;
    use crate::metrics::MetricId;

    #[test]
    fn tables_round_trip() {
        let rows = vec![
            ResultRow {
                method: Method::Single(BaselineType::TrainData),
                metric: MetricId::Del,
                direction: "lower".into(),
                mean: 12.345678901234567,
                stderr: 0.1,
                n: 3,
            },
            ResultRow {
                method: Method::Fbee,
                metric: MetricId::Pic,
                direction: "higher".into(),
                mean: 50.0,
                stderr: 0.0,
                n: 1,
            },
        ];
        let text = results_csv(&rows).unwrap();
        assert!(text.starts_with("method,metric,direction,mean,stderr,n\n"));
        assert_eq!(parse_results_csv(&text).unwrap(), rows);

        let series = vec![CurveSeries { strategy: Method::Nbee, mean: vec![0.25, 0.5] }];
        let text = curves_csv(&series).unwrap();
        assert_eq!(text, "strategy,iteration,mean_score\nnbee,1,0.25\nnbee,2,0.5\n");
        assert_eq!(parse_curves_csv(&text).unwrap().len(), 2);

        let trials = vec![Trial { round: 0, baseline: BaselineType::Blur, score: 0.3, reward: -1.0, best: 0.3 }];
        assert_eq!(parse_trials_csv(&trials_csv(&trials).unwrap()).unwrap(), trials);
        let log = vec![EpochRecord {
            epoch: 1,
            metric: MetricId::Sic,
            mean_reward: 0.2,
            mean_score: 0.7,
            updates: 4,
            skipped: 0,
        }];
        assert_eq!(parse_training_csv(&training_csv(&log).unwrap()).unwrap(), log);
        assert!(parse_results_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn grid_round_trip_and_rejections() {
        let t = Tensor::new(vec![2, 3], vec![0.1, 0.2, 1.0 / 3.0, -4.0, 5e-300, 6.0]).unwrap();
        assert_eq!(parse_grid_csv(&grid_csv(&t).unwrap()).unwrap(), t);
        assert!(parse_grid_csv("").is_err());
        assert!(parse_grid_csv("1,2\n3\n").is_err());
        assert!(parse_grid_csv("1,x\n").is_err());
        assert!(parse_grid_csv("1,NaN\n").is_err());
    }

    #[test]
    fn pgm_round_trip_and_rejections() {
        let t = Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.2, 0.6]).unwrap();
        let text = pgm(&t).unwrap();
        assert_eq!(text, "P2\n2 2\n255\n0 255\n51 153\n");
        let back = parse_pgm(&text).unwrap();
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
        assert!(parse_pgm("P2\n# comment\n1 1\n3\n2\n").is_ok());
        assert!(parse_pgm("P5\n1 1\n255\n0\n").is_err());
        assert!(parse_pgm("P2\n2 2\n255\n0 0 0\n").is_err());
        assert!(parse_pgm("P2\n1 1\n255\n256\n").is_err());
        assert!(parse_pgm("P2\n1 1\n255\n1 2\n").is_err());
        assert!(parse_pgm("P2\n99999999 99999999\n255\n").is_err());
    }
}
