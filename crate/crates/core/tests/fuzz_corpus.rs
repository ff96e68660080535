use std::path::PathBuf;

use bee::harness::{io, snapshot, RunConfig};

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(PathBuf, String)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let text = std::fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn snapshot_seeds() {
    let mut accepted = 0;
    for (path, text) in seeds("snapshot_load") {
        if let Ok(p) = snapshot::from_json(&text) {
            let again = snapshot::to_json(&p).unwrap();
            assert_eq!(snapshot::from_json(&again).unwrap(), p, "{}", path.display());
            accepted += 1;
        }
    }
    assert!(accepted >= 2);
}

#[test]
fn config_seeds() {
    let mut valid = 0;
    for (_, text) in seeds("config_overrides") {
        let mut lines = text.lines();
        let head = lines.next().unwrap_or("");
        let base = if head.trim().is_empty() { RunConfig::default() } else { RunConfig::from_json_str(head).unwrap() };
        let overrides: Vec<String> = lines.map(str::to_string).collect();
        if base.with_overrides(&overrides).and_then(|c| c.validate()).is_ok() {
            valid += 1;
        }
    }
    assert!(valid >= 3);
}

#[test]
fn grid_seeds() {
    for (path, text) in seeds("grid_csv") {
        if let Ok(grid) = io::parse_grid_csv(&text) {
            assert_eq!(io::parse_grid_csv(&io::grid_csv(&grid).unwrap()).unwrap(), grid, "{}", path.display());
        }
    }
}

#[test]
fn pgm_seeds() {
    for (_, text) in seeds("pgm_decode") {
        if let Ok(img) = io::parse_pgm(&text) {
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(io::parse_pgm(&io::pgm(&img).unwrap()).unwrap().shape(), img.shape());
        }
    }
}

#[test]
fn table_seeds() {
    let mut parsed = 0;
    for (_, text) in seeds("results_csv") {
        parsed += usize::from(io::parse_results_csv(&text).is_ok());
        parsed += usize::from(io::parse_curves_csv(&text).is_ok());
        parsed += usize::from(io::parse_training_csv(&text).is_ok());
        parsed += usize::from(io::parse_trials_csv(&text).is_ok());
    }
    assert_eq!(parsed, 4);
}
