#![no_main]

use bee::harness::io;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = io::parse_results_csv(text) {
        let again = io::parse_results_csv(&io::results_csv(&rows).expect("serialize")).expect("round trip");
        assert_eq!(again.len(), rows.len());
    }
    let _ = io::parse_curves_csv(text);
    let _ = io::parse_training_csv(text);
    let _ = io::parse_trials_csv(text);
});
