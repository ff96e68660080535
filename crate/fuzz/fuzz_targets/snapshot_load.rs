#![no_main]

use bee::harness::snapshot;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = snapshot::from_json(text) {
        let again = snapshot::to_json(&p).expect("accepted snapshots serialize");
        assert_eq!(snapshot::from_json(&again).expect("round trip"), p);
    }
});
