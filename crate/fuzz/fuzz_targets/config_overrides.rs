#![no_main]

use bee::harness::RunConfig;
use libfuzzer_sys::fuzz_target;

// First line: JSON config (empty for defaults); remaining lines: `key=value` overrides.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut lines = text.lines();
    let head = lines.next().unwrap_or("");
    let base = if head.trim().is_empty() {
        RunConfig::default()
    } else {
        match RunConfig::from_json_str(head) {
            Ok(c) => c,
            Err(_) => return,
        }
    };
    let overrides: Vec<String> = lines.map(str::to_string).collect();
    if let Ok(cfg) = base.with_overrides(&overrides) {
        let _ = cfg.validate();
    }
});
