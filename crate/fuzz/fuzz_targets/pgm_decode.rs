#![no_main]

use bee::harness::io;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(img) = io::parse_pgm(text) {
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let again = io::parse_pgm(&io::pgm(&img).expect("rank-2 image")).expect("round trip");
        assert_eq!(again.shape(), img.shape());
    }
});
