#![no_main]

use bee::harness::io;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(grid) = io::parse_grid_csv(text) {
        assert!(grid.data().iter().all(|v| v.is_finite()));
        let again = io::parse_grid_csv(&io::grid_csv(&grid).expect("rank-2 grid")).expect("round trip");
        assert_eq!(again, grid);
    }
});
