#![no_main]

use bald_io::csv_io::{curve_to_csv, parse_curve_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(curve) = parse_curve_csv(text) {
            let back = parse_curve_csv(&curve_to_csv(&curve)).unwrap();
            assert_eq!(back.knots(), curve.knots());
        }
    }
});
