#![no_main]

use bald_io::phantom_toml::parse_phantom_spec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = parse_phantom_spec(text) {
            let _ = spec.labels();
        }
    }
});
