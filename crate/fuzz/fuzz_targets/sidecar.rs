#![no_main]

use bald_io::Sidecar;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(sidecar) = Sidecar::parse(text) {
            // Anything accepted must survive a write/read cycle.
            assert_eq!(Sidecar::parse(&sidecar.to_json()).unwrap(), sidecar);
        }
    }
});
