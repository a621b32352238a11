#![no_main]

use bald_io::LabelMap;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(labels) = LabelMap::parse(text) {
            let _ = labels.rois();
            assert_eq!(LabelMap::parse(&labels.to_text()).unwrap().map, labels.map);
        }
    }
});
