#![no_main]

use bald_io::nifti::decode;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((header, frames)) = decode(data) {
        assert_eq!(header.sequence_shape().unwrap(), frames.dim());
    }
});
