#![no_main]

//! Input framing: four sections (sidecar JSON, payload, M0, mask), each
//! prefixed by a little-endian u32 length. A missing section is `None`.

use bald_io::{Container, Sidecar};
use libfuzzer_sys::fuzz_target;

fn section<'a>(data: &mut &'a [u8]) -> Option<&'a [u8]> {
    let len = u32::from_le_bytes(data.get(..4)?.try_into().ok()?) as usize;
    let body = data.get(4..4 + len)?;
    *data = &data[4 + len..];
    Some(body)
}

fuzz_target!(|data: &[u8]| {
    let mut rest = data;
    let Some(text) = section(&mut rest).and_then(|s| std::str::from_utf8(s).ok()) else {
        return;
    };
    let Ok(sidecar) = Sidecar::parse(text) else { return };
    let payload = section(&mut rest).unwrap_or_default();
    let m0 = section(&mut rest);
    let mask = section(&mut rest);
    if let Ok(c) = Container::from_parts(&sidecar, payload, m0, mask) {
        assert_eq!(c.sidecar("x").channels, sidecar.channels);
    }
});
