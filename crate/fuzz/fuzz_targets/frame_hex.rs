#![no_main]

use canprint_core::canframe::{decode_frame, encode_frame, CanFrame};
use libfuzzer_sys::fuzz_target;

// Input is "<id>#<data>" as typed on the command line.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (id, payload) = text.split_once('#').unwrap_or((text, ""));
    if let Ok(frame) = CanFrame::from_hex(id, payload) {
        let line = encode_frame(&frame).expect("parsed frame encodes");
        assert_eq!(decode_frame(&line.bits).expect("encoded frame decodes"), frame);
    }
});
