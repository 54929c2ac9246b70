#![no_main]

use canprint_core::canframe::{decode_frame, destuff, encode_frame};
use libfuzzer_sys::fuzz_target;

// One byte per line bit; the low bit is the level.
fuzz_target!(|data: &[u8]| {
    let line: Vec<bool> = data.iter().map(|b| b & 1 == 1).collect();
    let _ = destuff(&line);
    if let Ok(frame) = decode_frame(&line) {
        let again = encode_frame(&frame).expect("decoded frame encodes");
        assert_eq!(decode_frame(&again.bits).unwrap(), frame);
    }
});
