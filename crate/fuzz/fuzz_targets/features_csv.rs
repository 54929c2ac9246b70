#![no_main]

use canprint_core::formats::{read_features, write_features};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = read_features(data) {
        let mut out = Vec::new();
        write_features(&mut out, &file).unwrap();
        assert_eq!(read_features(out.as_slice()).unwrap(), file);
    }
});
