#![no_main]

use canprint_core::formats::read_scope_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(wave) = read_scope_csv(data, 10e6) {
        assert!(wave.samples.iter().all(|v| v.is_finite()));
    }
});
