#![no_main]

use canprint_core::formats::{read_records, write_records};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = read_records(data) {
        let mut out = Vec::new();
        write_records(&mut out, &file).unwrap();
        assert_eq!(read_records(out.as_slice()).unwrap(), file);
    }
});
