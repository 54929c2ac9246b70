#![no_main]

use canprint_core::evalkit::{parse_csv_report, render_report, ReportFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cm) = parse_csv_report(text) {
        let again = parse_csv_report(&render_report(&cm, ReportFormat::Csv)).unwrap();
        assert_eq!(again, cm);
    }
});
