#![no_main]

use canprint_core::pipeline::ModelDoc;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = ModelDoc::from_json(text) {
        if let Ok(model) = doc.model() {
            let _ = model.predict(&vec![0.0; model.n_inputs()]);
        }
    }
});
