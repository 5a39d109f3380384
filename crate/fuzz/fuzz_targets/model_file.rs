#![no_main]

use csm_core::fine::ConceptModel;
use csm_fuzz::split_parts;
use libfuzzer_sys::fuzz_target;

// Parts: model.json, weights.bin.
fuzz_target!(|data: &[u8]| {
    let p = split_parts(data, 2);
    if let Ok(model) = ConceptModel::decode(p[0].unwrap_or_default(), p[1].unwrap_or_default()) {
        let (json, weights) = model.encode();
        let again = ConceptModel::decode(json.as_bytes(), &weights).expect("re-encoded model decodes");
        assert_eq!(again.encode(), (json, weights));
    }
});
