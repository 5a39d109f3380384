#![no_main]

use csm_core::rough::parse_selection_tsv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_selection_tsv(text);
    }
});
