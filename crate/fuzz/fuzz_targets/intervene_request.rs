#![no_main]

use csm_cli::service::parse_intervene_request;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = parse_intervene_request(data) {
        assert!(req.value.is_finite());
    }
});
