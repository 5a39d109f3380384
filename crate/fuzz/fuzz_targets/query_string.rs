#![no_main]

use csm_cli::service::{parse_query, ExplainQuery, SamplesQuery};
use http::Uri;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(query) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(uri) = format!("/samples?{query}").parse::<Uri>() else {
        return;
    };
    let _ = parse_query::<SamplesQuery>(&uri);
    let _ = parse_query::<ExplainQuery>(&uri);
});
