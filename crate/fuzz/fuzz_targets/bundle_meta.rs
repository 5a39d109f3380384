#![no_main]

use csm_core::bundle::BundleMeta;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(meta) = BundleMeta::parse(data) {
        assert!(meta.d > 0 && meta.count > 0);
    }
});
