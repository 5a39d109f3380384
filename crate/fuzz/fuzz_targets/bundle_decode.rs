#![no_main]

use csm_core::bundle::{decode_bundle, BundleBytes};
use csm_fuzz::split_parts;
use libfuzzer_sys::fuzz_target;

// Parts: meta.json, embeddings.bin, names.txt, labels.bin, ids.txt.
fuzz_target!(|data: &[u8]| {
    let p = split_parts(data, 5);
    let bytes = BundleBytes {
        meta: p[0].unwrap_or_default(),
        embeddings: p[1].unwrap_or_default(),
        names: p[2],
        labels: p[3],
        ids: p[4],
    };
    if let Ok(bundle) = decode_bundle(bytes) {
        assert_eq!(bundle.rows.len(), bundle.count() * bundle.d);
        bundle.validate().expect("decoded bundles are valid");
    }
});
