#![no_main]

use libfuzzer_sys::fuzz_target;
use tcgl_core::sampler::{decode_manifest, encode_manifest};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = decode_manifest(text) {
        let again = decode_manifest(&encode_manifest(&m)).expect("encoded manifest decodes");
        assert_eq!(again, m);
    }
});
