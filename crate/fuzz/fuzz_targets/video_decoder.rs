#![no_main]

use libfuzzer_sys::fuzz_target;
use tcgl_core::sampler::{decode_video, encode_video};

fuzz_target!(|data: &[u8]| {
    if let Ok((video, class_id)) = decode_video(data) {
        let again = encode_video(&video, class_id).expect("decoded video re-encodes");
        assert_eq!(again.as_slice(), data);
    }
});
