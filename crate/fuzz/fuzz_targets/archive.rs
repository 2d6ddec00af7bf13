#![no_main]

//! Input layout: little-endian u32 manifest length, manifest text, blob.

use libfuzzer_sys::fuzz_target;
use tcgl_core::evalkit::EmbeddingGallery;
use tcgl_core::store::Archive;
use tcgl_core::trainer::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if data.len() < 4 {
        return;
    }
    let len = u32::from_le_bytes([data[0], data[1], data[2], data[3]]) as usize;
    let rest = &data[4..];
    if len > rest.len() {
        return;
    }
    let Ok(manifest) = std::str::from_utf8(&rest[..len]) else { return };
    let Ok(archive) = Archive::decode(manifest, &rest[len..]) else { return };
    let (m, b) = archive.encode().expect("decoded archive re-encodes");
    let again = Archive::decode(&m, &b).expect("round trip").encode().expect("re-encodes");
    assert_eq!(again, (m, b));
    let _ = Checkpoint::from_archive(&archive);
    let _ = EmbeddingGallery::from_archive(&archive);
});
