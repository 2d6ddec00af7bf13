#![no_main]

use libfuzzer_sys::fuzz_target;
use tcgl_core::config::{parse_config, TrainConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(text, TrainConfig::default()) {
        let text = cfg.to_text();
        let again = parse_config(&text, TrainConfig::default()).expect("printed config parses");
        assert_eq!(again.to_text(), text);
    }
});
