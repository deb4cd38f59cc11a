#![no_main]

use lcsac::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::load(text, &[]) {
            let back = RunConfig::from_json_str(&cfg.to_json_pretty()).expect("resolved config reloads");
            assert_eq!(back, cfg);
        }
    }
});
