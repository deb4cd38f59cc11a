#![no_main]

use lcsac::metrics::RunMetrics;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = RunMetrics::from_csv(text) {
            let csv = m.to_csv();
            assert_eq!(RunMetrics::from_csv(&csv).unwrap().to_csv(), csv);
        }
    }
});
