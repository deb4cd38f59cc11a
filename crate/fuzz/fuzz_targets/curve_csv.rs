#![no_main]

use lcsac::plot::{read_curve_csv, render_svg};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(series) = read_curve_csv("fuzz", text) {
            let _ = render_svg(&[series]);
        }
    }
});
