#![no_main]

use lcsac::codec::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = decode_checkpoint(data) {
        let again = decode_checkpoint(&encode_checkpoint(&params)).expect("re-encoded checkpoint decodes");
        assert_eq!(encode_checkpoint(&again), encode_checkpoint(&params));
    }
});
