#![no_main]

use lcsac::replay::ContextBuffer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(buf) = ContextBuffer::decode_snapshot(data) {
        let bytes = buf.encode_snapshot();
        assert_eq!(ContextBuffer::decode_snapshot(&bytes).unwrap().encode_snapshot(), bytes);
        let _ = buf.episodes();
    }
});
