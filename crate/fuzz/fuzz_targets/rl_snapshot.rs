#![no_main]

use lcsac::replay::RlBuffer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(buf) = RlBuffer::decode_snapshot(data) {
        let bytes = buf.encode_snapshot();
        assert_eq!(RlBuffer::decode_snapshot(&bytes).unwrap().encode_snapshot(), bytes);
    }
});
