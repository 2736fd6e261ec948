#![no_main]

use libfuzzer_sys::fuzz_target;
use trisim::encoder::file::{decode_block_stack, encode_block_stack};

// Anything that decodes must re-encode to the same bytes.
fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_block_stack(data) {
        assert_eq!(encode_block_stack(&t).unwrap(), data);
    }
});
