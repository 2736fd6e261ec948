#![no_main]

use libfuzzer_sys::fuzz_target;
use trisim::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Checkpoint::decode(data) {
        let bytes = c.encode().unwrap();
        assert_eq!(Checkpoint::decode(&bytes).unwrap().encode().unwrap(), bytes);
    }
});
