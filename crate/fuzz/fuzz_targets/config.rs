#![no_main]

use libfuzzer_sys::fuzz_target;
use trisim::RunConfig;

fuzz_target!(|text: &str| {
    if let Ok(c) = RunConfig::from_json(text) {
        let again = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(again, c);
    }
});
