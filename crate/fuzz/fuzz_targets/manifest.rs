#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use trisim::training::dataset::parse_manifest;

fuzz_target!(|text: &str| {
    let _ = parse_manifest(text, Path::new("base"));
});
