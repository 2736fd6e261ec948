#![no_main]

use libfuzzer_sys::fuzz_target;
use trisim::training::dataset::{parse_split_tsv, write_split_tsv};

fuzz_target!(|text: &str| {
    if let Ok(pairs) = parse_split_tsv(text) {
        assert_eq!(parse_split_tsv(&write_split_tsv(&pairs)).unwrap(), pairs);
    }
});
