#![no_main]

use libfuzzer_sys::fuzz_target;
use pmwb::format::{decode_experiments, encode_experiments};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(exps) = decode_experiments(text) {
        assert_eq!(decode_experiments(&encode_experiments(&exps)).unwrap(), exps);
    }
});
