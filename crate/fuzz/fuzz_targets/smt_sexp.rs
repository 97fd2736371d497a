#![no_main]

use libfuzzer_sys::fuzz_target;
use pmwb::smt::{parse_all, parse_one};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_all(text);
    if let Ok(Some((_, used))) = parse_one(text, false) {
        assert!(used <= text.len());
    }
});
