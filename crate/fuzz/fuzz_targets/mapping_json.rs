#![no_main]

use libfuzzer_sys::fuzz_target;
use pmwb::format::{decode_mapping, encode_mapping};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = decode_mapping(text) {
        let again = decode_mapping(&encode_mapping(&m)).expect("encoded mapping decodes");
        assert_eq!(m, again);
    }
});
