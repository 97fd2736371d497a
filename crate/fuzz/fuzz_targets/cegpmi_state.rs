#![no_main]

use libfuzzer_sys::fuzz_target;
use pmwb::cegpmi::CegpmiState;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(state) = CegpmiState::from_json(text) {
        assert_eq!(CegpmiState::from_json(&state.to_json()).unwrap(), state);
    }
});
