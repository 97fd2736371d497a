#![no_main]

use libfuzzer_sys::fuzz_target;
use pmwb::measure::MeasurementLog;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(log) = MeasurementLog::from_jsonl(text) {
        assert_eq!(MeasurementLog::from_jsonl(&log.to_jsonl()).unwrap(), log);
    }
});
