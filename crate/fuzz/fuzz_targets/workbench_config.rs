#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use pmwb_cli::WorkbenchConfig;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let _ = WorkbenchConfig::parse(&text, Path::new("fuzz.toml"), Path::new(""));
});
