//! Replays the checked-in fuzz corpus through the same entry points and
//! round-trip checks as the fuzz targets.

use std::path::{Path, PathBuf};

use pmwb::cegpmi::CegpmiState;
use pmwb::format::{decode_experiments, decode_mapping, encode_experiments, encode_mapping};
use pmwb::measure::MeasurementLog;
use pmwb::smt::{parse_all, parse_one};
use pmwb_cli::WorkbenchConfig;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(PathBuf, String)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let text = String::from_utf8_lossy(&std::fs::read(&p).unwrap()).into_owned();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn mapping_json() {
    for (p, text) in seeds("mapping_json") {
        let m = decode_mapping(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(decode_mapping(&encode_mapping(&m)).unwrap(), m);
    }
}

#[test]
fn experiments_json() {
    for (p, text) in seeds("experiments_json") {
        let exps = decode_experiments(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(decode_experiments(&encode_experiments(&exps)).unwrap(), exps);
    }
}

#[test]
fn measurement_log() {
    for (p, text) in seeds("measurement_log") {
        let log = MeasurementLog::from_jsonl(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(MeasurementLog::from_jsonl(&log.to_jsonl()).unwrap(), log);
    }
}

#[test]
fn smt_sexp() {
    for (p, text) in seeds("smt_sexp") {
        let all = parse_all(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(!all.is_empty());
        let (_, used) = parse_one(&text, false).unwrap().unwrap();
        assert!(used <= text.len());
    }
}

#[test]
fn cegpmi_state() {
    for (p, text) in seeds("cegpmi_state") {
        let s = CegpmiState::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(CegpmiState::from_json(&s.to_json()).unwrap(), s);
    }
}

#[test]
fn workbench_config() {
    for (p, text) in seeds("workbench_config") {
        // Seeds name files relative to a directory that does not exist here.
        let parsed = WorkbenchConfig::parse(&text, &p, Path::new(""));
        if let Err(e) = parsed {
            assert!(e.to_string().contains("does not exist"), "{}: {e}", p.display());
        }
    }
}
