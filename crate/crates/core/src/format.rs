//! JSON file formats for port mappings and experiment lists.
//!
//! ```json
//! { "num_ports": 4, "instructions": [ { "name": "add", "uops": [ { "ports": [0,1], "count": 1 } ] } ] }
//! { "experiments": [ { "counts": { "add": 6, "fma": 1 } } ] }
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapping::{canonicalize, Experiment, MappingError, PortMapping, PortSet, PortUsage, MAX_PORTS};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed JSON at line {line}, column {column}: {msg}")]
    Json { line: usize, column: usize, msg: String },
    #[error("invalid mapping: {0}")]
    Mapping(#[from] MappingError),
    #[error("instruction `{insn}` lists port {port} twice")]
    DuplicatePort { insn: String, port: usize },
    #[error("experiment {index}: instruction `{insn}` has count 0")]
    ZeroCount { index: usize, insn: String },
}

impl From<serde_json::Error> for FormatError {
    fn from(e: serde_json::Error) -> Self {
        FormatError::Json {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct UopDoc {
    pub ports: Vec<usize>,
    pub count: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct InstructionDoc {
    pub name: String,
    pub uops: Vec<UopDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uop_count_override: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct MappingDoc {
    pub num_ports: usize,
    pub instructions: Vec<InstructionDoc>,
}

impl UopDoc {
    pub fn from_entry(ps: PortSet, count: u32) -> Self {
        UopDoc {
            ports: ps.ports().collect(),
            count,
        }
    }
}

/// Serializable form of a [`PortUsage`].
pub fn usage_doc(u: &PortUsage) -> Vec<UopDoc> {
    u.entries().iter().map(|&(ps, n)| UopDoc::from_entry(ps, n)).collect()
}

pub(crate) fn usage_from_doc(insn: &str, uops: &[UopDoc], n_ports: usize) -> Result<PortUsage, FormatError> {
    let mut entries = Vec::with_capacity(uops.len());
    for uop in uops {
        let mut seen = BTreeSet::new();
        for &p in &uop.ports {
            if p >= n_ports || p >= MAX_PORTS {
                return Err(MappingError::PortOutOfRange {
                    insn: insn.to_string(),
                    port: p,
                    n_ports,
                }
                .into());
            }
            if !seen.insert(p) {
                return Err(FormatError::DuplicatePort {
                    insn: insn.to_string(),
                    port: p,
                });
            }
        }
        entries.push((PortSet::from_ports(uop.ports.iter().copied()), uop.count));
    }
    Ok(PortUsage::from_entries(entries))
}

impl MappingDoc {
    pub fn from_mapping(m: &PortMapping) -> Self {
        MappingDoc {
            num_ports: m.n_ports(),
            instructions: m
                .iter()
                .map(|(id, u)| InstructionDoc {
                    name: id.to_string(),
                    uops: usage_doc(u),
                    uop_count_override: m.uop_override(id),
                })
                .collect(),
        }
    }

    /// Validates and converts to a canonical [`PortMapping`].
    pub fn to_mapping(&self) -> Result<PortMapping, FormatError> {
        let mut m = PortMapping::new(self.num_ports)?;
        for insn in &self.instructions {
            if m.contains(&insn.name) {
                return Err(MappingError::DuplicateInstruction(insn.name.clone()).into());
            }
            let usage = usage_from_doc(&insn.name, &insn.uops, self.num_ports)?;
            m.insert(insn.name.clone(), usage)?;
            m.set_uop_override(&insn.name, insn.uop_count_override)?;
        }
        Ok(canonicalize(&m))
    }
}

/// Decodes a mapping file. The result is canonical.
pub fn decode_mapping(text: &str) -> Result<PortMapping, FormatError> {
    let doc: MappingDoc = serde_json::from_str(text)?;
    doc.to_mapping()
}

pub fn encode_mapping(m: &PortMapping) -> String {
    let mut s = serde_json::to_string_pretty(&MappingDoc::from_mapping(m)).expect("mapping serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentDoc {
    pub counts: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentsDoc {
    pub experiments: Vec<ExperimentDoc>,
}

pub(crate) fn experiment_from_counts(index: usize, counts: &BTreeMap<String, u32>) -> Result<Experiment, FormatError> {
    if let Some((insn, _)) = counts.iter().find(|(_, &n)| n == 0) {
        return Err(FormatError::ZeroCount {
            index,
            insn: insn.clone(),
        });
    }
    Ok(Experiment::from_pairs(counts.iter().map(|(k, &v)| (k.clone(), v))))
}

pub fn decode_experiments(text: &str) -> Result<Vec<Experiment>, FormatError> {
    let doc: ExperimentsDoc = serde_json::from_str(text)?;
    doc.experiments
        .iter()
        .enumerate()
        .map(|(i, e)| experiment_from_counts(i, &e.counts))
        .collect()
}

pub fn encode_experiments(exps: &[Experiment]) -> String {
    let doc = ExperimentsDoc {
        experiments: exps
            .iter()
            .map(|e| ExperimentDoc {
                counts: e.counts().clone(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("experiments serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::tests::{arb_mapping, fma_example, ps};
    use proptest::prelude::*;

    #[test]
    fn decode_spec_example() {
        let m = decode_mapping(
            r#"{ "num_ports": 10, "instructions": [ { "name": "add", "uops": [ { "ports": [6,7,8,9], "count": 1 } ] } ] }"#,
        )
        .unwrap();
        assert_eq!(m.n_ports(), 10);
        assert_eq!(m.usage("add").unwrap().entries(), &[(ps(&[6, 7, 8, 9]), 1)]);
    }

    #[test]
    fn decode_rejects_bad_input() {
        assert!(matches!(decode_mapping(""), Err(FormatError::Json { .. })));
        assert!(matches!(
            decode_mapping(r#"{"num_ports":2,"instructions":[{"name":"a","uops":[{"ports":[2],"count":1}]}]}"#),
            Err(FormatError::Mapping(MappingError::PortOutOfRange { port: 2, .. }))
        ));
        assert!(matches!(
            decode_mapping(r#"{"num_ports":2,"instructions":[{"name":"a","uops":[{"ports":[],"count":1}]}]}"#),
            Err(FormatError::Mapping(MappingError::EmptyPortSet(_)))
        ));
        assert!(matches!(
            decode_mapping(r#"{"num_ports":2,"instructions":[{"name":"a","uops":[{"ports":[1,1],"count":1}]}]}"#),
            Err(FormatError::DuplicatePort { port: 1, .. })
        ));
        assert!(matches!(
            decode_mapping(
                r#"{"num_ports":2,"instructions":[{"name":"a","uops":[{"ports":[1],"count":1}]},{"name":"a","uops":[{"ports":[0],"count":1}]}]}"#
            ),
            Err(FormatError::Mapping(MappingError::DuplicateInstruction(_)))
        ));
        assert!(matches!(
            decode_mapping(r#"{"num_ports":2,"instructions":[],"extra":1}"#),
            Err(FormatError::Json { .. })
        ));
        assert!(matches!(
            decode_mapping(r#"{"num_ports":99,"instructions":[]}"#),
            Err(FormatError::Mapping(MappingError::PortCountOutOfRange(99)))
        ));
    }

    #[test]
    fn json_error_reports_position() {
        match decode_mapping("{\n  \"num_ports\": ,\n}") {
            Err(FormatError::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn experiments_round_trip() {
        let exps = vec![
            Experiment::from_pairs([("add", 6), ("fma", 1)]),
            Experiment::new(),
            Experiment::singleton("mul"),
        ];
        assert_eq!(decode_experiments(&encode_experiments(&exps)).unwrap(), exps);
        assert!(matches!(
            decode_experiments(r#"{"experiments":[{"counts":{"a":0}}]}"#),
            Err(FormatError::ZeroCount { index: 0, .. })
        ));
    }

    #[test]
    fn override_survives_round_trip() {
        let mut m = fma_example();
        m.set_uop_override("fma", Some(2)).unwrap();
        let back = decode_mapping(&encode_mapping(&m)).unwrap();
        assert_eq!(back.uop_override("fma"), Some(2));
    }

    proptest! {
        #[test]
        fn decode_encode_is_canonicalize(m in arb_mapping()) {
            prop_assert_eq!(decode_mapping(&encode_mapping(&m)).unwrap(), canonicalize(&m));
        }
    }
}
