//! Port mappings, experiments and port usages.
//!
//! A port mapping is the tripartite relation instruction → μops → ports. Each
//! instruction's μops are stored as a [`PortUsage`]: a multiset of admissible
//! port sets. The μop→port edges are implicit in each entry's [`PortSet`].

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use thiserror::Error;

/// Upper bound on the number of ports a mapping may have.
pub const MAX_PORTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MappingError {
    #[error("unknown instruction `{0}`")]
    UnknownInstruction(String),
    #[error("port count {0} out of range 1..={MAX_PORTS}")]
    PortCountOutOfRange(usize),
    #[error("instruction `{insn}` uses port {port}, but the mapping has only {n_ports} ports")]
    PortOutOfRange { insn: String, port: usize, n_ports: usize },
    #[error("instruction `{0}` has a μop with an empty port set")]
    EmptyPortSet(String),
    #[error("instruction `{0}` has a μop with multiplicity 0")]
    ZeroMultiplicity(String),
    #[error("duplicate instruction `{0}`")]
    DuplicateInstruction(String),
}

/// Set of port indices, stored as a bit vector.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PortSet(u16);

impl PortSet {
    pub const EMPTY: PortSet = PortSet(0);

    pub const fn from_bits(bits: u16) -> Self {
        PortSet(bits)
    }

    /// Builds a set from port indices. Indices must be below [`MAX_PORTS`].
    pub fn from_ports<I: IntoIterator<Item = usize>>(ports: I) -> Self {
        let mut bits = 0u16;
        for p in ports {
            assert!(p < MAX_PORTS, "port index {p} exceeds {MAX_PORTS}");
            bits |= 1 << p;
        }
        PortSet(bits)
    }

    /// The set `{0, .., n-1}`.
    pub fn all(n_ports: usize) -> Self {
        assert!(n_ports <= MAX_PORTS);
        if n_ports == MAX_PORTS {
            PortSet(u16::MAX)
        } else {
            PortSet((1u16 << n_ports) - 1)
        }
    }

    pub const fn bits(self) -> u16 {
        self.0
    }

    pub const fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub const fn contains(self, port: usize) -> bool {
        port < MAX_PORTS && self.0 & (1 << port) != 0
    }

    pub const fn is_subset(self, other: PortSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub const fn is_proper_subset(self, other: PortSet) -> bool {
        self.is_subset(other) && self.0 != other.0
    }

    /// True when every member is below `n_ports`.
    pub fn fits(self, n_ports: usize) -> bool {
        n_ports >= MAX_PORTS || self.0 >> n_ports == 0
    }

    pub fn ports(self) -> impl Iterator<Item = usize> {
        (0..MAX_PORTS).filter(move |&p| self.contains(p))
    }

    /// Canonical order: by cardinality, then by bit pattern.
    pub fn canonical_key(self) -> (u32, u16) {
        (self.0.count_ones(), self.0)
    }

    /// Applies a port permutation given as `perm[old] = new`.
    pub fn permute(self, perm: &[usize]) -> PortSet {
        PortSet::from_ports(self.ports().map(|p| perm[p]))
    }
}

impl fmt::Debug for PortSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for PortSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (n, p) in self.ports().enumerate() {
            if n > 0 {
                f.write_str(",")?;
            }
            write!(f, "{p}")?;
        }
        f.write_str("}")
    }
}

/// An instruction scheme identifier with an optional manual μop count.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstructionScheme {
    pub id: String,
    pub uop_count_override: Option<u32>,
}

/// Multiset of μops of one instruction, each μop given by its port set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PortUsage {
    entries: Vec<(PortSet, u32)>,
}

impl PortUsage {
    /// Wraps raw entries without merging. Use [`PortUsage::canonical`] for the
    /// merged, sorted form.
    pub fn from_entries(entries: Vec<(PortSet, u32)>) -> Self {
        PortUsage { entries }
    }

    /// A single-μop usage.
    pub fn single(ports: PortSet) -> Self {
        PortUsage { entries: vec![(ports, 1)] }
    }

    pub fn entries(&self) -> &[(PortSet, u32)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of μops.
    pub fn uop_count(&self) -> u64 {
        self.entries.iter().map(|&(_, n)| u64::from(n)).sum()
    }

    /// Merges duplicate port sets and sorts entries by `(cardinality, bits)`.
    /// Zero multiplicities are dropped.
    pub fn canonical(&self) -> PortUsage {
        let mut merged: BTreeMap<(u32, u16), u32> = BTreeMap::new();
        for &(ps, n) in &self.entries {
            if n > 0 {
                *merged.entry(ps.canonical_key()).or_default() += n;
            }
        }
        PortUsage {
            entries: merged
                .into_iter()
                .map(|((_, bits), n)| (PortSet::from_bits(bits), n))
                .collect(),
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.entries.iter().all(|&(_, n)| n > 0)
            && self
                .entries
                .windows(2)
                .all(|w| w[0].0.canonical_key() < w[1].0.canonical_key())
    }

    /// Multiplicity of an exact port set.
    pub fn multiplicity(&self, ports: PortSet) -> u32 {
        self.entries
            .iter()
            .filter(|&&(ps, _)| ps == ports)
            .map(|&(_, n)| n)
            .sum()
    }

    pub fn permute(&self, perm: &[usize]) -> PortUsage {
        PortUsage {
            entries: self.entries.iter().map(|&(ps, n)| (ps.permute(perm), n)).collect(),
        }
    }
}

impl fmt::Display for PortUsage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (n, (ps, m)) in self.entries.iter().enumerate() {
            if n > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{m}x{ps}")?;
        }
        f.write_str("]")
    }
}

/// A port mapping over `n_ports` ports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortMapping {
    n_ports: usize,
    usage: BTreeMap<String, PortUsage>,
    uop_overrides: BTreeMap<String, u32>,
}

impl PortMapping {
    pub fn new(n_ports: usize) -> Result<Self, MappingError> {
        if n_ports == 0 || n_ports > MAX_PORTS {
            return Err(MappingError::PortCountOutOfRange(n_ports));
        }
        Ok(PortMapping {
            n_ports,
            usage: BTreeMap::new(),
            uop_overrides: BTreeMap::new(),
        })
    }

    /// Adds (or replaces) an instruction. Port sets are validated against the
    /// mapping's port count.
    pub fn insert(&mut self, id: impl Into<String>, usage: PortUsage) -> Result<(), MappingError> {
        let id = id.into();
        for &(ps, n) in usage.entries() {
            if ps.is_empty() {
                return Err(MappingError::EmptyPortSet(id));
            }
            if n == 0 {
                return Err(MappingError::ZeroMultiplicity(id));
            }
            if !ps.fits(self.n_ports) {
                let port = ps.ports().last().unwrap_or_default();
                return Err(MappingError::PortOutOfRange {
                    insn: id,
                    port,
                    n_ports: self.n_ports,
                });
            }
        }
        self.usage.insert(id, usage);
        Ok(())
    }

    /// Builder-style [`PortMapping::insert`].
    pub fn with(mut self, id: impl Into<String>, usage: PortUsage) -> Result<Self, MappingError> {
        self.insert(id, usage)?;
        Ok(self)
    }

    pub fn set_uop_override(&mut self, id: &str, count: Option<u32>) -> Result<(), MappingError> {
        if !self.usage.contains_key(id) {
            return Err(MappingError::UnknownInstruction(id.to_string()));
        }
        match count {
            Some(c) => self.uop_overrides.insert(id.to_string(), c),
            None => self.uop_overrides.remove(id),
        };
        Ok(())
    }

    pub fn n_ports(&self) -> usize {
        self.n_ports
    }

    pub fn len(&self) -> usize {
        self.usage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.usage.is_empty()
    }

    pub fn usage(&self, id: &str) -> Option<&PortUsage> {
        self.usage.get(id)
    }

    pub fn try_usage(&self, id: &str) -> Result<&PortUsage, MappingError> {
        self.usage
            .get(id)
            .ok_or_else(|| MappingError::UnknownInstruction(id.to_string()))
    }

    pub fn uop_override(&self, id: &str) -> Option<u32> {
        self.uop_overrides.get(id).copied()
    }

    /// Instruction ids in sorted order.
    pub fn instructions(&self) -> impl Iterator<Item = &str> {
        self.usage.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PortUsage)> {
        self.usage.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn schemes(&self) -> impl Iterator<Item = InstructionScheme> + '_ {
        self.usage.keys().map(|id| InstructionScheme {
            id: id.clone(),
            uop_count_override: self.uop_override(id),
        })
    }

    pub fn contains(&self, id: &str) -> bool {
        self.usage.contains_key(id)
    }

    /// Mapping restricted to the given instructions.
    pub fn restrict<'a, I: IntoIterator<Item = &'a str>>(&self, ids: I) -> Result<PortMapping, MappingError> {
        let mut out = PortMapping::new(self.n_ports)?;
        for id in ids {
            out.usage.insert(id.to_string(), self.try_usage(id)?.clone());
            if let Some(c) = self.uop_override(id) {
                out.uop_overrides.insert(id.to_string(), c);
            }
        }
        Ok(out)
    }

    /// Same mapping with ports renamed by `perm[old] = new`.
    pub fn permute_ports(&self, perm: &[usize]) -> PortMapping {
        assert_eq!(perm.len(), self.n_ports);
        PortMapping {
            n_ports: self.n_ports,
            usage: self.usage.iter().map(|(k, u)| (k.clone(), u.permute(perm))).collect(),
            uop_overrides: self.uop_overrides.clone(),
        }
    }

    /// True when some renaming of ports makes the canonical forms equal.
    /// Brute force over all permutations; intended for small port counts.
    pub fn equal_up_to_port_renaming(&self, other: &PortMapping) -> bool {
        if self.n_ports != other.n_ports
            || self.usage.len() != other.usage.len()
            || self.usage.keys().ne(other.usage.keys())
        {
            return false;
        }
        let target = canonicalize(other);
        let mut perm: Vec<usize> = (0..self.n_ports).collect();
        loop {
            if canonicalize(&self.permute_ports(&perm)) == target {
                return true;
            }
            if !next_permutation(&mut perm) {
                return false;
            }
        }
    }
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Merges duplicate port sets in every usage and sorts entries. Idempotent.
pub fn canonicalize(m: &PortMapping) -> PortMapping {
    PortMapping {
        n_ports: m.n_ports,
        usage: m.usage.iter().map(|(k, u)| (k.clone(), u.canonical())).collect(),
        uop_overrides: m.uop_overrides.clone(),
    }
}

/// A multiset of instruction ids. Zero counts are never stored.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Experiment {
    counts: BTreeMap<String, u32>,
}

impl Experiment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn singleton(id: impl Into<String>) -> Self {
        Self::default().with(id, 1)
    }

    pub fn from_pairs<S: Into<String>, I: IntoIterator<Item = (S, u32)>>(pairs: I) -> Self {
        let mut e = Experiment::new();
        for (id, n) in pairs {
            e.add(id, n);
        }
        e
    }

    /// Adds `n` occurrences of `id`.
    pub fn add(&mut self, id: impl Into<String>, n: u32) {
        if n > 0 {
            *self.counts.entry(id.into()).or_default() += n;
        }
    }

    pub fn with(mut self, id: impl Into<String>, n: u32) -> Self {
        self.add(id, n);
        self
    }

    pub fn count(&self, id: &str) -> u32 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<String, u32> {
        &self.counts
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.counts.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn instructions(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `|e|`, the total number of instruction instances.
    pub fn size(&self) -> u64 {
        self.counts.values().map(|&n| u64::from(n)).sum()
    }

    /// Every count multiplied by `factor`.
    pub fn scaled(&self, factor: u32) -> Experiment {
        Experiment::from_pairs(self.counts.iter().map(|(k, &v)| (k.clone(), v * factor)))
    }

    /// Multiset union.
    pub fn union(&self, other: &Experiment) -> Experiment {
        let mut out = self.clone();
        for (k, v) in other.iter() {
            out.add(k, v);
        }
        out
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (n, (k, v)) in self.counts.iter().enumerate() {
            if n > 0 {
                f.write_str(", ")?;
            }
            if *v == 1 {
                write!(f, "{k}")?;
            } else {
                write!(f, "{v}x{k}")?;
            }
        }
        f.write_str("]")
    }
}

pub fn experiment_size(e: &Experiment) -> u64 {
    e.size()
}

/// Total μop mass per distinct port set for experiment `e`.
pub fn uop_mass(m: &PortMapping, e: &Experiment) -> Result<BTreeMap<PortSet, Ratio<i64>>, MappingError> {
    Ok(integral_uop_mass(m, e)?
        .into_iter()
        .map(|(ps, n)| (ps, Ratio::from_integer(n)))
        .collect())
}

/// Same as [`uop_mass`], as plain integers (masses are always integral here).
pub(crate) fn integral_uop_mass(m: &PortMapping, e: &Experiment) -> Result<BTreeMap<PortSet, i64>, MappingError> {
    let mut out: BTreeMap<PortSet, i64> = BTreeMap::new();
    for (id, count) in e.iter() {
        for &(ps, mult) in m.try_usage(id)?.entries() {
            *out.entry(ps).or_default() += i64::from(count) * i64::from(mult);
        }
    }
    Ok(out)
}

impl PartialOrd for PortSet {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PortSet {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.canonical_key().cmp(&other.canonical_key())
    }
}
