//! Exact throughput model of the port-mapping abstraction.
//!
//! The inverse throughput of an experiment is the optimum of the port
//! assignment LP. An assignment is optimal exactly when some nonempty port set
//! `Q` is saturated by μops that can only run inside `Q`, so the optimum is
//!
//! ```text
//! max over nonempty Q of  mass(μops whose port set ⊆ Q) / |Q|
//! ```
//!
//! which [`bottleneck_throughput`] evaluates by enumerating all `2^n` port
//! subsets in exact rationals. [`lp_throughput_oracle`] recomputes the same
//! value by a different route (max-flow feasibility) and exists to check it.

mod flow;

use std::hash::Hasher;

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::mapping::{integral_uop_mass, Experiment, MappingError, PortMapping, PortSet};

pub type Throughput = Ratio<i64>;

/// Configuration of the simulated CPU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Sustained instructions-per-cycle ceiling outside the port mapping.
    #[serde(default, with = "opt_rate")]
    pub r_max: Option<Ratio<i64>>,
    /// Standard deviation of the relative multiplicative noise on cycles.
    #[serde(default)]
    pub noise_rel_std: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            r_max: None,
            noise_rel_std: 0.0,
            rng_seed: 0,
        }
    }
}

/// Serde adapter: an optional rate written as a plain JSON/TOML number.
pub mod opt_rate {
    use num_rational::Ratio;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use crate::exact::{decimal_ratio64, ratio64_to_f64};

    pub fn serialize<S: Serializer>(v: &Option<Ratio<i64>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(r) => s.serialize_some(&ratio64_to_f64(*r)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Ratio<i64>>, D::Error> {
        match Option::<f64>::deserialize(d)? {
            None => Ok(None),
            Some(x) if x.is_finite() && x > 0.0 => decimal_ratio64(x)
                .map(Some)
                .ok_or_else(|| D::Error::custom(format!("rate {x} has too many digits"))),
            Some(x) => Err(D::Error::custom(format!("rate must be positive and finite, got {x}"))),
        }
    }
}

/// Inverse throughput of `e` under `m`, ignoring any pipeline bottleneck.
pub fn bottleneck_throughput(m: &PortMapping, e: &Experiment) -> Result<Throughput, MappingError> {
    let mass = integral_uop_mass(m, e)?;
    let n = m.n_ports();
    let full = 1usize << n;
    let mut sub = vec![0i64; full];
    for (ps, w) in mass {
        sub[ps.bits() as usize] += w;
    }
    // Subset-sum transform: sub[Q] = Σ mass over port sets q ⊆ Q.
    for b in 0..n {
        let bit = 1usize << b;
        for q in 0..full {
            if q & bit != 0 {
                sub[q] += sub[q ^ bit];
            }
        }
    }
    let (mut best_num, mut best_den) = (0i64, 1i64);
    for (q, &total) in sub.iter().enumerate().skip(1) {
        let card = i64::from((q as u32).count_ones());
        if i128::from(total) * i128::from(best_den) > i128::from(best_num) * i128::from(card) {
            best_num = total;
            best_den = card;
        }
    }
    Ok(Ratio::new(best_num, best_den))
}

/// Independent recomputation of [`bottleneck_throughput`].
///
/// For every candidate `t = mass(Q)/|Q|` (ascending) this checks whether all
/// μop mass can be routed to admissible ports with per-port capacity `t`, using
/// integer max-flow on the scaled network; the first feasible candidate wins.
pub fn lp_throughput_oracle(m: &PortMapping, e: &Experiment) -> Result<Throughput, MappingError> {
    let mass: Vec<(PortSet, i64)> = integral_uop_mass(m, e)?.into_iter().collect();
    let total: i64 = mass.iter().map(|&(_, w)| w).sum();
    if total == 0 {
        return Ok(Ratio::from_integer(0));
    }
    let n = m.n_ports();
    let mut candidates: Vec<Ratio<i64>> = (1u32..(1 << n))
        .map(|q| {
            let q = PortSet::from_bits(q as u16);
            let inside: i64 = mass.iter().filter(|(ps, _)| ps.is_subset(q)).map(|&(_, w)| w).sum();
            Ratio::new(inside, q.len() as i64)
        })
        .collect();
    candidates.sort();
    candidates.dedup();
    for t in candidates {
        if assignment_feasible(&mass, n, t) {
            return Ok(t);
        }
    }
    unreachable!("t = total mass is always feasible")
}

fn assignment_feasible(mass: &[(PortSet, i64)], n_ports: usize, t: Ratio<i64>) -> bool {
    // Scale by the denominator of t so that all capacities are integral.
    let scale = *t.denom();
    let port_cap = *t.numer();
    let source = 0;
    let sink = 1;
    let uop_node = |i: usize| 2 + i;
    let port_node = |k: usize| 2 + mass.len() + k;
    let mut net = flow::Dinic::new(2 + mass.len() + n_ports);
    let mut demand = 0;
    for (i, &(ps, w)) in mass.iter().enumerate() {
        net.add_edge(source, uop_node(i), w * scale);
        demand += w * scale;
        for k in ps.ports() {
            net.add_edge(uop_node(i), port_node(k), i64::MAX / 4);
        }
    }
    for k in 0..n_ports {
        net.add_edge(port_node(k), sink, port_cap);
    }
    net.max_flow(source, sink) == demand
}

/// Model throughput clipped by the retirement bound: `max(t, |e| / r_max)`.
pub fn clipped_throughput(
    m: &PortMapping,
    e: &Experiment,
    r_max: Option<Ratio<i64>>,
) -> Result<Throughput, MappingError> {
    let t = bottleneck_throughput(m, e)?;
    Ok(match r_max {
        Some(r) => t.max(Ratio::from_integer(e.size() as i64) / r),
        None => t,
    })
}

/// Cycles for one observation of `e`, i.e. the clipped model throughput with
/// multiplicative Gaussian noise. Equivalent to `simulate_cycles_nth(.., 0)`.
pub fn simulate_cycles(m: &PortMapping, e: &Experiment, cfg: &SimConfig) -> Result<f64, MappingError> {
    simulate_cycles_nth(m, e, cfg, 0)
}

/// The `draw`-th observation of `e`. The noise stream is a pure function of
/// `(cfg.rng_seed, e, draw)`.
pub fn simulate_cycles_nth(m: &PortMapping, e: &Experiment, cfg: &SimConfig, draw: u64) -> Result<f64, MappingError> {
    let t = clipped_throughput(m, e, cfg.r_max)?;
    let exact = *t.numer() as f64 / *t.denom() as f64;
    if cfg.noise_rel_std <= 0.0 || exact == 0.0 {
        return Ok(exact);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(cfg.rng_seed, e, draw));
    let g = Normal::new(0.0, cfg.noise_rel_std)
        .expect("finite standard deviation")
        .sample(&mut rng);
    Ok((exact * (1.0 + g)).max(0.0))
}

/// Total μop count as reported by the (possibly miscounting) μop counter.
pub fn simulate_uops(m: &PortMapping, e: &Experiment) -> Result<u64, MappingError> {
    let mut total = 0;
    for (id, n) in e.iter() {
        let per = match m.uop_override(id) {
            Some(c) => u64::from(c),
            None => m.try_usage(id)?.uop_count(),
        };
        total += u64::from(n) * per;
    }
    Ok(total)
}

fn noise_seed(seed: u64, e: &Experiment, draw: u64) -> u64 {
    let mut h = Fnv64::default();
    h.write_u64(seed);
    for (id, n) in e.iter() {
        h.write(id.as_bytes());
        h.write_u8(0xff);
        h.write_u32(n);
    }
    h.write_u64(draw);
    h.finish()
}

/// FNV-1a; stable across platforms and toolchains.
struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }
}

impl Hasher for Fnv64 {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}
