//! Port-mapping inference workbench.
//!
//! Infers CPU port mappings from throughput and total-μop measurements only,
//! combining blocking-instruction discovery, counter-example-guided SMT search
//! for the blocking instructions' ports, and surplus-cycle characterization of
//! every other instruction. A simulated CPU ([`vcpu`]) stands in for hardware.

pub mod exact;
pub mod format;
pub mod mapping;
pub mod blocking;
pub mod cegpmi;
pub mod charmap;
pub mod eval;
pub mod measure;
pub mod smt;
pub mod solver;
pub mod vcpu;

pub use mapping::{canonicalize, experiment_size, uop_mass, Experiment, InstructionScheme, MappingError, PortMapping, PortSet, PortUsage};
