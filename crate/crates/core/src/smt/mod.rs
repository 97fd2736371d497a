//! SMT-LIB 2 plumbing: response parsing and the solver process session.

pub mod session;
pub mod sexp;

pub use session::{CheckResult, SmtError, SmtSession};
pub use sexp::{parse_all, parse_one, Sexp, SexpError};

/// Solver command used when nothing else is configured.
pub const DEFAULT_SOLVER: &str = "z3 -in";
