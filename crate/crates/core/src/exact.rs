//! Exact rational views of decimal quantities.
//!
//! Measured cycles and tolerances arrive as `f64`. Everywhere a float has to be
//! compared exactly against model throughputs (SMT constants, soundness checks)
//! it is first turned into the rational denoted by its shortest round-trip
//! decimal representation, so "0.02" means exactly 1/50 on both sides.

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, Zero};

/// Rational value of the shortest decimal that round-trips to `x`.
///
/// Panics on non-finite input.
pub fn decimal_ratio(x: f64) -> BigRational {
    assert!(x.is_finite(), "non-finite value {x}");
    parse_decimal(&format!("{x}")).expect("Display of a finite f64 is a decimal")
}

/// Parses `[-]digits[.digits]`.
pub fn parse_decimal(s: &str) -> Option<BigRational> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let den = num_traits::pow(BigInt::from(10), frac.len());
    let r = BigRational::new(digits, den);
    Some(if neg { -r } else { r })
}

pub fn big(r: Ratio<i64>) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

pub fn to_f64(r: &BigRational) -> f64 {
    // Good enough for display and prediction; exact comparisons stay rational.
    let n: f64 = r.numer().to_string().parse().unwrap_or(f64::NAN);
    let d: f64 = r.denom().to_string().parse().unwrap_or(f64::NAN);
    n / d
}

pub fn ratio64_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Converts an `f64` with a short decimal form (e.g. a configured IPC limit)
/// into a 64-bit rational. Returns `None` if it does not fit.
pub fn decimal_ratio64(x: f64) -> Option<Ratio<i64>> {
    let r = decimal_ratio(x);
    let n = i64::try_from(r.numer().clone()).ok()?;
    let d = i64::try_from(r.denom().clone()).ok()?;
    Some(Ratio::new(n, d))
}

/// SMT-LIB real literal: `3.0`, `(/ 9.0 2.0)`, `(- 1.0)`.
pub fn smt_real(r: &BigRational) -> String {
    let mag = r.abs();
    let body = if mag.denom().is_one() {
        format!("{}.0", mag.numer())
    } else {
        format!("(/ {}.0 {}.0)", mag.numer(), mag.denom())
    };
    if r.is_negative() {
        format!("(- {body})")
    } else {
        body
    }
}

pub fn smt_real_f64(x: f64) -> String {
    smt_real(&decimal_ratio(x))
}

pub fn is_zero(r: &BigRational) -> bool {
    r.is_zero()
}
