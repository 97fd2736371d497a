//! S-expressions as printed by SMT-LIB 2 solvers.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use thiserror::Error;

use crate::exact::parse_decimal;

/// Nesting limit; deeper input is rejected rather than risking the stack.
pub const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sexp {
    Atom(String),
    /// String literal, unescaped.
    Str(String),
    List(Vec<Sexp>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SexpError {
    #[error("unexpected `)` at byte {0}")]
    UnbalancedClose(usize),
    #[error("unterminated input starting at byte {0}")]
    Unterminated(usize),
    #[error("nesting deeper than {MAX_DEPTH} at byte {0}")]
    TooDeep(usize),
}

impl Sexp {
    pub fn atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom(a) => Some(a),
            _ => None,
        }
    }

    pub fn list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self.atom()? {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        }
    }

    /// Numeric value: `3`, `3.5`, `(- x)`, `(/ x y)`.
    pub fn as_rational(&self) -> Option<BigRational> {
        match self {
            Sexp::Atom(a) => {
                if a.starts_with('-') {
                    return None;
                }
                parse_decimal(a)
            }
            Sexp::List(items) => match items.as_slice() {
                [Sexp::Atom(op), x] if op == "-" => Some(-x.as_rational()?),
                [Sexp::Atom(op), x, y] if op == "/" => {
                    let d = y.as_rational()?;
                    if d == BigRational::from_integer(BigInt::from(0)) {
                        return None;
                    }
                    Some(x.as_rational()? / d)
                }
                _ => None,
            },
            Sexp::Str(_) => None,
        }
    }

    /// Integer value: `3`, `(- 3)`.
    pub fn as_integer(&self) -> Option<BigInt> {
        let r = self.as_rational()?;
        r.is_integer().then(|| r.to_integer())
    }
}

impl fmt::Display for Sexp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sexp::Atom(a) => f.write_str(a),
            Sexp::Str(s) => write!(f, "\"{}\"", s.replace('"', "\"\"")),
            Sexp::List(items) => {
                f.write_str("(")?;
                for (n, it) in items.iter().enumerate() {
                    if n > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{it}")?;
                }
                f.write_str(")")
            }
        }
    }
}

fn is_delim(b: u8) -> bool {
    b.is_ascii_whitespace() || matches!(b, b'(' | b')' | b'"' | b';')
}

/// Parses the first complete s-expression in `input`.
///
/// Returns `Ok(None)` when `input` holds only whitespace/comments or an
/// incomplete expression (more bytes may complete it); otherwise the value and
/// the number of bytes consumed. When `at_eof` is set, a trailing atom is
/// complete and an unfinished list is an error.
pub fn parse_one(input: &str, at_eof: bool) -> Result<Option<(Sexp, usize)>, SexpError> {
    let bytes = input.as_bytes();
    let mut stack: Vec<(usize, Vec<Sexp>)> = Vec::new();
    let mut pos = 0;
    let incomplete = |start: usize| if at_eof { Err(SexpError::Unterminated(start)) } else { Ok(None) };
    loop {
        // Skip whitespace and comments.
        while pos < bytes.len() {
            match bytes[pos] {
                b if b.is_ascii_whitespace() => pos += 1,
                b';' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        if pos >= bytes.len() {
            return match stack.first() {
                Some(&(start, _)) => incomplete(start),
                None => Ok(None),
            };
        }
        let start = pos;
        let item = match bytes[pos] {
            b'(' => {
                if stack.len() >= MAX_DEPTH {
                    return Err(SexpError::TooDeep(pos));
                }
                stack.push((pos, Vec::new()));
                pos += 1;
                continue;
            }
            b')' => {
                let Some((_, items)) = stack.pop() else {
                    return Err(SexpError::UnbalancedClose(pos));
                };
                pos += 1;
                Sexp::List(items)
            }
            b'"' => {
                let mut s = String::new();
                pos += 1;
                let mut seg = pos;
                loop {
                    if pos >= bytes.len() {
                        return incomplete(start);
                    }
                    if bytes[pos] == b'"' {
                        if pos + 1 < bytes.len() && bytes[pos + 1] == b'"' {
                            s.push_str(&input[seg..=pos]);
                            pos += 2;
                            seg = pos;
                            continue;
                        }
                        if pos + 1 >= bytes.len() && !at_eof {
                            // Might be the first half of an escaped quote.
                            return Ok(None);
                        }
                        s.push_str(&input[seg..pos]);
                        pos += 1;
                        break;
                    }
                    pos += 1;
                }
                Sexp::Str(s)
            }
            b'|' => {
                match input[pos + 1..].find('|') {
                    Some(off) => {
                        pos += off + 2;
                    }
                    None => return incomplete(start),
                }
                Sexp::Atom(input[start..pos].to_string())
            }
            _ => {
                while pos < bytes.len() && !is_delim(bytes[pos]) {
                    pos += 1;
                }
                if pos >= bytes.len() && !at_eof {
                    return Ok(None);
                }
                Sexp::Atom(input[start..pos].to_string())
            }
        };
        match stack.last_mut() {
            Some((_, items)) => items.push(item),
            None => return Ok(Some((item, pos))),
        }
    }
}

/// Parses every s-expression in `input`.
pub fn parse_all(input: &str) -> Result<Vec<Sexp>, SexpError> {
    let mut out = Vec::new();
    let mut rest = input;
    let mut offset = 0;
    while let Some((sexp, used)) = parse_one(rest, true).map_err(|e| shift(e, offset))? {
        out.push(sexp);
        rest = &rest[used..];
        offset += used;
    }
    Ok(out)
}

fn shift(e: SexpError, by: usize) -> SexpError {
    match e {
        SexpError::UnbalancedClose(p) => SexpError::UnbalancedClose(p + by),
        SexpError::Unterminated(p) => SexpError::Unterminated(p + by),
        SexpError::TooDeep(p) => SexpError::TooDeep(p + by),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn a(s: &str) -> Sexp {
        Sexp::Atom(s.into())
    }

    #[test]
    fn parses_model_values() {
        let v = parse_all("((x 1)\n (y (/ 9.0 2.0))\n (z (- 3))\n (b true))").unwrap();
        assert_eq!(v.len(), 1);
        let pairs = v[0].list().unwrap();
        assert_eq!(pairs[0], Sexp::List(vec![a("x"), a("1")]));
        assert_eq!(pairs[1].list().unwrap()[1].as_rational().unwrap().to_string(), "9/2");
        assert_eq!(pairs[2].list().unwrap()[1].as_integer().unwrap(), BigInt::from(-3));
        assert_eq!(pairs[3].list().unwrap()[1].as_bool(), Some(true));
    }

    #[test]
    fn strings_and_comments() {
        let v = parse_all("; hi\n(error \"line 3: \"\"x\"\" unknown\") sat |a b|").unwrap();
        assert_eq!(v[0], Sexp::List(vec![a("error"), Sexp::Str("line 3: \"x\" unknown".into())]));
        assert_eq!(v[1], a("sat"));
        assert_eq!(v[2], a("|a b|"));
    }

    #[test]
    fn incremental() {
        assert_eq!(parse_one("(a (b", false).unwrap(), None);
        assert_eq!(parse_one("sa", false).unwrap(), None);
        assert_eq!(parse_one("sat\n", false).unwrap(), Some((a("sat"), 3)));
        assert_eq!(parse_one("  \n", false).unwrap(), None);
        assert!(matches!(parse_one("(a", true), Err(SexpError::Unterminated(0))));
    }

    #[test]
    fn errors() {
        assert_eq!(parse_all("a )"), Err(SexpError::UnbalancedClose(2)));
        assert!(matches!(parse_all(&"(".repeat(MAX_DEPTH + 1)), Err(SexpError::TooDeep(_))));
        assert!(matches!(parse_all("\"abc"), Err(SexpError::Unterminated(0))));
    }

    #[test]
    fn numeric_edge_cases() {
        assert_eq!(a("-3").as_rational(), None);
        assert_eq!(parse_all("(/ 1 0)").unwrap()[0].as_rational(), None);
        assert_eq!(parse_all("(/ 3.0 2.0)").unwrap()[0].as_integer(), None);
    }

    fn arb_sexp() -> impl Strategy<Value = Sexp> {
        let leaf = prop_oneof!["[a-z0-9_.!]{1,6}".prop_map(Sexp::Atom), "[ a-z\"]{0,6}".prop_map(Sexp::Str)];
        leaf.prop_recursive(4, 32, 5, |inner| prop::collection::vec(inner, 0..5).prop_map(Sexp::List))
    }

    proptest! {
        #[test]
        fn display_parse_round_trip(s in arb_sexp()) {
            let text = s.to_string();
            prop_assert_eq!(parse_all(&text).unwrap(), vec![s]);
        }

        #[test]
        fn never_panics(s in "\\PC{0,64}") {
            let _ = parse_all(&s);
            let _ = parse_one(&s, false);
        }
    }
}
