//! Numeric backends: IEEE doubles and exact big rationals.
//!
//! Every measure computation is generic over [`Scalar`], so the same code
//! path runs in float mode and in exact mode. System data is always parsed
//! as rationals and converted with [`Scalar::from_rational`].

use std::fmt;
use std::hash::Hash;
use std::iter::Sum;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arithmetic mode selected at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Arith {
    #[default]
    Float,
    Rational,
}

impl FromStr for Arith {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float" => Ok(Arith::Float),
            "rational" => Ok(Arith::Rational),
            other => Err(Error::Config(format!("unknown arithmetic `{other}`"))),
        }
    }
}

pub trait Scalar:
    Signed + Clone + PartialOrd + fmt::Debug + fmt::Display + Send + Sync + Sum + 'static
{
    /// Hashable identity used by memo tables.
    type Key: Hash + Eq + Clone + Send + Sync + fmt::Debug;

    const EXACT: bool;

    fn from_rational(r: &BigRational) -> Self;

    /// Float values convert exactly (every finite double is a dyadic rational).
    fn from_f64(x: f64) -> Self;

    fn to_f64(&self) -> f64;

    fn key(&self) -> Self::Key;

    /// Rational values serialize as `"num/den"` strings, floats as numbers.
    fn to_json(&self) -> serde_json::Value;

    fn to_rational(&self) -> Option<BigRational>;

    /// `a <= b` up to the tie tolerance: exact comparison for rationals,
    /// 1e-15 relative for floats.
    fn tie_le(a: &Self, b: &Self) -> bool;

    fn from_usize(n: usize) -> Self {
        Self::from_rational(&BigRational::from_integer(BigInt::from(n)))
    }

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }
}

impl Scalar for f64 {
    type Key = u64;
    const EXACT: bool = false;

    fn from_rational(r: &BigRational) -> Self {
        ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
    }

    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn key(&self) -> u64 {
        if *self == 0.0 {
            0
        } else {
            self.to_bits()
        }
    }

    fn to_json(&self) -> serde_json::Value {
        json_f64(*self)
    }

    fn to_rational(&self) -> Option<BigRational> {
        <BigRational as FromPrimitive>::from_f64(*self)
    }

    fn tie_le(a: &Self, b: &Self) -> bool {
        *a <= *b + 1e-15 * a.abs().max(b.abs())
    }
}

impl Scalar for BigRational {
    type Key = BigRational;
    const EXACT: bool = true;

    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }

    fn from_f64(x: f64) -> Self {
        <BigRational as FromPrimitive>::from_f64(x).expect("finite float")
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn key(&self) -> BigRational {
        self.clone()
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::Value::String(format!("{}/{}", self.numer(), self.denom()))
    }

    fn to_rational(&self) -> Option<BigRational> {
        Some(self.clone())
    }

    fn tie_le(a: &Self, b: &Self) -> bool {
        a <= b
    }
}

/// JSON encoding of a double; non-finite values become strings.
pub fn json_f64(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::Number::from_f64(x)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null)
    } else if x.is_nan() {
        serde_json::Value::String("nan".into())
    } else if x > 0.0 {
        serde_json::Value::String("inf".into())
    } else {
        serde_json::Value::String("-inf".into())
    }
}

/// Parses `"7/10"`, `"0.7"`, `"-3"`, `"1e-3"` into an exact rational.
pub fn parse_rational(text: &str) -> Result<BigRational> {
    let s = text.trim();
    let bad = || Error::Config(format!("not a number: `{text}`"));
    if s.is_empty() {
        return Err(bad());
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(Error::Config(format!("zero denominator in `{text}`")));
        }
        return Ok(BigRational::new(n, d));
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let all: BigInt = format!("0{int_part}{frac_part}").parse().map_err(|_| bad())?;
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10u32);
    let mut value = BigRational::from_integer(all);
    if scale >= 0 {
        value *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        value /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Ok(if neg { -value } else { value })
}

/// Exact rational for a finite double via its shortest decimal representation,
/// so that `0.7` in a config file means 7/10 rather than the nearest dyadic.
pub fn rational_from_decimal_f64(x: f64) -> Result<BigRational> {
    if !x.is_finite() {
        return Err(Error::Config(format!("non-finite number {x}")));
    }
    parse_rational(&format!("{x}"))
}

pub fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn rational_one() -> BigRational {
    BigRational::one()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fractions_and_decimals() {
        assert_eq!(parse_rational("7/10").unwrap(), ratio(7, 10));
        assert_eq!(parse_rational("0.7").unwrap(), ratio(7, 10));
        assert_eq!(parse_rational("-1.25e1").unwrap(), ratio(-25, 2));
        assert_eq!(parse_rational("3").unwrap(), ratio(3, 1));
        assert_eq!(parse_rational(".5").unwrap(), ratio(1, 2));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("").is_err());
    }

    #[test]
    fn decimal_float_is_read_as_written() {
        assert_eq!(rational_from_decimal_f64(0.3).unwrap(), ratio(3, 10));
        assert_eq!(rational_from_decimal_f64(1e-3).unwrap(), ratio(1, 1000));
    }

    #[test]
    fn tie_tolerance() {
        assert!(f64::tie_le(&(1.0 + 1e-16), &1.0));
        assert!(!f64::tie_le(&1.001, &1.0));
        assert!(!BigRational::tie_le(&ratio(1_000_001, 1_000_000), &ratio(1, 1)));
    }

    #[test]
    fn json_encodings() {
        assert_eq!(ratio(3, 7).to_json(), serde_json::json!("3/7"));
        assert_eq!(0.25f64.to_json(), serde_json::json!(0.25));
        assert_eq!(f64::NEG_INFINITY.to_json(), serde_json::json!("-inf"));
    }
}
