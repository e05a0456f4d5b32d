//! Exact rational coefficients for tableau storage.
//!
//! Registry tableaux are kept as `i64` rationals so that row-sum consistency
//! and the order conditions can be checked exactly; they are converted to
//! `f64` once, at solver setup. Configuration files may spell coefficients
//! either as rational strings (`"1/6"`, `"-1/3"`) or as plain numbers.

use num::rational::Ratio;
use num::{ToPrimitive, Zero};
use serde::Deserialize;

use crate::error::{Error, Result};

pub type Rational = Ratio<i64>;

/// Parses `"p"`, `"p/q"` or a decimal string into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::BadRational(s.to_string());
    if s.is_empty() {
        return Err(bad());
    }
    if let Some((num, den)) = s.split_once('/') {
        let p: i64 = num.trim().parse().map_err(|_| bad())?;
        let q: i64 = den.trim().parse().map_err(|_| bad())?;
        if q == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(p, q));
    }
    if let Ok(p) = s.parse::<i64>() {
        return Ok(Ratio::from_integer(p));
    }
    // Decimal literal: keep it exact (e.g. "0.385" -> 385/1000).
    if let Ok(v) = s.parse::<f64>() {
        if !v.is_finite() {
            return Err(bad());
        }
        if let Some((mantissa, digits)) = decimal_parts(s) {
            let den = 10i64.checked_pow(digits).ok_or_else(bad)?;
            return Ok(Ratio::new(mantissa, den));
        }
        return Ratio::approximate_float(v).ok_or_else(bad);
    }
    Err(bad())
}

fn decimal_parts(s: &str) -> Option<(i64, u32)> {
    let (int_part, frac_part) = s.split_once('.')?;
    if frac_part.is_empty() || frac_part.len() > 15 || frac_part.contains(['e', 'E']) {
        return None;
    }
    let digits = frac_part.len() as u32;
    let negative = int_part.starts_with('-');
    let int_val: i64 = if int_part == "-" || int_part.is_empty() {
        0
    } else {
        int_part.parse().ok()?
    };
    let frac_val: i64 = frac_part.parse().ok()?;
    let scale = 10i64.checked_pow(digits)?;
    let magnitude = i64::try_from(int_val.unsigned_abs())
        .ok()?
        .checked_mul(scale)?
        .checked_add(frac_val)?;
    Some((if negative { -magnitude } else { magnitude }, digits))
}

pub fn to_f64(r: Rational) -> f64 {
    r.to_f64().expect("rational representable as f64")
}

/// A tableau coefficient as it appears in a configuration file.
///
/// Exact when written as an integer or a rational/decimal string; approximate
/// when written as a float. A pair built only from exact entries is validated
/// with exact arithmetic, otherwise with a 1e-12 componentwise tolerance.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Coeff {
    Num(f64),
    Text(String),
}

impl Coeff {
    pub fn resolve(&self) -> Result<(f64, Option<Rational>)> {
        match self {
            Coeff::Num(v) => {
                if !v.is_finite() {
                    return Err(Error::BadRational(v.to_string()));
                }
                // Integers written without quotes stay exact.
                if v.fract() == 0.0 && v.abs() < 2e18 {
                    Ok((*v, Some(Ratio::from_integer(*v as i64))))
                } else {
                    Ok((*v, None))
                }
            }
            Coeff::Text(s) => {
                let r = parse_rational(s)?;
                Ok((to_f64(r), Some(r)))
            }
        }
    }
}

pub fn rational_is_zero(r: &Rational) -> bool {
    r.is_zero()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simple_fractions() {
        assert_eq!(parse_rational("1/6").unwrap(), Ratio::new(1, 6));
        assert_eq!(parse_rational("-1/3").unwrap(), Ratio::new(-1, 3));
        assert_eq!(parse_rational(" 5 / 4 ").unwrap(), Ratio::new(5, 4));
        assert_eq!(parse_rational("3").unwrap(), Ratio::from_integer(3));
        assert_eq!(parse_rational("-0").unwrap(), Ratio::from_integer(0));
    }

    #[test]
    fn parses_decimals_exactly() {
        assert_eq!(parse_rational("0.385").unwrap(), Ratio::new(385, 1000));
        assert_eq!(parse_rational("-0.5").unwrap(), Ratio::new(-1, 2));
        assert_eq!(parse_rational("1.25").unwrap(), Ratio::new(5, 4));
    }

    #[test]
    fn rejects_garbage() {
        for s in ["", "a/b", "1/0", "1//2", "nan", "inf", "--3"] {
            assert!(parse_rational(s).is_err(), "accepted {s:?}");
        }
    }

    #[test]
    fn huge_decimals_fall_back_without_overflow() {
        // Exact decimal decomposition would overflow i64 here; the parser
        // must degrade to the float approximation instead of panicking.
        let r = parse_rational("44440000068944635.5799713").unwrap();
        assert!(to_f64(r).is_finite());
        // Beyond the representable range it must error, still without
        // panicking.
        assert!(parse_rational("-999223372036854775808.5").is_err());
    }
}
