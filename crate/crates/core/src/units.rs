//! Token counts and mixture fractions, with the SI/percent conventions used
//! at every user-facing boundary.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default scale applied to raw token counts before exponentiation.
pub const DEFAULT_TOKEN_UNIT: TokenCount = TokenCount(1_000_000_000);

const SI_SUFFIXES: [(char, u64); 4] = [('T', 1_000_000_000_000), ('B', 1_000_000_000), ('M', 1_000_000), ('K', 1_000)];

/// A nonnegative number of tokens, stored exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TokenCount(pub u64);

impl TokenCount {
    pub const ZERO: TokenCount = TokenCount(0);

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    /// Rounds a real token count to the nearest representable count.
    pub fn from_f64_rounded(tokens: f64) -> Result<Self> {
        if !tokens.is_finite() || tokens < 0.0 || tokens > u64::MAX as f64 {
            return Err(Error::Domain(format!("token count {tokens} is not representable")));
        }
        Ok(TokenCount(tokens.round() as u64))
    }

    /// `units` multiples of `unit`, rounded to whole tokens.
    pub fn from_units(units: f64, unit: TokenCount) -> Result<Self> {
        Self::from_f64_rounded(units * unit.as_f64())
    }

    pub fn to_rational(self) -> BigRational {
        BigRational::from_integer(BigInt::from(self.0))
    }
}

impl fmt::Display for TokenCount {
    /// Shortest SI rendering that is still exact, e.g. `40B`, `300M`, `1234`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0 {
            return write!(f, "0");
        }
        for (suffix, scale) in SI_SUFFIXES {
            if self.0.is_multiple_of(scale) {
                return write!(f, "{}{}", self.0 / scale, suffix);
            }
        }
        write!(f, "{}", self.0)
    }
}

impl FromStr for TokenCount {
    type Err = Error;

    /// Accepts integer literals (`40000000000`), SI-suffixed values
    /// (`40B`, `1.5B`, `300M`) and plain scientific notation (`4e10`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Format(format!("invalid token count `{s}`"));
        if s.is_empty() {
            return Err(bad());
        }
        if let Ok(v) = s.replace('_', "").parse::<u64>() {
            return Ok(TokenCount(v));
        }
        let upper = s.chars().last().map(|c| c.to_ascii_uppercase());
        let (mantissa, scale) = match SI_SUFFIXES.iter().find(|(c, _)| Some(*c) == upper) {
            Some((_, scale)) => (&s[..s.len() - 1], *scale),
            None => (s, 1),
        };
        let exact = parse_decimal(mantissa.trim())
            .or_else(|| mantissa.trim().parse::<f64>().ok().and_then(BigRational::from_float))
            .ok_or_else(bad)?;
        let value = exact * BigRational::from_integer(BigInt::from(scale));
        if value < BigRational::zero() || !value.is_integer() {
            return Err(bad());
        }
        value.to_integer().to_u64().map(TokenCount).ok_or_else(bad)
    }
}

impl Serialize for TokenCount {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u64(self.0)
    }
}

impl<'de> Deserialize<'de> for TokenCount {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct TokenVisitor;

        impl Visitor<'_> for TokenVisitor {
            type Value = TokenCount;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a token count as integer or SI string such as \"40B\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<TokenCount, E> {
                Ok(TokenCount(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<TokenCount, E> {
                u64::try_from(v).map(TokenCount).map_err(|_| E::custom("token count must be nonnegative"))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<TokenCount, E> {
                if v.fract() != 0.0 {
                    return Err(E::custom("token count must be integral"));
                }
                TokenCount::from_f64_rounded(v).map_err(E::custom)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<TokenCount, E> {
                v.parse().map_err(E::custom)
            }
        }

        deserializer.deserialize_any(TokenVisitor)
    }
}

/// Fraction δ of pretraining tokens drawn from the domain corpus, in `[0, 1]`.
///
/// Stored as a fraction; percent strings are converted on parse. The exact
/// value used for rational accounting is the shortest decimal that
/// round-trips the stored float, so `0.05` means exactly 1/20.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct MixtureFraction(f64);

impl MixtureFraction {
    pub const ZERO: MixtureFraction = MixtureFraction(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Domain(format!("mixture fraction {value} outside [0, 1]")));
        }
        // normalizes -0.0
        Ok(MixtureFraction(value + 0.0))
    }

    pub fn from_percent(percent: f64) -> Result<Self> {
        Self::new(percent / 100.0)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn percent(self) -> f64 {
        self.0 * 100.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }

    pub fn to_rational(self) -> BigRational {
        parse_decimal(&format!("{}", self.0)).expect("float Display is a plain decimal")
    }
}

impl fmt::Display for MixtureFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for MixtureFraction {
    type Err = Error;

    /// `"2%"` and `"0.02"` parse to the same fraction.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Format(format!("invalid mixture fraction `{s}`"));
        match s.strip_suffix('%') {
            Some(pct) => {
                let exact = parse_decimal(pct.trim()).ok_or_else(bad)? / BigRational::from_integer(BigInt::from(100));
                Self::new(exact.to_f64().ok_or_else(bad)?)
            }
            None => Self::new(s.parse::<f64>().map_err(|_| bad())?),
        }
    }
}

impl Serialize for MixtureFraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for MixtureFraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct FractionVisitor;

        impl Visitor<'_> for FractionVisitor {
            type Value = MixtureFraction;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a fraction in [0, 1] or a percent string such as \"2%\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<MixtureFraction, E> {
                MixtureFraction::new(v).map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<MixtureFraction, E> {
                MixtureFraction::new(v as f64).map_err(E::custom)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<MixtureFraction, E> {
                MixtureFraction::new(v as f64).map_err(E::custom)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<MixtureFraction, E> {
                v.parse().map_err(E::custom)
            }
        }

        deserializer.deserialize_any(FractionVisitor)
    }
}

/// Parses a plain decimal literal (`12`, `-0.05`, `.5`) into an exact rational.
pub(crate) fn parse_decimal(s: &str) -> Option<BigRational> {
    let (negative, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let numer: BigInt = format!("{int_part}{frac_part}").parse().ok()?;
    let denom = num_traits::pow(BigInt::from(10), frac_part.len());
    let value = BigRational::new(numer, denom);
    Some(if negative { -value } else { value })
}

/// `numer / denom` as an exact rational, converted to the nearest float.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}
