//! Exact unbounded-precision rational arithmetic.
//!
//! All pairings, densities, weights, and masses in this crate are [`Rational`]s;
//! floating point appears only in sampling estimates. The textual form is `p/q`
//! in lowest terms with the sign on the numerator, or plain `p` for integers;
//! decimal literals such as `0.25` are accepted on input.

use crate::error::{Error, Result};
use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

/// Exact fraction with unbounded numerator and denominator, always reduced.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(BigRational);

impl Rational {
    /// The rational 0.
    pub fn zero() -> Self {
        Rational(BigRational::zero())
    }

    /// The rational 1.
    pub fn one() -> Self {
        Rational(BigRational::one())
    }

    /// Integer as a rational.
    pub fn from_int(v: i64) -> Self {
        Rational(BigRational::from_integer(BigInt::from(v)))
    }

    /// `p/q` from machine integers. Panics if `q == 0`; use [`Rational::from_bigs`]
    /// for fallible construction from untrusted input.
    pub fn new(p: i64, q: i64) -> Self {
        assert!(q != 0, "zero denominator");
        Rational(BigRational::new(BigInt::from(p), BigInt::from(q)))
    }

    /// `p/q` from big integers, rejecting a zero denominator.
    pub fn from_bigs(p: BigInt, q: BigInt) -> Result<Self> {
        if q.is_zero() {
            return Err(Error::NumberFormat(format!("{p}/0")));
        }
        Ok(Rational(BigRational::new(p, q)))
    }

    /// The uniform vertex mass `1/n`.
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform measure needs a nonempty universe");
        Rational(BigRational::new(BigInt::one(), BigInt::from(n)))
    }

    /// Ratio of two counts.
    pub fn ratio(p: u128, q: u128) -> Self {
        assert!(q != 0, "zero denominator");
        Rational(BigRational::new(BigInt::from(p), BigInt::from(q)))
    }

    /// Numerator (sign-carrying), in lowest terms.
    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    /// Denominator (always positive), in lowest terms.
    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    /// True iff the value is 0.
    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    /// True iff the value is 1.
    pub fn is_one(&self) -> bool {
        self.0.is_one()
    }

    /// True iff the denominator is 1.
    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    /// Absolute value.
    pub fn abs(&self) -> Self {
        Rational(self.0.abs())
    }

    /// Nearest double; estimates and report decimals only.
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Access the underlying `num` rational.
    pub fn as_big(&self) -> &BigRational {
        &self.0
    }
}

impl From<BigRational> for Rational {
    fn from(v: BigRational) -> Self {
        Rational(v)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for Rational {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let text = s.trim();
        let bad = || Error::NumberFormat(s.to_string());
        if text.is_empty() {
            return Err(bad());
        }
        if let Some((p, q)) = text.split_once('/') {
            let p = BigInt::from_str(p.trim()).map_err(|_| bad())?;
            let q = BigInt::from_str(q.trim()).map_err(|_| bad())?;
            return Rational::from_bigs(p, q);
        }
        if let Some((int_part, frac_part)) = text.split_once('.') {
            // Decimal literal: int.frac == (int * 10^d + sign(int) * frac) / 10^d.
            let (sign, digits) = match int_part.strip_prefix('-') {
                Some(rest) => (-1i64, rest),
                None => (1, int_part.strip_prefix('+').unwrap_or(int_part)),
            };
            if !digits.chars().all(|c| c.is_ascii_digit())
                || !frac_part.chars().all(|c| c.is_ascii_digit())
                || (digits.is_empty() && frac_part.is_empty())
            {
                return Err(bad());
            }
            let int_val: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().map_err(|_| bad())? };
            let frac_val: BigInt = if frac_part.is_empty() { BigInt::zero() } else { frac_part.parse().map_err(|_| bad())? };
            let scale = BigInt::from(10u32).pow(frac_part.len() as u32);
            let numer = (int_val * &scale + frac_val) * BigInt::from(sign);
            return Rational::from_bigs(numer, scale);
        }
        let p = BigInt::from_str(text).map_err(|_| bad())?;
        Ok(Rational(BigRational::from_integer(p)))
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident) => {
        impl $trait for Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational((self.0).$method(rhs.0))
            }
        }
        impl $trait<&Rational> for &Rational {
            type Output = Rational;
            fn $method(self, rhs: &Rational) -> Rational {
                Rational((&self.0).$method(&rhs.0))
            }
        }
        impl $trait<&Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: &Rational) -> Rational {
                Rational((self.0).$method(&rhs.0))
            }
        }
        impl $trait<Rational> for &Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational((&self.0).$method(rhs.0))
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);
forward_binop!(Div, div);

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

impl Neg for &Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-&self.0)
    }
}

impl AddAssign<&Rational> for Rational {
    fn add_assign(&mut self, rhs: &Rational) {
        self.0 += &rhs.0;
    }
}

impl AddAssign for Rational {
    fn add_assign(&mut self, rhs: Rational) {
        self.0 += rhs.0;
    }
}

impl SubAssign<&Rational> for Rational {
    fn sub_assign(&mut self, rhs: &Rational) {
        self.0 -= &rhs.0;
    }
}

impl MulAssign<&Rational> for Rational {
    fn mul_assign(&mut self, rhs: &Rational) {
        self.0 *= &rhs.0;
    }
}

impl Sum for Rational {
    fn sum<I: Iterator<Item = Rational>>(iter: I) -> Rational {
        iter.fold(Rational::zero(), |acc, v| acc + v)
    }
}

impl<'a> Sum<&'a Rational> for Rational {
    fn sum<I: Iterator<Item = &'a Rational>>(iter: I) -> Rational {
        iter.fold(Rational::zero(), |acc, v| acc + v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fractions_integers_and_decimals() {
        assert_eq!("2/3".parse::<Rational>().unwrap(), Rational::new(2, 3));
        assert_eq!("-4/6".parse::<Rational>().unwrap(), Rational::new(-2, 3));
        assert_eq!("7".parse::<Rational>().unwrap(), Rational::from_int(7));
        assert_eq!("0.25".parse::<Rational>().unwrap(), Rational::new(1, 4));
        assert_eq!("-0.5".parse::<Rational>().unwrap(), Rational::new(-1, 2));
        assert_eq!(".5".parse::<Rational>().unwrap(), Rational::new(1, 2));
        assert!("1/0".parse::<Rational>().is_err());
        assert!("".parse::<Rational>().is_err());
        assert!("2/3/4".parse::<Rational>().is_err());
    }

    #[test]
    fn displays_lowest_terms() {
        assert_eq!(Rational::new(4, 6).to_string(), "2/3");
        assert_eq!(Rational::new(-4, 6).to_string(), "-2/3");
        assert_eq!(Rational::new(4, -6).to_string(), "-2/3");
        assert_eq!(Rational::new(6, 3).to_string(), "2");
        assert_eq!(Rational::zero().to_string(), "0");
    }

    #[test]
    fn exact_arithmetic() {
        let third = Rational::new(1, 3);
        let sixth = Rational::new(1, 6);
        assert_eq!(&third + &sixth, Rational::new(1, 2));
        assert_eq!(&third - &sixth, sixth);
        assert_eq!(&third * &sixth, Rational::new(1, 18));
        assert_eq!(&third / &sixth, Rational::from_int(2));
        let sum: Rational = vec![third.clone(), third.clone(), third].into_iter().sum();
        assert!(sum.is_one());
    }

    #[test]
    fn serde_round_trip() {
        let v = Rational::new(3, 8);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, "\"3/8\"");
        let back: Rational = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }
}
