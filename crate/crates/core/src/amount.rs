//! Fixed-precision quantities.
//!
//! Every balance, reserve and profit in the simulator is an [`Amount`]: an
//! unsigned count of nano-units (10^-9 of one asset unit). Integer storage
//! makes swaps, transfers and reward splits exactly reproducible and keeps
//! per-asset conservation exact across arbitrarily long runs.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

/// Nano-units per whole unit.
pub const SCALE: u128 = 1_000_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Amount(u128);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub const fn from_raw(nanos: u128) -> Self {
        Amount(nanos)
    }

    pub const fn raw(self) -> u128 {
        self.0
    }

    pub const fn from_units(units: u64) -> Self {
        Amount(units as u128 * SCALE)
    }

    /// Rounds a floating-point quantity to the nearest nano-unit. Returns
    /// `None` for negative, non-finite or out-of-range input.
    pub fn from_f64(units: f64) -> Option<Self> {
        if !units.is_finite() || units < 0.0 {
            return None;
        }
        let nanos = (units * SCALE as f64).round();
        if nanos >= u128::MAX as f64 {
            return None;
        }
        Some(Amount(nanos as u128))
    }

    pub fn to_f64(self) -> f64 {
        let whole = (self.0 / SCALE) as f64;
        let frac = (self.0 % SCALE) as f64 / SCALE as f64;
        whole + frac
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_add(rhs.0).map(Amount)
    }

    pub fn checked_sub(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_sub(rhs.0).map(Amount)
    }

    pub fn saturating_sub(self, rhs: Amount) -> Amount {
        Amount(self.0.saturating_sub(rhs.0))
    }

    /// `floor(self * num / den)`, or `None` on overflow or zero denominator.
    pub fn mul_div_floor(self, num: u128, den: u128) -> Option<Amount> {
        if den == 0 {
            return None;
        }
        self.0.checked_mul(num).map(|p| Amount(p / den))
    }

    /// `ceil(self * num / den)`, or `None` on overflow or zero denominator.
    pub fn mul_div_ceil(self, num: u128, den: u128) -> Option<Amount> {
        if den == 0 {
            return None;
        }
        self.0.checked_mul(num).map(|p| Amount(p.div_ceil(den)))
    }
}

impl Add for Amount {
    type Output = Amount;

    fn add(self, rhs: Amount) -> Amount {
        Amount(self.0.checked_add(rhs.0).expect("amount overflow"))
    }
}

impl AddAssign for Amount {
    fn add_assign(&mut self, rhs: Amount) {
        *self = *self + rhs;
    }
}

impl Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        iter.fold(Amount::ZERO, |acc, a| acc + a)
    }
}

impl<'a> Sum<&'a Amount> for Amount {
    fn sum<I: Iterator<Item = &'a Amount>>(iter: I) -> Amount {
        iter.copied().sum()
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}", self.0 / SCALE, self.0 % SCALE)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid amount literal {0:?}")]
pub struct ParseAmountError(String);

impl FromStr for Amount {
    type Err = ParseAmountError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseAmountError(s.to_string());
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        if whole.is_empty() || frac.len() > 9 {
            return Err(err());
        }
        if !whole.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let whole: u128 = whole.parse().map_err(|_| err())?;
        let mut frac_nanos: u128 = 0;
        for (i, b) in frac.bytes().enumerate() {
            frac_nanos += (b - b'0') as u128 * 10u128.pow(8 - i as u32);
        }
        whole
            .checked_mul(SCALE)
            .and_then(|w| w.checked_add(frac_nanos))
            .map(Amount)
            .ok_or_else(err)
    }
}

impl Serialize for Amount {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Amount {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}
