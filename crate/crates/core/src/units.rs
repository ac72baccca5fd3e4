//! Integer time and bandwidth quantities.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time (instant or span) in whole milliseconds.
#[derive(
    Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Millis(pub u64);

impl Millis {
    pub const ZERO: Millis = Millis(0);

    pub const fn from_secs(secs: u64) -> Self {
        Millis(secs * 1000)
    }

    pub const fn from_hours(hours: u64) -> Self {
        Millis(hours * 3_600_000)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn as_hours_f64(self) -> f64 {
        self.0 as f64 / 3_600_000.0
    }

    pub fn saturating_sub(self, rhs: Millis) -> Millis {
        Millis(self.0.saturating_sub(rhs.0))
    }

    pub fn checked_sub(self, rhs: Millis) -> Option<Millis> {
        self.0.checked_sub(rhs.0).map(Millis)
    }
}

impl Add for Millis {
    type Output = Millis;
    fn add(self, rhs: Millis) -> Millis {
        Millis(self.0 + rhs.0)
    }
}

impl AddAssign for Millis {
    fn add_assign(&mut self, rhs: Millis) {
        self.0 += rhs.0;
    }
}

impl Sub for Millis {
    type Output = Millis;
    fn sub(self, rhs: Millis) -> Millis {
        Millis(self.0 - rhs.0)
    }
}

impl fmt::Display for Millis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}s", self.0 / 1000, self.0 % 1000)
    }
}

/// Data rate stored in hundredths of a megabyte per second.
#[derive(
    Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Bandwidth(pub u64);

#[derive(Debug, Error, PartialEq)]
pub enum UnitError {
    #[error("bandwidth `{0}` has no unit; use e.g. 100MBps or 100Mbps")]
    MissingUnit(String),
    #[error("unknown bandwidth unit in `{0}`")]
    UnknownUnit(String),
    #[error("invalid number in `{0}`")]
    BadNumber(String),
    #[error("bandwidth `{0}` must be positive")]
    NotPositive(String),
}

impl Bandwidth {
    pub const ZERO: Bandwidth = Bandwidth(0);

    pub const fn from_centi_mbs(centi: u64) -> Self {
        Bandwidth(centi)
    }

    pub const fn from_mbs(mbs: u64) -> Self {
        Bandwidth(mbs * 100)
    }

    /// Megabits per second; 8 bits per byte, rounded to the nearest 0.01 MB/s.
    pub fn from_mbits(mbits: f64) -> Self {
        Bandwidth((mbits * 100.0 / 8.0).round() as u64)
    }

    pub fn centi_mbs(self) -> u64 {
        self.0
    }

    pub fn as_mbs(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Time to move `megabytes` at this rate, rounded up to the next millisecond.
    pub fn transfer_time(self, megabytes: u64) -> Millis {
        assert!(self.0 > 0, "transfer over a zero bandwidth link");
        let numer = megabytes as u128 * 100_000;
        let denom = self.0 as u128;
        Millis(numer.div_ceil(denom) as u64)
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}MBps", self.0 / 100, self.0 % 100)
    }
}

impl FromStr for Bandwidth {
    type Err = UnitError;

    /// Accepts `MBps`, `MB/s` (bytes) and `Mbps`, `Mb/s` (bits), plus the
    /// `G` variants. A bare number is rejected: the two readings differ 8x.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        let split = trimmed
            .find(|c: char| !(c.is_ascii_digit() || c == '.'))
            .ok_or_else(|| UnitError::MissingUnit(s.to_string()))?;
        let (num, unit) = trimmed.split_at(split);
        let value: f64 = num
            .parse()
            .map_err(|_| UnitError::BadNumber(s.to_string()))?;
        let mbs = match unit.trim() {
            "MBps" | "MB/s" => value,
            "GBps" | "GB/s" => value * 1000.0,
            "Mbps" | "Mb/s" => value / 8.0,
            "Gbps" | "Gb/s" => value * 1000.0 / 8.0,
            _ => return Err(UnitError::UnknownUnit(s.to_string())),
        };
        let centi = (mbs * 100.0).round();
        if centi < 1.0 {
            return Err(UnitError::NotPositive(s.to_string()));
        }
        Ok(Bandwidth(centi as u64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_byte_and_bit_units() {
        assert_eq!("100MBps".parse::<Bandwidth>(), Ok(Bandwidth::from_mbs(100)));
        assert_eq!("32MB/s".parse::<Bandwidth>(), Ok(Bandwidth::from_mbs(32)));
        assert_eq!("100Mbps".parse::<Bandwidth>(), Ok(Bandwidth(1250)));
        assert_eq!("1Gbps".parse::<Bandwidth>(), Ok(Bandwidth(12500)));
        assert_eq!("12.5MBps".parse::<Bandwidth>(), Ok(Bandwidth(1250)));
    }

    #[test]
    fn rejects_bare_numbers_and_zero() {
        assert!(matches!(
            "100".parse::<Bandwidth>(),
            Err(UnitError::MissingUnit(_))
        ));
        assert!(matches!(
            "100kbps".parse::<Bandwidth>(),
            Err(UnitError::UnknownUnit(_))
        ));
        assert!(matches!(
            "0MBps".parse::<Bandwidth>(),
            Err(UnitError::NotPositive(_))
        ));
        assert!(matches!(
            "MBps".parse::<Bandwidth>(),
            Err(UnitError::BadNumber(_))
        ));
    }

    #[test]
    fn transfer_time_rounds_up() {
        assert_eq!(Bandwidth::from_mbs(32).transfer_time(2048), Millis(64_000));
        assert_eq!(Bandwidth::from_mbs(100).transfer_time(8192), Millis(81_920));
        // 1 MB at 3 MB/s = 333.33.. ms
        assert_eq!(Bandwidth::from_mbs(3).transfer_time(1), Millis(334));
    }
}
