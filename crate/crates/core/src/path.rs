use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Largest horizon a path can encode. Worlds enforce a tighter default bound
/// (see [`crate::world::DEFAULT_MAX_HORIZON`]).
pub const MAX_ENCODABLE_HORIZON: usize = 30;

/// A binary treatment history `(d_1, …, d_T)`; `d_0 = 0` is implicit.
///
/// The integer code reads the path as a binary number with `d_1` as the most
/// significant bit, so the code of `(1, 0)` is `2` and its string form is
/// `"10"`. Dropping the last period is a right shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TreatmentPath {
    code: u32,
    horizon: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PathError {
    #[error("path horizon {0} outside 0..={MAX_ENCODABLE_HORIZON}")]
    Horizon(usize),
    #[error("path entry {value} at period {period} is not a binary indicator")]
    NotBinary { period: usize, value: u8 },
    #[error("path code {code} does not fit horizon {horizon}")]
    Code { code: u32, horizon: usize },
    #[error("invalid path string {0:?}")]
    Parse(String),
}

impl TreatmentPath {
    /// The empty path of period 0.
    pub const EMPTY: TreatmentPath = TreatmentPath { code: 0, horizon: 0 };

    pub fn new(bits: &[u8]) -> Result<Self, PathError> {
        if bits.len() > MAX_ENCODABLE_HORIZON {
            return Err(PathError::Horizon(bits.len()));
        }
        let mut code = 0u32;
        for (k, &b) in bits.iter().enumerate() {
            if b > 1 {
                return Err(PathError::NotBinary { period: k + 1, value: b });
            }
            code = (code << 1) | b as u32;
        }
        Ok(Self { code, horizon: bits.len() as u8 })
    }

    pub fn from_code(code: u32, horizon: usize) -> Result<Self, PathError> {
        if horizon > MAX_ENCODABLE_HORIZON {
            return Err(PathError::Horizon(horizon));
        }
        if horizon < 32 && (code as u64) >= (1u64 << horizon) {
            return Err(PathError::Code { code, horizon });
        }
        Ok(Self { code, horizon: horizon as u8 })
    }

    /// All `2^horizon` paths in code order.
    pub fn all(horizon: usize) -> impl Iterator<Item = TreatmentPath> {
        let h = horizon.min(MAX_ENCODABLE_HORIZON);
        (0..(1u32 << h)).map(move |code| TreatmentPath { code, horizon: h as u8 })
    }

    pub fn code(&self) -> u32 {
        self.code
    }

    pub fn horizon(&self) -> usize {
        self.horizon as usize
    }

    /// Treatment in period `t` (1-based). `t = 0` returns the implicit `d_0 = 0`.
    pub fn get(&self, t: usize) -> u8 {
        assert!(t <= self.horizon(), "period {t} beyond horizon {}", self.horizon);
        if t == 0 {
            return 0;
        }
        ((self.code >> (self.horizon() - t)) & 1) as u8
    }

    /// The length-`t` prefix `d^t`.
    pub fn prefix(&self, t: usize) -> TreatmentPath {
        assert!(t <= self.horizon(), "prefix {t} beyond horizon {}", self.horizon);
        TreatmentPath { code: self.code >> (self.horizon() - t), horizon: t as u8 }
    }

    /// `d^t` followed by `d_{t+1} = bit`.
    pub fn extend(&self, bit: u8) -> TreatmentPath {
        debug_assert!(bit <= 1);
        TreatmentPath { code: (self.code << 1) | (bit & 1) as u32, horizon: self.horizon + 1 }
    }

    pub fn bits(&self) -> Vec<u8> {
        (1..=self.horizon()).map(|t| self.get(t)).collect()
    }
}

impl fmt::Display for TreatmentPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in 1..=self.horizon() {
            write!(f, "{}", self.get(t))?;
        }
        Ok(())
    }
}

impl FromStr for TreatmentPath {
    type Err = PathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits = s
            .bytes()
            .map(|c| match c {
                b'0' => Ok(0),
                b'1' => Ok(1),
                _ => Err(PathError::Parse(s.to_string())),
            })
            .collect::<Result<Vec<u8>, _>>()?;
        TreatmentPath::new(&bits)
    }
}

impl Serialize for TreatmentPath {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TreatmentPath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn code_reads_first_period_as_most_significant() {
        let p = TreatmentPath::new(&[1, 0]).unwrap();
        assert_eq!(p.code(), 2);
        assert_eq!(p.to_string(), "10");
        assert_eq!(p.get(1), 1);
        assert_eq!(p.get(2), 0);
        assert_eq!(p.get(0), 0);
        assert_eq!(p.prefix(1).to_string(), "1");
    }

    #[test]
    fn rejects_non_binary_entries() {
        assert_eq!(
            TreatmentPath::new(&[0, 2]),
            Err(PathError::NotBinary { period: 2, value: 2 })
        );
        assert!("012".parse::<TreatmentPath>().is_err());
        assert!(TreatmentPath::from_code(4, 2).is_err());
    }

    proptest! {
        #[test]
        fn code_is_a_bijection(horizon in 1usize..=12, raw in any::<u32>()) {
            let code = raw % (1u32 << horizon);
            let p = TreatmentPath::from_code(code, horizon).unwrap();
            prop_assert_eq!(p.bits().len(), horizon);
            let back = TreatmentPath::new(&p.bits()).unwrap();
            prop_assert_eq!(back, p);
            let parsed: TreatmentPath = p.to_string().parse().unwrap();
            prop_assert_eq!(parsed, p);
        }

        #[test]
        fn prefix_then_extend_round_trips(bits in proptest::collection::vec(0u8..=1, 1..=12)) {
            let p = TreatmentPath::new(&bits).unwrap();
            let t = bits.len();
            prop_assert_eq!(p.prefix(t - 1).extend(bits[t - 1]), p);
        }
    }
}
