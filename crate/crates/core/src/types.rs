//! Identifiers and timestamps shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

/// Hospital admission identifier (`HADM_ID`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AdmissionId(pub u64);

/// Patient identifier (`SUBJECT_ID`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatientId(pub u64);

/// ICU stay identifier (`ICUSTAY_ID`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IcuStayId(pub u64);

impl fmt::Display for AdmissionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Item identifier. Event tables key measurements by a numeric `ITEMID`;
/// prescriptions have no item id and are keyed by normalized drug name.
///
/// Numeric codes order before drug names, and each kind orders naturally.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ItemId {
    Code(u64),
    Drug(String),
}

impl ItemId {
    pub fn drug(name: &str) -> Self {
        ItemId::Drug(name.trim().to_lowercase())
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ItemId::Code(c) => write!(f, "{c}"),
            ItemId::Drug(d) => write!(f, "rx:{d}"),
        }
    }
}

impl FromStr for ItemId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(d) = s.strip_prefix("rx:") {
            if d.is_empty() {
                return Err("empty drug name".into());
            }
            return Ok(ItemId::drug(d));
        }
        s.parse::<u64>().map(ItemId::Code).map_err(|_| format!("bad item id {s:?}"))
    }
}

// Config files spell items as either integers or "rx:<drug>" strings.
impl<'de> Deserialize<'de> for ItemIdRepr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(i) => Ok(ItemIdRepr(ItemId::Code(i))),
            Raw::Str(s) => s.parse().map(ItemIdRepr).map_err(serde::de::Error::custom),
        }
    }
}

impl Serialize for ItemIdRepr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match &self.0 {
            ItemId::Code(c) => s.serialize_u64(*c),
            d => s.serialize_str(&d.to_string()),
        }
    }
}

/// Config-file spelling of an [`ItemId`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemIdRepr(pub ItemId);

/// Seconds since the Unix epoch. MIMIC timestamps carry at most second
/// resolution; the shifted years (2100-2200) fit comfortably in `i64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

pub const SECONDS_PER_HOUR: i64 = 3600;
pub const SECONDS_PER_DAY: i64 = 86_400;

impl Timestamp {
    const FORMATS: [&'static str; 3] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M:%S"];

    /// Parses `YYYY-MM-DD HH:MM[:SS]` or a bare date (midnight).
    pub fn parse(s: &str) -> Option<Timestamp> {
        let s = s.trim();
        for f in Self::FORMATS {
            if let Ok(dt) = NaiveDateTime::parse_from_str(s, f) {
                return Some(Timestamp(dt.and_utc().timestamp()));
            }
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0)).map(|dt| Timestamp(dt.and_utc().timestamp()))
    }

    pub fn from_ymd_hms(y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32) -> Timestamp {
        let dt = NaiveDate::from_ymd_opt(y, mo, d).and_then(|d| d.and_hms_opt(h, mi, s)).expect("valid calendar date");
        Timestamp(dt.and_utc().timestamp())
    }

    pub fn hours_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / SECONDS_PER_HOUR as f64
    }

    pub fn days_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / SECONDS_PER_DAY as f64
    }

    pub fn plus_seconds(self, s: i64) -> Timestamp {
        Timestamp(self.0 + s)
    }

    /// Midnight of the same calendar day.
    pub fn date_floor(self) -> Timestamp {
        Timestamp(self.0.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match chrono::DateTime::from_timestamp(self.0, 0) {
            Some(dt) => write!(f, "{}", dt.naive_utc().format("%Y-%m-%d %H:%M:%S")),
            None => write!(f, "@{}", self.0),
        }
    }
}

/// Derives an independent stream seed from a base seed and a stream index
/// (splitmix64 finalizer), so per-patient / per-fold / per-tree randomness
/// does not depend on scheduling order.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_round_trips_through_display() {
        let t = Timestamp::parse("2101-01-02 03:00:00").unwrap();
        assert_eq!(t.to_string(), "2101-01-02 03:00:00");
        assert_eq!(Timestamp::parse("2101-01-02").unwrap().to_string(), "2101-01-02 00:00:00");
        assert!(Timestamp::parse("not-a-date").is_none());
    }

    #[test]
    fn hour_arithmetic() {
        let a = Timestamp::parse("2101-01-01 00:00:00").unwrap();
        let b = Timestamp::parse("2101-01-08 02:00:00").unwrap();
        assert_eq!(b.hours_since(a), 170.0);
        assert_eq!(b.date_floor(), Timestamp::parse("2101-01-08").unwrap());
    }

    #[test]
    fn item_ids_order_numerically() {
        let mut ids = vec![ItemId::Code(5), ItemId::drug("Aspirin"), ItemId::Code(3), ItemId::Code(10)];
        ids.sort();
        assert_eq!(ids, vec![ItemId::Code(3), ItemId::Code(5), ItemId::Code(10), ItemId::drug("aspirin")]);
        assert_eq!("rx:Aspirin".parse::<ItemId>().unwrap(), ItemId::drug("aspirin"));
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
