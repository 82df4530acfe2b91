//! Linear/decibel quantities in configuration files.
//!
//! Powers are linear watts. A string value carrying a `dB`, `dBW` or `dBm`
//! suffix is converted on input, e.g. `"10 dB"` is 10 W and `"-30 dBm"` is
//! 1e-6 W. Dimensionless ratios (Rician factors) accept the same `dB` form.

use serde::de::{self, Deserializer};
use serde::Deserialize;

use crate::{Error, Result};

/// Parses `"<value> dB|dBW|dBm"` or a plain number into a linear value.
pub fn parse_level(text: &str) -> Result<f64> {
    let t = text.trim();
    let lower = t.to_ascii_lowercase();
    let (num, offset_db) = if let Some(v) = lower.strip_suffix("dbm") {
        (v, -30.0)
    } else if let Some(v) = lower.strip_suffix("dbw") {
        (v, 0.0)
    } else if let Some(v) = lower.strip_suffix("db") {
        (v, 0.0)
    } else {
        return t
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("cannot parse `{t}` as a number or dB level")));
    };
    let db: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("cannot parse `{t}` as a dB level")))?;
    Ok(db_to_linear(db + offset_db))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawLevel {
    Number(f64),
    Text(String),
}

impl RawLevel {
    fn into_linear<E: de::Error>(self) -> Result<f64, E> {
        match self {
            RawLevel::Number(v) => Ok(v),
            RawLevel::Text(s) => parse_level(&s).map_err(E::custom),
        }
    }
}

/// A linear quantity that may be written in dB on input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Level(pub f64);

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        RawLevel::deserialize(d)?.into_linear().map(Level)
    }
}

pub(crate) fn de_level<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Level::deserialize(d).map(|l| l.0)
}
