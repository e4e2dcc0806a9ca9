//! Fixed six-digit rendering of ratios in reports.
//!
//! Ratios are emitted as JSON numbers (or csv fields) with exactly six
//! fractional digits so that golden outputs diff cleanly.

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

pub fn format_ratio(value: f64) -> String {
    format!("{value:.6}")
}

pub fn ratio<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    if !value.is_finite() {
        return serializer.serialize_none();
    }
    let raw = RawValue::from_string(format_ratio(*value)).map_err(serde::ser::Error::custom)?;
    raw.serialize(serializer)
}

pub fn opt_ratio<S: Serializer>(value: &Option<f64>, serializer: S) -> Result<S::Ok, S::Error> {
    match value {
        Some(v) => ratio(v, serializer),
        None => serializer.serialize_none(),
    }
}

pub fn ratios<S: Serializer>(values: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = serializer.serialize_seq(Some(values.len()))?;
    for v in values {
        seq.serialize_element(&Ratio(*v))?;
    }
    seq.end()
}

/// Newtype wrapper for places where `serialize_with` does not fit.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Ratio(pub f64);

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ratio(&self.0, serializer)
    }
}

impl<'de> serde::Deserialize<'de> for Ratio {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        f64::deserialize(deserializer).map(Ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        #[serde(serialize_with = "ratio")]
        share: f64,
        #[serde(serialize_with = "opt_ratio")]
        missing: Option<f64>,
    }

    #[test]
    fn json_has_six_digits() {
        let row = Row {
            share: 256.0 / 259.0,
            missing: None,
        };
        assert_eq!(
            serde_json::to_string(&row).unwrap(),
            r#"{"share":0.988417,"missing":null}"#
        );
    }

    #[test]
    fn csv_has_six_digits() {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(vec![]);
        w.write_record(["share", "missing"]).unwrap();
        w.serialize(Row {
            share: 0.9,
            missing: Some(1.0),
        })
        .unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text, "share,missing\n0.900000,1.000000\n");
    }
}
