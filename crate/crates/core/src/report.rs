//! JSON run reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::MetricReport;
use crate::model::{HyperParams, RunTrace};
use crate::rng::Stream;
use crate::synth::SynthConfig;
use crate::transform::TransformEcho;
use crate::tsvd::MultiRank;

pub const SCHEMA_VERSION: u32 = 1;

/// Serde adapter for floats that may be infinite or NaN. Finite values are
/// plain JSON numbers; the rest become the strings `"+inf"`, `"-inf"` and
/// `"nan"`.
pub mod float {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("+inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct FloatVisitor;

    impl Visitor<'_> for FloatVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"+inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "+inf" | "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(FloatVisitor)
    }
}

/// JSON value of a float, spelled as [`float`] does.
pub fn float_value(v: f64) -> serde_json::Value {
    float::serialize(&v, serde_json::value::Serializer).unwrap_or(serde_json::Value::Null)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTime {
    pub name: String,
    pub seconds: f64,
}

/// Wall-clock data, kept apart so reports can be compared without it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub phases: Vec<PhaseTime>,
}

/// One decomposition inside a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryReport {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    pub multirank: MultiRank,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multirank_gt: Option<MultiRank>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_err: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_err: Option<f64>,
    pub trace: RunTrace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngInfo {
    pub algorithm: String,
    pub streams: Vec<Stream>,
}

impl Default for RngInfo {
    fn default() -> Self {
        Self { algorithm: "ChaCha8, one stream per consumer".into(), streams: Stream::ALL.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub rng: RngInfo,
    #[serde(default)]
    pub transform: Option<TransformEcho>,
    #[serde(default)]
    pub hyper: Option<HyperParams>,
    /// Free-form echo of the invocation (flags, input paths).
    #[serde(default)]
    pub config: serde_json::Value,
    pub entries: Vec<EntryReport>,
    #[serde(default)]
    pub metrics: Option<MetricReport>,
    #[serde(default)]
    pub timing: Timing,
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: None,
            rng: RngInfo::default(),
            transform: None,
            hyper: None,
            config: serde_json::Value::Null,
            entries: Vec::new(),
            metrics: None,
            timing: Timing::default(),
        }
    }

    /// Copy with all wall-clock fields cleared.
    pub fn without_timing(&self) -> Self {
        Self { timing: Timing::default(), ..self.clone() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
