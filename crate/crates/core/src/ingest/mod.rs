//! Cohort input parsing: waveforms, lab events, vital samples, patient
//! context and label thresholds.
//!
//! All parsers validate closed sets and finiteness up front and fail with the
//! offending row/field rather than silently coercing. Event lists come back
//! sorted by `(patient_id, time)` so downstream window scans can rely on
//! order. Timestamps are normalized to UTC epoch seconds at parse time.

mod resample;
mod tables;
mod waveform;

pub use resample::resample_ecg;
pub use tables::{
    parse_context, parse_events, parse_thresholds, parse_vitals, write_context, write_events,
    write_thresholds, write_vitals,
};
pub use waveform::{read_waveform, write_waveform};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use thiserror::Error;

/// The fixed 12-lead channel order every record must carry.
pub const CHANNEL_NAMES: [&str; 12] = [
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
];

/// Number of ECG leads.
pub const N_CHANNELS: usize = 12;

/// Number of vital-sign channels.
pub const N_VITAL_CHANNELS: usize = 6;

/// Record duration in seconds; every raw record is exactly this long.
pub const RECORD_SECONDS: u32 = 10;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: malformed header: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },
    #[error("{path}: length mismatch: header declares {expected} samples/channel, payload holds {actual}")]
    LengthMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: non-finite sample in channel {channel} at index {index}")]
    NonFiniteSample {
        path: PathBuf,
        channel: String,
        index: usize,
    },
    #[error("target rate {target_hz} Hz does not divide source rate {source_hz} Hz")]
    NonIntegerFactor { source_hz: u32, target_hz: u32 },
    #[error("{path} row {row}: unknown channel {got:?}")]
    UnknownChannel { path: PathBuf, row: u64, got: String },
    #[error("{path} row {row}: unparseable time {got:?} (expected ISO-8601 with offset or integer epoch seconds)")]
    UnparseableTime { path: PathBuf, row: u64, got: String },
    #[error("{path} row {row}: column {field}: {got:?} is not a finite number")]
    NonFiniteValue {
        path: PathBuf,
        row: u64,
        field: String,
        got: String,
    },
    #[error("{path} row {row}: column {field}: unknown category {got:?}")]
    UnknownCategory {
        path: PathBuf,
        row: u64,
        field: String,
        got: String,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// One 12-lead ECG record. Samples are stored channel-major as millivolt
/// `f32` values, `n_samples` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub patient_id: String,
    /// Acquisition time, UTC epoch seconds.
    pub acquisition_time: i64,
    pub sampling_rate_hz: u32,
    /// Channel-major: `samples[c * n_samples + i]` is channel `c`, sample `i`.
    pub samples: Vec<f32>,
    pub n_samples: usize,
}

impl EcgRecord {
    pub fn channel(&self, c: usize) -> &[f32] {
        &self.samples[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        &mut self.samples[c * self.n_samples..(c + 1) * self.n_samples]
    }
}

/// One laboratory measurement event.
#[derive(Debug, Clone, PartialEq)]
pub struct LabEvent {
    pub patient_id: String,
    pub item_id: String,
    /// UTC epoch seconds.
    pub time: i64,
    pub value: f64,
    pub unit: String,
}

/// Closed set of supported vital-sign channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VitalChannel {
    TemperatureF,
    HeartRateBpm,
    RespRateBpm,
    Spo2Pct,
    SbpMmhg,
    DbpMmhg,
}

impl VitalChannel {
    pub const ALL: [VitalChannel; 6] = [
        VitalChannel::TemperatureF,
        VitalChannel::HeartRateBpm,
        VitalChannel::RespRateBpm,
        VitalChannel::Spo2Pct,
        VitalChannel::SbpMmhg,
        VitalChannel::DbpMmhg,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VitalChannel::TemperatureF => "temperature_f",
            VitalChannel::HeartRateBpm => "heart_rate_bpm",
            VitalChannel::RespRateBpm => "resp_rate_bpm",
            VitalChannel::Spo2Pct => "spo2_pct",
            VitalChannel::SbpMmhg => "sbp_mmhg",
            VitalChannel::DbpMmhg => "dbp_mmhg",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<VitalChannel> {
        Self::ALL.iter().copied().find(|c| c.as_str() == s)
    }

    /// Stable index into per-channel arrays.
    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|c| c == self).unwrap()
    }
}

impl fmt::Display for VitalChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One vital-sign sample.
#[derive(Debug, Clone, PartialEq)]
pub struct VitalSample {
    pub patient_id: String,
    pub channel: VitalChannel,
    /// UTC epoch seconds.
    pub time: i64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn as_str(&self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<Sex> {
        match s {
            "female" => Some(Sex::Female),
            "male" => Some(Sex::Male),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Race {
    Caucasian,
    African,
    Asian,
    Latino,
    Other,
}

impl Race {
    pub const ALL: [Race; 5] = [
        Race::Caucasian,
        Race::African,
        Race::Asian,
        Race::Latino,
        Race::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Race::Caucasian => "caucasian",
            Race::African => "african",
            Race::Asian => "asian",
            Race::Latino => "latino",
            Race::Other => "other",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<Race> {
        Self::ALL.iter().copied().find(|r| r.as_str() == s)
    }

    /// Index into the 5-way one-hot encoding.
    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|r| r == self).unwrap()
    }
}

/// Per-patient demographics and biometrics. Absent fields are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientContext {
    pub patient_id: String,
    pub age: Option<f64>,
    pub sex: Option<Sex>,
    pub race: Option<Race>,
    pub bmi: Option<f64>,
    pub weight_kg: Option<f64>,
    pub height_cm: Option<f64>,
}

/// Parse a time cell: ISO-8601 with offset, or integer epoch seconds.
pub(crate) fn parse_time_cell(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(epoch) = s.parse::<i64>() {
        return Some(epoch);
    }
    chrono::DateTime::parse_from_rfc3339(s)
        .ok()
        .map(|dt| dt.timestamp())
}
