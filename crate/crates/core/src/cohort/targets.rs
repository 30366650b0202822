//! Per-record supervision targets with explicit missingness.
//!
//! Estimation asks "what is the closest lab value within ±60 minutes";
//! monitoring asks "does any abnormal value occur within a forward horizon".
//! Both return `None` (MISSING) when the defining window holds no event —
//! absence of a lab draw is not evidence of normality.

use super::{is_abnormal, AbnormalityLabel};
use crate::ingest::{VitalSample, N_VITAL_CHANNELS};

/// Matrix cell value for "no event in window".
pub const MISSING: i8 = -1;

/// Nearest sample to `t` among `samples` (sorted by time) with |Δt| ≤
/// `window_s`. Ties on |Δt| go to the earlier sample; among samples at the
/// chosen time, the first in sorted order wins.
pub fn nearest_sample(t: i64, samples: &[(i64, f64)], window_s: i64) -> Option<f64> {
    debug_assert!(samples.windows(2).all(|w| w[0].0 <= w[1].0));
    let i = samples.partition_point(|&(st, _)| st < t);
    let left = i.checked_sub(1).map(|j| samples[j].0);
    let right = samples.get(i).map(|&(st, _)| st);
    let chosen_time = match (left, right) {
        (None, None) => return None,
        (Some(l), None) => l,
        (None, Some(r)) => r,
        // Equal distances prefer the earlier (left) sample.
        (Some(l), Some(r)) => {
            if t - l <= r - t {
                l
            } else {
                r
            }
        }
    };
    if (chosen_time - t).abs() > window_s {
        return None;
    }
    let first = samples.partition_point(|&(st, _)| st < chosen_time);
    Some(samples[first].1)
}

/// Estimation target: abnormality of the closest event with
/// |t_event − t_ecg| ≤ `window_s`; `None` when the window is empty.
///
/// `events` are one item's `(time, value)` pairs sorted by time.
pub fn estimation_target(
    t_ecg: i64,
    events: &[(i64, f64)],
    label: &AbnormalityLabel,
    window_s: i64,
) -> Option<bool> {
    nearest_sample(t_ecg, events, window_s).map(|v| is_abnormal(v, label))
}

/// Monitoring target: 1 iff ANY event in `(t_ecg, t_ecg + horizon_s]` is
/// abnormal, 0 if the window holds only normal events, `None` if it is empty.
pub fn monitoring_target(
    t_ecg: i64,
    events: &[(i64, f64)],
    label: &AbnormalityLabel,
    horizon_s: i64,
) -> Option<bool> {
    debug_assert!(events.windows(2).all(|w| w[0].0 <= w[1].0));
    let lo = events.partition_point(|&(st, _)| st <= t_ecg);
    let hi = events.partition_point(|&(st, _)| st <= t_ecg + horizon_s);
    if lo == hi {
        None
    } else {
        Some(events[lo..hi].iter().any(|&(_, v)| is_abnormal(v, label)))
    }
}

/// Closest vital per channel within ±`window_s`, independently per channel.
///
/// `vitals` are one patient's samples sorted by time (channels interleaved).
pub fn nearest_vitals(
    t_ecg: i64,
    vitals: &[VitalSample],
    window_s: i64,
) -> [Option<f64>; N_VITAL_CHANNELS] {
    let mut by_channel: [Vec<(i64, f64)>; N_VITAL_CHANNELS] = Default::default();
    for v in vitals {
        by_channel[v.channel.index()].push((v.time, v.value));
    }
    let mut out = [None; N_VITAL_CHANNELS];
    for (c, series) in by_channel.iter().enumerate() {
        out[c] = nearest_sample(t_ecg, series, window_s);
    }
    out
}

/// Dense targets over (records × labels) with cells in {0, 1, MISSING}.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    pub records: Vec<String>,
    pub labels: Vec<String>,
    entries: Vec<i8>,
}

impl TargetMatrix {
    /// All-MISSING matrix with the given row/column order.
    pub fn new(records: Vec<String>, labels: Vec<String>) -> TargetMatrix {
        let entries = vec![MISSING; records.len() * labels.len()];
        TargetMatrix {
            records,
            labels,
            entries,
        }
    }

    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, record: usize, label: usize) -> i8 {
        self.entries[record * self.labels.len() + label]
    }

    pub fn set(&mut self, record: usize, label: usize, value: i8) {
        assert!(value == MISSING || value == 0 || value == 1);
        self.entries[record * self.labels.len() + label] = value;
    }

    pub fn set_from(&mut self, record: usize, label: usize, target: Option<bool>) {
        self.set(record, label, target.map_or(MISSING, i8::from));
    }

    /// One record's targets across all labels.
    pub fn row(&self, record: usize) -> &[i8] {
        let k = self.labels.len();
        &self.entries[record * k..(record + 1) * k]
    }
}
