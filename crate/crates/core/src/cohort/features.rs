//! Tabular feature rows: demographics, biometrics and nearest vitals, with
//! train-fold median imputation and per-field missingness flags.

use super::CohortError;
use crate::ingest::{Race, Sex, N_VITAL_CHANNELS};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Imputable scalar fields, in flag order.
pub const FIELD_NAMES: [&str; N_RAW_FIELDS] = [
    "age",
    "sex",
    "temperature_f",
    "heart_rate_bpm",
    "resp_rate_bpm",
    "spo2_pct",
    "sbp_mmhg",
    "dbp_mmhg",
    "bmi",
    "weight_kg",
    "height_cm",
];

/// Number of imputable scalar fields (= number of missingness flags).
pub const N_RAW_FIELDS: usize = 11;

/// Length of the value block: age, sex, race one-hot(5), six vitals, BMI,
/// weight, height.
pub const N_VALUES: usize = 16;

/// Full model input width: values plus flags.
pub const FEATURE_DIM: usize = N_VALUES + N_RAW_FIELDS;

/// Pre-imputation tabular row for one record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawFeatures {
    pub age: Option<f64>,
    pub sex: Option<Sex>,
    pub race: Option<Race>,
    /// Closest vitals in [`crate::ingest::VitalChannel`] order.
    pub vitals: [Option<f64>; N_VITAL_CHANNELS],
    pub bmi: Option<f64>,
    pub weight_kg: Option<f64>,
    pub height_cm: Option<f64>,
}

impl RawFeatures {
    /// Imputable scalar by flag index (see [`FIELD_NAMES`]).
    fn scalar(&self, field: usize) -> Option<f64> {
        match field {
            0 => self.age,
            1 => self.sex.map(|s| match s {
                Sex::Female => 0.0,
                Sex::Male => 1.0,
            }),
            2..=7 => self.vitals[field - 2],
            8 => self.bmi,
            9 => self.weight_kg,
            10 => self.height_cm,
            _ => unreachable!("no scalar field {field}"),
        }
    }
}

/// Imputed feature row: finite values plus one flag per imputable scalar.
/// Race has no flag; a missing race maps to the "other" category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; N_VALUES],
    pub missing_flags: [u8; N_RAW_FIELDS],
}

impl FeatureVector {
    /// Concatenated model input: values then flags as floats.
    pub fn dense(&self) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        out[..N_VALUES].copy_from_slice(&self.values);
        for (o, &f) in out[N_VALUES..].iter_mut().zip(&self.missing_flags) {
            *o = f as f64;
        }
        out
    }
}

/// Column names of [`FeatureVector::dense`], for feature CSV headers.
pub fn feature_names() -> Vec<String> {
    let mut names = vec!["age".to_string(), "sex".to_string()];
    for race in Race::ALL {
        names.push(format!("race_{}", race.as_str()));
    }
    names.extend(FIELD_NAMES[2..].iter().map(|s| s.to_string()));
    names.extend(FIELD_NAMES.iter().map(|s| format!("flag_{s}")));
    names
}

/// Train-fold medians, persisted so inference can impute identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationTable {
    pub medians: BTreeMap<String, f64>,
}

/// Median by selection (middle order statistic; even counts average the two
/// middles) without fully sorting.
fn median_select(values: &mut [f64]) -> f64 {
    let n = values.len();
    assert!(n > 0);
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        // The lower middle is the largest element left of the partition point.
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

/// Impute one row against a fixed table, setting flags for filled fields.
pub fn featurize(raw: &RawFeatures, table: &ImputationTable) -> FeatureVector {
    let mut scalars = [0.0; N_RAW_FIELDS];
    let mut flags = [0u8; N_RAW_FIELDS];
    for (k, name) in FIELD_NAMES.iter().enumerate() {
        match raw.scalar(k) {
            Some(v) => scalars[k] = v,
            None => {
                scalars[k] = *table
                    .medians
                    .get(*name)
                    .unwrap_or_else(|| panic!("imputation table lacks {name}"));
                flags[k] = 1;
            }
        }
    }
    let mut values = [0.0; N_VALUES];
    values[0] = scalars[0];
    values[1] = scalars[1];
    values[2 + raw.race.unwrap_or(Race::Other).index()] = 1.0;
    values[7..13].copy_from_slice(&scalars[2..8]);
    values[13..16].copy_from_slice(&scalars[8..11]);
    FeatureVector {
        values,
        missing_flags: flags,
    }
}

/// Compute medians on the train rows only, then impute every row.
///
/// Errors when a field has no observed train value, since no defensible
/// fill-in exists.
pub fn impute_features(
    rows: &[RawFeatures],
    is_train: &[bool],
) -> Result<(Vec<FeatureVector>, ImputationTable), CohortError> {
    assert_eq!(rows.len(), is_train.len());
    let mut medians = BTreeMap::new();
    for (k, name) in FIELD_NAMES.iter().enumerate() {
        let mut observed: Vec<f64> = rows
            .iter()
            .zip(is_train)
            .filter(|&(_, &train)| train)
            .filter_map(|(r, _)| r.scalar(k))
            .collect();
        if observed.is_empty() {
            return Err(CohortError::AllMissingInTrain {
                field: name.to_string(),
            });
        }
        medians.insert(name.to_string(), median_select(&mut observed));
    }
    let table = ImputationTable { medians };
    let features = rows.iter().map(|r| featurize(r, &table)).collect();
    Ok((features, table))
}
