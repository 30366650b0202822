//! Patient-disjoint fold assignment: an 18:1:1 split decided per patient by
//! seeded shuffle, optionally within user-supplied strata.

use super::CohortError;
use crate::util::mix_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Fewest patients for which a split is meaningful.
pub const MIN_PATIENTS: usize = 20;

/// Seed stream of the splitter, so one base seed can drive independent
/// random choices elsewhere in the pipeline.
const SPLIT_STREAM: u64 = 0x53504c49; // "SPLI"

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Valid,
    Test,
}

impl Fold {
    pub fn as_str(&self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Valid => "valid",
            Fold::Test => "test",
        }
    }
}

/// Fold assignment at both granularities; every record of a patient shares
/// the patient's fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub patient_fold: BTreeMap<String, Fold>,
    pub record_fold: BTreeMap<String, Fold>,
}

/// Round(n·part/total) with ties away from zero, in integer arithmetic.
fn round_quota(n: usize, part: usize, total: usize) -> usize {
    (2 * n * part + total) / (2 * total)
}

/// Assign patients to train/valid/test targeting `ratio` (by patient count).
///
/// `records` are `(record_id, patient_id)` pairs. Patients are shuffled with
/// a ChaCha stream derived from `seed`; with `strata`, the shuffle and
/// assignment happen within each stratum while a running quota keeps the
/// global test and valid counts at round(n/20) of all patients. Unstratified
/// cohorts land on the rounded counts exactly.
pub fn split_patients(
    records: &[(String, String)],
    ratio: [u32; 3],
    seed: u64,
    strata: Option<&BTreeMap<String, String>>,
) -> Result<DatasetSplit, CohortError> {
    assert!(ratio.iter().all(|&r| r > 0), "ratio parts must be positive");
    let patients: BTreeSet<&str> = records.iter().map(|(_, p)| p.as_str()).collect();
    if patients.len() < MIN_PATIENTS {
        return Err(CohortError::TooFewPatients {
            min: MIN_PATIENTS,
            got: patients.len(),
        });
    }

    // Group patients by stratum key (one implicit stratum when none given).
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for p in patients {
        let key = strata
            .and_then(|s| s.get(p).map(String::as_str))
            .unwrap_or("");
        groups.entry(key).or_default().push(p);
    }

    let total = ratio.iter().sum::<u32>() as usize;
    let (part_valid, part_test) = (ratio[1] as usize, ratio[2] as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SPLIT_STREAM));
    let mut patient_fold = BTreeMap::new();
    let mut seen = 0usize;
    let (mut assigned_valid, mut assigned_test) = (0usize, 0usize);
    for group in groups.values_mut() {
        group.shuffle(&mut rng);
        seen += group.len();
        // Cumulative quotas carry rounding errors across strata.
        let mut take_test = round_quota(seen, part_test, total) - assigned_test;
        let mut take_valid = round_quota(seen, part_valid, total) - assigned_valid;
        if take_test + take_valid > group.len() {
            take_valid = group.len() - take_test;
        }
        assigned_test += take_test;
        assigned_valid += take_valid;
        for p in group.drain(..) {
            let fold = if take_test > 0 {
                take_test -= 1;
                Fold::Test
            } else if take_valid > 0 {
                take_valid -= 1;
                Fold::Valid
            } else {
                Fold::Train
            };
            patient_fold.insert(p.to_string(), fold);
        }
    }

    let record_fold = records
        .iter()
        .map(|(r, p)| (r.clone(), patient_fold[p.as_str()]))
        .collect();
    Ok(DatasetSplit {
        patient_fold,
        record_fold,
    })
}
