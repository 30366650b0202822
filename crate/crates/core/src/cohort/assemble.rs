//! End-to-end dataset assembly: one row per ECG record, with tabular
//! features, a {0,1,MISSING} target matrix, patient-disjoint folds, the
//! ≥10-positive/≥10-negative task filter, and a JSON manifest that pins row
//! and label order for reproducible training.

use super::features::{feature_names, impute_features, FeatureVector, RawFeatures};
use super::labels::{build_label_space, AbnormalityLabel};
use super::split::{split_patients, DatasetSplit, Fold};
use super::targets::{estimation_target, monitoring_target, nearest_vitals, TargetMatrix};
use super::CohortError;
use crate::ingest::{LabEvent, PatientContext, VitalSample};
use crate::util::sha256_hex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// Which supervision question the dataset answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Closest lab value within ±60 minutes of the ECG.
    Estimation,
    /// Any abnormal lab value within a forward horizon.
    Monitoring,
}

/// Windows, horizon and filter thresholds of one dataset build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub mode: TaskMode,
    /// Half-width of the vitals matching window around the ECG, seconds.
    pub vitals_window_s: i64,
    /// Half-width of the estimation target window, seconds.
    pub estimation_lab_window_s: i64,
    /// Forward horizon for monitoring targets, seconds (monitoring only).
    pub horizon_s: Option<i64>,
    /// Minimum positives per evaluation fold for a label to be retained.
    pub min_pos: usize,
    /// Minimum negatives per evaluation fold for a label to be retained.
    pub min_neg: usize,
    /// Train:valid:test split ratio by patient count.
    pub split_ratio: [u32; 3],
}

impl TaskConfig {
    pub fn estimation() -> TaskConfig {
        TaskConfig {
            mode: TaskMode::Estimation,
            vitals_window_s: 1800,
            estimation_lab_window_s: 3600,
            horizon_s: None,
            min_pos: 10,
            min_neg: 10,
            split_ratio: [18, 1, 1],
        }
    }

    pub fn monitoring(horizon_s: i64) -> TaskConfig {
        TaskConfig {
            horizon_s: Some(horizon_s),
            mode: TaskMode::Monitoring,
            ..TaskConfig::estimation()
        }
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        let bad = |detail: String| Err(CohortError::InvalidConfig { detail });
        if self.vitals_window_s <= 0 || self.estimation_lab_window_s <= 0 {
            return bad("windows must be strictly positive".into());
        }
        if self.min_pos < 1 || self.min_neg < 1 {
            return bad("min_pos and min_neg must be at least 1".into());
        }
        if self.split_ratio.contains(&0) {
            return bad("split ratio parts must be positive".into());
        }
        match (self.mode, self.horizon_s) {
            (TaskMode::Monitoring, None) => bad("monitoring mode requires horizon_s".into()),
            (TaskMode::Monitoring, Some(h)) if h <= 0 => {
                bad(format!("horizon_s must be strictly positive, got {h}"))
            }
            (TaskMode::Estimation, Some(_)) => {
                bad("estimation mode does not take horizon_s".into())
            }
            _ => Ok(()),
        }
    }
}

/// Identity and waveform location of one record; assembly never reads the
/// waveform payload itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub record_id: String,
    pub patient_id: String,
    pub acquisition_time: i64,
    pub payload_path: PathBuf,
    pub sidecar_path: PathBuf,
}

/// One manifest row: a record with its fold assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub record_id: String,
    pub patient_id: String,
    pub acquisition_time: i64,
    pub fold: Fold,
    pub payload_path: PathBuf,
    pub sidecar_path: PathBuf,
}

/// Everything needed to re-create training order: config echo and hash,
/// label order, retained labels, fold map, and the imputation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: TaskConfig,
    pub config_hash: String,
    pub seed: u64,
    pub feature_fields: Vec<String>,
    pub labels: Vec<AbnormalityLabel>,
    pub retained_labels: Vec<String>,
    pub imputation: BTreeMap<String, f64>,
    pub records: Vec<ManifestRecord>,
}

/// Assembled dataset: manifest plus the dense feature and target matrices,
/// rows in manifest record order, columns in manifest label order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub features: Vec<FeatureVector>,
    pub targets: TargetMatrix,
}

impl Dataset {
    pub fn split(&self) -> DatasetSplit {
        let mut patient_fold = BTreeMap::new();
        let mut record_fold = BTreeMap::new();
        for r in &self.manifest.records {
            patient_fold.insert(r.patient_id.clone(), r.fold);
            record_fold.insert(r.record_id.clone(), r.fold);
        }
        DatasetSplit {
            patient_fold,
            record_fold,
        }
    }

    /// Row indices of one fold, in manifest order.
    pub fn fold_rows(&self, fold: Fold) -> Vec<usize> {
        self.manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.fold == fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Column indices of the retained labels, in label order.
    pub fn retained_columns(&self) -> Vec<usize> {
        self.manifest
            .labels
            .iter()
            .enumerate()
            .filter(|(_, l)| self.manifest.retained_labels.contains(&l.label_id))
            .map(|(i, _)| i)
            .collect()
    }
}

/// A label is retained iff it has ≥ min_pos positives and ≥ min_neg
/// negatives among non-MISSING entries in the validation fold AND in the
/// test fold.
pub fn filter_tasks(
    targets: &TargetMatrix,
    folds: &[Fold],
    min_pos: usize,
    min_neg: usize,
) -> Vec<String> {
    assert_eq!(targets.n_records(), folds.len());
    let mut retained = Vec::new();
    for (k, label_id) in targets.labels.iter().enumerate() {
        let ok = [Fold::Valid, Fold::Test].iter().all(|fold| {
            let (mut pos, mut neg) = (0usize, 0usize);
            for (r, f) in folds.iter().enumerate() {
                if f == fold {
                    match targets.get(r, k) {
                        1 => pos += 1,
                        0 => neg += 1,
                        _ => {}
                    }
                }
            }
            pos >= min_pos && neg >= min_neg
        });
        if ok {
            retained.push(label_id.clone());
        }
    }
    retained
}

fn config_hash(config: &TaskConfig, seed: u64) -> String {
    let blob = serde_json::to_string(&(config, seed)).expect("config serializes");
    sha256_hex(blob.as_bytes())
}

/// Build the full dataset from validated inputs.
///
/// Rows are sorted by `record_id`; labels by `label_id`. Per-record target
/// and feature computation runs in parallel; every reduction is ordered, so
/// the result is independent of thread count.
#[allow(clippy::too_many_arguments)]
pub fn assemble_dataset(
    config: &TaskConfig,
    records: &[RecordMeta],
    events: &[LabEvent],
    vitals: &[VitalSample],
    context: &[PatientContext],
    thresholds: Vec<AbnormalityLabel>,
    seed: u64,
    strata: Option<&BTreeMap<String, String>>,
) -> Result<Dataset, CohortError> {
    config.validate()?;
    let labels = build_label_space(thresholds)?;

    let mut rows: Vec<&RecordMeta> = records.iter().collect();
    rows.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    for pair in rows.windows(2) {
        if pair[0].record_id == pair[1].record_id {
            return Err(CohortError::DuplicateRecord {
                record_id: pair[0].record_id.clone(),
            });
        }
    }

    // Index the event and vital streams for window lookups. Parsed streams
    // are (patient, time)-sorted, so each group is pushed in time order.
    let mut events_by: BTreeMap<(&str, &str), Vec<(i64, f64)>> = BTreeMap::new();
    for e in events {
        events_by
            .entry((e.patient_id.as_str(), e.item_id.as_str()))
            .or_default()
            .push((e.time, e.value));
    }
    let mut vitals_by: BTreeMap<&str, Vec<VitalSample>> = BTreeMap::new();
    for v in vitals {
        vitals_by.entry(v.patient_id.as_str()).or_default().push(v.clone());
    }
    let mut context_by: BTreeMap<&str, &PatientContext> = BTreeMap::new();
    for c in context {
        context_by.entry(c.patient_id.as_str()).or_insert(c);
    }

    let id_pairs: Vec<(String, String)> = rows
        .iter()
        .map(|r| (r.record_id.clone(), r.patient_id.clone()))
        .collect();
    let split = split_patients(&id_pairs, config.split_ratio, seed, strata)?;

    let empty_events: Vec<(i64, f64)> = Vec::new();
    let per_record: Vec<(RawFeatures, Vec<Option<bool>>)> = rows
        .par_iter()
        .map(|rec| {
            let t = rec.acquisition_time;
            let patient = rec.patient_id.as_str();
            let vit = vitals_by.get(patient).map(Vec::as_slice).unwrap_or(&[]);
            let ctx = context_by.get(patient);
            let raw = RawFeatures {
                age: ctx.and_then(|c| c.age),
                sex: ctx.and_then(|c| c.sex),
                race: ctx.and_then(|c| c.race),
                vitals: nearest_vitals(t, vit, config.vitals_window_s),
                bmi: ctx.and_then(|c| c.bmi),
                weight_kg: ctx.and_then(|c| c.weight_kg),
                height_cm: ctx.and_then(|c| c.height_cm),
            };
            let targets = labels
                .iter()
                .map(|label| {
                    let stream = events_by
                        .get(&(patient, label.item_id.as_str()))
                        .unwrap_or(&empty_events);
                    match config.mode {
                        TaskMode::Estimation => {
                            estimation_target(t, stream, label, config.estimation_lab_window_s)
                        }
                        TaskMode::Monitoring => {
                            monitoring_target(t, stream, label, config.horizon_s.unwrap())
                        }
                    }
                })
                .collect();
            (raw, targets)
        })
        .collect();

    let folds: Vec<Fold> = rows
        .iter()
        .map(|r| split.record_fold[&r.record_id])
        .collect();
    let is_train: Vec<bool> = folds.iter().map(|f| *f == Fold::Train).collect();
    let raws: Vec<RawFeatures> = per_record.iter().map(|(raw, _)| raw.clone()).collect();
    let (features, imputation) = impute_features(&raws, &is_train)?;

    let record_ids: Vec<String> = rows.iter().map(|r| r.record_id.clone()).collect();
    let label_ids: Vec<String> = labels.iter().map(|l| l.label_id.clone()).collect();
    let mut targets = TargetMatrix::new(record_ids, label_ids);
    for (r, (_, row_targets)) in per_record.iter().enumerate() {
        for (k, target) in row_targets.iter().enumerate() {
            targets.set_from(r, k, *target);
        }
    }

    let retained = filter_tasks(&targets, &folds, config.min_pos, config.min_neg);

    let manifest = Manifest {
        config: config.clone(),
        config_hash: config_hash(config, seed),
        seed,
        feature_fields: feature_names(),
        labels,
        retained_labels: retained,
        imputation: imputation.medians,
        records: rows
            .iter()
            .zip(&folds)
            .map(|(r, fold)| ManifestRecord {
                record_id: r.record_id.clone(),
                patient_id: r.patient_id.clone(),
                acquisition_time: r.acquisition_time,
                fold: *fold,
                payload_path: r.payload_path.clone(),
                sidecar_path: r.sidecar_path.clone(),
            })
            .collect(),
    };
    Ok(Dataset {
        manifest,
        features,
        targets,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CohortError + '_ {
    move |source| CohortError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write `manifest.json`, `features.csv` and `targets.csv` under `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<(), CohortError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join("manifest.json");
    let blob = serde_json::to_string_pretty(&ds.manifest).expect("manifest serializes");
    fs::write(&manifest_path, blob + "\n").map_err(io_err(&manifest_path))?;

    let features_path = dir.join("features.csv");
    let mut out = String::new();
    out.push_str("record_id,");
    out.push_str(&ds.manifest.feature_fields.join(","));
    out.push('\n');
    for (rec, feat) in ds.manifest.records.iter().zip(&ds.features) {
        out.push_str(&rec.record_id);
        for v in feat.dense() {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(&features_path, out).map_err(io_err(&features_path))?;

    let targets_path = dir.join("targets.csv");
    let mut out = String::new();
    out.push_str("record_id,");
    out.push_str(&ds.targets.labels.join(","));
    out.push('\n');
    for (r, rec) in ds.manifest.records.iter().enumerate() {
        out.push_str(&rec.record_id);
        for &cell in ds.targets.row(r) {
            out.push(',');
            out.push_str(match cell {
                0 => "0",
                1 => "1",
                _ => "NA",
            });
        }
        out.push('\n');
    }
    fs::write(&targets_path, out).map_err(io_err(&targets_path))
}

fn malformed(path: &Path, detail: impl Into<String>) -> CohortError {
    CohortError::Malformed {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Read a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset, CohortError> {
    let manifest_path = dir.join("manifest.json");
    let blob = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&blob)
        .map_err(|e| malformed(&manifest_path, e.to_string()))?;

    let features_path = dir.join("features.csv");
    let blob = fs::read_to_string(&features_path).map_err(io_err(&features_path))?;
    let mut features = Vec::new();
    for (i, line) in blob.lines().skip(1).enumerate() {
        let rec = manifest.records.get(i).ok_or_else(|| {
            malformed(&features_path, "more feature rows than manifest records")
        })?;
        let mut cells = line.split(',');
        let record_id = cells.next().unwrap_or("");
        if record_id != rec.record_id {
            return Err(malformed(
                &features_path,
                format!("row {i} is {record_id:?}, manifest says {:?}", rec.record_id),
            ));
        }
        let dense: Vec<f64> = cells
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| malformed(&features_path, format!("row {i}: {e}")))?;
        features.push(feature_vector_from_dense(&features_path, i, &dense)?);
    }
    if features.len() != manifest.records.len() {
        return Err(malformed(&features_path, "missing feature rows"));
    }

    let targets_path = dir.join("targets.csv");
    let blob = fs::read_to_string(&targets_path).map_err(io_err(&targets_path))?;
    let record_ids: Vec<String> = manifest.records.iter().map(|r| r.record_id.clone()).collect();
    let label_ids: Vec<String> = manifest.labels.iter().map(|l| l.label_id.clone()).collect();
    let mut targets = TargetMatrix::new(record_ids, label_ids.clone());
    let mut n_rows = 0usize;
    for (r, line) in blob.lines().skip(1).enumerate() {
        n_rows += 1;
        let mut cells = line.split(',');
        let _record_id = cells.next();
        for (k, cell) in cells.enumerate() {
            if k >= label_ids.len() {
                return Err(malformed(&targets_path, format!("row {r}: too many cells")));
            }
            let value = match cell {
                "0" => 0,
                "1" => 1,
                "NA" => super::targets::MISSING,
                other => {
                    return Err(malformed(
                        &targets_path,
                        format!("row {r}: unexpected cell {other:?}"),
                    ))
                }
            };
            targets.set(r, k, value);
        }
    }
    if n_rows != manifest.records.len() {
        return Err(malformed(&targets_path, "row count differs from manifest"));
    }

    Ok(Dataset {
        manifest,
        features,
        targets,
    })
}

fn feature_vector_from_dense(
    path: &Path,
    row: usize,
    dense: &[f64],
) -> Result<FeatureVector, CohortError> {
    use super::features::{FEATURE_DIM, N_RAW_FIELDS, N_VALUES};
    if dense.len() != FEATURE_DIM {
        return Err(malformed(
            path,
            format!("row {row}: {} cells, expected {FEATURE_DIM}", dense.len()),
        ));
    }
    let mut values = [0.0; N_VALUES];
    values.copy_from_slice(&dense[..N_VALUES]);
    let mut missing_flags = [0u8; N_RAW_FIELDS];
    for (f, &v) in missing_flags.iter_mut().zip(&dense[N_VALUES..]) {
        *f = match v {
            0.0 => 0,
            1.0 => 1,
            other => {
                return Err(malformed(path, format!("row {row}: flag cell {other}")))
            }
        };
    }
    Ok(FeatureVector {
        values,
        missing_flags,
    })
}
