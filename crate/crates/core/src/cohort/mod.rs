//! Supervised dataset assembly: the binary label space, per-record targets
//! with explicit missingness, tabular features with train-fold imputation,
//! and patient-disjoint fold splits.

mod assemble;
mod features;
mod labels;
mod split;
mod targets;

pub use assemble::{
    assemble_dataset, filter_tasks, read_dataset, write_dataset, Dataset, Manifest,
    ManifestRecord, RecordMeta, TaskConfig, TaskMode,
};
pub use features::{
    feature_names, featurize, impute_features, FeatureVector, ImputationTable, RawFeatures,
    FEATURE_DIM, FIELD_NAMES, N_RAW_FIELDS, N_VALUES,
};
pub use labels::{build_label_space, is_abnormal, AbnormalityLabel, Direction, LabelCategory};
pub use split::{split_patients, DatasetSplit, Fold, MIN_PATIENTS};
pub use targets::{
    estimation_target, monitoring_target, nearest_sample, nearest_vitals, TargetMatrix, MISSING,
};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("duplicate label: {detail}")]
    DuplicateLabel { detail: String },
    #[error("duplicate record id {record_id:?}")]
    DuplicateRecord { record_id: String },
    #[error("need at least {min} patients for a split, got {got}")]
    TooFewPatients { min: usize, got: usize },
    #[error("feature {field:?} has no observed value in the train fold")]
    AllMissingInTrain { field: String },
    #[error("invalid task config: {detail}")]
    InvalidConfig { detail: String },
    #[error("{path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
}
