//! Prediction of laboratory-value abnormalities from 12-lead ECG waveforms plus
//! demographic, biometric and vital-sign features.
//!
//! The pipeline covers the whole path from on-disk cohort files to evaluation
//! reports:
//!
//! * [`ingest`] — waveform and CSV readers/writers, resampling to the 100 Hz
//!   working rate.
//! * [`cohort`] — label space, temporal target alignment (estimation and
//!   monitoring tasks), feature assembly with median imputation, patient-level
//!   splitting and task filtering.
//! * [`ssm`] — a diagonal state-space sequence encoder (kernel computation,
//!   FFT convolution, bidirectional blocks) with hand-derived gradients.
//! * [`fusion`] — tabular encoder, outer-product late fusion, classification
//!   head and the masked multi-label binary cross-entropy loss.
//! * [`model`] — the composed network plus checkpoint save/load.
//! * [`optim`] — AdamW with bias correction and decoupled weight decay.
//! * [`train`] — the training loop with per-epoch validation selection and
//!   segment-averaged record inference.
//! * [`metrics`] — tie-aware AUROC, macro averaging and the seeded empirical
//!   bootstrap.
//! * [`report`] — interval-filtered report tables.
//! * [`synth`] — a synthetic cohort generator with a planted, learnable
//!   waveform/label dependency for end-to-end testing.

pub mod cohort;
pub mod fusion;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod report;
pub mod ssm;
pub mod synth;
pub mod train;
pub mod util;
