//! Training loop: seeded random-crop batching over the train fold, AdamW
//! updates on the masked-BCE objective, per-epoch validation model selection
//! by macro AUROC, and segment-averaged record-level inference.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Dataset, Fold, FEATURE_DIM};
use crate::ingest::EcgRecord;
use crate::metrics::{macro_auroc, MetricsError};
use crate::model::{manifest_hash, BatchSample, Checkpoint, Model, ModelError};
use crate::optim::{adamw_step, AdamWConfig, OptimError, OptimizerState};
use crate::params::ParamLayout;
use crate::util::mix_seed;

/// Segments averaged per record at inference time.
pub const N_EVAL_SEGMENTS: usize = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{fold} fold is empty")]
    EmptyFold { fold: String },
    #[error("non-finite training loss {value} at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, value: f64 },
    #[error("record {record_id:?} has {n_samples} samples; inference needs {needed}")]
    RecordTooShort {
        record_id: String,
        n_samples: usize,
        needed: usize,
    },
    #[error("manifest row {index} is {manifest_id:?} but the waveform is {waveform_id:?}")]
    RecordMismatch {
        index: usize,
        manifest_id: String,
        waveform_id: String,
    },
    #[error("expected {expected} waveforms to match the manifest, got {got}")]
    WaveformCountMismatch { expected: usize, got: usize },
    #[error("model predicts {model} labels but the dataset retains {dataset}")]
    LabelCountMismatch { model: usize, dataset: usize },
    #[error("failed to write the training log: {source}")]
    LogIo {
        #[from]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Optimization hyperparameters and the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> TrainerConfig {
        TrainerConfig {
            learning_rate: 0.001,
            weight_decay: 0.001,
            epochs: 20,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) {
        assert!(self.learning_rate > 0.0, "learning rate must be positive");
        assert!(self.weight_decay >= 0.0, "weight decay must be nonnegative");
        assert!(self.epochs >= 1, "need at least one epoch");
        assert!(self.batch_size >= 1, "need a positive batch size");
        assert!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            "betas must lie in [0, 1)"
        );
        assert!(self.eps > 0.0, "eps must be positive");
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_macro_auroc: f64,
    pub wall_s: f64,
}

/// Best checkpoint plus the full per-epoch log.
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochLog>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Tensor name owning flat parameter index `i`; diagnostics only.
fn param_name(layout: &ParamLayout, i: usize) -> String {
    for spec in layout.specs() {
        if i >= spec.offset && i < spec.offset + spec.len() {
            return format!("{}[{}]", spec.name, i - spec.offset);
        }
    }
    format!("<out of range {i}>")
}

/// Channel-major f64 crop of `len` samples starting at `start`.
fn segment_input(record: &EcgRecord, start: usize, len: usize) -> Vec<f64> {
    let n_channels = record.samples.len() / record.n_samples;
    let mut out = vec![0.0; n_channels * len];
    for c in 0..n_channels {
        let channel = record.channel(c);
        for (t, slot) in out[c * len..(c + 1) * len].iter_mut().enumerate() {
            *slot = f64::from(channel[start + t]);
        }
    }
    out
}

/// Record-level probabilities for a batch of records: each record's first
/// `4 * segment_len` samples split into four non-overlapping segments, one
/// shared kernel computation, and a per-record mean of segment sigmoids.
pub fn predict_records(
    model: &Model,
    params: &[f64],
    items: &[(&EcgRecord, &[f64])],
) -> Result<Vec<Vec<f64>>, TrainError> {
    let seg_len = model.config().encoder.segment_len;
    let needed = N_EVAL_SEGMENTS * seg_len;
    let mut segments = Vec::with_capacity(items.len() * N_EVAL_SEGMENTS);
    for (record, _) in items {
        if record.n_samples < needed {
            return Err(TrainError::RecordTooShort {
                record_id: record.record_id.clone(),
                n_samples: record.n_samples,
                needed,
            });
        }
        for s in 0..N_EVAL_SEGMENTS {
            segments.push(segment_input(record, s * seg_len, seg_len));
        }
    }
    let inputs: Vec<(&[f64], &[f64])> = segments
        .iter()
        .enumerate()
        .map(|(i, seg)| (seg.as_slice(), items[i / N_EVAL_SEGMENTS].1))
        .collect();
    let logits = model.predict_batch(params, &inputs)?;

    let k = model.config().head.n_labels;
    let mut out = Vec::with_capacity(items.len());
    for chunk in logits.chunks(N_EVAL_SEGMENTS) {
        let mut probs = vec![0.0; k];
        for row in chunk {
            for (p, &x) in probs.iter_mut().zip(row) {
                *p += sigmoid(x);
            }
        }
        for p in &mut probs {
            *p /= N_EVAL_SEGMENTS as f64;
        }
        out.push(probs);
    }
    Ok(out)
}

/// Probabilities for one record; see [`predict_records`].
pub fn predict_record(
    model: &Model,
    params: &[f64],
    record: &EcgRecord,
    features: &[f64],
) -> Result<Vec<f64>, TrainError> {
    let mut rows = predict_records(model, params, &[(record, features)])?;
    Ok(rows.pop().expect("one record in, one row out"))
}

/// Fit the model on the train fold and return the checkpoint with the
/// highest validation macro AUROC (ties resolved toward the earlier epoch).
///
/// `waveforms` must align one-to-one with `dataset.manifest.records`, already
/// resampled to the model's input rate. Each epoch is driven by its own seeded
/// stream (`mix(seed, epoch)`): shuffle order, one random crop per record, and
/// one dropout seed per batch. Batches whose targets are entirely MISSING are
/// skipped outright, leaving parameters and optimizer state untouched. One JSON
/// object per epoch is appended to `log`; `deterministic` zeroes the wall-clock
/// field so logs are byte-comparable across runs.
pub fn train(
    model: &Model,
    dataset: &Dataset,
    waveforms: &[EcgRecord],
    config: &TrainerConfig,
    deterministic: bool,
    log: &mut impl Write,
) -> Result<TrainOutcome, TrainError> {
    config.validate();
    if waveforms.len() != dataset.manifest.records.len() {
        return Err(TrainError::WaveformCountMismatch {
            expected: dataset.manifest.records.len(),
            got: waveforms.len(),
        });
    }
    for (i, (rec, wave)) in dataset.manifest.records.iter().zip(waveforms).enumerate() {
        if rec.record_id != wave.record_id {
            return Err(TrainError::RecordMismatch {
                index: i,
                manifest_id: rec.record_id.clone(),
                waveform_id: wave.record_id.clone(),
            });
        }
    }

    let retained = dataset.retained_columns();
    let k = retained.len();
    if model.config().head.n_labels != k {
        return Err(TrainError::LabelCountMismatch {
            model: model.config().head.n_labels,
            dataset: k,
        });
    }
    let label_ids = dataset.manifest.retained_labels.clone();

    let train_rows = dataset.fold_rows(Fold::Train);
    let valid_rows = dataset.fold_rows(Fold::Valid);
    if train_rows.is_empty() {
        return Err(TrainError::EmptyFold {
            fold: "train".into(),
        });
    }
    if valid_rows.is_empty() {
        return Err(TrainError::EmptyFold {
            fold: "valid".into(),
        });
    }

    let dense: Vec<[f64; FEATURE_DIM]> = dataset.features.iter().map(|f| f.dense()).collect();
    let target_rows: Vec<Vec<i8>> = (0..dataset.manifest.records.len())
        .map(|r| retained.iter().map(|&c| dataset.targets.get(r, c)).collect())
        .collect();
    let valid_targets: Vec<i8> = valid_rows
        .iter()
        .flat_map(|&r| target_rows[r].iter().copied())
        .collect();
    let valid_items: Vec<(&EcgRecord, &[f64])> = valid_rows
        .iter()
        .map(|&r| (&waveforms[r], dense[r].as_slice()))
        .collect();

    let seg_len = model.config().encoder.segment_len;
    let mut params = model.init_params(config.seed);
    let mut state = OptimizerState::new(params.len());
    let optimizer = config.optimizer();
    let layout = model.layout();

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64));

        let mut order = train_rows.clone();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut observed = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let crops: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&r| {
                    let start = rng.random_range(0..=waveforms[r].n_samples - seg_len);
                    segment_input(&waveforms[r], start, seg_len)
                })
                .collect();
            let samples: Vec<BatchSample> = chunk
                .iter()
                .zip(&crops)
                .map(|(&r, crop)| BatchSample {
                    segment: crop.as_slice(),
                    features: dense[r].as_slice(),
                    targets: target_rows[r].as_slice(),
                })
                .collect();
            let m: usize = samples
                .iter()
                .flat_map(|s| s.targets)
                .filter(|&&t| t >= 0)
                .count();
            if m == 0 {
                continue;
            }
            let dropout_seed = rng.random::<u64>();
            let (loss, grads) = model.train_batch(&params, &samples, dropout_seed)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, value: loss });
            }
            adamw_step(&mut params, &grads, &mut state, &optimizer, |i| {
                param_name(layout, i)
            })?;
            loss_sum += loss * m as f64;
            observed += m;
        }
        let train_loss = if observed > 0 {
            loss_sum / observed as f64
        } else {
            0.0
        };

        let probs: Vec<f64> = predict_records(model, &params, &valid_items)?
            .into_iter()
            .flatten()
            .collect();
        let valid_macro_auroc = macro_auroc(&probs, &valid_targets, k, &label_ids)?;

        let improved = best
            .as_ref()
            .is_none_or(|(_, score, _)| valid_macro_auroc > *score);
        if improved {
            best = Some((epoch, valid_macro_auroc, params.clone()));
        }

        let wall_s = if deterministic {
            0.0
        } else {
            started.elapsed().as_secs_f64()
        };
        let entry = EpochLog {
            epoch,
            train_loss,
            valid_macro_auroc,
            wall_s,
        };
        let line = serde_json::to_string(&entry).expect("epoch log serializes");
        log.write_all(line.as_bytes())?;
        log.write_all(b"\n")?;
        epochs.push(entry);
    }
    log.flush()?;

    let (best_epoch, best_score, best_params) = best.expect("epochs >= 1 yields a best epoch");
    let checkpoint = Checkpoint::from_params(
        model,
        &best_params,
        manifest_hash(&dataset.manifest),
        label_ids,
        best_epoch,
        best_score,
    );
    Ok(TrainOutcome { checkpoint, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{
        feature_names, AbnormalityLabel, Direction, FeatureVector, LabelCategory, Manifest,
        ManifestRecord, TargetMatrix, TaskConfig,
    };
    use crate::ingest::N_CHANNELS;
    use crate::model::{Model, ModelConfig};
    use rand_distr::{Distribution, Normal};
    use std::collections::BTreeMap;
    use std::path::PathBuf;

    fn test_label(label_id: &str) -> AbnormalityLabel {
        AbnormalityLabel {
            label_id: label_id.to_string(),
            item_id: "5555".into(),
            display_name: "Marker".into(),
            direction: Direction::High,
            threshold: 10.0,
            unit: "mg/dL".into(),
            category: LabelCategory::Metabolic,
        }
    }

    fn flat_record(record_id: &str, patient_id: &str, value: f32, n_samples: usize) -> EcgRecord {
        EcgRecord {
            record_id: record_id.into(),
            patient_id: patient_id.into(),
            acquisition_time: 0,
            sampling_rate_hz: 100,
            samples: vec![value; N_CHANNELS * n_samples],
            n_samples,
        }
    }

    /// A record whose lead 0 mean encodes the class, with mild seeded noise
    /// on every lead so the task is separable but not degenerate.
    fn planted_record(
        record_id: &str,
        patient_id: &str,
        positive: bool,
        rng: &mut ChaCha8Rng,
    ) -> EcgRecord {
        let n_samples = 1000;
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut samples = vec![0.0f32; N_CHANNELS * n_samples];
        let offset = if positive { 1.0 } else { -1.0 };
        for (c, chunk) in samples.chunks_mut(n_samples).enumerate() {
            for s in chunk.iter_mut() {
                *s = noise.sample(rng) as f32 + if c == 0 { offset } else { 0.0 };
            }
        }
        EcgRecord {
            record_id: record_id.into(),
            patient_id: patient_id.into(),
            acquisition_time: 0,
            sampling_rate_hz: 100,
            samples,
            n_samples,
        }
    }

    /// Dataset + waveforms with one retained label and the given per-fold
    /// class pattern; `make` builds the waveform for (id, patient, positive).
    fn build_corpus(
        folds: &[(Fold, &[bool])],
        mut make: impl FnMut(&str, &str, bool) -> EcgRecord,
    ) -> (Dataset, Vec<EcgRecord>) {
        let label = test_label("marker_high");
        let mut records = Vec::new();
        let mut waveforms = Vec::new();
        let mut classes = Vec::new();
        for (fold, pattern) in folds {
            for &positive in *pattern {
                let i = records.len();
                let record_id = format!("rec{i:03}");
                let patient_id = format!("pat{i:03}");
                waveforms.push(make(&record_id, &patient_id, positive));
                records.push(ManifestRecord {
                    record_id,
                    patient_id,
                    acquisition_time: 0,
                    fold: *fold,
                    payload_path: PathBuf::from("unused.f32"),
                    sidecar_path: PathBuf::from("unused.json"),
                });
                classes.push(positive);
            }
        }
        let record_ids: Vec<String> = records.iter().map(|r| r.record_id.clone()).collect();
        let mut targets = TargetMatrix::new(record_ids, vec![label.label_id.clone()]);
        for (i, &positive) in classes.iter().enumerate() {
            targets.set(i, 0, i8::from(positive));
        }
        let features = vec![
            FeatureVector {
                values: [0.0; 16],
                missing_flags: [0; 11],
            };
            records.len()
        ];
        let manifest = Manifest {
            config: TaskConfig::estimation(),
            config_hash: "test".into(),
            seed: 0,
            feature_fields: feature_names().iter().map(|s| s.to_string()).collect(),
            labels: vec![label],
            retained_labels: vec!["marker_high".into()],
            imputation: BTreeMap::new(),
            records,
        };
        (
            Dataset {
                manifest,
                features,
                targets,
            },
            waveforms,
        )
    }

    fn tiny_model() -> Model {
        let mut config = ModelConfig::new(4, 1);
        config.encoder.n_blocks = 1;
        config.encoder.state_size = 2;
        config.head.fusion_proj_dim = Some(2);
        Model::new(config).unwrap()
    }

    #[test]
    fn config_defaults_match_contract() {
        let config = TrainerConfig::default();
        assert_eq!(config.learning_rate, 0.001);
        assert_eq!(config.weight_decay, 0.001);
        assert_eq!(config.epochs, 20);
        assert_eq!(config.batch_size, 32);
        assert_eq!(config.beta1, 0.9);
        assert_eq!(config.beta2, 0.999);
        assert_eq!(config.eps, 1e-8);

        let parsed: TrainerConfig = serde_json::from_str("{\"seed\": 7}").unwrap();
        assert_eq!(parsed.seed, 7);
        assert_eq!(parsed.epochs, 20);
        assert!(serde_json::from_str::<TrainerConfig>("{\"epohcs\": 3}").is_err());
    }

    #[test]
    fn predict_record_matches_manual_recomposition() {
        let model = tiny_model();
        let params = model.init_params(11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let record = planted_record("r0", "p0", true, &mut rng);
        let features: Vec<f64> = (0..FEATURE_DIM).map(|i| (i as f64 - 13.0) / 9.0).collect();

        let probs = predict_record(&model, &params, &record, &features).unwrap();

        let seg_len = model.config().encoder.segment_len;
        let mut manual = [0.0; 1];
        for s in 0..N_EVAL_SEGMENTS {
            let segment = segment_input(&record, s * seg_len, seg_len);
            let logits = model
                .predict_batch(&params, &[(segment.as_slice(), features.as_slice())])
                .unwrap();
            manual[0] += sigmoid(logits[0][0]);
        }
        manual[0] /= N_EVAL_SEGMENTS as f64;

        assert_eq!(probs.len(), 1);
        assert_eq!(probs[0].to_bits(), manual[0].to_bits());
        assert!(probs[0] > 0.0 && probs[0] < 1.0);
    }

    #[test]
    fn identical_segments_make_averaging_a_no_op() {
        let model = tiny_model();
        let params = model.init_params(5);
        let record = flat_record("r0", "p0", 0.25, 1000);
        let features = vec![0.5; FEATURE_DIM];
        let averaged = predict_record(&model, &params, &record, &features).unwrap();
        let segment = segment_input(&record, 0, model.config().encoder.segment_len);
        let single = model
            .predict_batch(&params, &[(segment.as_slice(), features.as_slice())])
            .unwrap();
        assert!((averaged[0] - sigmoid(single[0][0])).abs() < 1e-15);
    }

    #[test]
    fn short_record_is_rejected() {
        let model = tiny_model();
        let params = model.init_params(5);
        let record = flat_record("r0", "p0", 0.0, 999);
        let features = vec![0.0; FEATURE_DIM];
        let err = predict_record(&model, &params, &record, &features).unwrap_err();
        match err {
            TrainError::RecordTooShort {
                n_samples, needed, ..
            } => {
                assert_eq!(n_samples, 999);
                assert_eq!(needed, 1000);
            }
            other => panic!("expected RecordTooShort, got {other:?}"),
        }
    }

    #[test]
    fn fully_masked_train_fold_leaves_params_unchanged() {
        let valid_pattern = [true, false, true, false, true, false];
        let (mut dataset, waveforms) = build_corpus(
            &[
                (Fold::Train, &[true, false, true, false][..]),
                (Fold::Valid, &valid_pattern[..]),
            ],
            |id, pat, pos| {
                let mut rng = ChaCha8Rng::seed_from_u64(id.len() as u64);
                planted_record(id, pat, pos, &mut rng)
            },
        );
        for row in dataset.fold_rows(Fold::Train) {
            dataset.targets.set(row, 0, crate::cohort::MISSING);
        }

        let model = tiny_model();
        let config = TrainerConfig {
            epochs: 2,
            batch_size: 2,
            seed: 9,
            ..TrainerConfig::default()
        };
        let mut log = Vec::new();
        let outcome = train(&model, &dataset, &waveforms, &config, true, &mut log).unwrap();

        for entry in &outcome.epochs {
            assert_eq!(entry.train_loss, 0.0);
        }
        let init = model.init_params(config.seed);
        let mut restored = vec![0.0; init.len()];
        for tensor in &outcome.checkpoint.tensors {
            let id = model.layout().id(&tensor.name).unwrap();
            let spec = model.layout().spec(id);
            restored[spec.offset..spec.offset + spec.len()].copy_from_slice(&tensor.values);
        }
        assert_eq!(init, restored, "no observed target may move a parameter");
    }

    #[test]
    fn same_seed_gives_identical_logs_and_checkpoints() {
        let pattern = [true, false, true, false, true, false];
        let (dataset, waveforms) = build_corpus(
            &[
                (Fold::Train, &pattern[..]),
                (Fold::Valid, &pattern[..]),
            ],
            |id, pat, pos| {
                let mut rng = ChaCha8Rng::seed_from_u64(id.as_bytes()[3] as u64);
                planted_record(id, pat, pos, &mut rng)
            },
        );
        let model = tiny_model();
        let config = TrainerConfig {
            epochs: 2,
            batch_size: 4,
            seed: 21,
            ..TrainerConfig::default()
        };

        let mut log_a = Vec::new();
        let out_a = train(&model, &dataset, &waveforms, &config, true, &mut log_a).unwrap();
        let mut log_b = Vec::new();
        let out_b = train(&model, &dataset, &waveforms, &config, true, &mut log_b).unwrap();

        assert_eq!(log_a, log_b, "deterministic logs must be byte-identical");
        assert!(!log_a.is_empty());
        for (a, b) in out_a
            .checkpoint
            .tensors
            .iter()
            .zip(&out_b.checkpoint.tensors)
        {
            assert_eq!(a.name, b.name);
            let bits_a: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "checkpoint {} must be bitwise stable", a.name);
        }
        assert_eq!(out_a.checkpoint.best_epoch, out_b.checkpoint.best_epoch);
    }

    #[test]
    fn planted_signal_is_learned_and_best_epoch_is_the_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(400);
        let train_pattern: Vec<bool> = (0..24).map(|i| i % 2 == 0).collect();
        let valid_pattern: Vec<bool> = (0..12).map(|i| i % 2 == 0).collect();
        let (dataset, waveforms) = {
            let mut make_rng = ChaCha8Rng::seed_from_u64(rng.random());
            build_corpus(
                &[
                    (Fold::Train, &train_pattern[..]),
                    (Fold::Valid, &valid_pattern[..]),
                ],
                move |id, pat, pos| planted_record(id, pat, pos, &mut make_rng),
            )
        };
        let model = tiny_model();
        let config = TrainerConfig {
            epochs: 6,
            batch_size: 8,
            learning_rate: 0.01,
            seed: 2,
            ..TrainerConfig::default()
        };
        let mut log = Vec::new();
        let outcome = train(&model, &dataset, &waveforms, &config, true, &mut log).unwrap();

        assert_eq!(outcome.epochs.len(), 6);
        let first = outcome.epochs.first().unwrap().train_loss;
        let last = outcome.epochs.last().unwrap().train_loss;
        assert!(
            last < first,
            "train loss should fall on a separable task: {first} -> {last}"
        );
        assert!(
            outcome.checkpoint.valid_macro_auroc > 0.9,
            "planted signal should be learnable, got {}",
            outcome.checkpoint.valid_macro_auroc
        );

        let best = outcome
            .epochs
            .iter()
            .map(|e| e.valid_macro_auroc)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(outcome.checkpoint.valid_macro_auroc, best);
        let earliest = outcome
            .epochs
            .iter()
            .find(|e| e.valid_macro_auroc == best)
            .unwrap()
            .epoch;
        assert_eq!(outcome.checkpoint.best_epoch, earliest);

        for line in log.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
            let entry: EpochLog = serde_json::from_slice(line).unwrap();
            assert_eq!(entry.wall_s, 0.0, "deterministic mode zeroes wall time");
        }
    }

    #[test]
    fn empty_folds_and_misaligned_waveforms_are_rejected() {
        let pattern = [true, false, true, false];
        let (dataset, waveforms) = build_corpus(
            &[(Fold::Train, &pattern[..]), (Fold::Valid, &pattern[..])],
            |id, pat, pos| {
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                planted_record(id, pat, pos, &mut rng)
            },
        );
        let model = tiny_model();
        let config = TrainerConfig {
            epochs: 1,
            ..TrainerConfig::default()
        };

        let mut log = Vec::new();
        let err = train(&model, &dataset, &waveforms[..7], &config, true, &mut log).unwrap_err();
        assert!(matches!(err, TrainError::WaveformCountMismatch { .. }));

        let mut swapped = waveforms.clone();
        swapped.swap(0, 1);
        let err = train(&model, &dataset, &swapped, &config, true, &mut log).unwrap_err();
        assert!(matches!(err, TrainError::RecordMismatch { index: 0, .. }));

        let (no_valid, no_valid_waves) = build_corpus(
            &[(Fold::Train, &pattern[..])],
            |id, pat, pos| {
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                planted_record(id, pat, pos, &mut rng)
            },
        );
        let err = train(&model, &no_valid, &no_valid_waves, &config, true, &mut log).unwrap_err();
        match err {
            TrainError::EmptyFold { fold } => assert_eq!(fold, "valid"),
            other => panic!("expected EmptyFold, got {other:?}"),
        }
    }
}
