//! Synthetic desk-scale cohort with a planted, learnable ECG↔lab dependency.
//!
//! Waveforms are Gaussian noise; when a patient-day episode is abnormal for a
//! planted label, a fixed-frequency sinusoid is added to leads II and V2 and
//! one designated vital is shifted, both scaled by `signal_strength`. Lab
//! events around each record carry values on the matching side of the
//! threshold. Everything is written in the ingestion formats plus a
//! `truth.json` holding the episode ground truth for tests.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{AbnormalityLabel, Direction, LabelCategory};
use crate::ingest::{
    write_context, write_events, write_thresholds, write_vitals, write_waveform, EcgRecord,
    IngestError, LabEvent, PatientContext, Race, Sex, VitalChannel, VitalSample, N_CHANNELS,
    RECORD_SECONDS,
};
use crate::util::mix_seed;

/// Sampling rate of generated waveforms; ingestion resamples to the model
/// rate downstream.
pub const SYNTH_SAMPLING_HZ: u32 = 500;

/// Standard deviation of the per-sample waveform noise.
pub const NOISE_SIGMA: f64 = 0.2;

/// Sinusoid amplitude at `signal_strength = 1`.
pub const SINUSOID_AMPLITUDE: f64 = 0.5;

/// Planted component frequencies; one per supported label.
pub const PLANTED_FREQS_HZ: [f64; 4] = [3.0, 7.0, 11.0, 17.0];

/// Leads carrying the planted component: II and V2.
pub const PLANTED_LEADS: [usize; 2] = [1, 7];

/// Per-episode abnormality probability.
pub const EPISODE_PREVALENCE: f64 = 0.5;

/// Lab events are placed uniformly in `[t_rec - 2 h, t_rec + 3 h)`, covering
/// the estimation window and every monitoring horizon.
const EVENT_WINDOW_BEFORE_S: i64 = 2 * 3600;
const EVENT_WINDOW_AFTER_S: i64 = 3 * 3600;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {detail}")]
    InvalidConfig { detail: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Size, signal strength and missingness of the generated cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub records_per_patient: usize,
    pub n_labels: usize,
    pub signal_strength: f64,
    pub missing_rate_tabular: f64,
    /// Expected lab events per hour per (patient-day, label).
    pub lab_event_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            n_patients: 50,
            records_per_patient: 4,
            n_labels: 2,
            signal_strength: 0.8,
            missing_rate_tabular: 0.1,
            lab_event_rate: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |detail: String| Err(SynthError::InvalidConfig { detail });
        if self.n_patients == 0 || self.records_per_patient == 0 {
            return bad("counts must be positive".into());
        }
        if self.n_labels == 0 || self.n_labels > PLANTED_FREQS_HZ.len() {
            return bad(format!(
                "n_labels must be in 1..={}, got {}",
                PLANTED_FREQS_HZ.len(),
                self.n_labels
            ));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return bad(format!(
                "signal_strength must be in [0, 1], got {}",
                self.signal_strength
            ));
        }
        if !(0.0..=1.0).contains(&self.missing_rate_tabular) {
            return bad(format!(
                "missing_rate_tabular must be in [0, 1], got {}",
                self.missing_rate_tabular
            ));
        }
        if !self.lab_event_rate.is_finite() || self.lab_event_rate < 0.0 {
            return bad(format!(
                "lab_event_rate must be a nonnegative rate, got {}",
                self.lab_event_rate
            ));
        }
        Ok(())
    }
}

/// One planted label: its threshold definition, spectral signature, lab value
/// spread and designated vital shift (applied at `signal_strength = 1`).
#[derive(Debug, Clone)]
pub struct PlantedLabel {
    pub label: AbnormalityLabel,
    pub freq_hz: f64,
    pub value_scale: f64,
    pub vital: VitalChannel,
    pub vital_shift: f64,
}

/// The fixed planted-label table, truncated to `n` entries.
pub fn planted_labels(n: usize) -> Vec<PlantedLabel> {
    assert!(
        (1..=PLANTED_FREQS_HZ.len()).contains(&n),
        "n_labels out of range"
    );
    let table = [
        (
            "marker_a_high",
            "90001",
            "Marker A",
            Direction::High,
            100.0,
            "ng/mL",
            LabelCategory::Cardiac,
            VitalChannel::TemperatureF,
            1.5,
        ),
        (
            "marker_b_low",
            "90002",
            "Marker B",
            Direction::Low,
            40.0,
            "mg/dL",
            LabelCategory::Renal,
            VitalChannel::HeartRateBpm,
            15.0,
        ),
        (
            "marker_c_high",
            "90003",
            "Marker C",
            Direction::High,
            250.0,
            "IU/L",
            LabelCategory::Hematological,
            VitalChannel::RespRateBpm,
            5.0,
        ),
        (
            "marker_d_low",
            "90004",
            "Marker D",
            Direction::Low,
            15.0,
            "mmol/L",
            LabelCategory::Metabolic,
            VitalChannel::Spo2Pct,
            -4.0,
        ),
    ];
    table[..n]
        .iter()
        .enumerate()
        .map(
            |(k, &(label_id, item_id, name, direction, threshold, unit, category, vital, shift))| {
                PlantedLabel {
                    label: AbnormalityLabel {
                        label_id: label_id.into(),
                        item_id: item_id.into(),
                        display_name: name.into(),
                        direction,
                        threshold,
                        unit: unit.into(),
                        category,
                    },
                    freq_hz: PLANTED_FREQS_HZ[k],
                    value_scale: 0.3 * threshold,
                    vital,
                    vital_shift: shift,
                }
            },
        )
        .collect()
}

/// Baseline and spread of each vital channel, in channel order.
const VITAL_BASELINES: [(f64, f64); 6] = [
    (98.6, 0.5),  // temperature_f
    (75.0, 8.0),  // heart_rate_bpm
    (16.0, 2.0),  // resp_rate_bpm
    (97.0, 1.2),  // spo2_pct
    (120.0, 10.0), // sbp_mmhg
    (75.0, 7.0),  // dbp_mmhg
];

/// Episode ground truth for one generated record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub record_id: String,
    pub patient_id: String,
    pub acquisition_time: i64,
    /// Abnormal status per planted label, in `label_ids` order.
    pub abnormal: Vec<bool>,
}

/// Ground truth for the whole cohort; written as `truth.json` and used only
/// by tests, never by training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub label_ids: Vec<String>,
    pub records: Vec<TruthRecord>,
}

struct PatientBundle {
    context: PatientContext,
    records: Vec<EcgRecord>,
    truth: Vec<TruthRecord>,
    events: Vec<LabEvent>,
    vitals: Vec<VitalSample>,
}

/// Cohort epoch: all patient timelines start here.
const T0: i64 = 1_700_000_000;
const DAY_S: i64 = 86_400;

fn generate_patient(config: &SynthConfig, labels: &[PlantedLabel], p: usize) -> PatientBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, p as u64));
    let patient_id = format!("sp{p:05}");
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let n_samples = (SYNTH_SAMPLING_HZ * RECORD_SECONDS) as usize;
    let fs = f64::from(SYNTH_SAMPLING_HZ);
    let missing = |rng: &mut ChaCha8Rng| rng.random_range(0.0..1.0) < config.missing_rate_tabular;

    // Demographics and biometrics, masked field-by-field.
    let age = rng.random_range(25.0f64..90.0).round();
    let sex = if rng.random_bool(0.5) { Sex::Male } else { Sex::Female };
    let race = Race::ALL[rng.random_range(0..Race::ALL.len())];
    let height_cm: f64 = Normal::new(170.0, 10.0).unwrap().sample(&mut rng);
    let weight_kg: f64 = Normal::new(75.0, 12.0).unwrap().sample(&mut rng);
    let bmi = weight_kg / (height_cm / 100.0).powi(2);
    let context = PatientContext {
        patient_id: patient_id.clone(),
        age: (!missing(&mut rng)).then_some(age),
        sex: (!missing(&mut rng)).then_some(sex),
        race: (!missing(&mut rng)).then_some(race),
        bmi: (!missing(&mut rng)).then_some(bmi),
        weight_kg: (!missing(&mut rng)).then_some(weight_kg),
        height_cm: (!missing(&mut rng)).then_some(height_cm),
    };

    let mut records = Vec::with_capacity(config.records_per_patient);
    let mut truth = Vec::with_capacity(config.records_per_patient);
    let mut events = Vec::new();
    let mut vitals = Vec::new();

    for day in 0..config.records_per_patient {
        // One episode per patient-day: abnormal status held constant so
        // estimation and monitoring targets agree with each other.
        let abnormal: Vec<bool> = (0..config.n_labels)
            .map(|_| rng.random_bool(EPISODE_PREVALENCE))
            .collect();
        let day_start = T0 + day as i64 * DAY_S;
        let t_rec = day_start + 8 * 3600 + rng.random_range(0..8 * 3600);

        let mut samples = vec![0.0f32; N_CHANNELS * n_samples];
        for s in samples.iter_mut() {
            *s = noise.sample(&mut rng) as f32;
        }
        for (k, planted) in labels.iter().enumerate() {
            if !abnormal[k] {
                continue;
            }
            let amp = SINUSOID_AMPLITUDE * config.signal_strength;
            for &lead in &PLANTED_LEADS {
                for t in 0..n_samples {
                    let phase = 2.0 * PI * planted.freq_hz * t as f64 / fs;
                    samples[lead * n_samples + t] += (amp * phase.sin()) as f32;
                }
            }
        }
        let record_id = format!("{patient_id}d{day:02}");
        records.push(EcgRecord {
            record_id: record_id.clone(),
            patient_id: patient_id.clone(),
            acquisition_time: t_rec,
            sampling_rate_hz: SYNTH_SAMPLING_HZ,
            samples,
            n_samples,
        });
        truth.push(TruthRecord {
            record_id,
            patient_id: patient_id.clone(),
            acquisition_time: t_rec,
            abnormal: abnormal.clone(),
        });

        // Lab events on the episode's side of each threshold. A zero-margin
        // draw sits exactly on the boundary, which is abnormal by contract.
        let window_h = (EVENT_WINDOW_BEFORE_S + EVENT_WINDOW_AFTER_S) as f64 / 3600.0;
        let mean_events = config.lab_event_rate * window_h;
        for (k, planted) in labels.iter().enumerate() {
            let n_events = if mean_events > 0.0 {
                Poisson::new(mean_events).expect("positive mean").sample(&mut rng) as usize
            } else {
                0
            };
            for _ in 0..n_events {
                let time =
                    t_rec + rng.random_range(-EVENT_WINDOW_BEFORE_S..EVENT_WINDOW_AFTER_S);
                let u: f64 = rng.random_range(0.0..1.0);
                let (toward_abnormal, margin) = if abnormal[k] {
                    (true, u * planted.value_scale)
                } else {
                    (false, (0.05 + 0.95 * u) * planted.value_scale)
                };
                let sign = match (planted.label.direction, toward_abnormal) {
                    (Direction::High, true) | (Direction::Low, false) => 1.0,
                    (Direction::High, false) | (Direction::Low, true) => -1.0,
                };
                events.push(LabEvent {
                    patient_id: patient_id.clone(),
                    item_id: planted.label.item_id.clone(),
                    time,
                    value: planted.label.threshold + sign * margin,
                    unit: planted.label.unit.clone(),
                });
            }
        }

        // Two samples per vital channel inside the matching window, shifted
        // when the channel's designated label is abnormal this episode.
        for channel in VitalChannel::ALL {
            if missing(&mut rng) {
                continue;
            }
            let (base, sigma) = VITAL_BASELINES[channel.index()];
            let shift: f64 = labels
                .iter()
                .enumerate()
                .filter(|(k, planted)| planted.vital == channel && abnormal[*k])
                .map(|(_, planted)| planted.vital_shift * config.signal_strength)
                .sum();
            for _ in 0..2 {
                let time = t_rec + rng.random_range(-1500..=1500);
                let value = base + shift + Normal::new(0.0, sigma).unwrap().sample(&mut rng);
                vitals.push(VitalSample {
                    patient_id: patient_id.clone(),
                    channel,
                    time,
                    value,
                });
            }
        }
    }

    PatientBundle {
        context,
        records,
        truth,
        events,
        vitals,
    }
}

/// Generate the cohort under `out_dir`: `waveforms/<record>.f32` payloads
/// with JSON sidecars, `labs.csv`, `vitals.csv`, `context.csv`,
/// `thresholds.csv`, and `truth.json`. Patients are generated in parallel
/// from per-patient seed streams and written in patient order, so the output
/// tree is byte-identical for a fixed config.
pub fn generate(config: &SynthConfig, out_dir: &Path) -> Result<SynthTruth, SynthError> {
    config.validate()?;
    let labels = planted_labels(config.n_labels);

    let wave_dir = out_dir.join("waveforms");
    fs::create_dir_all(&wave_dir).map_err(|source| SynthError::Io {
        path: wave_dir.clone(),
        source,
    })?;

    let bundles: Vec<PatientBundle> = (0..config.n_patients)
        .into_par_iter()
        .map(|p| generate_patient(config, &labels, p))
        .collect();

    let mut truth_records = Vec::new();
    let mut events = Vec::new();
    let mut vitals = Vec::new();
    let mut context = Vec::new();
    for bundle in &bundles {
        for record in &bundle.records {
            let payload = wave_dir.join(format!("{}.f32", record.record_id));
            let sidecar = wave_dir.join(format!("{}.json", record.record_id));
            write_waveform(record, &payload, &sidecar)?;
        }
        truth_records.extend(bundle.truth.iter().cloned());
        events.extend(bundle.events.iter().cloned());
        vitals.extend(bundle.vitals.iter().cloned());
        context.push(bundle.context.clone());
    }
    events.sort_by(|a, b| {
        (&a.patient_id, a.time, &a.item_id).cmp(&(&b.patient_id, b.time, &b.item_id))
    });
    vitals.sort_by(|a, b| {
        (&a.patient_id, a.time, a.channel.index()).cmp(&(&b.patient_id, b.time, b.channel.index()))
    });

    write_events(&events, &out_dir.join("labs.csv"))?;
    write_vitals(&vitals, &out_dir.join("vitals.csv"))?;
    write_context(&context, &out_dir.join("context.csv"))?;
    let label_defs: Vec<AbnormalityLabel> = labels.iter().map(|p| p.label.clone()).collect();
    write_thresholds(&label_defs, &out_dir.join("thresholds.csv"))?;

    let truth = SynthTruth {
        config: config.clone(),
        label_ids: label_defs.iter().map(|l| l.label_id.clone()).collect(),
        records: truth_records,
    };
    let truth_path = out_dir.join("truth.json");
    let mut blob = serde_json::to_string_pretty(&truth).expect("truth serializes");
    blob.push('\n');
    fs::write(&truth_path, blob).map_err(|source| SynthError::Io {
        path: truth_path,
        source,
    })?;
    Ok(truth)
}

/// Analytic detector for the planted component: squared magnitude of the
/// single-frequency DFT bin at `freq_hz`, summed over leads II and V2.
pub fn planted_bandpower(record: &EcgRecord, freq_hz: f64) -> f64 {
    let fs = f64::from(record.sampling_rate_hz);
    let mut total = 0.0;
    for &lead in &PLANTED_LEADS {
        let channel = record.channel(lead);
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &x) in channel.iter().enumerate() {
            let phase = -2.0 * PI * freq_hz * t as f64 / fs;
            re += f64::from(x) * phase.cos();
            im += f64::from(x) * phase.sin();
        }
        total += re * re + im * im;
    }
    total
}
