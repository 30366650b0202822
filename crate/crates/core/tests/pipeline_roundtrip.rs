//! Cross-module integration: synthetic cohort → ingestion → dataset assembly
//! → training → evaluation → report rendering, entirely in-process.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ecglab_core::cohort::{assemble_dataset, read_dataset, write_dataset, Dataset, Fold, RecordMeta, TaskConfig};
use ecglab_core::ingest::{
    parse_context, parse_events, parse_thresholds, parse_vitals, read_waveform, resample_ecg,
    EcgRecord,
};
use ecglab_core::metrics::{evaluate, BootstrapConfig, MetricsReport};
use ecglab_core::model::{manifest_hash, Checkpoint, Model, ModelConfig};
use ecglab_core::report::{estimation_markdown, monitoring_csv, monitoring_markdown};
use ecglab_core::synth::{generate, SynthConfig};
use ecglab_core::train::{predict_records, train, TrainerConfig};
use tempfile::TempDir;

const WORKING_HZ: u32 = 100;

fn desk_synth(seed: u64, signal_strength: f64, lab_event_rate: f64) -> SynthConfig {
    SynthConfig {
        n_patients: 24,
        records_per_patient: 3,
        n_labels: 2,
        signal_strength,
        missing_rate_tabular: 0.1,
        lab_event_rate,
        seed,
    }
}

/// Folds small enough that a 24-patient cohort keeps both labels.
fn desk_task(mode: TaskConfig) -> TaskConfig {
    TaskConfig {
        min_pos: 2,
        min_neg: 2,
        split_ratio: [2, 1, 1],
        ..mode
    }
}

fn scan_metas(input: &Path) -> Vec<RecordMeta> {
    let wave_dir = input.join("waveforms");
    let mut payloads: Vec<_> = fs::read_dir(&wave_dir)
        .expect("waveform dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.extension().is_some_and(|e| e == "f32"))
        .collect();
    payloads.sort();
    payloads
        .into_iter()
        .map(|payload| {
            let sidecar = payload.with_extension("json");
            let rec = read_waveform(&payload, &sidecar).expect("waveform reads");
            RecordMeta {
                record_id: rec.record_id,
                patient_id: rec.patient_id,
                acquisition_time: rec.acquisition_time,
                payload_path: payload,
                sidecar_path: sidecar,
            }
        })
        .collect()
}

fn assemble_from_dir(input: &Path, task: &TaskConfig, seed: u64) -> Dataset {
    let metas = scan_metas(input);
    let events = parse_events(&input.join("labs.csv")).expect("labs parse");
    let vitals = parse_vitals(&input.join("vitals.csv")).expect("vitals parse");
    let context = parse_context(&input.join("context.csv")).expect("context parse");
    let thresholds = parse_thresholds(&input.join("thresholds.csv")).expect("thresholds parse");
    assemble_dataset(task, &metas, &events, &vitals, &context, thresholds, seed, None)
        .expect("assembly succeeds")
}

fn load_waveforms(dataset: &Dataset) -> Vec<EcgRecord> {
    dataset
        .manifest
        .records
        .iter()
        .map(|r| {
            let raw = read_waveform(&r.payload_path, &r.sidecar_path).expect("waveform reads");
            resample_ecg(&raw, WORKING_HZ).expect("decimation succeeds")
        })
        .collect()
}

fn tiny_model(n_labels: usize) -> Model {
    let mut config = ModelConfig::new(8, n_labels);
    config.encoder.n_blocks = 1;
    config.encoder.state_size = 4;
    config.head.fusion_proj_dim = Some(4);
    Model::new(config).expect("valid config")
}

/// Flattened test-fold probabilities and targets for `evaluate`.
fn score_test_fold(dataset: &Dataset, model: &Model, params: &[f64]) -> (Vec<f64>, Vec<i8>) {
    let waveforms = load_waveforms(dataset);
    let rows = dataset.fold_rows(Fold::Test);
    let dense: Vec<_> = rows.iter().map(|&r| dataset.features[r].dense()).collect();
    let items: Vec<(&EcgRecord, &[f64])> = rows
        .iter()
        .zip(&dense)
        .map(|(&r, d)| (&waveforms[r], d.as_slice()))
        .collect();
    let probs: Vec<f64> = predict_records(model, params, &items)
        .expect("prediction succeeds")
        .into_iter()
        .flatten()
        .collect();
    let cols = dataset.retained_columns();
    let mut targets = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            targets.push(dataset.targets.get(r, c));
        }
    }
    (probs, targets)
}

fn retained_labels(dataset: &Dataset) -> Vec<ecglab_core::cohort::AbnormalityLabel> {
    dataset
        .manifest
        .retained_labels
        .iter()
        .map(|id| {
            dataset
                .manifest
                .labels
                .iter()
                .find(|l| &l.label_id == id)
                .expect("retained label in space")
                .clone()
        })
        .collect()
}

#[test]
fn synth_cohort_assembles_writes_and_rereads_byte_identically() {
    let tmp = TempDir::new().unwrap();
    let cohort = tmp.path().join("cohort");
    generate(&desk_synth(11, 0.8, 1.5), &cohort).expect("synthesis succeeds");

    let task = desk_task(TaskConfig::estimation());
    let dataset = assemble_from_dir(&cohort, &task, 11);
    assert!(
        !dataset.manifest.retained_labels.is_empty(),
        "a strong planted cohort must retain labels"
    );

    // Patient-disjoint folds with every fold populated.
    let mut patient_fold: BTreeMap<&str, Fold> = BTreeMap::new();
    let mut fold_counts = [0usize; 3];
    for rec in &dataset.manifest.records {
        let fold = *patient_fold.entry(&rec.patient_id).or_insert(rec.fold);
        assert_eq!(fold, rec.fold, "patient {} straddles folds", rec.patient_id);
        fold_counts[match rec.fold {
            Fold::Train => 0,
            Fold::Valid => 1,
            Fold::Test => 2,
        }] += 1;
    }
    assert!(fold_counts.iter().all(|&c| c > 0), "empty fold: {fold_counts:?}");

    // write → read → write reproduces every dataset file byte for byte.
    let d1 = tmp.path().join("d1");
    let d2 = tmp.path().join("d2");
    write_dataset(&dataset, &d1).expect("first write");
    let reread = read_dataset(&d1).expect("read back");
    write_dataset(&reread, &d2).expect("second write");
    for name in ["manifest.json", "features.csv", "targets.csv"] {
        let a = fs::read(d1.join(name)).unwrap();
        let b = fs::read(d2.join(name)).unwrap();
        assert_eq!(a, b, "{name} changed across a read/write round trip");
    }
}

#[test]
fn planted_cohort_trains_checkpoints_and_evaluates_deterministically() {
    let tmp = TempDir::new().unwrap();
    let cohort = tmp.path().join("cohort");
    generate(&desk_synth(3, 1.0, 1.5), &cohort).expect("synthesis succeeds");
    let dataset = assemble_from_dir(&cohort, &desk_task(TaskConfig::estimation()), 3);
    let k = dataset.manifest.retained_labels.len();
    assert!(k > 0);

    let waveforms = load_waveforms(&dataset);
    assert!(waveforms.iter().all(|w| w.sampling_rate_hz == WORKING_HZ));
    let model = tiny_model(k);
    let trainer = TrainerConfig {
        epochs: 3,
        batch_size: 16,
        seed: 5,
        ..TrainerConfig::default()
    };

    let mut log_a = Vec::new();
    let out_a = train(&model, &dataset, &waveforms, &trainer, true, &mut log_a).expect("training");
    let mut log_b = Vec::new();
    let out_b = train(&model, &dataset, &waveforms, &trainer, true, &mut log_b).expect("training");
    assert_eq!(log_a, log_b, "same-seed training logs diverged");
    for (ta, tb) in out_a.checkpoint.tensors.iter().zip(&out_b.checkpoint.tensors) {
        assert_eq!(ta.name, tb.name);
        let bits_a: Vec<u64> = ta.values.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = tb.values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "tensor {} diverged across reruns", ta.name);
    }

    // Save, reload against the manifest hash, and check prediction parity.
    let ckpt_path = tmp.path().join("checkpoint.json");
    out_a.checkpoint.save(&ckpt_path).expect("save");
    let hash = manifest_hash(&dataset.manifest);
    let (loaded, loaded_model, loaded_params) =
        Checkpoint::load(&ckpt_path, Some(&hash)).expect("load");
    assert_eq!(loaded.label_ids, dataset.manifest.retained_labels);

    let (probs, targets) = score_test_fold(&dataset, &loaded_model, &loaded_params);
    assert!(probs.iter().all(|p| p.is_finite() && *p > 0.0 && *p < 1.0));

    let labels = retained_labels(&dataset);
    let bootstrap = BootstrapConfig {
        n_iter: 200,
        ci_level: 0.95,
        seed: 0,
    };
    let report = evaluate(
        &probs,
        &targets,
        &labels,
        dataset.manifest.config.mode,
        None,
        &bootstrap,
    )
    .expect("evaluation succeeds");
    assert_eq!(report.n_records, dataset.fold_rows(Fold::Test).len());
    assert_eq!(
        report.labels.iter().map(|l| &l.label_id).collect::<Vec<_>>(),
        dataset.manifest.retained_labels.iter().collect::<Vec<_>>()
    );
    for l in &report.labels {
        assert!(l.ci_lo <= l.ci_hi);
        assert!((0.0..=1.0).contains(&l.auroc));
    }

    let md = estimation_markdown(&report).expect("report renders");
    assert!(md.starts_with("# Abnormality estimation report"));
    assert!(md.contains(&format!("- records: {}", report.n_records)));

    // The full scoring + bootstrap path is itself deterministic.
    let report_again = evaluate(
        &probs,
        &targets,
        &labels,
        dataset.manifest.config.mode,
        None,
        &bootstrap,
    )
    .expect("evaluation succeeds");
    assert_eq!(
        serde_json::to_string(&report).unwrap(),
        serde_json::to_string(&report_again).unwrap()
    );
}

#[test]
fn monitoring_horizon_sweep_renders_one_report() {
    let tmp = TempDir::new().unwrap();
    let cohort = tmp.path().join("cohort");
    generate(&desk_synth(7, 1.0, 2.0), &cohort).expect("synthesis succeeds");

    let mut reports: Vec<MetricsReport> = Vec::new();
    for horizon_s in [3600, 7200, 10800] {
        let task = desk_task(TaskConfig::monitoring(horizon_s));
        let dataset = assemble_from_dir(&cohort, &task, 7);
        let k = dataset.manifest.retained_labels.len();
        assert!(k > 0, "horizon {horizon_s}s retained no labels");

        let waveforms = load_waveforms(&dataset);
        let model = tiny_model(k);
        let trainer = TrainerConfig {
            epochs: 1,
            batch_size: 16,
            seed: 7,
            ..TrainerConfig::default()
        };
        let mut log = Vec::new();
        let outcome =
            train(&model, &dataset, &waveforms, &trainer, true, &mut log).expect("training");
        let path = tmp.path().join(format!("ckpt_{horizon_s}.json"));
        outcome.checkpoint.save(&path).expect("save");
        let (_, loaded_model, loaded_params) =
            Checkpoint::load(&path, Some(&manifest_hash(&dataset.manifest))).expect("load");
        let (probs, targets) = score_test_fold(&dataset, &loaded_model, &loaded_params);
        let labels = retained_labels(&dataset);
        let bootstrap = BootstrapConfig {
            n_iter: 200,
            ci_level: 0.95,
            seed: 1,
        };
        reports.push(
            evaluate(
                &probs,
                &targets,
                &labels,
                dataset.manifest.config.mode,
                Some(horizon_s),
                &bootstrap,
            )
            .expect("evaluation succeeds"),
        );
    }

    assert_eq!(reports.len(), 3);
    let md = monitoring_markdown(&reports).expect("monitoring report renders");
    assert!(md.starts_with("# Abnormality monitoring report"));
    for (horizon_s, report) in [3600, 7200, 10800].into_iter().zip(&reports) {
        assert_eq!(report.horizon_s, Some(horizon_s));
        assert!(md.contains(&format!("- horizon {} min:", horizon_s / 60)));
        assert!(md.contains(&format!("| {} min. AUROC |", horizon_s / 60)));
    }
    let csv = monitoring_csv(&reports).expect("monitoring csv renders");
    assert!(csv.starts_with("label_id,"));
}
