//! Evaluation metrics: tie-aware AUROC over masked targets, unweighted macro
//! averaging, and an empirical bootstrap with per-replicate seeded streams
//! so intervals are identical for any worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{AbnormalityLabel, LabelCategory, TaskMode, MISSING};
use crate::util::{mix_seed, quantile_sorted};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("label {label} is degenerate: {n_pos} positives, {n_neg} negatives")]
    DegenerateClasses {
        label: String,
        n_pos: usize,
        n_neg: usize,
    },
    #[error("label {label} has only {valid} valid bootstrap replicates (need ≥ {min})")]
    TooFewValidReplicates {
        label: String,
        valid: usize,
        min: usize,
    },
    #[error("invalid metrics input: {detail}")]
    InvalidInput { detail: String },
}

/// Minimum valid replicates for a usable interval.
pub const MIN_VALID_REPLICATES: usize = 100;

/// Mann–Whitney AUROC with average-rank tie handling:
/// (Σ ranks of positives − n_pos(n_pos+1)/2) / (n_pos·n_neg).
pub fn auroc(scores: &[f64], targets: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != targets.len() {
        return Err(MetricsError::InvalidInput {
            detail: format!("{} scores vs {} targets", scores.len(), targets.len()),
        });
    }
    let n_pos = targets.iter().filter(|&&t| t).count();
    let n_neg = targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::DegenerateClasses {
            label: String::new(),
            n_pos,
            n_neg,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks over runs of tied scores (ranks are 1-based).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if targets[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// AUROC over the non-MISSING entries of a masked target column.
pub fn masked_auroc(scores: &[f64], targets: &[i8]) -> Result<f64, MetricsError> {
    let mut s = Vec::new();
    let mut t = Vec::new();
    for (&score, &target) in scores.iter().zip(targets) {
        if target != MISSING {
            s.push(score);
            t.push(target == 1);
        }
    }
    auroc(&s, &t)
}

/// Unweighted mean of per-label AUROCs over row-major n×K score/target
/// matrices; each label uses only its observed rows. `label_ids` names the
/// offender if a label is degenerate.
pub fn macro_auroc(
    scores: &[f64],
    targets: &[i8],
    n_labels: usize,
    label_ids: &[String],
) -> Result<f64, MetricsError> {
    assert_eq!(scores.len(), targets.len());
    assert_eq!(label_ids.len(), n_labels);
    if n_labels == 0 {
        return Err(MetricsError::InvalidInput {
            detail: "no labels to average".to_string(),
        });
    }
    let rows = scores.len() / n_labels;
    let mut total = 0.0;
    for k in 0..n_labels {
        let col_scores: Vec<f64> = (0..rows).map(|r| scores[r * n_labels + k]).collect();
        let col_targets: Vec<i8> = (0..rows).map(|r| targets[r * n_labels + k]).collect();
        total += masked_auroc(&col_scores, &col_targets).map_err(|e| match e {
            MetricsError::DegenerateClasses { n_pos, n_neg, .. } => {
                MetricsError::DegenerateClasses {
                    label: label_ids[k].clone(),
                    n_pos,
                    n_neg,
                }
            }
            other => other,
        })?;
    }
    Ok(total / n_labels as f64)
}

/// Bootstrap settings; the interval level is two-sided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub n_iter: usize,
    pub ci_level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> BootstrapConfig {
        BootstrapConfig {
            n_iter: 1000,
            ci_level: 0.95,
            seed: 0,
        }
    }
}

/// One label's evaluation: point estimate, interval, support, and the label
/// metadata carried into reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label_id: String,
    pub display_name: String,
    pub category: LabelCategory,
    pub threshold_display: String,
    pub auroc: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Full evaluation of one prediction matrix (one task mode and, for
/// monitoring, one horizon).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: TaskMode,
    pub horizon_s: Option<i64>,
    pub n_records: usize,
    pub n_bootstrap: usize,
    pub ci_level: f64,
    pub seed: u64,
    pub labels: Vec<LabelMetrics>,
    pub macro_auroc: f64,
    pub macro_ci_lo: f64,
    pub macro_ci_hi: f64,
}

/// Evaluate row-major n×K probabilities against masked targets: per-label
/// point AUROC plus bootstrap percentile intervals, and the macro AUROC with
/// its own interval. Replicate `r` resamples rows with an independent stream
/// seeded `mix(seed, r)`; labels degenerate in a replicate are skipped there,
/// and a label (or the macro) with fewer than [`MIN_VALID_REPLICATES`] valid
/// replicates is an error.
pub fn evaluate(
    probs: &[f64],
    targets: &[i8],
    labels: &[AbnormalityLabel],
    mode: TaskMode,
    horizon_s: Option<i64>,
    config: &BootstrapConfig,
) -> Result<MetricsReport, MetricsError> {
    let k = labels.len();
    if k == 0 {
        return Err(MetricsError::InvalidInput {
            detail: "no labels to evaluate".to_string(),
        });
    }
    if probs.len() != targets.len() || !probs.len().is_multiple_of(k) {
        return Err(MetricsError::InvalidInput {
            detail: format!(
                "{} probabilities and {} targets for {k} labels",
                probs.len(),
                targets.len()
            ),
        });
    }
    let rows = probs.len() / k;
    if rows < 2 {
        return Err(MetricsError::InvalidInput {
            detail: format!("{rows} test rows, need at least 2"),
        });
    }
    // Point estimates on the full test set.
    let mut point = Vec::with_capacity(k);
    let mut support = Vec::with_capacity(k);
    for (ki, label) in labels.iter().enumerate() {
        let col_scores: Vec<f64> = (0..rows).map(|r| probs[r * k + ki]).collect();
        let col_targets: Vec<i8> = (0..rows).map(|r| targets[r * k + ki]).collect();
        let n_pos = col_targets.iter().filter(|&&t| t == 1).count();
        let n_neg = col_targets.iter().filter(|&&t| t == 0).count();
        let a = masked_auroc(&col_scores, &col_targets).map_err(|e| match e {
            MetricsError::DegenerateClasses { n_pos, n_neg, .. } => {
                MetricsError::DegenerateClasses {
                    label: label.label_id.clone(),
                    n_pos,
                    n_neg,
                }
            }
            other => other,
        })?;
        point.push(a);
        support.push((n_pos, n_neg));
    }
    let macro_point = point.iter().sum::<f64>() / k as f64;

    // Replicates: resample rows with replacement, jointly across labels.
    let replicates: Vec<(Vec<Option<f64>>, Option<f64>)> = (0..config.n_iter)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, r as u64));
            let draw: Vec<usize> = (0..rows).map(|_| rng.random_range(0..rows)).collect();
            let mut per_label = Vec::with_capacity(k);
            for ki in 0..k {
                let mut s = Vec::new();
                let mut t = Vec::new();
                for &row in &draw {
                    let target = targets[row * k + ki];
                    if target != MISSING {
                        s.push(probs[row * k + ki]);
                        t.push(target == 1);
                    }
                }
                per_label.push(auroc(&s, &t).ok());
            }
            let valid: Vec<f64> = per_label.iter().filter_map(|v| *v).collect();
            let macro_r = if valid.is_empty() {
                None
            } else {
                Some(valid.iter().sum::<f64>() / valid.len() as f64)
            };
            (per_label, macro_r)
        })
        .collect();

    let alpha = (1.0 - config.ci_level) / 2.0;
    let interval = |mut values: Vec<f64>, name: &str| -> Result<(f64, f64), MetricsError> {
        if values.len() < MIN_VALID_REPLICATES {
            return Err(MetricsError::TooFewValidReplicates {
                label: name.to_string(),
                valid: values.len(),
                min: MIN_VALID_REPLICATES,
            });
        }
        values.sort_by(f64::total_cmp);
        Ok((
            quantile_sorted(&values, alpha),
            quantile_sorted(&values, 1.0 - alpha),
        ))
    };

    let mut out_labels = Vec::with_capacity(k);
    for (ki, label) in labels.iter().enumerate() {
        let values: Vec<f64> = replicates
            .iter()
            .filter_map(|(per_label, _)| per_label[ki])
            .collect();
        let (lo, hi) = interval(values, &label.label_id)?;
        out_labels.push(LabelMetrics {
            label_id: label.label_id.clone(),
            display_name: label.display_name.clone(),
            category: label.category,
            threshold_display: label.threshold_display(),
            auroc: point[ki],
            ci_lo: lo,
            ci_hi: hi,
            n_pos: support[ki].0,
            n_neg: support[ki].1,
        });
    }
    let macro_values: Vec<f64> = replicates.iter().filter_map(|(_, m)| *m).collect();
    let (macro_lo, macro_hi) = interval(macro_values, "macro")?;

    Ok(MetricsReport {
        mode,
        horizon_s,
        n_records: rows,
        n_bootstrap: config.n_iter,
        ci_level: config.ci_level,
        seed: config.seed,
        labels: out_labels,
        macro_auroc: macro_point,
        macro_ci_lo: macro_lo,
        macro_ci_hi: macro_hi,
    })
}
