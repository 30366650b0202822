//! Multimodal head: a tabular encoder (linear + PReLU), outer-product late
//! fusion of the waveform and tabular latents, a linear multi-label
//! classifier, and the masked binary cross-entropy objective.
//!
//! Fusion projects each modality to `P` dims (optional; identity when
//! unset), appends a constant 1 to each — so either modality alone survives
//! in the border rows/columns of the product — and flattens the outer
//! product row-major to length (P+1)², whose final element is exactly 1.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{FEATURE_DIM, MISSING};
use crate::params::{LayoutBuilder, ParamId, ParamLayout};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("shape mismatch: {detail}")]
    ShapeMismatch { detail: String },
}

/// Head hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub latent_dim: usize,
    pub feature_dim: usize,
    /// Projection width applied to each latent before the outer product;
    /// `None` fuses the unprojected latents.
    pub fusion_proj_dim: Option<usize>,
    pub n_labels: usize,
    pub prelu_init_slope: f64,
}

impl FusionConfig {
    /// Desk defaults: projection to 16 dims, PReLU slope 0.25, the full
    /// tabular feature vector.
    pub fn new(latent_dim: usize, n_labels: usize) -> FusionConfig {
        FusionConfig {
            latent_dim,
            feature_dim: FEATURE_DIM,
            fusion_proj_dim: Some(16),
            n_labels,
            prelu_init_slope: 0.25,
        }
    }

    /// Effective per-modality width entering the outer product.
    pub fn proj_dim(&self) -> usize {
        self.fusion_proj_dim.unwrap_or(self.latent_dim)
    }

    /// Length of the flattened fused vector, (P+1)².
    pub fn fused_dim(&self) -> usize {
        (self.proj_dim() + 1) * (self.proj_dim() + 1)
    }
}

#[derive(Clone, Copy)]
struct ProjIds {
    ts_w: ParamId,
    ts_b: ParamId,
    tab_w: ParamId,
    tab_b: ParamId,
}

/// Parameter handles of the head; values live in the shared flat vector.
pub struct Head {
    config: FusionConfig,
    tab_w: ParamId,
    tab_b: ParamId,
    prelu: ParamId,
    proj: Option<ProjIds>,
    cls_w: ParamId,
    cls_b: ParamId,
}

/// Forward intermediates of one sample, consumed by [`Head::backward`].
#[derive(Debug)]
pub struct HeadTape {
    features: Vec<f64>,
    /// Tabular pre-activation (PReLU input), length H.
    tab_pre: Vec<f64>,
    z_tab: Vec<f64>,
    z_ts: Vec<f64>,
    /// Projected latents with the appended constant 1, length P+1 each.
    zt_ts: Vec<f64>,
    zt_tab: Vec<f64>,
    fused: Vec<f64>,
}

fn fill_uniform<R: Rng>(w: &mut [f64], fan_in: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in w.iter_mut() {
        *v = rng.random_range(-bound..bound);
    }
}

impl Head {
    pub fn register(config: FusionConfig, builder: &mut LayoutBuilder) -> Head {
        assert!(config.latent_dim >= 1, "latent_dim must be positive");
        assert!(config.n_labels >= 1, "need at least one label");
        assert!(config.proj_dim() >= 1, "projection must keep ≥ 1 dim");
        let h = config.latent_dim;
        let f = config.feature_dim;
        let p = config.proj_dim();
        let k = config.n_labels;
        let tab_w = builder.add("head.tabular.weight", &[h, f]);
        let tab_b = builder.add("head.tabular.bias", &[h]);
        let prelu = builder.add("head.prelu.slope", &[1]);
        let proj = config.fusion_proj_dim.map(|pd| ProjIds {
            ts_w: builder.add("head.proj_ts.weight", &[pd, h]),
            ts_b: builder.add("head.proj_ts.bias", &[pd]),
            tab_w: builder.add("head.proj_tab.weight", &[pd, h]),
            tab_b: builder.add("head.proj_tab.bias", &[pd]),
        });
        let cls_w = builder.add("head.cls.weight", &[k, (p + 1) * (p + 1)]);
        let cls_b = builder.add("head.cls.bias", &[k]);
        Head {
            config,
            tab_w,
            tab_b,
            prelu,
            proj,
            cls_w,
            cls_b,
        }
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn init_params<R: Rng>(&self, layout: &ParamLayout, params: &mut [f64], rng: &mut R) {
        let h = self.config.latent_dim;
        fill_uniform(layout.slice_mut(params, self.tab_w), self.config.feature_dim, rng);
        layout.slice_mut(params, self.tab_b).fill(0.0);
        layout.slice_mut(params, self.prelu)[0] = self.config.prelu_init_slope;
        if let Some(p) = &self.proj {
            fill_uniform(layout.slice_mut(params, p.ts_w), h, rng);
            layout.slice_mut(params, p.ts_b).fill(0.0);
            fill_uniform(layout.slice_mut(params, p.tab_w), h, rng);
            layout.slice_mut(params, p.tab_b).fill(0.0);
        }
        fill_uniform(layout.slice_mut(params, self.cls_w), self.config.fused_dim(), rng);
        layout.slice_mut(params, self.cls_b).fill(0.0);
    }

    /// PReLU(Wx + b); returns (pre-activation, activation).
    pub fn tabular_encode(
        &self,
        layout: &ParamLayout,
        params: &[f64],
        features: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), FusionError> {
        let h = self.config.latent_dim;
        let f = self.config.feature_dim;
        if features.len() != f {
            return Err(FusionError::ShapeMismatch {
                detail: format!("{} features, expected {f}", features.len()),
            });
        }
        let w = layout.slice(params, self.tab_w);
        let b = layout.slice(params, self.tab_b);
        let slope = layout.slice(params, self.prelu)[0];
        let mut pre = vec![0.0; h];
        let mut act = vec![0.0; h];
        for o in 0..h {
            let v: f64 = w[o * f..(o + 1) * f]
                .iter()
                .zip(features)
                .map(|(a, x)| a * x)
                .sum::<f64>()
                + b[o];
            pre[o] = v;
            act[o] = if v >= 0.0 { v } else { slope * v };
        }
        Ok((pre, act))
    }

    /// Project one latent and append the constant 1 (length P+1).
    fn project(&self, layout: &ParamLayout, params: &[f64], ts: bool, z: &[f64]) -> Vec<f64> {
        let p = self.config.proj_dim();
        let mut out = Vec::with_capacity(p + 1);
        match &self.proj {
            Some(ids) => {
                let (wid, bid) = if ts { (ids.ts_w, ids.ts_b) } else { (ids.tab_w, ids.tab_b) };
                let w = layout.slice(params, wid);
                let b = layout.slice(params, bid);
                let h = self.config.latent_dim;
                for o in 0..p {
                    out.push(
                        w[o * h..(o + 1) * h]
                            .iter()
                            .zip(z)
                            .map(|(a, x)| a * x)
                            .sum::<f64>()
                            + b[o],
                    );
                }
            }
            None => out.extend_from_slice(z),
        }
        out.push(1.0);
        out
    }

    /// Flattened outer product of the augmented latents, row-major with the
    /// waveform modality as rows; the final element is exactly 1.
    #[allow(clippy::type_complexity)]
    pub fn fuse(
        &self,
        layout: &ParamLayout,
        params: &[f64],
        z_ts: &[f64],
        z_tab: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), FusionError> {
        let h = self.config.latent_dim;
        if z_ts.len() != h || z_tab.len() != h {
            return Err(FusionError::ShapeMismatch {
                detail: format!(
                    "latents of length {} and {}, expected {h}",
                    z_ts.len(),
                    z_tab.len()
                ),
            });
        }
        let zt_ts = self.project(layout, params, true, z_ts);
        let zt_tab = self.project(layout, params, false, z_tab);
        let p1 = self.config.proj_dim() + 1;
        let mut fused = vec![0.0; p1 * p1];
        for i in 0..p1 {
            for j in 0..p1 {
                fused[i * p1 + j] = zt_ts[i] * zt_tab[j];
            }
        }
        Ok((fused, zt_ts, zt_tab))
    }

    /// Head forward: latent + features → K logits, with tape.
    pub fn forward(
        &self,
        layout: &ParamLayout,
        params: &[f64],
        z_ts: &[f64],
        features: &[f64],
    ) -> Result<(Vec<f64>, HeadTape), FusionError> {
        let (tab_pre, z_tab) = self.tabular_encode(layout, params, features)?;
        let (fused, zt_ts, zt_tab) = self.fuse(layout, params, z_ts, &z_tab)?;
        let k = self.config.n_labels;
        let fd = self.config.fused_dim();
        let w = layout.slice(params, self.cls_w);
        let b = layout.slice(params, self.cls_b);
        let logits: Vec<f64> = (0..k)
            .map(|o| {
                w[o * fd..(o + 1) * fd]
                    .iter()
                    .zip(&fused)
                    .map(|(a, x)| a * x)
                    .sum::<f64>()
                    + b[o]
            })
            .collect();
        Ok((
            logits,
            HeadTape {
                features: features.to_vec(),
                tab_pre,
                z_tab,
                z_ts: z_ts.to_vec(),
                zt_ts,
                zt_tab,
                fused,
            },
        ))
    }

    /// Accumulate head parameter gradients for one sample and return
    /// dL/d(z_ts) for the encoder.
    pub fn backward(
        &self,
        layout: &ParamLayout,
        params: &[f64],
        tape: &HeadTape,
        d_logits: &[f64],
        grads: &mut [f64],
    ) -> Vec<f64> {
        let h = self.config.latent_dim;
        let k = self.config.n_labels;
        let p = self.config.proj_dim();
        let p1 = p + 1;
        let fd = self.config.fused_dim();
        assert_eq!(d_logits.len(), k);

        // Classifier.
        let mut d_fused = vec![0.0; fd];
        {
            let cls_w = layout.slice(params, self.cls_w);
            let (dw, db) = layout.slice_pair_mut(grads, self.cls_w, self.cls_b);
            for o in 0..k {
                let g = d_logits[o];
                db[o] += g;
                for j in 0..fd {
                    dw[o * fd + j] += g * tape.fused[j];
                    d_fused[j] += cls_w[o * fd + j] * g;
                }
            }
        }

        // Outer product; the constant slots are not parameters, so their
        // gradient entries are discarded.
        let mut d_zt_ts = vec![0.0; p1];
        let mut d_zt_tab = vec![0.0; p1];
        for i in 0..p1 {
            for j in 0..p1 {
                let g = d_fused[i * p1 + j];
                d_zt_ts[i] += g * tape.zt_tab[j];
                d_zt_tab[j] += g * tape.zt_ts[i];
            }
        }

        // Projections (or identity pass-through).
        let (d_z_ts, d_z_tab) = match &self.proj {
            Some(ids) => {
                let mut d_ts = vec![0.0; h];
                let mut d_tab = vec![0.0; h];
                for (wid, bid, d_out, z_in, d_in) in [
                    (ids.ts_w, ids.ts_b, &d_zt_ts, &tape.z_ts, &mut d_ts),
                    (ids.tab_w, ids.tab_b, &d_zt_tab, &tape.z_tab, &mut d_tab),
                ] {
                    let w = layout.slice(params, wid);
                    let (dw, db) = layout.slice_pair_mut(grads, wid, bid);
                    for o in 0..p {
                        let g = d_out[o];
                        db[o] += g;
                        for (i, z) in z_in.iter().enumerate() {
                            dw[o * h + i] += g * z;
                            d_in[i] += w[o * h + i] * g;
                        }
                    }
                }
                (d_ts, d_tab)
            }
            None => (d_zt_ts[..h].to_vec(), d_zt_tab[..h].to_vec()),
        };

        // PReLU.
        let slope = layout.slice(params, self.prelu)[0];
        let mut d_pre = vec![0.0; h];
        let mut d_slope = 0.0;
        for i in 0..h {
            let v = tape.tab_pre[i];
            if v >= 0.0 {
                d_pre[i] = d_z_tab[i];
            } else {
                d_pre[i] = d_z_tab[i] * slope;
                d_slope += d_z_tab[i] * v;
            }
        }
        layout.slice_mut(grads, self.prelu)[0] += d_slope;

        // Tabular linear; the feature gradient is discarded (inputs are
        // data).
        {
            let f = self.config.feature_dim;
            let (dw, db) = layout.slice_pair_mut(grads, self.tab_w, self.tab_b);
            for o in 0..h {
                let g = d_pre[o];
                db[o] += g;
                for (i, x) in tape.features.iter().enumerate() {
                    dw[o * f + i] += g * x;
                }
            }
        }

        d_z_ts
    }
}

/// Numerically stable softplus: ln(1 + eˣ) = max(x, 0) + ln(1 + e^−|x|).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Masked binary cross-entropy over a B×K batch of logits.
///
/// loss = (1/M) Σ over observed (i,k) of [softplus(x) − t·x] with M the
/// observed-entry count; the gradient is (σ(x) − t)/M at observed entries
/// and exactly 0 at [`MISSING`] ones. An all-missing batch yields loss 0
/// with zero gradients.
pub fn masked_bce(logits: &[f64], targets: &[i8]) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), targets.len());
    let m = targets.iter().filter(|&&t| t != MISSING).count();
    let mut grad = vec![0.0; logits.len()];
    if m == 0 {
        return (0.0, grad);
    }
    let mf = m as f64;
    let mut loss = 0.0;
    for (i, (&x, &t)) in logits.iter().zip(targets).enumerate() {
        if t == MISSING {
            continue;
        }
        let tf = f64::from(t);
        loss += softplus(x) - tf * x;
        grad[i] = (sigmoid(x) - tf) / mf;
    }
    (loss / mf, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> FusionConfig {
        FusionConfig {
            latent_dim: 3,
            feature_dim: 4,
            fusion_proj_dim: Some(2),
            n_labels: 2,
            prelu_init_slope: 0.25,
        }
    }

    fn build(config: FusionConfig, seed: u64) -> (Head, ParamLayout, Vec<f64>) {
        let mut b = ParamLayout::builder();
        let head = Head::register(config, &mut b);
        let layout = b.build();
        let mut params = vec![0.0; layout.total_len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        head.init_params(&layout, &mut params, &mut rng);
        (head, layout, params)
    }

    #[test]
    fn zero_tabular_map_gives_zero_vector() {
        let (head, layout, mut params) = build(tiny_config(), 1);
        layout.slice_mut(&mut params, head.tab_w).fill(0.0);
        layout.slice_mut(&mut params, head.tab_b).fill(0.0);
        let (_, act) = head
            .tabular_encode(&layout, &params, &[3.0, -1.0, 2.0, 0.5])
            .unwrap();
        assert_eq!(act, vec![0.0; 3]);
    }

    #[test]
    fn unit_slope_reduces_prelu_to_identity() {
        let (head, layout, mut params) = build(tiny_config(), 2);
        layout.slice_mut(&mut params, head.prelu)[0] = 1.0;
        let x = [0.3, -0.7, 1.1, -0.2];
        let (pre, act) = head.tabular_encode(&layout, &params, &x).unwrap();
        assert_eq!(pre, act);
        // And the pre-activation really is Wx + b.
        let w = layout.slice(&params, head.tab_w);
        for o in 0..3 {
            let want: f64 = (0..4).map(|i| w[o * 4 + i] * x[i]).sum();
            assert!((pre[o] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn unprojected_two_vector_fusion_is_the_two_by_two_outer_product() {
        let config = FusionConfig {
            latent_dim: 1,
            feature_dim: 2,
            fusion_proj_dim: None,
            n_labels: 1,
            prelu_init_slope: 0.25,
        };
        let (head, layout, params) = build(config, 3);
        let (fused, _, _) = head.fuse(&layout, &params, &[2.0], &[5.0]).unwrap();
        assert_eq!(fused, vec![10.0, 2.0, 5.0, 1.0]);
    }

    #[test]
    fn constant_slot_is_exactly_one() {
        let (head, layout, params) = build(tiny_config(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..50 {
            let z_ts: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let z_tab: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (fused, _, _) = head.fuse(&layout, &params, &z_ts, &z_tab).unwrap();
            assert_eq!(*fused.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn unimodal_information_survives_a_zeroed_tabular_projection() {
        let (head, layout, mut params) = build(tiny_config(), 5);
        let ids = head.proj.as_ref().unwrap();
        layout.slice_mut(&mut params, ids.tab_w).fill(0.0);
        layout.slice_mut(&mut params, ids.tab_b).fill(0.0);
        let z_ts = [0.4, -0.9, 1.3];
        let z_tab = [2.0, 0.1, -0.5];
        let (fused, zt_ts, _) = head.fuse(&layout, &params, &z_ts, &z_tab).unwrap();
        let p1 = 3;
        for i in 0..p1 {
            for j in 0..p1 {
                let want = if j == p1 - 1 { zt_ts[i] } else { 0.0 };
                assert_eq!(fused[i * p1 + j], want);
            }
        }
    }

    #[test]
    fn fusion_is_bilinear_in_the_unprojected_latents() {
        let config = FusionConfig {
            latent_dim: 3,
            feature_dim: 2,
            fusion_proj_dim: None,
            n_labels: 1,
            prelu_init_slope: 0.25,
        };
        let (head, layout, params) = build(config, 6);
        let z_ts = [0.7, -1.2, 0.3];
        let z_tab = [1.5, 0.2, -0.8];
        let scaled: Vec<f64> = z_ts.iter().map(|v| 3.0 * v).collect();
        let (base, _, _) = head.fuse(&layout, &params, &z_ts, &z_tab).unwrap();
        let (big, _, _) = head.fuse(&layout, &params, &scaled, &z_tab).unwrap();
        let p1 = 4;
        for i in 0..p1 {
            for j in 0..p1 {
                let factor = if i < p1 - 1 { 3.0 } else { 1.0 };
                assert!((big[i * p1 + j] - factor * base[i * p1 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_observed_zero_logit_costs_ln_two() {
        let (loss, grad) = masked_bce(&[0.0, 5.0], &[1, MISSING]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad[0] - (0.5 - 1.0)).abs() < 1e-12);
        assert_eq!(grad[1], 0.0);
    }

    #[test]
    fn fully_observed_batch_matches_naive_mean_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let logits: Vec<f64> = (0..24).map(|_| rng.random_range(-4.0..4.0)).collect();
        let targets: Vec<i8> = (0..24).map(|_| i8::from(rng.random_range(0..2) == 1)).collect();
        let (loss, grad) = masked_bce(&logits, &targets);
        // Naive route: −mean(t·ln σ + (1−t)·ln(1−σ)).
        let naive: f64 = logits
            .iter()
            .zip(&targets)
            .map(|(&x, &t)| {
                let s = 1.0 / (1.0 + (-x).exp());
                let tf = f64::from(t);
                -(tf * s.ln() + (1.0 - tf) * (1.0 - s).ln())
            })
            .sum::<f64>()
            / 24.0;
        assert!((loss - naive).abs() < 1e-10);
        for (i, g) in grad.iter().enumerate() {
            let s = 1.0 / (1.0 + (-logits[i]).exp());
            assert!((g - (s - f64::from(targets[i])) / 24.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masking_leaves_other_unnormalized_contributions_unchanged() {
        let logits = [0.3, -1.2, 2.0, 0.9];
        let full: [i8; 4] = [1, 0, 1, 0];
        let masked: [i8; 4] = [1, MISSING, 1, 0];
        let (_, g_full) = masked_bce(&logits, &full);
        let (_, g_masked) = masked_bce(&logits, &masked);
        assert_eq!(g_masked[1], 0.0);
        // Per-entry contributions (σ − t) are separable: only the 1/M
        // normalization changes.
        for i in [0usize, 2, 3] {
            assert!((g_full[i] * 4.0 - g_masked[i] * 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_missing_batch_has_zero_loss_and_gradients() {
        let (loss, grad) = masked_bce(&[1.0, -2.0], &[MISSING, MISSING]);
        assert_eq!(loss, 0.0);
        assert_eq!(grad, vec![0.0, 0.0]);
    }

    #[test]
    fn batch_loss_decomposes_over_rows_by_observed_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let k = 5;
        let rows = 6;
        let logits: Vec<f64> = (0..rows * k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let targets: Vec<i8> = (0..rows * k)
            .map(|_| [MISSING, 0, 1][rng.random_range(0..3)])
            .collect();
        let (batch_loss, _) = masked_bce(&logits, &targets);
        let mut weighted = 0.0;
        let mut total_m = 0.0;
        for r in 0..rows {
            let (row_loss, _) = masked_bce(&logits[r * k..(r + 1) * k], &targets[r * k..(r + 1) * k]);
            let m = targets[r * k..(r + 1) * k]
                .iter()
                .filter(|&&t| t != MISSING)
                .count() as f64;
            weighted += m * row_loss;
            total_m += m;
        }
        assert!((batch_loss - weighted / total_m).abs() < 1e-12);
    }

    /// Finite differences across every head parameter, through fuse and the
    /// masked loss.
    #[test]
    fn head_gradients_match_finite_differences() {
        for proj in [Some(2), None] {
            let config = FusionConfig {
                latent_dim: 3,
                feature_dim: 4,
                fusion_proj_dim: proj,
                n_labels: 3,
                prelu_init_slope: 0.25,
            };
            let (head, layout, mut params) = build(config, 8);
            // Make some pre-activations negative so the slope gradient is
            // exercised.
            let mut rng = ChaCha8Rng::seed_from_u64(80);
            for v in params.iter_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
            let features = [0.5, -1.0, 2.0, -0.3];
            let z_ts = [0.4, -0.8, 1.1];
            let targets: [i8; 3] = [1, MISSING, 0];

            let objective = |p: &[f64]| -> f64 {
                let (logits, _) = head.forward(&layout, p, &z_ts, &features).unwrap();
                masked_bce(&logits, &targets).0
            };

            let (logits, tape) = head.forward(&layout, &params, &z_ts, &features).unwrap();
            let (_, d_logits) = masked_bce(&logits, &targets);
            let mut grads = vec![0.0; layout.total_len()];
            let d_z_ts = head.backward(&layout, &params, &tape, &d_logits, &mut grads);
            assert_eq!(d_z_ts.len(), 3);

            let h = 1e-6;
            for i in 0..layout.total_len() {
                let mut up = params.clone();
                up[i] += h;
                let mut dn = params.clone();
                dn[i] -= h;
                let numeric = (objective(&up) - objective(&dn)) / (2.0 * h);
                let denom = numeric.abs().max(grads[i].abs()).max(1e-6);
                assert!(
                    (numeric - grads[i]).abs() / denom < 1e-4,
                    "param {i}: analytic {} vs numeric {numeric}",
                    grads[i]
                );
            }
            // And the latent gradient itself.
            for i in 0..3 {
                let mut up = z_ts;
                up[i] += h;
                let mut dn = z_ts;
                dn[i] -= h;
                let obj = |z: &[f64]| -> f64 {
                    let (logits, _) = head.forward(&layout, &params, z, &features).unwrap();
                    masked_bce(&logits, &targets).0
                };
                let numeric = (obj(&up) - obj(&dn)) / (2.0 * h);
                assert!((numeric - d_z_ts[i]).abs() < 1e-6);
            }
        }
    }
}
