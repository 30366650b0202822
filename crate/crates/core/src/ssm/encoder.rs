//! Bidirectional state-space sequence encoder with explicit reverse-mode
//! gradients.
//!
//! A linear stem lifts the input channels to the model width; a stack of
//! pre-norm residual blocks then mixes information along time (per-channel
//! diagonal-SSM convolutions run forward and time-reversed) and across
//! channels (a linear mix of the two directions followed by a pointwise
//! feed-forward); a mean pool over time yields the latent vector.
//!
//! Convolution kernels depend only on parameters, never on the input, so
//! they are computed once per batch ([`Encoder::compute_kernels`]) and
//! shared across samples. Per-sample backward passes accumulate dL/dK into a
//! [`KernelGradAccumulator`]; [`Encoder::kernel_param_backward`] folds the
//! batch total back into the raw SSM parameters once.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::params::{LayoutBuilder, ParamId, ParamLayout};
use crate::ssm::block::{
    affine_backward, affine_forward, dropout_backward, dropout_forward, gelu_backward,
    gelu_forward, layer_norm_backward, layer_norm_forward, LayerNormCache,
};
use crate::ssm::fftconv::ConvPlan;
use crate::ssm::kernel::{compute_kernel, kernel_backward, ChannelKernel};
use crate::ssm::SsmError;

/// Architecture hyperparameters of the waveform encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub model_dim: usize,
    pub n_blocks: usize,
    pub state_size: usize,
    pub segment_len: usize,
    pub n_input_channels: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Desk defaults: 4 blocks, state size 8, 250-sample segments of a
    /// 12-channel input, no dropout.
    pub fn new(model_dim: usize) -> EncoderConfig {
        EncoderConfig {
            model_dim,
            n_blocks: 4,
            state_size: 8,
            segment_len: 250,
            n_input_channels: 12,
            dropout: 0.0,
        }
    }

    /// Hidden width of the feed-forward sublayer.
    pub fn ff_dim(&self) -> usize {
        2 * self.model_dim
    }
}

/// Whether dropout is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy)]
struct SsmIds {
    rho: ParamId,
    log_dt: ParamId,
    c_re: ParamId,
    c_im: ParamId,
    d: ParamId,
}

#[derive(Clone, Copy)]
struct BlockIds {
    norm1_gamma: ParamId,
    norm1_beta: ParamId,
    /// Index 0 runs over time forward, index 1 over reversed time.
    ssm: [SsmIds; 2],
    mix_w: ParamId,
    mix_b: ParamId,
    norm2_gamma: ParamId,
    norm2_beta: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
}

/// The encoder: parameter handles plus the architecture description. All
/// parameter values live in an external flat vector described by the
/// [`ParamLayout`] this encoder was registered into.
pub struct Encoder {
    config: EncoderConfig,
    stem_w: ParamId,
    stem_b: ParamId,
    blocks: Vec<BlockIds>,
}

/// Per-batch cache of every block/direction/channel kernel and its padded
/// FFT spectrum.
pub struct EncoderKernels {
    /// `kernels[block][direction][channel]`
    pub kernels: Vec<[Vec<ChannelKernel>; 2]>,
    /// `spectra[block][direction][channel]`, FFT of the zero-padded kernel.
    pub spectra: Vec<[Vec<Vec<Complex64>>; 2]>,
}

/// Forward-pass intermediates of one sample, consumed by [`Encoder::backward`].
#[derive(Debug)]
pub struct EncoderTape {
    input: Vec<f64>,
    blocks: Vec<BlockTape>,
}

#[derive(Debug)]
struct BlockTape {
    ln1: LayerNormCache,
    /// Normalized block input (the convolution input), H×L.
    n1: Vec<f64>,
    /// Concatenated forward/backward convolution outputs, 2H×L.
    z: Vec<f64>,
    mask1: Option<Vec<f64>>,
    ln2: LayerNormCache,
    /// Normalized mid activation (the feed-forward input), H×L.
    n2: Vec<f64>,
    /// Feed-forward pre-activation, 2H×L.
    f1: Vec<f64>,
    /// Feed-forward hidden activation, 2H×L.
    g: Vec<f64>,
    mask2: Option<Vec<f64>>,
}

/// dL/dK accumulated across a batch, one length-L row per
/// (block, direction, channel).
pub struct KernelGradAccumulator {
    h: usize,
    l: usize,
    data: Vec<f64>,
}

impl KernelGradAccumulator {
    pub fn new(config: &EncoderConfig) -> KernelGradAccumulator {
        KernelGradAccumulator {
            h: config.model_dim,
            l: config.segment_len,
            data: vec![0.0; config.n_blocks * 2 * config.model_dim * config.segment_len],
        }
    }

    fn offset(&self, block: usize, dir: usize, ch: usize) -> usize {
        ((block * 2 + dir) * self.h + ch) * self.l
    }

    pub fn slice(&self, block: usize, dir: usize, ch: usize) -> &[f64] {
        let o = self.offset(block, dir, ch);
        &self.data[o..o + self.l]
    }

    pub fn slice_mut(&mut self, block: usize, dir: usize, ch: usize) -> &mut [f64] {
        let o = self.offset(block, dir, ch);
        &mut self.data[o..o + self.l]
    }

    /// Elementwise add, used to reduce per-sample accumulators in a fixed
    /// order.
    pub fn merge(&mut self, other: &KernelGradAccumulator) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn fill_uniform<R: Rng>(w: &mut [f64], fan_in: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in w.iter_mut() {
        *v = rng.random_range(-bound..bound);
    }
}

impl Encoder {
    /// Register every tensor of the encoder with the layout builder.
    pub fn register(config: EncoderConfig, builder: &mut LayoutBuilder) -> Encoder {
        assert!(config.model_dim >= 1, "model_dim must be positive");
        assert!(config.n_blocks >= 1, "need at least one block");
        assert!(config.state_size >= 1, "state_size must be positive");
        assert!(config.segment_len >= 2, "segment_len too short");
        let h = config.model_dim;
        let n = config.state_size;
        let f = config.ff_dim();
        let stem_w = builder.add("stem.weight", &[h, config.n_input_channels]);
        let stem_b = builder.add("stem.bias", &[h]);
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for bi in 0..config.n_blocks {
            let norm1_gamma = builder.add(format!("block{bi}.norm1.gamma"), &[h]);
            let norm1_beta = builder.add(format!("block{bi}.norm1.beta"), &[h]);
            let ssm = ["fwd", "bwd"].map(|dir| SsmIds {
                rho: builder.add(format!("block{bi}.{dir}.rho"), &[h, n]),
                log_dt: builder.add(format!("block{bi}.{dir}.log_dt"), &[h]),
                c_re: builder.add(format!("block{bi}.{dir}.c_re"), &[h, n]),
                c_im: builder.add(format!("block{bi}.{dir}.c_im"), &[h, n]),
                d: builder.add(format!("block{bi}.{dir}.d"), &[h]),
            });
            blocks.push(BlockIds {
                norm1_gamma,
                norm1_beta,
                ssm,
                mix_w: builder.add(format!("block{bi}.mix.weight"), &[h, 2 * h]),
                mix_b: builder.add(format!("block{bi}.mix.bias"), &[h]),
                norm2_gamma: builder.add(format!("block{bi}.norm2.gamma"), &[h]),
                norm2_beta: builder.add(format!("block{bi}.norm2.beta"), &[h]),
                ff1_w: builder.add(format!("block{bi}.ff1.weight"), &[f, h]),
                ff1_b: builder.add(format!("block{bi}.ff1.bias"), &[f]),
                ff2_w: builder.add(format!("block{bi}.ff2.weight"), &[h, f]),
                ff2_b: builder.add(format!("block{bi}.ff2.bias"), &[h]),
            });
        }
        Encoder {
            config,
            stem_w,
            stem_b,
            blocks,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Latent width (equals the model width).
    pub fn latent_dim(&self) -> usize {
        self.config.model_dim
    }

    /// Draw initial values for every tensor: linear weights uniform in
    /// ±1/√fan_in with zero biases, norm scales 1 with zero shifts, and each
    /// SSM channel via [`init_ssm_channel`](crate::ssm::init_ssm_channel).
    pub fn init_params<R: Rng>(&self, layout: &ParamLayout, params: &mut [f64], rng: &mut R) {
        assert_eq!(params.len(), layout.total_len());
        let h = self.config.model_dim;
        let n = self.config.state_size;
        fill_uniform(
            layout.slice_mut(params, self.stem_w),
            self.config.n_input_channels,
            rng,
        );
        layout.slice_mut(params, self.stem_b).fill(0.0);
        for ids in &self.blocks {
            layout.slice_mut(params, ids.norm1_gamma).fill(1.0);
            layout.slice_mut(params, ids.norm1_beta).fill(0.0);
            for dir in &ids.ssm {
                for ch in 0..h {
                    let mut rho = vec![0.0; n];
                    let mut c_re = vec![0.0; n];
                    let mut c_im = vec![0.0; n];
                    let mut log_dt = 0.0;
                    let mut d = 0.0;
                    crate::ssm::kernel::init_ssm_channel(
                        &mut rho, &mut log_dt, &mut c_re, &mut c_im, &mut d, rng,
                    );
                    layout.slice_mut(params, dir.rho)[ch * n..(ch + 1) * n]
                        .copy_from_slice(&rho);
                    layout.slice_mut(params, dir.log_dt)[ch] = log_dt;
                    layout.slice_mut(params, dir.c_re)[ch * n..(ch + 1) * n]
                        .copy_from_slice(&c_re);
                    layout.slice_mut(params, dir.c_im)[ch * n..(ch + 1) * n]
                        .copy_from_slice(&c_im);
                    layout.slice_mut(params, dir.d)[ch] = d;
                }
            }
            fill_uniform(layout.slice_mut(params, ids.mix_w), 2 * h, rng);
            layout.slice_mut(params, ids.mix_b).fill(0.0);
            layout.slice_mut(params, ids.norm2_gamma).fill(1.0);
            layout.slice_mut(params, ids.norm2_beta).fill(0.0);
            fill_uniform(layout.slice_mut(params, ids.ff1_w), h, rng);
            layout.slice_mut(params, ids.ff1_b).fill(0.0);
            fill_uniform(layout.slice_mut(params, ids.ff2_w), 2 * h, rng);
            layout.slice_mut(params, ids.ff2_b).fill(0.0);
        }
    }

    /// Build every convolution kernel and its spectrum from the current
    /// parameters. Input-independent, so call once per batch.
    pub fn compute_kernels(
        &self,
        layout: &ParamLayout,
        params: &[f64],
        plan: &ConvPlan,
    ) -> Result<EncoderKernels, SsmError> {
        let h = self.config.model_dim;
        let n = self.config.state_size;
        let l = self.config.segment_len;
        assert_eq!(plan.len(), l, "plan length must match segment length");
        let mut kernels = Vec::with_capacity(self.blocks.len());
        let mut spectra = Vec::with_capacity(self.blocks.len());
        for ids in &self.blocks {
            let mut ks: [Vec<ChannelKernel>; 2] = [Vec::with_capacity(h), Vec::with_capacity(h)];
            let mut sp: [Vec<Vec<Complex64>>; 2] =
                [Vec::with_capacity(h), Vec::with_capacity(h)];
            for (di, dir) in ids.ssm.iter().enumerate() {
                let rho = layout.slice(params, dir.rho);
                let log_dt = layout.slice(params, dir.log_dt);
                let c_re = layout.slice(params, dir.c_re);
                let c_im = layout.slice(params, dir.c_im);
                for ch in 0..h {
                    let ck = compute_kernel(
                        &rho[ch * n..(ch + 1) * n],
                        log_dt[ch],
                        &c_re[ch * n..(ch + 1) * n],
                        &c_im[ch * n..(ch + 1) * n],
                        l,
                    )?;
                    sp[di].push(plan.spectrum(&ck.k));
                    ks[di].push(ck);
                }
            }
            kernels.push(ks);
            spectra.push(sp);
        }
        Ok(EncoderKernels { kernels, spectra })
    }

    /// Encode one segment (channel-major, `n_input_channels × segment_len`)
    /// to a latent vector, recording the tape needed by [`Self::backward`].
    /// Dropout draws from `dropout_rng` only in [`Mode::Train`] with a
    /// positive rate.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        layout: &ParamLayout,
        params: &[f64],
        kernels: &EncoderKernels,
        plan: &ConvPlan,
        input: &[f64],
        mode: Mode,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<f64>, EncoderTape), SsmError> {
        let h = self.config.model_dim;
        let l = self.config.segment_len;
        let in_ch = self.config.n_input_channels;
        if input.len() != in_ch * l {
            return Err(SsmError::ShapeMismatch {
                detail: format!(
                    "encoder input has {} values, expected {} channels × {} samples",
                    input.len(),
                    in_ch,
                    l
                ),
            });
        }
        let rate = self.config.dropout;
        let use_dropout = mode == Mode::Train && rate > 0.0;

        let mut x = vec![0.0; h * l];
        affine_forward(
            layout.slice(params, self.stem_w),
            layout.slice(params, self.stem_b),
            input,
            in_ch,
            h,
            l,
            &mut x,
        );

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (bi, ids) in self.blocks.iter().enumerate() {
            let mut n1 = vec![0.0; h * l];
            let ln1 = layer_norm_forward(
                &x,
                layout.slice(params, ids.norm1_gamma),
                layout.slice(params, ids.norm1_beta),
                h,
                l,
                &mut n1,
            );

            // Per-channel SSM convolutions, forward and time-reversed.
            let d_fwd = layout.slice(params, ids.ssm[0].d);
            let d_bwd = layout.slice(params, ids.ssm[1].d);
            let mut z = vec![0.0; 2 * h * l];
            for ch in 0..h {
                let u = &n1[ch * l..(ch + 1) * l];
                let y = plan.conv_spectra(&plan.spectrum(u), &kernels.spectra[bi][0][ch]);
                for t in 0..l {
                    z[ch * l + t] = y[t] + d_fwd[ch] * u[t];
                }
                let ur: Vec<f64> = u.iter().rev().copied().collect();
                let yb = plan.conv_spectra(&plan.spectrum(&ur), &kernels.spectra[bi][1][ch]);
                for t in 0..l {
                    z[(h + ch) * l + t] = yb[l - 1 - t] + d_bwd[ch] * u[t];
                }
            }

            let mut m = vec![0.0; h * l];
            affine_forward(
                layout.slice(params, ids.mix_w),
                layout.slice(params, ids.mix_b),
                &z,
                2 * h,
                h,
                l,
                &mut m,
            );
            let mask1 = if use_dropout {
                let rng = dropout_rng
                    .as_deref_mut()
                    .expect("training with dropout requires an RNG");
                dropout_forward(&mut m, rate, rng)
            } else {
                None
            };
            let x_mid: Vec<f64> = x.iter().zip(&m).map(|(a, b)| a + b).collect();

            let mut n2 = vec![0.0; h * l];
            let ln2 = layer_norm_forward(
                &x_mid,
                layout.slice(params, ids.norm2_gamma),
                layout.slice(params, ids.norm2_beta),
                h,
                l,
                &mut n2,
            );
            let mut f1 = vec![0.0; 2 * h * l];
            affine_forward(
                layout.slice(params, ids.ff1_w),
                layout.slice(params, ids.ff1_b),
                &n2,
                h,
                2 * h,
                l,
                &mut f1,
            );
            let mut g = vec![0.0; 2 * h * l];
            gelu_forward(&f1, &mut g);
            let mut f2 = vec![0.0; h * l];
            affine_forward(
                layout.slice(params, ids.ff2_w),
                layout.slice(params, ids.ff2_b),
                &g,
                2 * h,
                h,
                l,
                &mut f2,
            );
            let mask2 = if use_dropout {
                let rng = dropout_rng
                    .as_deref_mut()
                    .expect("training with dropout requires an RNG");
                dropout_forward(&mut f2, rate, rng)
            } else {
                None
            };
            let x_out: Vec<f64> = x_mid.iter().zip(&f2).map(|(a, b)| a + b).collect();

            blocks.push(BlockTape {
                ln1,
                n1,
                z,
                mask1,
                ln2,
                n2,
                f1,
                g,
                mask2,
            });
            x = x_out;
        }

        let latent: Vec<f64> = (0..h)
            .map(|c| x[c * l..(c + 1) * l].iter().sum::<f64>() / l as f64)
            .collect();
        if !latent.iter().all(|v| v.is_finite()) {
            return Err(SsmError::NonFiniteActivation {
                location: "encoder latent".to_string(),
            });
        }
        Ok((
            latent,
            EncoderTape {
                input: input.to_vec(),
                blocks,
            },
        ))
    }

    /// Accumulate parameter gradients for one sample given dL/d(latent).
    /// Kernel gradients land in `dk` (fold them with
    /// [`Self::kernel_param_backward`] once per batch); everything else goes
    /// straight into `grads`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        layout: &ParamLayout,
        params: &[f64],
        kernels: &EncoderKernels,
        plan: &ConvPlan,
        tape: &EncoderTape,
        d_latent: &[f64],
        grads: &mut [f64],
        dk: &mut KernelGradAccumulator,
    ) {
        let h = self.config.model_dim;
        let l = self.config.segment_len;
        let in_ch = self.config.n_input_channels;
        assert_eq!(d_latent.len(), h);
        assert_eq!(grads.len(), layout.total_len());

        // Mean pool: every time step receives d_latent / L.
        let mut dx = vec![0.0; h * l];
        for c in 0..h {
            let g = d_latent[c] / l as f64;
            dx[c * l..(c + 1) * l].fill(g);
        }

        for (bi, ids) in self.blocks.iter().enumerate().rev() {
            let bt = &tape.blocks[bi];

            // x_out = x_mid + drop(ff2(gelu(ff1(norm2(x_mid))))).
            let mut d_f2 = dx.clone();
            dropout_backward(&mut d_f2, &bt.mask2);
            let mut d_g = vec![0.0; 2 * h * l];
            {
                let (dw, db) = layout.slice_pair_mut(grads, ids.ff2_w, ids.ff2_b);
                affine_backward(
                    layout.slice(params, ids.ff2_w),
                    &bt.g,
                    &d_f2,
                    2 * h,
                    h,
                    l,
                    dw,
                    db,
                    &mut d_g,
                );
            }
            let mut d_f1 = vec![0.0; 2 * h * l];
            gelu_backward(&bt.f1, &d_g, &mut d_f1);
            let mut d_n2 = vec![0.0; h * l];
            {
                let (dw, db) = layout.slice_pair_mut(grads, ids.ff1_w, ids.ff1_b);
                affine_backward(
                    layout.slice(params, ids.ff1_w),
                    &bt.n2,
                    &d_f1,
                    h,
                    2 * h,
                    l,
                    dw,
                    db,
                    &mut d_n2,
                );
            }
            let mut d_x_mid = dx; // residual path
            {
                let (dgamma, dbeta) =
                    layout.slice_pair_mut(grads, ids.norm2_gamma, ids.norm2_beta);
                layer_norm_backward(
                    &bt.ln2,
                    layout.slice(params, ids.norm2_gamma),
                    &d_n2,
                    h,
                    l,
                    dgamma,
                    dbeta,
                    &mut d_x_mid,
                );
            }

            // x_mid = x_in + drop(mix(z)).
            let mut d_m = d_x_mid.clone();
            dropout_backward(&mut d_m, &bt.mask1);
            let mut d_z = vec![0.0; 2 * h * l];
            {
                let (dw, db) = layout.slice_pair_mut(grads, ids.mix_w, ids.mix_b);
                affine_backward(
                    layout.slice(params, ids.mix_w),
                    &bt.z,
                    &d_m,
                    2 * h,
                    h,
                    l,
                    dw,
                    db,
                    &mut d_z,
                );
            }

            // Convolutions: du = corr(dy, K) + D·dy, dK = corr(dy, u),
            // dD = Σ dy·u; the reversed direction conjugates everything with
            // time reversal.
            let mut d_n1 = vec![0.0; h * l];
            for ch in 0..h {
                let u = &bt.n1[ch * l..(ch + 1) * l];
                {
                    let dy = &d_z[ch * l..(ch + 1) * l];
                    let rev_dy: Vec<f64> = dy.iter().rev().copied().collect();
                    let rev_dy_hat = plan.spectrum(&rev_dy);
                    let mut du = plan.conv_spectra(&rev_dy_hat, &kernels.spectra[bi][0][ch]);
                    du.reverse();
                    let d_val = layout.slice(params, ids.ssm[0].d)[ch];
                    for t in 0..l {
                        d_n1[ch * l + t] += du[t] + d_val * dy[t];
                    }
                    let mut dkv = plan.conv_spectra(&rev_dy_hat, &plan.spectrum(u));
                    dkv.reverse();
                    for (a, b) in dk.slice_mut(bi, 0, ch).iter_mut().zip(&dkv) {
                        *a += b;
                    }
                    layout.slice_mut(grads, ids.ssm[0].d)[ch] +=
                        dy.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
                }
                {
                    // y_bwd = rev(conv(rev u, K) + D·rev u), so the upstream
                    // gradient of the plain convolution is rev(dy_bwd).
                    let dy = &d_z[(h + ch) * l..(h + ch + 1) * l];
                    let ur: Vec<f64> = u.iter().rev().copied().collect();
                    // rev(rev(dy)) = dy is already the reversal the
                    // correlation wants.
                    let dy_hat = plan.spectrum(dy);
                    let mut du_r = plan.conv_spectra(&dy_hat, &kernels.spectra[bi][1][ch]);
                    du_r.reverse();
                    let d_val = layout.slice(params, ids.ssm[1].d)[ch];
                    for t in 0..l {
                        d_n1[ch * l + t] += du_r[l - 1 - t] + d_val * dy[t];
                    }
                    let mut dkv = plan.conv_spectra(&dy_hat, &plan.spectrum(&ur));
                    dkv.reverse();
                    for (a, b) in dk.slice_mut(bi, 1, ch).iter_mut().zip(&dkv) {
                        *a += b;
                    }
                    layout.slice_mut(grads, ids.ssm[1].d)[ch] +=
                        dy.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
                }
            }

            let mut d_x_in = d_x_mid; // residual path
            {
                let (dgamma, dbeta) =
                    layout.slice_pair_mut(grads, ids.norm1_gamma, ids.norm1_beta);
                layer_norm_backward(
                    &bt.ln1,
                    layout.slice(params, ids.norm1_gamma),
                    &d_n1,
                    h,
                    l,
                    dgamma,
                    dbeta,
                    &mut d_x_in,
                );
            }
            dx = d_x_in;
        }

        // Stem; the gradient w.r.t. the waveform itself is discarded.
        let mut d_input = vec![0.0; in_ch * l];
        let (dw, db) = layout.slice_pair_mut(grads, self.stem_w, self.stem_b);
        affine_backward(
            layout.slice(params, self.stem_w),
            &tape.input,
            &dx,
            in_ch,
            h,
            l,
            dw,
            db,
            &mut d_input,
        );
    }

    /// Fold batch-accumulated kernel gradients back into ρ, log dt, C.
    pub fn kernel_param_backward(
        &self,
        layout: &ParamLayout,
        params: &[f64],
        kernels: &EncoderKernels,
        dk: &KernelGradAccumulator,
        grads: &mut [f64],
    ) {
        let h = self.config.model_dim;
        let n = self.config.state_size;
        for (bi, ids) in self.blocks.iter().enumerate() {
            for (di, dir) in ids.ssm.iter().enumerate() {
                for ch in 0..h {
                    let ck = &kernels.kernels[bi][di][ch];
                    let c_re = &layout.slice(params, dir.c_re)[ch * n..(ch + 1) * n];
                    let c_im = &layout.slice(params, dir.c_im)[ch * n..(ch + 1) * n];
                    let g = kernel_backward(ck, c_re, c_im, dk.slice(bi, di, ch));
                    for (a, b) in layout.slice_mut(grads, dir.rho)[ch * n..(ch + 1) * n]
                        .iter_mut()
                        .zip(&g.d_rho)
                    {
                        *a += b;
                    }
                    layout.slice_mut(grads, dir.log_dt)[ch] += g.d_log_dt;
                    for (a, b) in layout.slice_mut(grads, dir.c_re)[ch * n..(ch + 1) * n]
                        .iter_mut()
                        .zip(&g.d_c_re)
                    {
                        *a += b;
                    }
                    for (a, b) in layout.slice_mut(grads, dir.c_im)[ch * n..(ch + 1) * n]
                        .iter_mut()
                        .zip(&g.d_c_im)
                    {
                        *a += b;
                    }
                }
            }
        }
    }
}
