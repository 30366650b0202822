//! The full predictive model: waveform encoder plus multimodal head sharing
//! one flat parameter vector, with batched forward/backward over samples and
//! JSON checkpointing bound to the cohort manifest.
//!
//! Per-sample work (forward passes, backprop to parameter gradients) runs in
//! parallel; reductions always happen in sample order, so gradients are
//! bitwise identical for any worker count.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::Manifest;
use crate::fusion::{masked_bce, FusionConfig, FusionError, Head, HeadTape};
use crate::params::ParamLayout;
use crate::ssm::{
    ConvPlan, Encoder, EncoderConfig, EncoderKernels, EncoderTape, KernelGradAccumulator, Mode,
    SsmError,
};
use crate::util::{mix_seed, sha256_hex};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Ssm(#[from] SsmError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("checkpoint {path}: {detail}")]
    MalformedCheckpoint { path: PathBuf, detail: String },
    #[error("checkpoint was trained against manifest {found}, dataset has {expected}")]
    ManifestMismatch { expected: String, found: String },
    #[error("could not access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Everything needed to rebuild the model architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: FusionConfig,
}

impl ModelConfig {
    /// Desk defaults for a given model width and label count.
    pub fn new(model_dim: usize, n_labels: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig::new(model_dim),
            head: FusionConfig::new(model_dim, n_labels),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.head.latent_dim != self.encoder.model_dim {
            return Err(FusionError::ShapeMismatch {
                detail: format!(
                    "head expects latent {} but encoder produces {}",
                    self.head.latent_dim, self.encoder.model_dim
                ),
            }
            .into());
        }
        Ok(())
    }
}

/// One training example: a waveform segment (channel-major), the dense
/// tabular features, and the target row (with MISSING entries).
pub struct BatchSample<'a> {
    pub segment: &'a [f64],
    pub features: &'a [f64],
    pub targets: &'a [i8],
}

pub struct ModelTape {
    encoder: EncoderTape,
    head: HeadTape,
}

pub struct Model {
    config: ModelConfig,
    pub encoder: Encoder,
    pub head: Head,
    layout: ParamLayout,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Model, ModelError> {
        config.validate()?;
        let mut builder = ParamLayout::builder();
        let encoder = Encoder::register(config.encoder.clone(), &mut builder);
        let head = Head::register(config.head.clone(), &mut builder);
        Ok(Model {
            config,
            encoder,
            head,
            layout: builder.build(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// FFT plan sized for this model's segment length.
    pub fn conv_plan(&self) -> ConvPlan {
        ConvPlan::new(self.config.encoder.segment_len)
    }

    /// Freshly initialized parameter vector, deterministic in the seed.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut params = vec![0.0; self.layout.total_len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.encoder.init_params(&self.layout, &mut params, &mut rng);
        self.head.init_params(&self.layout, &mut params, &mut rng);
        params
    }

    pub fn compute_kernels(
        &self,
        params: &[f64],
        plan: &ConvPlan,
    ) -> Result<EncoderKernels, ModelError> {
        Ok(self.encoder.compute_kernels(&self.layout, params, plan)?)
    }

    /// Segment + features → K logits (and the tape for backprop).
    #[allow(clippy::too_many_arguments)]
    pub fn forward_logits(
        &self,
        params: &[f64],
        kernels: &EncoderKernels,
        plan: &ConvPlan,
        segment: &[f64],
        features: &[f64],
        mode: Mode,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<f64>, ModelTape), ModelError> {
        let (latent, encoder_tape) = self.encoder.forward(
            &self.layout,
            params,
            kernels,
            plan,
            segment,
            mode,
            dropout_rng,
        )?;
        let (logits, head_tape) = self.head.forward(&self.layout, params, &latent, features)?;
        Ok((
            logits,
            ModelTape {
                encoder: encoder_tape,
                head: head_tape,
            },
        ))
    }

    /// Accumulate one sample's parameter gradients given dL/d(logits).
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[f64],
        kernels: &EncoderKernels,
        plan: &ConvPlan,
        tape: &ModelTape,
        d_logits: &[f64],
        grads: &mut [f64],
        dk: &mut KernelGradAccumulator,
    ) {
        let d_latent = self
            .head
            .backward(&self.layout, params, &tape.head, d_logits, grads);
        self.encoder.backward(
            &self.layout,
            params,
            kernels,
            plan,
            &tape.encoder,
            &d_latent,
            grads,
            dk,
        );
    }

    /// One training batch: masked-BCE loss over all samples' observed
    /// targets plus the full parameter gradient. Kernels are computed once;
    /// per-sample passes run in parallel and reduce in sample order. Sample
    /// `i` draws dropout from an RNG seeded with `mix(dropout_seed, i)`.
    pub fn train_batch(
        &self,
        params: &[f64],
        samples: &[BatchSample],
        dropout_seed: u64,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let k = self.config.head.n_labels;
        let plan = self.conv_plan();
        let kernels = self.compute_kernels(params, &plan)?;

        let forwards: Vec<(Vec<f64>, ModelTape)> = samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(dropout_seed, i as u64));
                self.forward_logits(
                    params,
                    &kernels,
                    &plan,
                    s.segment,
                    s.features,
                    Mode::Train,
                    Some(&mut rng),
                )
            })
            .collect::<Result<_, _>>()?;

        let mut batch_logits = Vec::with_capacity(samples.len() * k);
        let mut batch_targets = Vec::with_capacity(samples.len() * k);
        for ((logits, _), s) in forwards.iter().zip(samples) {
            assert_eq!(s.targets.len(), k, "target row width must equal n_labels");
            batch_logits.extend_from_slice(logits);
            batch_targets.extend_from_slice(s.targets);
        }
        let (loss, d_logits) = masked_bce(&batch_logits, &batch_targets);

        let partials: Vec<(Vec<f64>, KernelGradAccumulator)> = forwards
            .par_iter()
            .enumerate()
            .map(|(i, (_, tape))| {
                let mut grads = vec![0.0; self.layout.total_len()];
                let mut dk = KernelGradAccumulator::new(&self.config.encoder);
                self.backward(
                    params,
                    &kernels,
                    &plan,
                    tape,
                    &d_logits[i * k..(i + 1) * k],
                    &mut grads,
                    &mut dk,
                );
                (grads, dk)
            })
            .collect();

        let mut grads = vec![0.0; self.layout.total_len()];
        let mut dk = KernelGradAccumulator::new(&self.config.encoder);
        for (g, d) in &partials {
            for (a, b) in grads.iter_mut().zip(g) {
                *a += b;
            }
            dk.merge(d);
        }
        self.encoder
            .kernel_param_backward(&self.layout, params, &kernels, &dk, &mut grads);
        Ok((loss, grads))
    }

    /// Evaluation logits for a set of (segment, features) pairs; parallel,
    /// order-preserving, dropout off.
    pub fn predict_batch(
        &self,
        params: &[f64],
        inputs: &[(&[f64], &[f64])],
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        let plan = self.conv_plan();
        let kernels = self.compute_kernels(params, &plan)?;
        inputs
            .par_iter()
            .map(|(segment, features)| {
                self.forward_logits(params, &kernels, &plan, segment, features, Mode::Eval, None)
                    .map(|(logits, _)| logits)
            })
            .collect()
    }
}

/// Binding hash of a cohort manifest: checkpoints record it and refuse to
/// load against a different dataset.
pub fn manifest_hash(manifest: &Manifest) -> String {
    let json = serde_json::to_string(manifest).expect("manifest serializes");
    sha256_hex(json.as_bytes())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Serialized model state: architecture, parameters by tensor name, the
/// label ordering it was trained with, and the manifest binding.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub manifest_hash: String,
    pub label_ids: Vec<String>,
    pub best_epoch: usize,
    pub valid_macro_auroc: f64,
    pub tensors: Vec<CheckpointTensor>,
}

impl Checkpoint {
    pub fn from_params(
        model: &Model,
        params: &[f64],
        manifest_hash: String,
        label_ids: Vec<String>,
        best_epoch: usize,
        valid_macro_auroc: f64,
    ) -> Checkpoint {
        let layout = model.layout();
        assert_eq!(params.len(), layout.total_len());
        let tensors = layout
            .specs()
            .iter()
            .map(|spec| CheckpointTensor {
                name: spec.name.clone(),
                shape: spec.shape.clone(),
                values: params[spec.offset..spec.offset + spec.len()].to_vec(),
            })
            .collect();
        Checkpoint {
            config: model.config().clone(),
            manifest_hash,
            label_ids,
            best_epoch,
            valid_macro_auroc,
            tensors,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let io_err = |source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = std::fs::File::create(path).map_err(io_err)?;
        let json = serde_json::to_string(self).expect("checkpoint serializes");
        file.write_all(json.as_bytes()).map_err(io_err)?;
        file.write_all(b"\n").map_err(io_err)?;
        Ok(())
    }

    /// Load and validate a checkpoint; when `expected_manifest_hash` is
    /// given, a mismatch is an error. Returns the rebuilt model and its
    /// parameter vector.
    pub fn load(
        path: &Path,
        expected_manifest_hash: Option<&str>,
    ) -> Result<(Checkpoint, Model, Vec<f64>), ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| ModelError::MalformedCheckpoint {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        if let Some(expected) = expected_manifest_hash {
            if ckpt.manifest_hash != expected {
                return Err(ModelError::ManifestMismatch {
                    expected: expected.to_string(),
                    found: ckpt.manifest_hash.clone(),
                });
            }
        }
        let model = Model::new(ckpt.config.clone())?;
        let layout = model.layout();
        let mut params = vec![0.0; layout.total_len()];
        let mut seen = 0usize;
        for tensor in &ckpt.tensors {
            let id = layout.id(&tensor.name).ok_or_else(|| {
                ModelError::MalformedCheckpoint {
                    path: path.to_path_buf(),
                    detail: format!("unknown tensor {}", tensor.name),
                }
            })?;
            let spec = layout.spec(id);
            if spec.shape != tensor.shape || tensor.values.len() != spec.len() {
                return Err(ModelError::MalformedCheckpoint {
                    path: path.to_path_buf(),
                    detail: format!("tensor {} has the wrong shape", tensor.name),
                });
            }
            layout
                .slice_mut(&mut params, id)
                .copy_from_slice(&tensor.values);
            seen += 1;
        }
        if seen != layout.specs().len() {
            return Err(ModelError::MalformedCheckpoint {
                path: path.to_path_buf(),
                detail: format!(
                    "{} tensors present, architecture needs {}",
                    seen,
                    layout.specs().len()
                ),
            });
        }
        Ok((ckpt, model, params))
    }
}
