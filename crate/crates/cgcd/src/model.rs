//! Trainable architecture: an MLP encoder followed by a 3-layer projection
//! head. Training differentiates through [`ModelState::forward_graph`];
//! evaluation and teachers use the eager [`ModelState::forward`]. Both paths
//! run the same kernels in the same order, so their outputs agree bitwise.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffmath::{DiffError, Matrix, NodeId, Tape};
use crate::rng;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint schema version {found}, expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("checkpoint payload hash does not match its manifest")]
    HashMismatch,
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Math(#[from] DiffError),
}

/// Which parameters receive gradient updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableScope {
    All,
    LastBlockAndHead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Encoder layer widths; the last entry is the feature dimension.
    pub encoder_dims: Vec<usize>,
    pub feature_dim: usize,
    pub head_hidden_dim: usize,
    pub head_output_dim: usize,
    pub trainable_scope: TrainableScope,
    pub seed: u64,
}

impl ModelConfig {
    /// Small dimensions sized for CPU runs in seconds.
    pub fn desk() -> Self {
        Self {
            input_dim: 32,
            encoder_dims: vec![64, 32],
            feature_dim: 32,
            head_hidden_dim: 64,
            head_output_dim: 128,
            trainable_scope: TrainableScope::All,
            seed: 0x6d6f64656c,
        }
    }

    /// Full-scale dimensions (feature 768, head 2048 -> 65536). Expressible,
    /// not meant for CPU runs.
    pub fn paper() -> Self {
        Self {
            input_dim: 768,
            encoder_dims: vec![768, 768],
            feature_dim: 768,
            head_hidden_dim: 2048,
            head_output_dim: 65536,
            trainable_scope: TrainableScope::LastBlockAndHead,
            seed: 0x6d6f64656c,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0
            || self.feature_dim == 0
            || self.head_hidden_dim == 0
            || self.head_output_dim == 0
        {
            return Err(ModelError::InvalidConfig("all dims must be >= 1".into()));
        }
        if self.encoder_dims.is_empty() {
            return Err(ModelError::InvalidConfig("encoder_dims is empty".into()));
        }
        if self.encoder_dims.contains(&0) {
            return Err(ModelError::InvalidConfig("encoder dim of 0".into()));
        }
        if *self.encoder_dims.last().unwrap() != self.feature_dim {
            return Err(ModelError::InvalidConfig(format!(
                "last encoder dim {} must equal feature_dim {}",
                self.encoder_dims.last().unwrap(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    /// (in, out) shape of every linear layer, encoder then head.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut prev = self.input_dim;
        for &d in &self.encoder_dims {
            shapes.push((prev, d));
            prev = d;
        }
        shapes.push((self.feature_dim, self.head_hidden_dim));
        shapes.push((self.head_hidden_dim, self.head_hidden_dim));
        shapes.push((self.head_hidden_dim, self.head_output_dim));
        shapes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    /// in x out.
    pub weight: Matrix,
    /// 1 x out.
    pub bias: Matrix,
}

/// Parameters of the encoder and projection head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    encoder: Vec<LinearLayer>,
    head: Vec<LinearLayer>,
    schema_version: u32,
    init_seed: u64,
}

/// Which slice of the forward pass to produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardScope {
    FeaturesOnly,
    FeaturesAndProjection,
}

/// Deterministic init: weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)],
/// biases zero.
pub fn init_model(config: &ModelConfig) -> Result<ModelState, ModelError> {
    config.validate()?;
    let mut gen = rng::seeded(config.seed, "model-init");
    let mut layers = Vec::new();
    for (fan_in, fan_out) in config.layer_shapes() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Matrix::from_fn(fan_in, fan_out, |_, _| gen.random_range(-bound..bound));
        layers.push(LinearLayer {
            weight,
            bias: Matrix::zeros(1, fan_out),
        });
    }
    let head = layers.split_off(config.encoder_dims.len());
    Ok(ModelState {
        config: config.clone(),
        encoder: layers,
        head,
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        init_seed: config.seed,
    })
}

impl ModelState {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn parameter_count(&self) -> usize {
        self.layers()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }

    fn layers(&self) -> impl Iterator<Item = &LinearLayer> {
        self.encoder.iter().chain(self.head.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut LinearLayer> {
        self.encoder.iter_mut().chain(self.head.iter_mut())
    }

    #[cfg(test)]
    pub(crate) fn zero_parameters(&mut self) {
        for layer in self.layers_mut() {
            layer.weight = Matrix::zeros(layer.weight.rows(), layer.weight.cols());
            layer.bias = Matrix::zeros(1, layer.bias.cols());
        }
    }

    #[cfg(test)]
    pub(crate) fn set_layer(&mut self, index: usize, layer: LinearLayer) {
        let slot = self.layers_mut().nth(index).expect("layer index");
        *slot = layer;
    }

    /// Eager forward pass: backbone features and, on request, L2-normalized
    /// projected features.
    pub fn forward(
        &self,
        inputs: &Matrix,
        scope: ForwardScope,
    ) -> Result<(Matrix, Option<Matrix>), ModelError> {
        if inputs.cols() != self.config.input_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "input has {} columns, model expects {}",
                inputs.cols(),
                self.config.input_dim
            )));
        }
        let mut tape = Tape::new();
        let x = tape.constant(inputs);
        let binding = self.bind_params(&mut tape, false);
        let (features, projected) = self.forward_graph(
            &mut tape,
            &binding,
            x,
            scope == ForwardScope::FeaturesAndProjection,
        )?;
        Ok((
            tape.value(features).clone(),
            projected.map(|p| tape.value(p).clone()),
        ))
    }

    /// Registers every parameter on the tape, honoring the trainable scope
    /// unless `all_frozen` (teacher / evaluation use).
    pub fn bind_params(&self, tape: &mut Tape, trainable: bool) -> ParamBinding {
        let encoder_len = self.encoder.len();
        let mut ids = Vec::new();
        let mut flags = Vec::new();
        for (idx, layer) in self.layers().enumerate() {
            let layer_trainable = trainable
                && match self.config.trainable_scope {
                    TrainableScope::All => true,
                    // "last block" of the MLP encoder = its final linear layer
                    TrainableScope::LastBlockAndHead => idx + 1 >= encoder_len,
                };
            for m in [&layer.weight, &layer.bias] {
                let id = if layer_trainable {
                    tape.input(m)
                } else {
                    tape.constant(m)
                };
                ids.push(id);
                flags.push(layer_trainable);
            }
        }
        ParamBinding {
            ids,
            trainable: flags,
        }
    }

    /// Builds the forward computation on a tape. Returns the feature node and,
    /// on request, the projected (unit-row) node.
    pub fn forward_graph(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        input: NodeId,
        with_projection: bool,
    ) -> Result<(NodeId, Option<NodeId>), ModelError> {
        if tape.value(input).cols() != self.config.input_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "input has {} columns, model expects {}",
                tape.value(input).cols(),
                self.config.input_dim
            )));
        }
        let mut x = input;
        let encoder_len = self.encoder.len();
        for idx in 0..encoder_len {
            x = linear(tape, binding, idx, x)?;
            if idx + 1 < encoder_len {
                x = tape.gelu(x);
            }
        }
        let features = x;
        if !with_projection {
            return Ok((features, None));
        }
        let mut h = features;
        for idx in 0..self.head.len() {
            h = linear(tape, binding, encoder_len + idx, h)?;
            if idx + 1 < self.head.len() {
                h = tape.gelu(h);
            }
        }
        let projected = tape.l2_normalize_rows(h)?;
        Ok((features, Some(projected)))
    }

    /// Plain SGD: theta -= lr * adjoint for every trainable parameter.
    pub fn apply_sgd_step(&mut self, binding: &ParamBinding, adjoints: &[Matrix], lr: f64) {
        let mut slot = 0;
        for layer in self.layers_mut() {
            for m in [&mut layer.weight, &mut layer.bias] {
                if binding.trainable[slot] {
                    let grad = &adjoints[binding.ids[slot]];
                    for (p, &g) in m.data_mut().iter_mut().zip(grad.data()) {
                        *p -= lr * g;
                    }
                }
                slot += 1;
            }
        }
    }

    fn payload_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.parameter_count() * 8);
        for layer in self.layers() {
            for m in [&layer.weight, &layer.bias] {
                for v in m.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        bytes
    }
}

/// Tape ids for every parameter matrix, in declared layer order
/// (per layer: weight, then bias).
pub struct ParamBinding {
    pub ids: Vec<NodeId>,
    pub trainable: Vec<bool>,
}

fn linear(
    tape: &mut Tape,
    binding: &ParamBinding,
    layer_index: usize,
    x: NodeId,
) -> Result<NodeId, ModelError> {
    let w = binding.ids[layer_index * 2];
    let b = binding.ids[layer_index * 2 + 1];
    let xw = tape.matmul(x, w)?;
    Ok(tape.add_row_vec(xw, b)?)
}

/// Frozen deep copy of a model; produces distillation targets.
#[derive(Clone, Debug)]
pub struct TeacherSnapshot {
    state: ModelState,
}

/// Captures the current parameters; later updates to `state` do not affect
/// the snapshot.
pub fn snapshot_teacher(state: &ModelState) -> TeacherSnapshot {
    TeacherSnapshot {
        state: state.clone(),
    }
}

impl TeacherSnapshot {
    pub fn forward(
        &self,
        inputs: &Matrix,
        scope: ForwardScope,
    ) -> Result<(Matrix, Option<Matrix>), ModelError> {
        self.state.forward(inputs, scope)
    }

    pub fn config(&self) -> &ModelConfig {
        self.state.config()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub model_config: ModelConfig,
    pub session_id: usize,
    pub sha256: String,
}

/// Manifest plus raw little-endian f64 payload in declared layer order.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub payload: Vec<u8>,
    pub path: PathBuf,
}

/// Writes `<manifest json>\n<payload>`; the manifest hash covers the payload.
pub fn save_checkpoint(
    state: &ModelState,
    session_id: usize,
    path: &Path,
) -> Result<Checkpoint, ModelError> {
    let payload = state.payload_bytes();
    let manifest = CheckpointManifest {
        schema_version: state.schema_version,
        model_config: state.config.clone(),
        session_id,
        sha256: hex_digest(&payload),
    };
    let header = serde_json::to_string(&manifest)
        .map_err(|e| ModelError::Format(format!("manifest encode: {e}")))?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(header.as_bytes())?;
    file.write_all(b"\n")?;
    file.write_all(&payload)?;
    file.sync_all()?;
    Ok(Checkpoint {
        manifest,
        payload,
        path: path.to_path_buf(),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState, ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ModelError::Format("missing manifest line".into()))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| ModelError::Format(format!("manifest decode: {e}")))?;
    if manifest.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(ModelError::SchemaMismatch {
            found: manifest.schema_version,
            expected: CHECKPOINT_SCHEMA_VERSION,
        });
    }
    let payload = &bytes[newline + 1..];
    if hex_digest(payload) != manifest.sha256 {
        return Err(ModelError::HashMismatch);
    }

    let config = manifest.model_config;
    config.validate()?;
    let shapes = config.layer_shapes();
    let expected: usize = shapes.iter().map(|(i, o)| (i * o + o) * 8).sum();
    if payload.len() != expected {
        return Err(ModelError::Format(format!(
            "payload holds {} bytes, config needs {expected}",
            payload.len()
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut layers = Vec::new();
    for (fan_in, fan_out) in &shapes {
        let w: Vec<f64> = values.by_ref().take(fan_in * fan_out).collect();
        let b: Vec<f64> = values.by_ref().take(*fan_out).collect();
        layers.push(LinearLayer {
            weight: Matrix::from_vec(*fan_in, *fan_out, w)
                .map_err(|e| ModelError::Format(e.to_string()))?,
            bias: Matrix::from_vec(1, *fan_out, b)
                .map_err(|e| ModelError::Format(e.to_string()))?,
        });
    }
    let head = layers.split_off(config.encoder_dims.len());
    let init_seed = config.seed;
    Ok(ModelState {
        config,
        encoder: layers,
        head,
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        init_seed,
    })
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
