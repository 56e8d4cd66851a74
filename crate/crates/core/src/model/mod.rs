//! A small trainable cross-encoder: pre-norm transformer stack over the
//! joint `[CLS] doc1 [SEP] doc2 [SEP]` sequence, CLS readout, configurable
//! regression head, and exact manual backpropagation.
//!
//! Parameters live in a fixed tensor order defined by [`tensor_schema`], so
//! the optimizer, finite-difference checks and the checkpoint format all
//! walk the same layout. All arithmetic runs in f64, but stored values are
//! kept f32-representable (init and every optimizer step round through
//! f32); the checkpoint stores raw f32, so save/load/forward reproduces the
//! in-memory model bit for bit.

mod net;

pub use net::{Prediction, Tape, PREDICTION_DIMS};

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Magic bytes opening every checkpoint file.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NSIM";
/// Current checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Smallest positional capacity able to hold a full encoded pair.
pub const MIN_POSITIONS: usize = 515;

/// Hyperparameters of the reference cross-encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub dropout_p: f64,
    pub max_positions: usize,
    /// Regression head depth: 1, 2 or 3 linear layers.
    pub head_layers: usize,
    /// Insert GELU between adjacent head layers.
    pub head_activation: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 32_768,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 2,
            ff_dim: 128,
            dropout_p: 0.1,
            max_positions: 520,
            head_layers: 1,
            head_activation: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.vocab_size <= crate::tokenize::FIRST_CONTENT_ID as usize {
            return fail(format!("vocab_size {} too small", self.vocab_size));
        }
        if self.embed_dim == 0 || self.num_heads == 0 {
            return fail("embed_dim and num_heads must be positive".into());
        }
        if self.embed_dim % self.num_heads != 0 {
            return fail(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.num_layers == 0 {
            return fail("num_layers must be positive".into());
        }
        if self.ff_dim == 0 {
            return fail("ff_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.max_positions < MIN_POSITIONS {
            return fail(format!(
                "max_positions {} below the {MIN_POSITIONS} needed for a full pair",
                self.max_positions
            ));
        }
        if !(1..=3).contains(&self.head_layers) {
            return fail(format!("head_layers {} outside 1..=3", self.head_layers));
        }
        Ok(())
    }

    /// `(in, out)` shapes of the head's linear layers. The widths scale the
    /// reference ladders down to `embed_dim` with a 7-way output.
    pub fn head_dims(&self) -> Vec<(usize, usize)> {
        let d = self.embed_dim;
        let out = PREDICTION_DIMS;
        match self.head_layers {
            1 => vec![(d, out)],
            2 => vec![(d, 32), (32, out)],
            _ => vec![(d, 48), (48, 16), (16, out)],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence length {len} exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("cannot run the encoder on an empty sequence")]
    EmptySequence,
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a valid checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Shape and weight-decay eligibility of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Weight matrices decay; biases and layer-norm parameters do not.
    pub decay: bool,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
}

// Tensor indices within one encoder layer (16 tensors per layer).
pub(crate) const TENSORS_PER_LAYER: usize = 16;
pub(crate) const LN1_GAIN: usize = 0;
pub(crate) const LN1_BIAS: usize = 1;
pub(crate) const W_Q: usize = 2;
pub(crate) const B_Q: usize = 3;
pub(crate) const W_K: usize = 4;
pub(crate) const B_K: usize = 5;
pub(crate) const W_V: usize = 6;
pub(crate) const B_V: usize = 7;
pub(crate) const W_O: usize = 8;
pub(crate) const B_O: usize = 9;
pub(crate) const LN2_GAIN: usize = 10;
pub(crate) const LN2_BIAS: usize = 11;
pub(crate) const W_FF1: usize = 12;
pub(crate) const B_FF1: usize = 13;
pub(crate) const W_FF2: usize = 14;
pub(crate) const B_FF2: usize = 15;

pub(crate) const TOK_EMB: usize = 0;
pub(crate) const POS_EMB: usize = 1;

pub(crate) fn layer_base(layer: usize) -> usize {
    2 + layer * TENSORS_PER_LAYER
}

pub(crate) fn final_norm_base(config: &ModelConfig) -> usize {
    layer_base(config.num_layers)
}

pub(crate) fn head_base(config: &ModelConfig) -> usize {
    final_norm_base(config) + 2
}

/// The complete tensor layout for a config, in serialization order.
pub fn tensor_schema(config: &ModelConfig) -> Vec<TensorSpec> {
    let d = config.embed_dim;
    let ff = config.ff_dim;
    let t = |name: String, rows, cols, decay| TensorSpec {
        name,
        rows,
        cols,
        decay,
    };
    let mut schema = vec![
        t("tok_emb".into(), config.vocab_size, d, true),
        t("pos_emb".into(), config.max_positions, d, true),
    ];
    for l in 0..config.num_layers {
        schema.push(t(format!("layer{l}.ln1.gain"), 1, d, false));
        schema.push(t(format!("layer{l}.ln1.bias"), 1, d, false));
        schema.push(t(format!("layer{l}.attn.wq"), d, d, true));
        schema.push(t(format!("layer{l}.attn.bq"), 1, d, false));
        schema.push(t(format!("layer{l}.attn.wk"), d, d, true));
        schema.push(t(format!("layer{l}.attn.bk"), 1, d, false));
        schema.push(t(format!("layer{l}.attn.wv"), d, d, true));
        schema.push(t(format!("layer{l}.attn.bv"), 1, d, false));
        schema.push(t(format!("layer{l}.attn.wo"), d, d, true));
        schema.push(t(format!("layer{l}.attn.bo"), 1, d, false));
        schema.push(t(format!("layer{l}.ln2.gain"), 1, d, false));
        schema.push(t(format!("layer{l}.ln2.bias"), 1, d, false));
        schema.push(t(format!("layer{l}.ffn.w1"), d, ff, true));
        schema.push(t(format!("layer{l}.ffn.b1"), 1, ff, false));
        schema.push(t(format!("layer{l}.ffn.w2"), ff, d, true));
        schema.push(t(format!("layer{l}.ffn.b2"), 1, d, false));
    }
    schema.push(t("final_norm.gain".into(), 1, d, false));
    schema.push(t("final_norm.bias".into(), 1, d, false));
    for (i, (din, dout)) in config.head_dims().into_iter().enumerate() {
        schema.push(t(format!("head{i}.w"), din, dout, true));
        schema.push(t(format!("head{i}.b"), 1, dout, false));
    }
    schema
}

/// All trainable tensors of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    /// Tensors in [`tensor_schema`] order.
    pub tensors: Vec<Array2<f64>>,
}

/// Gradients mirror [`ModelParameters`] tensor for tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_for(params: &ModelParameters) -> Self {
        Self {
            tensors: params
                .tensors
                .iter()
                .map(|t| Array2::zeros(t.raw_dim()))
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(0.0);
        }
    }

    /// Scales every gradient in place.
    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }
}

fn uniform_open01(rng: &mut ChaCha8Rng) -> f64 {
    // 53-bit mantissa in [0, 1)
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// One Box-Muller draw; implemented inline so initialization stays stable
/// regardless of dependency versions.
fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let u1 = 1.0 - uniform_open01(rng); // (0, 1]
    let u2 = uniform_open01(rng);
    std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Initializes a model deterministically from `seed`: weights i.i.d.
/// normal(0, 0.02), layer-norm gains 1, all biases 0.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParameters, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for spec in tensor_schema(config) {
        let tensor = if spec.decay {
            Array2::from_shape_simple_fn((spec.rows, spec.cols), || {
                normal(&mut rng, 0.02) as f32 as f64
            })
        } else if spec.name.ends_with(".gain") {
            Array2::ones((spec.rows, spec.cols))
        } else {
            Array2::zeros((spec.rows, spec.cols))
        };
        tensors.push(tensor);
    }
    Ok(ModelParameters {
        config: config.clone(),
        tensors,
    })
}

impl ModelParameters {
    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Rounds every value through f32. Called after each optimizer step so
    /// the in-memory model always matches its f32 checkpoint exactly.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v as f32 as f64);
        }
    }

    /// Writes the versioned binary checkpoint: magic, format version,
    /// config JSON, then all tensors as little-endian f32 in schema order.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let io_err = |source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config_json =
            serde_json::to_vec(&self.config).expect("config serialization cannot fail");
        out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&config_json);
        out.extend_from_slice(&(self.num_params() as u64).to_le_bytes());
        for tensor in &self.tensors {
            for &v in tensor.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mut file = fs::File::create(path).map_err(io_err)?;
        file.write_all(&out).map_err(io_err)?;
        file.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let io_err = |source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut bytes = Vec::new();
        fs::File::open(path)
            .map_err(io_err)?
            .read_to_end(&mut bytes)
            .map_err(io_err)?;
        let bad = |msg: &str| ModelError::BadCheckpoint(msg.to_string());

        let mut cursor = 0usize;
        let mut take = |n: usize| -> Result<&[u8], ModelError> {
            if cursor + n > bytes.len() {
                return Err(bad("file truncated"));
            }
            let slice = &bytes[cursor..cursor + n];
            cursor += n;
            Ok(slice)
        };

        if take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::BadCheckpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let config_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let config: ModelConfig = serde_json::from_slice(take(config_len)?)
            .map_err(|e| ModelError::BadCheckpoint(format!("bad config json: {e}")))?;
        config.validate()?;
        let declared = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;

        let schema = tensor_schema(&config);
        let expected: usize = schema.iter().map(TensorSpec::len).sum();
        if declared != expected {
            return Err(ModelError::BadCheckpoint(format!(
                "declared {declared} values, config implies {expected}"
            )));
        }
        let mut tensors = Vec::with_capacity(schema.len());
        for spec in &schema {
            let raw = take(spec.len() * 4)?;
            let values: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            tensors.push(
                Array2::from_shape_vec((spec.rows, spec.cols), values)
                    .expect("schema shape matches value count"),
            );
        }
        if cursor != bytes.len() {
            return Err(bad("trailing bytes after tensors"));
        }
        Ok(ModelParameters { config, tensors })
    }
}
