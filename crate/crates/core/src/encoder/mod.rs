//! A small bidirectional transformer encoder.
//!
//! The encoder is a stack of pre-norm blocks (layer norm → multi-head
//! self-attention → residual, layer norm → GELU feed-forward → residual)
//! followed by a final layer norm, mean pooling and L2 normalization.
//! Position information enters in one of two ways:
//!
//! * [`PositionMode::Absolute`]: a learned table row is added to each token
//!   embedding before the first block.
//! * [`PositionMode::Rotary`]: per-head query and key vectors are rotated at
//!   every layer, so attention logits only see relative positions.
//!
//! All arithmetic is `f64` and every weight comes from a seeded ChaCha
//! stream, so equal configurations produce bit-identical models.

mod backward;
mod encode;
mod forward;
pub mod rope;
mod table;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tensor::Matrix;
use crate::tokenizer::DEFAULT_VOCAB_SIZE;
use crate::tuner::TuneMode;

pub use backward::{backward, GradientRequest, ModelGrads};
pub use encode::{encode, PreparedEncoder};
pub(crate) use backward::pool_backward;
#[cfg(test)]
pub(crate) use forward::softmax_in_place;
pub use forward::{pool_and_normalize, EmbeddingVector, ForwardTrace, PositionAssignment, TableRef};
pub use rope::{apply_rope, attention_score, RoPEFrequencies, DEFAULT_ROPE_BASE};
pub use table::PositionEmbeddingMatrix;

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    Absolute,
    Rotary,
}

impl std::fmt::Display for PositionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PositionMode::Absolute => "absolute",
            PositionMode::Rotary => "rotary",
        })
    }
}

impl std::str::FromStr for PositionMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "absolute" | "ape" => Ok(PositionMode::Absolute),
            "rotary" | "rope" => Ok(PositionMode::Rotary),
            other => Err(config_err(format!("unknown position mode `{other}`"))),
        }
    }
}

/// Hyper-parameters of the toy encoder. The feed-forward activation is the
/// tanh approximation of GELU; layer norms use `LAYER_NORM_EPS`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    #[serde(default = "default_ffn_multiplier")]
    pub ffn_multiplier: usize,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    pub original_context: usize,
    pub position_mode: PositionMode,
    #[serde(default)]
    pub init_seed: u64,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
}

fn default_ffn_multiplier() -> usize {
    4
}

fn default_vocab_size() -> usize {
    DEFAULT_VOCAB_SIZE
}

fn default_rope_base() -> f64 {
    DEFAULT_ROPE_BASE
}

impl ModelConfig {
    pub fn new(
        hidden_size: usize,
        n_layers: usize,
        n_heads: usize,
        original_context: usize,
        position_mode: PositionMode,
    ) -> Self {
        Self {
            hidden_size,
            n_layers,
            n_heads,
            ffn_multiplier: default_ffn_multiplier(),
            vocab_size: DEFAULT_VOCAB_SIZE,
            original_context,
            position_mode,
            init_seed: 0,
            rope_base: DEFAULT_ROPE_BASE,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn with_vocab_size(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.n_heads.max(1)
    }

    pub fn ffn_size(&self) -> usize {
        self.hidden_size * self.ffn_multiplier
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.hidden_size;
        if d == 0 || d % 2 != 0 {
            return Err(config_err(format!(
                "hidden_size must be a positive even integer, got {d}"
            )));
        }
        if self.n_layers == 0 {
            return Err(config_err("n_layers must be at least 1"));
        }
        if self.n_heads == 0 || d % self.n_heads != 0 {
            return Err(config_err(format!(
                "n_heads ({}) must divide hidden_size ({d})",
                self.n_heads
            )));
        }
        if self.head_dim() % 2 != 0 {
            return Err(config_err(format!(
                "per-head dimension {} must be even",
                self.head_dim()
            )));
        }
        if self.ffn_multiplier == 0 {
            return Err(config_err("ffn_multiplier must be positive"));
        }
        if self.vocab_size == 0 {
            return Err(config_err("vocab_size must be positive"));
        }
        if self.original_context == 0 {
            return Err(config_err("original_context must be at least 1"));
        }
        if !(self.rope_base > 1.0) {
            return Err(config_err("rope_base must be > 1"));
        }
        Ok(())
    }
}

/// Weights of one pre-norm transformer block. Also reused as the gradient
/// accumulator for the same block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl LayerWeights {
    fn init<R: rand::Rng>(d: usize, ffn: usize, bound: f64, rng: &mut R) -> Self {
        Self {
            ln1_gain: vec![1.0; d],
            ln1_bias: vec![0.0; d],
            wq: Matrix::uniform(d, d, bound, rng),
            bq: vec![0.0; d],
            wk: Matrix::uniform(d, d, bound, rng),
            bk: vec![0.0; d],
            wv: Matrix::uniform(d, d, bound, rng),
            bv: vec![0.0; d],
            wo: Matrix::uniform(d, d, bound, rng),
            bo: vec![0.0; d],
            ln2_gain: vec![1.0; d],
            ln2_bias: vec![0.0; d],
            w1: Matrix::uniform(d, ffn, bound, rng),
            b1: vec![0.0; ffn],
            w2: Matrix::uniform(ffn, d, bound, rng),
            b2: vec![0.0; d],
        }
    }

    pub(crate) fn zeros(d: usize, ffn: usize) -> Self {
        Self {
            ln1_gain: vec![0.0; d],
            ln1_bias: vec![0.0; d],
            wq: Matrix::zeros(d, d),
            bq: vec![0.0; d],
            wk: Matrix::zeros(d, d),
            bk: vec![0.0; d],
            wv: Matrix::zeros(d, d),
            bv: vec![0.0; d],
            wo: Matrix::zeros(d, d),
            bo: vec![0.0; d],
            ln2_gain: vec![0.0; d],
            ln2_bias: vec![0.0; d],
            w1: Matrix::zeros(d, ffn),
            b1: vec![0.0; ffn],
            w2: Matrix::zeros(ffn, d),
            b2: vec![0.0; d],
        }
    }

    pub const TENSOR_NAMES: [&'static str; 16] = [
        "ln1_gain", "ln1_bias", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln2_gain",
        "ln2_bias", "w1", "b1", "w2", "b2",
    ];

    pub fn tensors(&self) -> [&[f64]; 16] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            self.wq.data(),
            &self.bq,
            self.wk.data(),
            &self.bk,
            self.wv.data(),
            &self.bv,
            self.wo.data(),
            &self.bo,
            &self.ln2_gain,
            &self.ln2_bias,
            self.w1.data(),
            &self.b1,
            self.w2.data(),
            &self.b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            self.wq.data_mut(),
            &mut self.bq,
            self.wk.data_mut(),
            &mut self.bk,
            self.wv.data_mut(),
            &mut self.bv,
            self.wo.data_mut(),
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            self.w1.data_mut(),
            &mut self.b1,
            self.w2.data_mut(),
            &mut self.b2,
        ]
    }
}

/// An extended absolute position table produced by further tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedTable {
    pub mode: TuneMode,
    pub target_context: usize,
    pub table: PositionEmbeddingMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) config: ModelConfig,
    pub(crate) token_embedding: Matrix,
    pub(crate) position_table: Option<PositionEmbeddingMatrix>,
    pub(crate) extended: Option<ExtendedTable>,
    pub(crate) layers: Vec<LayerWeights>,
    pub(crate) final_gain: Vec<f64>,
    pub(crate) final_bias: Vec<f64>,
    pub(crate) rope: Option<RoPEFrequencies>,
}

/// Builds a model with weights drawn uniformly from `[-1/√d, 1/√d]`.
///
/// Matrices, token embeddings and position rows are random; layer-norm gains
/// start at one and every bias at zero.
pub fn init_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let d = config.hidden_size;
    let bound = 1.0 / (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);

    let token_embedding = Matrix::uniform(config.vocab_size, d, bound, &mut rng);
    let position_table = match config.position_mode {
        PositionMode::Absolute => Some(PositionEmbeddingMatrix::frozen(Matrix::uniform(
            config.original_context,
            d,
            bound,
            &mut rng,
        ))),
        PositionMode::Rotary => None,
    };
    let layers = (0..config.n_layers)
        .map(|_| LayerWeights::init(d, config.ffn_size(), bound, &mut rng))
        .collect();
    let rope = match config.position_mode {
        PositionMode::Rotary => Some(RoPEFrequencies::new(config.head_dim(), config.rope_base)?),
        PositionMode::Absolute => None,
    };

    Ok(Model {
        config: config.clone(),
        token_embedding,
        position_table,
        extended: None,
        layers,
        final_gain: vec![1.0; d],
        final_bias: vec![0.0; d],
        rope,
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn original_context(&self) -> usize {
        self.config.original_context
    }

    pub fn position_mode(&self) -> PositionMode {
        self.config.position_mode
    }

    /// The original position table `E_o` (absolute mode only).
    pub fn position_table(&self) -> Option<&PositionEmbeddingMatrix> {
        self.position_table.as_ref()
    }

    pub fn extended_table(&self) -> Option<&ExtendedTable> {
        self.extended.as_ref()
    }

    pub fn install_extended_table(&mut self, table: ExtendedTable) {
        self.extended = Some(table);
    }

    /// Standard rotary frequencies of the model (rotary mode only).
    pub fn rope_frequencies(&self) -> Option<&RoPEFrequencies> {
        self.rope.as_ref()
    }

    pub fn token_embedding(&self) -> &Matrix {
        &self.token_embedding
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    /// Every parameter tensor except the extended position table, with a
    /// stable name. Used by checkpoints and immutability checks.
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> =
            vec![("token_embedding".into(), self.token_embedding.data())];
        if let Some(t) = &self.position_table {
            out.push(("position_table".into(), t.matrix().data()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, data) in LayerWeights::TENSOR_NAMES.iter().zip(layer.tensors()) {
                out.push((format!("layers.{l}.{name}"), data));
            }
        }
        out.push(("final_gain".into(), &self.final_gain));
        out.push(("final_bias".into(), &self.final_bias));
        out
    }

    pub(crate) fn named_tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> =
            vec![("token_embedding".into(), self.token_embedding.data_mut())];
        if let Some(t) = &mut self.position_table {
            out.push(("position_table".into(), t.matrix_mut().data_mut()));
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (name, data) in LayerWeights::TENSOR_NAMES.iter().zip(layer.tensors_mut()) {
                out.push((format!("layers.{l}.{name}"), data));
            }
        }
        out.push(("final_gain".into(), &mut self.final_gain));
        out.push(("final_bias".into(), &mut self.final_bias));
        out
    }

    /// FNV-1a over the bit patterns of every tensor returned by
    /// [`Model::named_tensors`].
    pub fn weights_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, data) in self.named_tensors() {
            for b in name.bytes() {
                h = (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3);
            }
            for x in data {
                for b in x.to_bits().to_le_bytes() {
                    h = (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3);
                }
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::new(32, 2, 4, 16, PositionMode::Absolute)
            .with_seed(7)
            .with_vocab_size(500);
        let a = init_model(&cfg).unwrap();
        let b = init_model(&cfg).unwrap();
        assert_eq!(a.weights_checksum(), b.weights_checksum());
        assert_eq!(a, b);
        let c = init_model(&cfg.clone().with_seed(8)).unwrap();
        assert_ne!(a.weights_checksum(), c.weights_checksum());
    }

    #[test]
    fn indivisible_heads_rejected() {
        let cfg = ModelConfig::new(33, 1, 4, 16, PositionMode::Rotary);
        assert!(matches!(init_model(&cfg), Err(Error::Config(_))));
        // d/n_heads odd
        let cfg = ModelConfig::new(12, 1, 4, 16, PositionMode::Rotary);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn head_dim_arithmetic() {
        let cfg = ModelConfig::new(64, 1, 4, 16, PositionMode::Rotary);
        cfg.validate().unwrap();
        assert_eq!(cfg.head_dim(), 16);
    }

    #[test]
    fn weights_respect_bound() {
        let cfg = ModelConfig::new(16, 1, 2, 8, PositionMode::Absolute).with_vocab_size(64);
        let m = init_model(&cfg).unwrap();
        let bound = 0.25;
        for (_, data) in m.named_tensors() {
            assert!(data.iter().all(|x| x.abs() <= bound || *x == 1.0));
        }
    }
}
