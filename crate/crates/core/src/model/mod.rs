//! Decoder-only transformer with per-layer tap points.
//!
//! The block is pre-normalization with a ReLU feed-forward and learned
//! positional embeddings. Four activations are readable (and two of them
//! steerable) at every layer:
//!
//! ```text
//! attn_out      = MH(LN(x))                  multi-head attention output
//! attn_residual = x + attn_out               residual stream after attention
//! mlp_out       = ReLU(LN(attn_residual) W1 + b1) W2 + b2
//! mlp_residual  = attn_residual + mlp_out    block output
//! ```
//!
//! All floating-point products run through the fixed-order kernels in
//! [`crate::math`], so incremental decoding reproduces whole-sequence forward
//! passes bit for bit.

mod checkpoint;
mod decode;
pub(crate) mod forward;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use decode::{
    argmax_lowest_id, generate, CaptureRequest, DecodeConfig, DecodeStrategy, GenerationOutput,
    StepCapture,
};
pub use forward::{forward, forward_with_intervention, ActiveIntervention, TapBundle};
pub use train::{
    kind_for, sequence_loss_and_grad, token_exact_accuracy, train, SplitSel, TrainConfig,
    TrainPhase, TrainReport,
};

use crate::error::{Error, Result};
use crate::math::Mat;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub max_context: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 6,
            d_model: 128,
            n_heads: 4,
            d_ffn: 512,
            max_context: 128,
            vocab_size: crate::vocab::Vocab::standard().size(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers < 3 {
            return Err(Error::Config(format!(
                "n_layers must be at least 3 (first, second, and last layers must be distinct), got {}",
                self.n_layers
            )));
        }
        if self.d_model == 0 || self.d_ffn == 0 || self.vocab_size == 0 || self.max_context < 2 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// The four per-layer activation read points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum TapPoint {
    AttnOut,
    AttnResidual,
    MlpOut,
    MlpResidual,
}

impl TapPoint {
    pub const ALL: [TapPoint; 4] =
        [TapPoint::AttnOut, TapPoint::AttnResidual, TapPoint::MlpOut, TapPoint::MlpResidual];

    pub fn index(self) -> usize {
        match self {
            TapPoint::AttnOut => 0,
            TapPoint::AttnResidual => 1,
            TapPoint::MlpOut => 2,
            TapPoint::MlpResidual => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TapPoint::AttnOut => "attn_out",
            TapPoint::AttnResidual => "attn_residual",
            TapPoint::MlpOut => "mlp_out",
            TapPoint::MlpResidual => "mlp_residual",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "attn_out" => Ok(TapPoint::AttnOut),
            "attn_residual" => Ok(TapPoint::AttnResidual),
            "mlp_out" => Ok(TapPoint::MlpOut),
            "mlp_residual" => Ok(TapPoint::MlpResidual),
            other => Err(Error::Config(format!("unknown tap point `{other}`"))),
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        TapPoint::ALL.get(i).copied()
    }
}

/// One named tensor in the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed tensor layout for a configuration. Order is load-bearing: weight
/// initialization, checkpoints, and checksums all follow it.
pub fn tensor_specs(config: &ModelConfig) -> Vec<TensorSpec> {
    let d = config.d_model;
    let f = config.d_ffn;
    let mut specs = Vec::new();
    let mut offset = 0usize;
    let mut push = |name: String, rows: usize, cols: usize| {
        specs.push(TensorSpec { name, rows, cols, offset });
        offset += rows * cols;
    };
    push("tok_emb".into(), config.vocab_size, d);
    push("pos_emb".into(), config.max_context, d);
    for l in 0..config.n_layers {
        push(format!("layer{l}.ln1.g"), 1, d);
        push(format!("layer{l}.ln1.b"), 1, d);
        push(format!("layer{l}.attn.wq"), d, d);
        push(format!("layer{l}.attn.bq"), 1, d);
        push(format!("layer{l}.attn.wk"), d, d);
        push(format!("layer{l}.attn.bk"), 1, d);
        push(format!("layer{l}.attn.wv"), d, d);
        push(format!("layer{l}.attn.bv"), 1, d);
        push(format!("layer{l}.attn.wo"), d, d);
        push(format!("layer{l}.attn.bo"), 1, d);
        push(format!("layer{l}.ln2.g"), 1, d);
        push(format!("layer{l}.ln2.b"), 1, d);
        push(format!("layer{l}.ffn.w1"), d, f);
        push(format!("layer{l}.ffn.b1"), 1, f);
        push(format!("layer{l}.ffn.w2"), f, d);
        push(format!("layer{l}.ffn.b2"), 1, d);
    }
    push("lnf.g".into(), 1, d);
    push("lnf.b".into(), 1, d);
    push("head.w".into(), d, config.vocab_size);
    specs
}

/// Per-layer parameter views over the flat buffer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub(crate) params: Vec<f32>,
    pub(crate) specs: Vec<TensorSpec>,
    pub(crate) tok_emb: usize,
    pub(crate) pos_emb: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) lnf_g: usize,
    pub(crate) lnf_b: usize,
    pub(crate) head_w: usize,
}

impl Model {
    /// Builds a model with weights drawn deterministically from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let specs = tensor_specs(&config);
        let total: usize = specs.iter().map(|s| s.len()).sum();
        let mut model = Self::from_flat(config, vec![0.0; total], specs)?;
        model.init_weights();
        Ok(model)
    }

    pub(crate) fn from_flat(
        config: ModelConfig,
        params: Vec<f32>,
        specs: Vec<TensorSpec>,
    ) -> Result<Self> {
        let find = |name: &str| -> usize {
            specs
                .iter()
                .find(|s| s.name == name)
                .unwrap_or_else(|| panic!("tensor `{name}` missing"))
                .offset
        };
        let layers = (0..config.n_layers)
            .map(|l| LayerOffsets {
                ln1_g: find(&format!("layer{l}.ln1.g")),
                ln1_b: find(&format!("layer{l}.ln1.b")),
                wq: find(&format!("layer{l}.attn.wq")),
                bq: find(&format!("layer{l}.attn.bq")),
                wk: find(&format!("layer{l}.attn.wk")),
                bk: find(&format!("layer{l}.attn.bk")),
                wv: find(&format!("layer{l}.attn.wv")),
                bv: find(&format!("layer{l}.attn.bv")),
                wo: find(&format!("layer{l}.attn.wo")),
                bo: find(&format!("layer{l}.attn.bo")),
                ln2_g: find(&format!("layer{l}.ln2.g")),
                ln2_b: find(&format!("layer{l}.ln2.b")),
                w1: find(&format!("layer{l}.ffn.w1")),
                b1: find(&format!("layer{l}.ffn.b1")),
                w2: find(&format!("layer{l}.ffn.w2")),
                b2: find(&format!("layer{l}.ffn.b2")),
            })
            .collect();
        Ok(Self {
            tok_emb: find("tok_emb"),
            pos_emb: find("pos_emb"),
            lnf_g: find("lnf.g"),
            lnf_b: find("lnf.b"),
            head_w: find("head.w"),
            config,
            params,
            specs,
            layers,
        })
    }

    fn init_weights(&mut self) {
        let mut rng = Rng::new(self.config.seed);
        let residual_scale = 1.0 / (2.0 * self.config.n_layers as f32).sqrt();
        // Iterate specs in order so initialization is a pure function of the seed.
        for spec in self.specs.clone() {
            let std = if spec.name.ends_with(".g") {
                // layer-norm gains start at one
                self.params[spec.offset..spec.offset + spec.len()].fill(1.0);
                continue;
            } else if spec.name.ends_with(".b")
                || spec.name.contains(".bq")
                || spec.name.contains(".bk")
                || spec.name.contains(".bv")
                || spec.name.contains(".bo")
                || spec.name.contains(".b1")
                || spec.name.contains(".b2")
            {
                continue; // biases stay zero
            } else if spec.name.contains(".wo") || spec.name.contains(".w2") {
                0.02 * residual_scale
            } else {
                0.02
            };
            for v in &mut self.params[spec.offset..spec.offset + spec.len()] {
                *v = rng.normal_f32(0.0, std);
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// FNV hash over the raw little-endian bytes of every parameter, in
    /// tensor-table order.
    pub fn weight_checksum(&self) -> u64 {
        let mut hasher = crate::hashing::Hasher::new();
        for v in &self.params {
            hasher.update(&v.to_le_bytes());
        }
        hasher.finish()
    }

    #[inline]
    pub(crate) fn slice(&self, offset: usize, len: usize) -> &[f32] {
        &self.params[offset..offset + len]
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        let spec = self.specs.iter().find(|s| s.name == name)?;
        Some(self.slice(spec.offset, spec.len()))
    }

    /// A matrix copy of a named tensor (for inspection and tests).
    pub fn tensor_mat(&self, name: &str) -> Option<Mat> {
        let spec = self.specs.iter().find(|s| s.name == name)?;
        Some(Mat::from_vec(spec.rows, spec.cols, self.slice(spec.offset, spec.len()).to_vec()))
    }
}

/// Creates a model, checking the configuration against a corpus vocabulary.
pub fn init_model(config: ModelConfig, corpus_vocab_size: usize) -> Result<Model> {
    if config.vocab_size != corpus_vocab_size {
        return Err(Error::Config(format!(
            "model vocab_size {} does not match corpus vocabulary {}",
            config.vocab_size, corpus_vocab_size
        )));
    }
    Model::new(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_checksum() {
        let cfg = ModelConfig { seed: 5, ..Default::default() };
        let a = Model::new(cfg).unwrap();
        let b = Model::new(cfg).unwrap();
        assert_eq!(a.weight_checksum(), b.weight_checksum());
        let c = Model::new(ModelConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.weight_checksum(), c.weight_checksum());
    }

    #[test]
    fn indivisible_heads_rejected() {
        let cfg = ModelConfig { d_model: 130, n_heads: 4, ..Default::default() };
        assert!(matches!(Model::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn too_few_layers_rejected() {
        let cfg = ModelConfig { n_layers: 2, ..Default::default() };
        assert!(matches!(Model::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn default_parameter_count_matches_closed_form_and_budget() {
        let cfg = ModelConfig::default();
        let model = Model::new(cfg).unwrap();
        let (v, d, f, l, c) =
            (cfg.vocab_size, cfg.d_model, cfg.d_ffn, cfg.n_layers, cfg.max_context);
        // embeddings + L blocks (two norms, four attn projections with biases,
        // two ffn projections with biases) + final norm + untied head
        let per_layer = 2 * d + (4 * d * d + 4 * d) + 2 * d + (d * f + f) + (f * d + d);
        let expected = v * d + c * d + l * per_layer + 2 * d + d * v;
        assert_eq!(model.param_count(), expected);
        assert!(model.param_count() < 2_000_000, "count {}", model.param_count());
    }

    #[test]
    fn vocab_mismatch_rejected() {
        let cfg = ModelConfig::default();
        assert!(matches!(init_model(cfg, 100), Err(Error::Config(_))));
        assert!(init_model(cfg, cfg.vocab_size).is_ok());
    }
}
