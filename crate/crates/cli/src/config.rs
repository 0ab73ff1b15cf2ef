//! Experiment configuration: a flat `key = value` text file with `#` comments.
//!
//! Every knob has a default; a missing file or empty string yields the default
//! experiment. The master seed derives one sub-seed per pipeline stage by
//! label, so adding stages never disturbs existing ones.

use std::collections::BTreeMap;
use std::path::Path;

use lenprobe::corpus::{CorpusConfig, PromptKind, SplitRatios};
use lenprobe::intervene::PositionScope;
use lenprobe::model::{DecodeConfig, DecodeStrategy, ModelConfig, TapPoint};
use lenprobe::rng::derive_seed;
use lenprobe::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Pretrained,
    Finetuned,
}

impl ModelChoice {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "pretrained" => Ok(ModelChoice::Pretrained),
            "finetuned" => Ok(ModelChoice::Finetuned),
            other => Err(Error::Config(format!("unknown model choice `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Pretrained => "pretrained",
            ModelChoice::Finetuned => "finetuned",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub threads: usize,

    pub corpus_n: usize,
    pub corpus_len_min: usize,
    pub corpus_len_max: usize,
    pub corpus_content_prob: f64,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,

    pub model_n_layers: usize,
    pub model_d_model: usize,
    pub model_n_heads: usize,
    pub model_d_ffn: usize,
    pub model_max_context: usize,

    pub train_epochs: usize,
    pub train_batch: usize,
    pub train_lr: f32,
    pub finetune_epochs: usize,
    pub finetune_kind: PromptKind,

    pub collect_kind: PromptKind,
    pub collect_model: ModelChoice,
    pub collect_n_prompts: usize,
    /// Empty means every layer.
    pub collect_layers: Vec<u16>,
    /// Empty means all four taps.
    pub collect_taps: Vec<TapPoint>,

    pub decode_strategy: String,
    pub decode_beam_width: usize,
    pub decode_topk: usize,
    pub decode_temperature: f32,
    pub decode_max_new_tokens: usize,

    pub probe_n_runs: usize,
    pub probe_hidden: usize,
    pub probe_dropout: f32,
    pub probe_lr: f32,
    pub probe_max_epochs: usize,

    pub rank_layer: u16,
    pub rank_tap: TapPoint,
    pub rank_k: usize,
    pub rank_m: usize,

    pub sweep_scales: Vec<f32>,
    pub sweep_scope: PositionScope,
    pub sweep_n_prompts: usize,
    pub sweep_model: ModelChoice,

    pub eval_kind: PromptKind,
    pub eval_n_prompts: usize,
    pub eval_model: ModelChoice,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            threads: 1,
            corpus_n: 8000,
            corpus_len_min: 8,
            corpus_len_max: 32,
            corpus_content_prob: 0.45,
            split_train: 0.8,
            split_val: 0.1,
            split_test: 0.1,
            model_n_layers: 6,
            model_d_model: 128,
            model_n_heads: 4,
            model_d_ffn: 512,
            model_max_context: 128,
            train_epochs: 12,
            train_batch: 16,
            train_lr: 1.5e-3,
            finetune_epochs: 3,
            finetune_kind: PromptKind::Priming,
            collect_kind: PromptKind::Priming,
            collect_model: ModelChoice::Pretrained,
            collect_n_prompts: 300,
            collect_layers: Vec::new(),
            collect_taps: Vec::new(),
            decode_strategy: "greedy".into(),
            decode_beam_width: 3,
            decode_topk: 10,
            decode_temperature: 1.0,
            decode_max_new_tokens: 40,
            probe_n_runs: 5,
            probe_hidden: 100,
            probe_dropout: 0.1,
            probe_lr: 1e-3,
            probe_max_epochs: 1000,
            rank_layer: 2,
            rank_tap: TapPoint::AttnOut,
            rank_k: 10,
            rank_m: 30,
            sweep_scales: vec![-10.0, -5.0, -2.0, 1.0, 2.0, 5.0, 10.0],
            sweep_scope: PositionScope::AllGenerated,
            sweep_n_prompts: 100,
            sweep_model: ModelChoice::Pretrained,
            eval_kind: PromptKind::Priming,
            eval_n_prompts: 200,
            eval_model: ModelChoice::Pretrained,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            "corpus.n_examples" => self.corpus_n = num(key, value)?,
            "corpus.len_min" => self.corpus_len_min = num(key, value)?,
            "corpus.len_max" => self.corpus_len_max = num(key, value)?,
            "corpus.content_prob" => self.corpus_content_prob = num(key, value)?,
            "split.train" => self.split_train = num(key, value)?,
            "split.val" => self.split_val = num(key, value)?,
            "split.test" => self.split_test = num(key, value)?,
            "model.n_layers" => self.model_n_layers = num(key, value)?,
            "model.d_model" => self.model_d_model = num(key, value)?,
            "model.n_heads" => self.model_n_heads = num(key, value)?,
            "model.d_ffn" => self.model_d_ffn = num(key, value)?,
            "model.max_context" => self.model_max_context = num(key, value)?,
            "train.epochs" => self.train_epochs = num(key, value)?,
            "train.batch" => self.train_batch = num(key, value)?,
            "train.lr" => self.train_lr = num(key, value)?,
            "finetune.epochs" => self.finetune_epochs = num(key, value)?,
            "finetune.kind" => self.finetune_kind = PromptKind::from_name(value)?,
            "collect.kind" => self.collect_kind = PromptKind::from_name(value)?,
            "collect.model" => self.collect_model = ModelChoice::from_name(value)?,
            "collect.n_prompts" => self.collect_n_prompts = num(key, value)?,
            "collect.layers" => {
                self.collect_layers = if value == "all" {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|t| num("collect.layers", t.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "collect.taps" => {
                self.collect_taps = if value == "all" {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|t| TapPoint::from_name(t.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "decode.strategy" => {
                if !["greedy", "beam", "topk"].contains(&value) {
                    return Err(Error::Config(format!("unknown decode strategy `{value}`")));
                }
                self.decode_strategy = value.into();
            }
            "decode.beam_width" => self.decode_beam_width = num(key, value)?,
            "decode.topk" => self.decode_topk = num(key, value)?,
            "decode.temperature" => self.decode_temperature = num(key, value)?,
            "decode.max_new_tokens" => self.decode_max_new_tokens = num(key, value)?,
            "probe.n_runs" => self.probe_n_runs = num(key, value)?,
            "probe.hidden" => self.probe_hidden = num(key, value)?,
            "probe.dropout" => self.probe_dropout = num(key, value)?,
            "probe.lr" => self.probe_lr = num(key, value)?,
            "probe.max_epochs" => self.probe_max_epochs = num(key, value)?,
            "rank.layer" => self.rank_layer = num(key, value)?,
            "rank.tap" => self.rank_tap = TapPoint::from_name(value)?,
            "rank.k" => self.rank_k = num(key, value)?,
            "rank.m" => self.rank_m = num(key, value)?,
            "sweep.scales" => {
                self.sweep_scales = value
                    .split(',')
                    .map(|t| num("sweep.scales", t.trim()))
                    .collect::<Result<_>>()?
            }
            "sweep.scope" => self.sweep_scope = PositionScope::from_name(value)?,
            "sweep.n_prompts" => self.sweep_n_prompts = num(key, value)?,
            "sweep.model" => self.sweep_model = ModelChoice::from_name(value)?,
            "eval.kind" => self.eval_kind = PromptKind::from_name(value)?,
            "eval.n_prompts" => self.eval_n_prompts = num(key, value)?,
            "eval.model" => self.eval_model = ModelChoice::from_name(value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.decode_config()?.validate()?;
        if self.probe_n_runs == 0 {
            return Err(Error::Config("probe.n_runs must be at least 1".into()));
        }
        if self.rank_layer == 0 || self.rank_layer as usize > self.model_n_layers {
            return Err(Error::Config(format!(
                "rank.layer {} outside 1..={}",
                self.rank_layer, self.model_n_layers
            )));
        }
        Ok(())
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            n_examples: self.corpus_n,
            len_range: (self.corpus_len_min, self.corpus_len_max),
            content_prob: self.corpus_content_prob,
            seed: derive_seed(self.seed, "corpus"),
        }
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios { train: self.split_train, val: self.split_val, test: self.split_test }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_layers: self.model_n_layers,
            d_model: self.model_d_model,
            n_heads: self.model_n_heads,
            d_ffn: self.model_d_ffn,
            max_context: self.model_max_context,
            vocab_size: lenprobe::Vocab::standard().size(),
            seed: derive_seed(self.seed, "model-init"),
        }
    }

    pub fn decode_config(&self) -> Result<DecodeConfig> {
        let strategy = match self.decode_strategy.as_str() {
            "greedy" => DecodeStrategy::Greedy,
            "beam" => DecodeStrategy::Beam { width: self.decode_beam_width },
            "topk" => DecodeStrategy::TopK {
                k: self.decode_topk,
                temperature: self.decode_temperature,
                seed: derive_seed(self.seed, "decode"),
            },
            other => return Err(Error::Config(format!("unknown decode strategy `{other}`"))),
        };
        Ok(DecodeConfig { strategy, max_new_tokens: self.decode_max_new_tokens })
    }

    pub fn collect_layers(&self) -> Vec<u16> {
        if self.collect_layers.is_empty() {
            (1..=self.model_n_layers as u16).collect()
        } else {
            self.collect_layers.clone()
        }
    }

    pub fn collect_taps(&self) -> Vec<TapPoint> {
        if self.collect_taps.is_empty() {
            TapPoint::ALL.to_vec()
        } else {
            self.collect_taps.clone()
        }
    }

    /// Flat key→value view recorded into manifests.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("corpus.n_examples", self.corpus_n.to_string());
        put("corpus.len_min", self.corpus_len_min.to_string());
        put("corpus.len_max", self.corpus_len_max.to_string());
        put("corpus.content_prob", self.corpus_content_prob.to_string());
        put("split.train", self.split_train.to_string());
        put("split.val", self.split_val.to_string());
        put("split.test", self.split_test.to_string());
        put("model.n_layers", self.model_n_layers.to_string());
        put("model.d_model", self.model_d_model.to_string());
        put("model.n_heads", self.model_n_heads.to_string());
        put("model.d_ffn", self.model_d_ffn.to_string());
        put("model.max_context", self.model_max_context.to_string());
        put("train.epochs", self.train_epochs.to_string());
        put("train.batch", self.train_batch.to_string());
        put("train.lr", self.train_lr.to_string());
        put("finetune.epochs", self.finetune_epochs.to_string());
        put("finetune.kind", self.finetune_kind.name().to_string());
        put("collect.kind", self.collect_kind.name().to_string());
        put("collect.model", self.collect_model.name().to_string());
        put("collect.n_prompts", self.collect_n_prompts.to_string());
        put(
            "collect.layers",
            self.collect_layers().iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","),
        );
        put(
            "collect.taps",
            self.collect_taps().iter().map(|t| t.name().to_string()).collect::<Vec<_>>().join(","),
        );
        put("decode.strategy", self.decode_strategy.clone());
        put("decode.beam_width", self.decode_beam_width.to_string());
        put("decode.topk", self.decode_topk.to_string());
        put("decode.temperature", self.decode_temperature.to_string());
        put("decode.max_new_tokens", self.decode_max_new_tokens.to_string());
        put("probe.n_runs", self.probe_n_runs.to_string());
        put("probe.hidden", self.probe_hidden.to_string());
        put("probe.dropout", self.probe_dropout.to_string());
        put("probe.lr", self.probe_lr.to_string());
        put("probe.max_epochs", self.probe_max_epochs.to_string());
        put("rank.layer", self.rank_layer.to_string());
        put("rank.tap", self.rank_tap.name().to_string());
        put("rank.k", self.rank_k.to_string());
        put("rank.m", self.rank_m.to_string());
        put(
            "sweep.scales",
            self.sweep_scales.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        );
        put("sweep.scope", self.sweep_scope.name().to_string());
        put("sweep.n_prompts", self.sweep_n_prompts.to_string());
        put("sweep.model", self.sweep_model.name().to_string());
        put("eval.kind", self.eval_kind.name().to_string());
        put("eval.n_prompts", self.eval_n_prompts.to_string());
        put("eval.model", self.eval_model.name().to_string());
        m
    }
}
