//! Autoregressive decoding: greedy, beam, and seeded top-k sampling.
//!
//! Decoding processes one position at a time against per-layer key/value
//! caches. Cached entries are written after any intervention has scaled the
//! current position's tap, so later steps attend to the modified history.

use crate::error::{Error, Result};
use crate::math::mm_ab;
use crate::rng::Rng;
use crate::vocab::{TokenId, TokenSequence, Vocab};

use super::forward::{add_bias, attend_position, layer_norm_row, ActiveIntervention};
use super::{Model, TapPoint};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum DecodeStrategy {
    Greedy,
    Beam { width: usize },
    TopK { k: usize, temperature: f32, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecodeConfig {
    pub strategy: DecodeStrategy,
    pub max_new_tokens: usize,
}

impl DecodeConfig {
    pub fn greedy(max_new_tokens: usize) -> Self {
        Self { strategy: DecodeStrategy::Greedy, max_new_tokens }
    }

    pub fn validate(&self) -> Result<()> {
        match self.strategy {
            DecodeStrategy::Greedy => {}
            DecodeStrategy::Beam { width } => {
                if width == 0 {
                    return Err(Error::Config("beam width must be at least 1".into()));
                }
            }
            DecodeStrategy::TopK { k, temperature, .. } => {
                if k == 0 {
                    return Err(Error::Config("top-k k must be at least 1".into()));
                }
                if !(temperature > 0.0) {
                    return Err(Error::Config("top-k temperature must be positive".into()));
                }
            }
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        let s = match self.strategy {
            DecodeStrategy::Greedy => "greedy".to_string(),
            DecodeStrategy::Beam { width } => format!("beam{width}"),
            DecodeStrategy::TopK { k, temperature, seed } => {
                format!("topk{k}_t{temperature}_s{seed}")
            }
        };
        format!("{s}_max{}", self.max_new_tokens)
    }

    /// The same configuration with the sampling seed decorrelated by example
    /// id. Greedy and beam are unchanged. Without this, every prompt in a
    /// batch would consume an identical random stream and sample in lockstep.
    pub fn for_example(&self, example_id: u32) -> DecodeConfig {
        match self.strategy {
            DecodeStrategy::TopK { k, temperature, seed } => DecodeConfig {
                strategy: DecodeStrategy::TopK {
                    k,
                    temperature,
                    seed: crate::rng::derive_seed(seed, &format!("example{example_id}")),
                },
                max_new_tokens: self.max_new_tokens,
            },
            _ => *self,
        }
    }
}

/// Which (layer, tap) activations to record at each generation step.
#[derive(Debug, Clone)]
pub struct CaptureRequest {
    pub layers: Vec<u16>,
    pub taps: Vec<TapPoint>,
}

/// Tap activations recorded at the forward pass that produced one token.
#[derive(Debug, Clone)]
pub struct StepCapture {
    pub timestep: u32,
    pub taps: Vec<(u16, TapPoint, Vec<f32>)>,
}

#[derive(Debug, Clone)]
pub struct GenerationOutput {
    pub prompt: TokenSequence,
    pub generated: TokenSequence,
    /// One entry per generated token when capture was requested.
    pub steps: Vec<StepCapture>,
    /// How many times an intervention fired during this generation.
    pub intervention_calls: usize,
}

// ---------------------------------------------------------------------------
// Incremental state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct DecodeState {
    len: usize,
    /// Per layer, rows of projected keys/values, position-major.
    k_cache: Vec<Vec<f32>>,
    v_cache: Vec<Vec<f32>>,
}

impl DecodeState {
    fn new(model: &Model) -> Self {
        let n = model.config.n_layers;
        Self { len: 0, k_cache: vec![Vec::new(); n], v_cache: vec![Vec::new(); n] }
    }
}

/// Runs one position through the model, appending to the caches.
///
/// Returns logits for the position when `want_logits` is set, plus any
/// requested tap captures.
fn step(
    model: &Model,
    state: &mut DecodeState,
    token: TokenId,
    pos: usize,
    intervention: Option<&ActiveIntervention>,
    capture: Option<&CaptureRequest>,
    want_logits: bool,
) -> (Option<Vec<f32>>, Vec<(u16, TapPoint, Vec<f32>)>) {
    let cfg = &model.config;
    let d = cfg.d_model;
    let f = cfg.d_ffn;
    let n_heads = cfg.n_heads;
    let head_dim = cfg.head_dim();
    debug_assert_eq!(state.len, pos);

    let mut captured = Vec::new();
    let mut grab = |layer: usize, tap: TapPoint, vec: &[f32]| {
        if let Some(req) = capture {
            if req.layers.contains(&(layer as u16)) && req.taps.contains(&tap) {
                captured.push((layer as u16, tap, vec.to_vec()));
            }
        }
    };

    // embedding
    let te = model.slice(model.tok_emb + token as usize * d, d);
    let pe = model.slice(model.pos_emb + pos * d, d);
    let mut x = vec![0.0f32; d];
    for i in 0..d {
        x[i] = te[i] + pe[i];
    }

    let mut scores = vec![0.0f32; pos + 1];
    let mut n1 = vec![0.0f32; d];
    let mut q = vec![0.0f32; d];
    let mut kv = vec![0.0f32; d];
    let mut att = vec![0.0f32; d];
    let mut mh = vec![0.0f32; d];
    let mut n2 = vec![0.0f32; d];
    let mut h = vec![0.0f32; f];
    let mut ffn = vec![0.0f32; d];

    for (li, lo) in model.layers.iter().enumerate() {
        let layer_1 = li + 1;
        layer_norm_row(&x, model.slice(lo.ln1_g, d), model.slice(lo.ln1_b, d), &mut n1);

        mm_ab(&mut q, &n1, model.slice(lo.wq, d * d), 1, d, d);
        add_bias(&mut q, model.slice(lo.bq, d), 1, d);
        mm_ab(&mut kv, &n1, model.slice(lo.wk, d * d), 1, d, d);
        add_bias(&mut kv, model.slice(lo.bk, d), 1, d);
        state.k_cache[li].extend_from_slice(&kv);
        mm_ab(&mut kv, &n1, model.slice(lo.wv, d * d), 1, d, d);
        add_bias(&mut kv, model.slice(lo.bv, d), 1, d);
        state.v_cache[li].extend_from_slice(&kv);

        attend_position(
            &q,
            &state.k_cache[li],
            &state.v_cache[li],
            pos,
            n_heads,
            head_dim,
            &mut scores,
            &mut att,
        );
        mm_ab(&mut mh, &att, model.slice(lo.wo, d * d), 1, d, d);
        add_bias(&mut mh, model.slice(lo.bo, d), 1, d);
        if let Some(iv) = intervention {
            iv.apply(layer_1, TapPoint::AttnOut, pos, &mut mh);
        }
        grab(layer_1, TapPoint::AttnOut, &mh);

        for i in 0..d {
            mh[i] += x[i]; // mh now holds the attention residual
        }
        grab(layer_1, TapPoint::AttnResidual, &mh);

        layer_norm_row(&mh, model.slice(lo.ln2_g, d), model.slice(lo.ln2_b, d), &mut n2);
        mm_ab(&mut h, &n2, model.slice(lo.w1, d * f), 1, d, f);
        add_bias(&mut h, model.slice(lo.b1, f), 1, f);
        for v_ in h.iter_mut() {
            if *v_ < 0.0 {
                *v_ = 0.0;
            }
        }
        mm_ab(&mut ffn, &h, model.slice(lo.w2, f * d), 1, f, d);
        add_bias(&mut ffn, model.slice(lo.b2, d), 1, d);
        if let Some(iv) = intervention {
            iv.apply(layer_1, TapPoint::MlpOut, pos, &mut ffn);
        }
        grab(layer_1, TapPoint::MlpOut, &ffn);

        for i in 0..d {
            x[i] = mh[i] + ffn[i];
        }
        grab(layer_1, TapPoint::MlpResidual, &x);
    }
    state.len += 1;

    let logits = want_logits.then(|| {
        let mut nf = vec![0.0f32; d];
        layer_norm_row(&x, model.slice(model.lnf_g, d), model.slice(model.lnf_b, d), &mut nf);
        let mut logits = vec![0.0f32; cfg.vocab_size];
        mm_ab(&mut logits, &nf, model.slice(model.head_w, d * cfg.vocab_size), 1, d, cfg.vocab_size);
        logits
    });
    (logits, captured)
}

// ---------------------------------------------------------------------------
// Token selection
// ---------------------------------------------------------------------------

/// Argmax with ties broken toward the lowest token id.
pub fn argmax_lowest_id(logits: &[f32]) -> TokenId {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best as TokenId
}

fn log_softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut sum = 0.0f64;
    for &v in logits {
        sum += (v as f64 - max).exp();
    }
    let lse = max + sum.ln();
    logits.iter().map(|&v| v as f64 - lse).collect()
}

/// The `width` best next tokens by logit, ordered descending with ties broken
/// toward the lowest id.
fn top_tokens(logits: &[f32], width: usize) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = (0..logits.len() as TokenId).collect();
    ids.sort_by(|&a, &b| {
        logits[b as usize].total_cmp(&logits[a as usize]).then(a.cmp(&b))
    });
    ids.truncate(width);
    ids
}

fn topk_sample(logits: &[f32], k: usize, temperature: f32, rng: &mut Rng) -> TokenId {
    let candidates = top_tokens(logits, k.min(logits.len()));
    let scaled: Vec<f64> = candidates.iter().map(|&t| (logits[t as usize] / temperature) as f64).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.f64() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return candidates[i];
        }
    }
    *candidates.last().unwrap()
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Generates up to `cfg.max_new_tokens` tokens until EOS, with optional tap
/// capture and an optional unit-scaling intervention.
pub fn generate(
    model: &Model,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
    capture: Option<&CaptureRequest>,
    intervention: Option<&ActiveIntervention>,
) -> Result<GenerationOutput> {
    if prompt.is_empty() {
        return Err(Error::Data("empty prompt".into()));
    }
    if prompt.len() >= model.config.max_context {
        return Err(Error::ContextOverflow { len: prompt.len(), max: model.config.max_context });
    }
    for &t in prompt {
        if t as usize >= model.config.vocab_size {
            return Err(Error::Data(format!("prompt token {t} outside vocabulary")));
        }
    }
    let budget = cfg.max_new_tokens.min(model.config.max_context - prompt.len());
    let calls_before = intervention.map(|iv| iv.calls()).unwrap_or(0);
    let mut out = match cfg.strategy {
        DecodeStrategy::Greedy => {
            generate_single(model, prompt, budget, capture, intervention, |logits, _| {
                argmax_lowest_id(logits)
            })
        }
        DecodeStrategy::TopK { k, temperature, seed } => {
            let mut rng = Rng::new(seed);
            generate_single(model, prompt, budget, capture, intervention, move |logits, _| {
                topk_sample(logits, k, temperature, &mut rng)
            })
        }
        DecodeStrategy::Beam { width } => {
            generate_beam(model, prompt, budget, width, capture, intervention)
        }
    }?;
    out.intervention_calls = intervention.map(|iv| iv.calls() - calls_before).unwrap_or(0);
    Ok(out)
}

fn generate_single(
    model: &Model,
    prompt: &[TokenId],
    budget: usize,
    capture: Option<&CaptureRequest>,
    intervention: Option<&ActiveIntervention>,
    mut select: impl FnMut(&[f32], usize) -> TokenId,
) -> Result<GenerationOutput> {
    let mut output = GenerationOutput {
        prompt: prompt.to_vec(),
        generated: Vec::new(),
        steps: Vec::new(),
        intervention_calls: 0,
    };
    if budget == 0 {
        return Ok(output);
    }
    let mut state = DecodeState::new(model);
    for (p, &tok) in prompt.iter().enumerate().take(prompt.len() - 1) {
        step(model, &mut state, tok, p, intervention, None, false);
    }
    let (mut logits, taps) = step(
        model,
        &mut state,
        *prompt.last().unwrap(),
        prompt.len() - 1,
        intervention,
        capture,
        true,
    );
    if capture.is_some() {
        output.steps.push(StepCapture { timestep: 1, taps });
    }
    loop {
        let n = output.generated.len() + 1;
        let tok = select(logits.as_ref().unwrap(), n);
        output.generated.push(tok);
        if tok == Vocab::EOS || output.generated.len() >= budget {
            break;
        }
        let pos = prompt.len() - 1 + output.generated.len();
        let (l, taps) = step(model, &mut state, tok, pos, intervention, capture, true);
        logits = l;
        if capture.is_some() {
            output.steps.push(StepCapture { timestep: n as u32 + 1, taps });
        }
    }
    Ok(output)
}

struct Hypothesis {
    tokens: TokenSequence,
    state: DecodeState,
    logprob: f64,
    finished: bool,
    steps: Vec<StepCapture>,
}

/// Best-first ordering: higher log-probability, then shorter, then
/// lexicographically smaller token sequence. Fully deterministic.
fn better(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.logprob
        .total_cmp(&a.logprob)
        .then(a.tokens.len().cmp(&b.tokens.len()))
        .then(a.tokens.cmp(&b.tokens))
}

fn generate_beam(
    model: &Model,
    prompt: &[TokenId],
    budget: usize,
    width: usize,
    capture: Option<&CaptureRequest>,
    intervention: Option<&ActiveIntervention>,
) -> Result<GenerationOutput> {
    let mut output = GenerationOutput {
        prompt: prompt.to_vec(),
        generated: Vec::new(),
        steps: Vec::new(),
        intervention_calls: 0,
    };
    if budget == 0 {
        return Ok(output);
    }
    let mut state = DecodeState::new(model);
    for (p, &tok) in prompt.iter().enumerate().take(prompt.len() - 1) {
        step(model, &mut state, tok, p, intervention, None, false);
    }
    let (logits, taps) = step(
        model,
        &mut state,
        *prompt.last().unwrap(),
        prompt.len() - 1,
        intervention,
        capture,
        true,
    );
    let first_steps = if capture.is_some() {
        vec![StepCapture { timestep: 1, taps }]
    } else {
        Vec::new()
    };
    let logp = log_softmax_f64(logits.as_ref().unwrap());
    let mut hyps: Vec<Hypothesis> = top_tokens(logits.as_ref().unwrap(), width)
        .into_iter()
        .map(|tok| Hypothesis {
            tokens: vec![tok],
            state: state.clone(),
            logprob: logp[tok as usize],
            finished: tok == Vocab::EOS,
            steps: first_steps.clone(),
        })
        .collect();
    drop(state);

    while hyps.iter().any(|h| !h.finished && h.tokens.len() < budget) {
        let mut pool: Vec<Hypothesis> = Vec::new();
        for mut hyp in hyps {
            if hyp.finished || hyp.tokens.len() >= budget {
                pool.push(hyp);
                continue;
            }
            let n = hyp.tokens.len(); // producing token n+1
            let pos = prompt.len() - 1 + n;
            let (logits, taps) = step(
                model,
                &mut hyp.state,
                *hyp.tokens.last().unwrap(),
                pos,
                intervention,
                capture,
                true,
            );
            if capture.is_some() {
                hyp.steps.push(StepCapture { timestep: n as u32 + 1, taps });
            }
            let logits = logits.unwrap();
            let logp = log_softmax_f64(&logits);
            for tok in top_tokens(&logits, width) {
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok);
                pool.push(Hypothesis {
                    tokens,
                    state: hyp.state.clone(),
                    logprob: hyp.logprob + logp[tok as usize],
                    finished: tok == Vocab::EOS,
                    steps: hyp.steps.clone(),
                });
            }
        }
        pool.sort_by(better);
        pool.truncate(width);
        hyps = pool;
        if hyps.iter().all(|h| h.finished) {
            break;
        }
    }
    let winner = hyps
        .iter()
        .enumerate()
        .filter(|(_, h)| h.finished)
        .min_by(|(_, a), (_, b)| better(a, b))
        .or_else(|| hyps.iter().enumerate().min_by(|(_, a), (_, b)| better(a, b)))
        .map(|(i, _)| i)
        .expect("at least one hypothesis");
    let win = hyps.swap_remove(winner);
    output.generated = win.tokens;
    output.steps = win.steps;
    Ok(output)
}
