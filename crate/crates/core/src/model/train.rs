//! Teacher-forced training with a hand-written backward pass and Adam.
//!
//! The loss is next-token cross-entropy over the summary region only: prompt
//! positions are masked out, gold tokens and the terminating EOS count.

use crate::corpus::{render_training_sequence, Corpus, PromptKind};
use crate::error::{Error, Result};
use crate::math::{mm_abt, mm_atb_add};
use crate::rng::{derive_seed, Rng};
use crate::vocab::{TokenId, Vocab};

use super::forward::{forward_impl, ForwardCaches};
use super::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPhase {
    /// Mixed prompt kinds, emulating generic pretraining on the task family.
    Pretrain,
    /// A single prompt kind, emulating task-specific fine-tuning.
    FineTune(PromptKind),
}

/// Prompt kind used for an example under a training phase.
///
/// Pretraining cycles deterministically through the three kinds by example id,
/// so the mixture is balanced and reproducible.
pub fn kind_for(phase: TrainPhase, example_id: u32) -> PromptKind {
    match phase {
        TrainPhase::Pretrain => PromptKind::ALL[example_id as usize % 3],
        TrainPhase::FineTune(kind) => kind,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Peak learning rate; cosine-decays to a tenth of this over the run.
    pub lr: f32,
    pub phase: TrainPhase,
    pub seed: u64,
    pub grad_clip: f32,
    /// Worker threads for the per-sequence passes inside a batch. Gradients
    /// are reduced in a fixed order, so every thread count produces the same
    /// weights bit for bit.
    pub threads: usize,
    /// Print one progress line per epoch to stderr.
    pub log_epochs: bool,
}

impl TrainConfig {
    pub fn new(phase: TrainPhase, epochs: usize, seed: u64) -> Self {
        Self { epochs, batch: 16, lr: 1e-3, phase, seed, grad_clip: 1.0, threads: 1, log_epochs: false }
    }
}

/// Cosine decay from the peak rate to a tenth of it across the whole run.
fn lr_at(base: f32, step: usize, total_steps: usize) -> f32 {
    let floor = 0.1 * base;
    if total_steps <= 1 {
        return base;
    }
    let progress = step as f32 / (total_steps - 1) as f32;
    floor + 0.5 * (base - floor) * (1.0 + (std::f32::consts::PI * progress).cos())
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean per-token loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSel {
    Train,
    Val,
    Test,
}

fn split_ids(corpus: &Corpus, sel: SplitSel) -> &[u32] {
    match sel {
        SplitSel::Train => &corpus.split.train,
        SplitSel::Val => &corpus.split.val,
        SplitSel::Test => &corpus.split.test,
    }
}

struct RenderedSeq {
    /// Input positions (the training sequence minus its last token).
    tokens: Vec<TokenId>,
    /// Target at each input position (the training sequence shifted by one).
    targets: Vec<TokenId>,
    /// First position whose target contributes to the loss.
    loss_from: usize,
}

fn render_split(
    corpus: &Corpus,
    vocab: &Vocab,
    sel: SplitSel,
    phase: TrainPhase,
) -> Result<Vec<RenderedSeq>> {
    let ids = split_ids(corpus, sel);
    if ids.is_empty() {
        return Err(Error::Data(format!("{sel:?} split is empty")));
    }
    ids.iter()
        .map(|&id| {
            let ex = &corpus.examples[id as usize];
            let (seq, prompt_len) = render_training_sequence(ex, kind_for(phase, id), vocab)?;
            Ok(RenderedSeq {
                tokens: seq[..seq.len() - 1].to_vec(),
                targets: seq[1..].to_vec(),
                loss_from: prompt_len - 1,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Adds the layer-norm backward for one row into `dx`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward_row(
    dy: &[f32],
    x: &[f32],
    mean: f32,
    rstd: f32,
    g: &[f32],
    dg: &mut [f32],
    db: &mut [f32],
    dx: &mut [f32],
) {
    let d = x.len();
    let mut m1 = 0.0f32; // mean of dxhat
    let mut m2 = 0.0f32; // mean of dxhat ⊙ xhat
    for i in 0..d {
        let xhat = (x[i] - mean) * rstd;
        let dxhat = dy[i] * g[i];
        dg[i] += dy[i] * xhat;
        db[i] += dy[i];
        m1 += dxhat;
        m2 += dxhat * xhat;
    }
    m1 /= d as f32;
    m2 /= d as f32;
    for i in 0..d {
        let xhat = (x[i] - mean) * rstd;
        let dxhat = dy[i] * g[i];
        dx[i] += rstd * (dxhat - m1 - xhat * m2);
    }
}

fn add_colsum(db: &mut [f32], dy: &[f32], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            db[c] += dy[r * cols + c];
        }
    }
}

/// Forward + backward for one sequence in teacher forcing.
///
/// Positions `t < loss_from` are masked out of the loss entirely; their target
/// entries are ignored. Gradients are scaled by `weight` and accumulated into
/// `grads` when provided. Returns the unweighted loss sum and the number of
/// positions that contributed.
pub fn sequence_loss_and_grad(
    model: &Model,
    tokens: &[TokenId],
    targets: &[TokenId],
    loss_from: usize,
    weight: f32,
    mut grads: Option<&mut [f32]>,
) -> Result<(f64, usize)> {
    if tokens.len() != targets.len() {
        return Err(Error::Data("tokens and targets must align".into()));
    }
    if loss_from >= tokens.len() {
        return Err(Error::Data("no loss positions in sequence".into()));
    }
    let out = forward_impl(model, tokens, None, false, grads.is_some())?;
    let len = tokens.len();
    let vsize = model.config.vocab_size;
    let n_pos = len - loss_from;

    // softmax + cross entropy, loss accumulated in f64
    let mut loss_sum = 0.0f64;
    let mut dlogits = vec![0.0f32; len * vsize];
    for t in loss_from..len {
        let row = &out.logits[t * vsize..(t + 1) * vsize];
        let target = targets[t] as usize;
        if target >= vsize {
            return Err(Error::Data(format!("target token {target} outside vocabulary")));
        }
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        let drow = &mut dlogits[t * vsize..(t + 1) * vsize];
        for i in 0..vsize {
            let e = (row[i] - max).exp();
            drow[i] = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for v in drow.iter_mut() {
            *v *= inv;
        }
        loss_sum -= (drow[target] as f64).max(1e-30).ln();
        drow[target] -= 1.0;
        for v in drow.iter_mut() {
            *v *= weight;
        }
    }

    let Some(grads) = grads.as_deref_mut() else {
        return Ok((loss_sum, n_pos));
    };
    let caches = out.caches.as_ref().expect("caches requested");
    backward(model, tokens, caches, &dlogits, grads);
    Ok((loss_sum, n_pos))
}

fn backward(
    model: &Model,
    tokens: &[TokenId],
    caches: &ForwardCaches,
    dlogits: &[f32],
    grads: &mut [f32],
) {
    let cfg = &model.config;
    let d = cfg.d_model;
    let f = cfg.d_ffn;
    let vsize = cfg.vocab_size;
    let len = tokens.len();
    let n_heads = cfg.n_heads;
    let head_dim = cfg.head_dim();
    let inv_sqrt = 1.0 / (head_dim as f32).sqrt();

    // head: logits = nf · Wh
    let head_spec = model.specs.iter().find(|s| s.name == "head.w").unwrap();
    mm_atb_add(
        &mut grads[head_spec.offset..head_spec.offset + d * vsize],
        &caches.nf,
        dlogits,
        len,
        d,
        vsize,
    );
    let mut dnf = vec![0.0f32; len * d];
    mm_abt(&mut dnf, dlogits, model.slice(model.head_w, d * vsize), len, vsize, d);

    // final layer norm
    let mut dx = vec![0.0f32; len * d];
    {
        let gf = model.slice(model.lnf_g, d).to_vec();
        let (dg_all, rest) = grads.split_at_mut(model.lnf_b);
        for p in 0..len {
            layer_norm_backward_row(
                &dnf[p * d..(p + 1) * d],
                &caches.x_final[p * d..(p + 1) * d],
                caches.lnf_mean[p],
                caches.lnf_rstd[p],
                &gf,
                &mut dg_all[model.lnf_g..model.lnf_g + d],
                &mut rest[..d],
                &mut dx[p * d..(p + 1) * d],
            );
        }
    }

    let mut ds_attn = vec![0.0f32; len * d];
    let mut scratch_ld = vec![0.0f32; len * d];
    let mut dhpre = vec![0.0f32; len * f];
    let mut dq = vec![0.0f32; len * d];
    let mut dk = vec![0.0f32; len * d];
    let mut dv = vec![0.0f32; len * d];
    let mut dprobs_row = vec![0.0f32; len];

    for (li, lo) in model.layers.iter().enumerate().rev() {
        let lc = &caches.layers[li];

        // block output: x_out = s_attn + ffn; dx holds d(x_out)
        // feed-forward branch
        let dffn = &dx;
        mm_atb_add(&mut grads[lo.w2..lo.w2 + f * d], &lc.h, dffn, len, f, d);
        add_colsum(&mut grads[lo.b2..lo.b2 + d], dffn, len, d);
        mm_abt(&mut dhpre, dffn, model.slice(lo.w2, f * d), len, d, f);
        for i in 0..len * f {
            if lc.h[i] <= 0.0 {
                dhpre[i] = 0.0;
            }
        }
        mm_atb_add(&mut grads[lo.w1..lo.w1 + d * f], &lc.n2, &dhpre, len, d, f);
        add_colsum(&mut grads[lo.b1..lo.b1 + f], &dhpre, len, f);
        mm_abt(&mut scratch_ld, &dhpre, model.slice(lo.w1, d * f), len, f, d); // dn2

        // ds_attn = dx (residual) + LN2 backward of dn2
        ds_attn.copy_from_slice(&dx);
        {
            let g2 = model.slice(lo.ln2_g, d).to_vec();
            for p in 0..len {
                let (before, after) = grads.split_at_mut(lo.ln2_b);
                layer_norm_backward_row(
                    &scratch_ld[p * d..(p + 1) * d],
                    &lc.s_attn[p * d..(p + 1) * d],
                    lc.ln2_mean[p],
                    lc.ln2_rstd[p],
                    &g2,
                    &mut before[lo.ln2_g..lo.ln2_g + d],
                    &mut after[..d],
                    &mut ds_attn[p * d..(p + 1) * d],
                );
            }
        }

        // attention branch: s_attn = x_in + mh, mh = att · Wo + bo
        let dmh = &ds_attn;
        mm_atb_add(&mut grads[lo.wo..lo.wo + d * d], &lc.att, dmh, len, d, d);
        add_colsum(&mut grads[lo.bo..lo.bo + d], dmh, len, d);
        mm_abt(&mut scratch_ld, dmh, model.slice(lo.wo, d * d), len, d, d); // datt

        dq.fill(0.0);
        dk.fill(0.0);
        dv.fill(0.0);
        for hh in 0..n_heads {
            let hoff = hh * head_dim;
            let probs_h = &lc.probs[hh * len * len..(hh + 1) * len * len];
            for t in 0..len {
                let datt_t = &scratch_ld[t * d + hoff..t * d + hoff + head_dim];
                let probs_row = &probs_h[t * len..t * len + t + 1];
                let mut dot_sum = 0.0f32;
                for s in 0..=t {
                    let v_s = &lc.v[s * d + hoff..s * d + hoff + head_dim];
                    let dp = crate::math::dot(datt_t, v_s);
                    dprobs_row[s] = dp;
                    dot_sum += probs_row[s] * dp;
                    // dv += probs · datt
                    crate::math::axpy(
                        &mut dv[s * d + hoff..s * d + hoff + head_dim],
                        datt_t,
                        probs_row[s],
                    );
                }
                for s in 0..=t {
                    let dsc = probs_row[s] * (dprobs_row[s] - dot_sum) * inv_sqrt;
                    crate::math::axpy(
                        &mut dq[t * d + hoff..t * d + hoff + head_dim],
                        &lc.k[s * d + hoff..s * d + hoff + head_dim],
                        dsc,
                    );
                    crate::math::axpy(
                        &mut dk[s * d + hoff..s * d + hoff + head_dim],
                        &lc.q[t * d + hoff..t * d + hoff + head_dim],
                        dsc,
                    );
                }
            }
        }

        // projections back to the normalized stream
        mm_atb_add(&mut grads[lo.wq..lo.wq + d * d], &lc.n1, &dq, len, d, d);
        add_colsum(&mut grads[lo.bq..lo.bq + d], &dq, len, d);
        mm_atb_add(&mut grads[lo.wk..lo.wk + d * d], &lc.n1, &dk, len, d, d);
        add_colsum(&mut grads[lo.bk..lo.bk + d], &dk, len, d);
        mm_atb_add(&mut grads[lo.wv..lo.wv + d * d], &lc.n1, &dv, len, d, d);
        add_colsum(&mut grads[lo.bv..lo.bv + d], &dv, len, d);

        // dn1 = dq·Wqᵀ + dk·Wkᵀ + dv·Wvᵀ
        let mut dn1 = vec![0.0f32; len * d];
        mm_abt(&mut scratch_ld, &dq, model.slice(lo.wq, d * d), len, d, d);
        for i in 0..len * d {
            dn1[i] += scratch_ld[i];
        }
        mm_abt(&mut scratch_ld, &dk, model.slice(lo.wk, d * d), len, d, d);
        for i in 0..len * d {
            dn1[i] += scratch_ld[i];
        }
        mm_abt(&mut scratch_ld, &dv, model.slice(lo.wv, d * d), len, d, d);
        for i in 0..len * d {
            dn1[i] += scratch_ld[i];
        }

        // dx_in = ds_attn (residual) + LN1 backward of dn1
        dx.copy_from_slice(&ds_attn);
        {
            let g1 = model.slice(lo.ln1_g, d).to_vec();
            for p in 0..len {
                let (before, after) = grads.split_at_mut(lo.ln1_b);
                layer_norm_backward_row(
                    &dn1[p * d..(p + 1) * d],
                    &lc.x_in[p * d..(p + 1) * d],
                    lc.ln1_mean[p],
                    lc.ln1_rstd[p],
                    &g1,
                    &mut before[lo.ln1_g..lo.ln1_g + d],
                    &mut after[..d],
                    &mut dx[p * d..(p + 1) * d],
                );
            }
        }
    }

    // embeddings
    for (p, &tok) in tokens.iter().enumerate() {
        let drow = &dx[p * d..(p + 1) * d];
        crate::math::axpy(
            &mut grads[model.tok_emb + tok as usize * d..model.tok_emb + (tok as usize + 1) * d],
            drow,
            1.0,
        );
        crate::math::axpy(
            &mut grads[model.pos_emb + p * d..model.pos_emb + (p + 1) * d],
            drow,
            1.0,
        );
    }
}

// ---------------------------------------------------------------------------
// Optimizer and training loop
// ---------------------------------------------------------------------------

use crate::math::Adam;

fn clip_gradients(grads: &mut [f32], max_norm: f32) {
    if max_norm <= 0.0 {
        return;
    }
    let mut sq = 0.0f64;
    for &g in grads.iter() {
        sq += g as f64 * g as f64;
    }
    let norm = sq.sqrt() as f32;
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}

/// Trains `model` in place on the corpus train split. Single-threaded and
/// fully determined by `(model, corpus, config)`.
pub fn train(
    model: &mut Model,
    corpus: &Corpus,
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if model.config.vocab_size != vocab.size() {
        return Err(Error::Config(format!(
            "model vocab_size {} does not match corpus vocabulary {}",
            model.config.vocab_size,
            vocab.size()
        )));
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::Config("batch and epochs must be positive".into()));
    }
    let rendered = render_split(corpus, vocab, SplitSel::Train, cfg.phase)?;

    // batch sequences of similar length together to avoid padding entirely
    let mut order: Vec<usize> = (0..rendered.len()).collect();
    order.sort_by_key(|&i| (rendered[i].tokens.len(), i));
    let batches: Vec<Vec<usize>> = order.chunks(cfg.batch).map(|c| c.to_vec()).collect();

    let n_params = model.param_count();
    let mut adam = Adam::with_beta2(n_params, cfg.lr, 0.95);
    let mut grads = vec![0.0f32; n_params];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let total_steps = cfg.epochs * batches.len();
    let mut step_idx = 0usize;

    for epoch in 0..cfg.epochs {
        let mut batch_order: Vec<usize> = (0..batches.len()).collect();
        Rng::new(derive_seed(cfg.seed, &format!("epoch{epoch}"))).shuffle(&mut batch_order);

        let mut loss_sum = 0.0f64;
        let mut pos_sum = 0usize;
        for &bi in &batch_order {
            let batch = &batches[bi];
            let total_pos: usize =
                batch.iter().map(|&i| rendered[i].tokens.len() - rendered[i].loss_from).sum();
            let weight = 1.0 / total_pos as f32;
            // per-sequence gradients, folded left in sequence order: the
            // floating-point association is fixed for every thread count
            let model_ref = &*model;
            let rendered_ref = &rendered;
            let per_seq: Vec<Result<(Vec<f32>, f64, usize)>> =
                crate::par::run_indexed(batch.len(), cfg.threads, |bi_inner| {
                    let r = &rendered_ref[batch[bi_inner]];
                    let mut g = vec![0.0f32; n_params];
                    let (l, p) = sequence_loss_and_grad(
                        model_ref,
                        &r.tokens,
                        &r.targets,
                        r.loss_from,
                        weight,
                        Some(&mut g),
                    )?;
                    Ok((g, l, p))
                });
            grads.fill(0.0);
            for res in per_seq {
                let (g, l, p) = res?;
                for (acc, v) in grads.iter_mut().zip(g.iter()) {
                    *acc += *v;
                }
                loss_sum += l;
                pos_sum += p;
            }
            clip_gradients(&mut grads, cfg.grad_clip);
            adam.lr = lr_at(cfg.lr, step_idx, total_steps);
            step_idx += 1;
            adam.step(&mut model.params, &grads);
        }
        let epoch_loss = loss_sum / pos_sum as f64;
        if cfg.log_epochs {
            eprintln!("epoch {epoch}: loss {epoch_loss:.4}");
        }
        epoch_losses.push(epoch_loss);
    }
    Ok(TrainReport { epoch_losses })
}

/// Teacher-forced token-exact accuracy over the loss region of a split.
pub fn token_exact_accuracy(
    model: &Model,
    corpus: &Corpus,
    vocab: &Vocab,
    sel: SplitSel,
    phase: TrainPhase,
) -> Result<f64> {
    let rendered = render_split(corpus, vocab, sel, phase)?;
    let vsize = model.config.vocab_size;
    let mut correct = 0usize;
    let mut total = 0usize;
    for r in &rendered {
        let out = forward_impl(model, &r.tokens, None, false, false)?;
        for t in r.loss_from..r.tokens.len() {
            let row = &out.logits[t * vsize..(t + 1) * vsize];
            if super::decode::argmax_lowest_id(row) == r.targets[t] {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, split_corpus, CorpusConfig, SplitRatios};
    use crate::model::ModelConfig;

    fn tiny_model(seed: u64) -> Model {
        Model::new(ModelConfig {
            n_layers: 3,
            d_model: 16,
            n_heads: 2,
            d_ffn: 24,
            max_context: 64,
            vocab_size: Vocab::standard().size(),
            seed,
        })
        .unwrap()
    }

    fn loss_of(model: &Model, tokens: &[TokenId], targets: &[TokenId], loss_from: usize) -> f64 {
        let (l, n) = sequence_loss_and_grad(model, tokens, targets, loss_from, 0.0, None).unwrap();
        l / n as f64
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut model = tiny_model(31);
        let mut rng = Rng::new(101);
        let tokens: Vec<TokenId> =
            (0..14).map(|_| rng.below(model.config.vocab_size) as TokenId).collect();
        let targets: Vec<TokenId> =
            (0..14).map(|_| rng.below(model.config.vocab_size) as TokenId).collect();
        let loss_from = 5;
        let n_pos = (tokens.len() - loss_from) as f32;

        let mut grads = vec![0.0f32; model.param_count()];
        sequence_loss_and_grad(&model, &tokens, &targets, loss_from, 1.0 / n_pos, Some(&mut grads))
            .unwrap();

        // directional derivative along a random unit vector
        let dir: Vec<f32> = (0..model.param_count()).map(|_| rng.normal_f32(0.0, 1.0)).collect();
        let norm = (dir.iter().map(|&x| (x as f64).powi(2)).sum::<f64>()).sqrt() as f32;
        let h = 1e-3f32;
        let base = model.params.clone();
        for (p, d) in model.params.iter_mut().zip(dir.iter()) {
            *p += h * d / norm;
        }
        let plus = loss_of(&model, &tokens, &targets, loss_from);
        model.params.copy_from_slice(&base);
        for (p, d) in model.params.iter_mut().zip(dir.iter()) {
            *p -= h * d / norm;
        }
        let minus = loss_of(&model, &tokens, &targets, loss_from);
        model.params.copy_from_slice(&base);

        let numeric = (plus - minus) / (2.0 * h as f64);
        let analytic: f64 =
            grads.iter().zip(dir.iter()).map(|(&g, &d)| g as f64 * d as f64 / norm as f64).sum();
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        assert!(rel < 2e-2, "directional derivative mismatch: numeric {numeric} analytic {analytic}");

        // spot-check a few individual coordinates against central differences
        let picks = [
            0usize,                       // tok_emb
            model.pos_emb + 3,            // pos_emb
            model.layers[1].wq + 37,      // attention projection
            model.layers[2].w1 + 11,      // ffn
            model.layers[0].ln2_g + 2,    // norm gain
            model.head_w + 101,           // head
        ];
        for &idx in &picks {
            let h = 2e-3f32;
            let orig = model.params[idx];
            model.params[idx] = orig + h;
            let plus = loss_of(&model, &tokens, &targets, loss_from);
            model.params[idx] = orig - h;
            let minus = loss_of(&model, &tokens, &targets, loss_from);
            model.params[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h as f64);
            let analytic = grads[idx] as f64;
            let denom = numeric.abs().max(analytic.abs());
            if denom > 1e-4 {
                let rel = (numeric - analytic).abs() / denom;
                assert!(rel < 5e-2, "param {idx}: numeric {numeric} analytic {analytic}");
            }
        }
    }

    #[test]
    fn prompt_region_targets_are_masked_from_loss() {
        let model = tiny_model(32);
        let mut rng = Rng::new(7);
        let tokens: Vec<TokenId> = (0..12).map(|_| rng.below(40) as TokenId).collect();
        let mut targets: Vec<TokenId> = (0..12).map(|_| rng.below(40) as TokenId).collect();
        let loss_from = 6;
        let base = loss_of(&model, &tokens, &targets, loss_from);
        for t in targets.iter_mut().take(loss_from) {
            *t = (*t + 13) % 40;
        }
        let perturbed = loss_of(&model, &tokens, &targets, loss_from);
        assert_eq!(base, perturbed);
    }

    fn small_corpus(n: usize, seed: u64) -> Corpus {
        let mut corpus = generate_corpus(&CorpusConfig {
            n_examples: n,
            len_range: (8, 12),
            content_prob: 0.45,
            seed,
        })
        .unwrap();
        split_corpus(&mut corpus, SplitRatios { train: 0.8, val: 0.1, test: 0.1 }, seed).unwrap();
        corpus
    }

    #[test]
    fn loss_decreases_over_training() {
        let vocab = Vocab::standard();
        let corpus = small_corpus(60, 5);
        let mut model = tiny_model(33);
        let cfg = TrainConfig { epochs: 5, batch: 8, lr: 1e-3, phase: TrainPhase::Pretrain, seed: 1, grad_clip: 1.0, threads: 1, log_epochs: false };
        let report = train(&mut model, &corpus, &vocab, &cfg).unwrap();
        assert!(report.epoch_losses[0] > *report.epoch_losses.last().unwrap());
    }

    #[test]
    fn parallel_training_is_bitwise_identical_to_serial() {
        let vocab = Vocab::standard();
        let corpus = small_corpus(40, 6);
        let mut serial = tiny_model(35);
        let mut parallel = tiny_model(35);
        let base = TrainConfig { epochs: 2, batch: 8, lr: 1e-3, phase: TrainPhase::Pretrain, seed: 2, grad_clip: 1.0, threads: 1, log_epochs: false };
        let r1 = train(&mut serial, &corpus, &vocab, &base).unwrap();
        let r2 = train(&mut parallel, &corpus, &vocab, &TrainConfig { threads: 4, ..base }).unwrap();
        assert_eq!(r1.epoch_losses, r2.epoch_losses);
        assert_eq!(serial.weight_checksum(), parallel.weight_checksum());
    }

    #[test]
    fn empty_train_split_is_an_error() {
        let vocab = Vocab::standard();
        let corpus = generate_corpus(&CorpusConfig {
            n_examples: 10,
            len_range: (8, 10),
            content_prob: 0.5,
            seed: 2,
        })
        .unwrap(); // no split assigned
        let mut model = tiny_model(34);
        let cfg = TrainConfig::new(TrainPhase::Pretrain, 1, 0);
        assert!(matches!(train(&mut model, &corpus, &vocab, &cfg), Err(Error::Data(_))));
    }

    #[test]
    fn pretrain_mixes_kinds_finetune_uses_one() {
        let counts: Vec<PromptKind> =
            (0..9u32).map(|id| kind_for(TrainPhase::Pretrain, id)).collect();
        for kind in PromptKind::ALL {
            assert_eq!(counts.iter().filter(|&&k| k == kind).count(), 3);
        }
        for id in 0..20u32 {
            assert_eq!(kind_for(TrainPhase::FineTune(PromptKind::Priming), id), PromptKind::Priming);
        }
    }
}
