//! Evaluation metrics: compression ratio, ΔCR, Rouge-L, and aggregation.
//!
//! Length counts follow one convention everywhere: EOS and other control
//! tokens never count; content, filler, and number tokens do.

use crate::error::{Error, Result};
use crate::math::{mean, stderr};
use crate::model::GenerationOutput;
use crate::vocab::{TokenId, TokenSequence, Vocab};

/// summary tokens / source tokens
pub fn compression_ratio(summary_len: usize, source_len: usize) -> Result<f64> {
    if source_len == 0 {
        return Err(Error::Data("compression ratio of an empty source".into()));
    }
    Ok(summary_len as f64 / source_len as f64)
}

/// Generated compression ratio minus gold compression ratio. Positive means
/// the generation ran long, negative short.
pub fn delta_cr(gen_len: usize, gold_len: usize, source_len: usize) -> Result<f64> {
    Ok(compression_ratio(gen_len, source_len)? - compression_ratio(gold_len, source_len)?)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl RougeL {
    pub const ZERO: RougeL = RougeL { precision: 0.0, recall: 0.0, f: 0.0 };
}

fn lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let n = b.len();
    let mut prev = vec![0usize; n + 1];
    let mut cur = vec![0usize; n + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[n]
}

/// LCS-based Rouge-L with β = 1: R = LCS/|reference|, P = LCS/|candidate|,
/// F = 2PR/(P+R). Empty candidate or reference scores zero by convention.
pub fn rouge_l(candidate: &[TokenId], reference: &[TokenId]) -> RougeL {
    if candidate.is_empty() || reference.is_empty() {
        return RougeL::ZERO;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeL { precision, recall, f }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let mx = mean(&rx);
    let my = mean(&ry);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..rx.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExampleEval {
    pub example_id: u32,
    pub cr_gen: f64,
    pub cr_gold: f64,
    pub delta_cr: f64,
    pub rouge: RougeL,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub stderr: f64,
}

fn aggregate(xs: &[f64]) -> Aggregate {
    Aggregate { mean: mean(xs), stderr: stderr(xs) }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ExampleEval>,
    pub cr_gen: Aggregate,
    pub cr_gold: Aggregate,
    pub delta_cr: Aggregate,
    pub rouge_p: Aggregate,
    pub rouge_r: Aggregate,
    pub rouge_f: Aggregate,
    pub metadata: EvalMetadata,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct EvalMetadata {
    pub prompt_kind: String,
    pub decode: String,
    pub intervention: String,
}

/// Per-example metrics plus aggregates for aligned (output, gold, source) lists.
pub fn evaluate_run(
    outputs: &[GenerationOutput],
    golds: &[TokenSequence],
    sources: &[TokenSequence],
    example_ids: &[u32],
    vocab: &Vocab,
    metadata: EvalMetadata,
) -> Result<EvalReport> {
    if outputs.len() != golds.len() || golds.len() != sources.len() || sources.len() != example_ids.len()
    {
        return Err(Error::Data(format!(
            "misaligned evaluation inputs: {} outputs, {} golds, {} sources, {} ids",
            outputs.len(),
            golds.len(),
            sources.len(),
            example_ids.len()
        )));
    }
    let mut rows = Vec::with_capacity(outputs.len());
    for i in 0..outputs.len() {
        let gen = vocab.countable(&outputs[i].generated);
        let gold = vocab.countable(&golds[i]);
        let src_len = vocab.countable(&sources[i]).len();
        let cr_gen = compression_ratio(gen.len(), src_len)?;
        let cr_gold = compression_ratio(gold.len(), src_len)?;
        rows.push(ExampleEval {
            example_id: example_ids[i],
            cr_gen,
            cr_gold,
            delta_cr: cr_gen - cr_gold,
            rouge: rouge_l(&gen, &gold),
        });
    }
    let col = |f: fn(&ExampleEval) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    Ok(EvalReport {
        cr_gen: aggregate(&col(|r| r.cr_gen)),
        cr_gold: aggregate(&col(|r| r.cr_gold)),
        delta_cr: aggregate(&col(|r| r.delta_cr)),
        rouge_p: aggregate(&col(|r| r.rouge.precision)),
        rouge_r: aggregate(&col(|r| r.rouge.recall)),
        rouge_f: aggregate(&col(|r| r.rouge.f)),
        rows,
        metadata,
    })
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("example_id,cr_gen,cr_gold,delta_cr,rl_p,rl_r,rl_f\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.example_id, r.cr_gen, r.cr_gold, r.delta_cr, r.rouge.precision, r.rouge.recall,
                r.rouge.f
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compression_ratio_hand_values() {
        assert!((compression_ratio(9, 22).unwrap() - 0.4091).abs() < 1e-4);
        assert_eq!(compression_ratio(0, 22).unwrap(), 0.0);
        assert_eq!(compression_ratio(22, 22).unwrap(), 1.0);
        assert!(compression_ratio(5, 0).is_err());
    }

    #[test]
    fn delta_cr_hand_values() {
        assert!((delta_cr(6, 9, 22).unwrap() - (-0.1364)).abs() < 1e-4);
        assert_eq!(delta_cr(9, 9, 22).unwrap(), 0.0);
        assert!((delta_cr(19, 9, 22).unwrap() - 0.4545).abs() < 1e-4);
    }

    #[test]
    fn delta_cr_is_antisymmetric_and_monotone() {
        for (a, b, s) in [(3usize, 11usize, 20usize), (7, 2, 9), (5, 5, 8)] {
            let ab = delta_cr(a, b, s).unwrap();
            let ba = delta_cr(b, a, s).unwrap();
            assert!((ab + ba).abs() < 1e-12);
        }
        let mut prev = f64::NEG_INFINITY;
        for gen in 0..30 {
            let d = delta_cr(gen, 9, 22).unwrap();
            assert!(d > prev);
            prev = d;
        }
    }

    #[test]
    fn rouge_l_hand_values() {
        let identical = rouge_l(&[4, 5, 6], &[4, 5, 6]);
        assert_eq!(identical.f, 1.0);

        let r = rouge_l(&[10, 11, 12, 13], &[10, 12]);
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.precision, 0.5);
        assert!((r.f - 0.6667).abs() < 1e-4);

        assert_eq!(rouge_l(&[], &[9]), RougeL::ZERO);
        assert_eq!(rouge_l(&[9], &[]), RougeL::ZERO);
    }

    #[test]
    fn rouge_f_is_symmetric_and_bounded() {
        let mut rng = crate::rng::Rng::new(3);
        for _ in 0..50 {
            let a: Vec<TokenId> = (0..rng.range_inclusive(1, 12)).map(|_| rng.below(6) as TokenId).collect();
            let b: Vec<TokenId> = (0..rng.range_inclusive(1, 12)).map(|_| rng.below(6) as TokenId).collect();
            let ab = rouge_l(&a, &b);
            let ba = rouge_l(&b, &a);
            assert!((ab.f - ba.f).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&ab.f));
            if a == b {
                assert_eq!(ab.f, 1.0);
            }
        }
        // F = 1 only for identical sequences
        let close = rouge_l(&[1, 2, 3], &[1, 2, 4]);
        assert!(close.f < 1.0);
    }

    #[test]
    fn spearman_hand_values() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]) - (-0.5)).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
        // ties get average ranks
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 2.0]);
        assert!(rho > 0.8 && rho <= 1.0);
    }

    fn output_of(tokens: &[TokenId]) -> GenerationOutput {
        GenerationOutput {
            prompt: vec![],
            generated: tokens.to_vec(),
            steps: vec![],
            intervention_calls: 0,
        }
    }

    #[test]
    fn evaluate_run_perfect_output() {
        let vocab = Vocab::standard();
        let gold: TokenSequence = (0..4).map(|i| vocab.content_token(i)).collect();
        let mut gen = gold.clone();
        gen.push(Vocab::EOS); // EOS must not count toward length
        let source: TokenSequence = (0..9).map(|i| vocab.filler_token(i)).chain(gold.iter().copied()).collect();
        let report = evaluate_run(
            &[output_of(&gen)],
            &[gold],
            &[source],
            &[0],
            &vocab,
            EvalMetadata::default(),
        )
        .unwrap();
        assert_eq!(report.rows[0].delta_cr, 0.0);
        assert_eq!(report.rows[0].rouge.f, 1.0);
        assert_eq!(report.delta_cr.stderr, 0.0); // single sample
    }

    #[test]
    fn evaluate_run_rejects_misaligned_inputs() {
        let vocab = Vocab::standard();
        let r = evaluate_run(&[], &[vec![1]], &[], &[], &vocab, EvalMetadata::default());
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn aggregates_match_recomputation_and_permutation() {
        let vocab = Vocab::standard();
        let mut rng = crate::rng::Rng::new(9);
        let mut outputs = Vec::new();
        let mut golds = Vec::new();
        let mut sources = Vec::new();
        let mut ids = Vec::new();
        for i in 0..12u32 {
            let src: TokenSequence =
                (0..rng.range_inclusive(8, 14)).map(|_| vocab.content_token(rng.below(64) as u32)).collect();
            let gold: TokenSequence = src[..rng.range_inclusive(1, src.len())].to_vec();
            let gen: TokenSequence = src[..rng.range_inclusive(1, src.len())].to_vec();
            outputs.push(output_of(&gen));
            golds.push(gold);
            sources.push(src);
            ids.push(i);
        }
        let report =
            evaluate_run(&outputs, &golds, &sources, &ids, &vocab, EvalMetadata::default()).unwrap();
        let dcr: Vec<f64> = report.rows.iter().map(|r| r.delta_cr).collect();
        assert!((report.delta_cr.mean - crate::math::mean(&dcr)).abs() < 1e-12);
        assert!((report.delta_cr.stderr - crate::math::stderr(&dcr)).abs() < 1e-12);

        // permutation invariance of aggregates
        let perm: Vec<usize> = (0..12).rev().collect();
        let report2 = evaluate_run(
            &perm.iter().map(|&i| outputs[i].clone()).collect::<Vec<_>>(),
            &perm.iter().map(|&i| golds[i].clone()).collect::<Vec<_>>(),
            &perm.iter().map(|&i| sources[i].clone()).collect::<Vec<_>>(),
            &perm.iter().map(|&i| ids[i]).collect::<Vec<_>>(),
            &vocab,
            EvalMetadata::default(),
        )
        .unwrap();
        assert!((report.delta_cr.mean - report2.delta_cr.mean).abs() < 1e-12);
        assert!((report.rouge_f.mean - report2.rouge_f.mean).abs() < 1e-12);
    }
}
