//! Synthetic length-constrained compression task.
//!
//! Each example is a source sequence of content and filler tokens; the gold
//! summary keeps exactly the content tokens, in order. Prompts come in three
//! families that state progressively more length information: no constraint,
//! the number of tokens to delete, or source length plus keep and delete counts.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::vocab::{TokenId, TokenSequence, Vocab, MAX_NUMBER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum PromptKind {
    NoConstraint,
    Length,
    Priming,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::NoConstraint, PromptKind::Length, PromptKind::Priming];

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::NoConstraint => "no_constraint",
            PromptKind::Length => "length",
            PromptKind::Priming => "priming",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "no_constraint" => Ok(PromptKind::NoConstraint),
            "length" => Ok(PromptKind::Length),
            "priming" => Ok(PromptKind::Priming),
            other => Err(Error::Config(format!("unknown prompt kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressionExample {
    pub id: u32,
    pub source: TokenSequence,
    pub gold: TokenSequence,
}

impl CompressionExample {
    pub fn src_len(&self) -> usize {
        self.source.len()
    }

    pub fn keep_len(&self) -> usize {
        self.gold.len()
    }

    pub fn del_len(&self) -> usize {
        self.source.len() - self.gold.len()
    }

    pub fn compression_ratio(&self) -> f64 {
        self.gold.len() as f64 / self.source.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    pub n_examples: usize,
    /// Inclusive source length bounds; must sit inside [8, 32].
    pub len_range: (usize, usize),
    /// Probability that a source token is a content token.
    pub content_prob: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { n_examples: 10_000, len_range: (8, 32), content_prob: 0.45, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub examples: Vec<CompressionExample>,
    pub split: Split,
    pub config: CorpusConfig,
}

impl Corpus {
    pub fn mean_compression_ratio(&self) -> f64 {
        let sum: f64 = self.examples.iter().map(|e| e.compression_ratio()).sum();
        sum / self.examples.len() as f64
    }

    pub fn examples_for(&self, ids: &[u32]) -> Vec<&CompressionExample> {
        ids.iter().map(|&i| &self.examples[i as usize]).collect()
    }
}

pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    if config.n_examples == 0 {
        return Err(Error::EmptyCorpus);
    }
    if !(config.content_prob > 0.0 && config.content_prob <= 1.0) {
        return Err(Error::Config(format!(
            "content_prob must be in (0, 1], got {}",
            config.content_prob
        )));
    }
    let (lo, hi) = config.len_range;
    if lo < 8 || hi > 32 || lo > hi {
        return Err(Error::Config(format!("len_range ({lo}, {hi}) must sit inside [8, 32]")));
    }
    let vocab = Vocab::standard();
    let mut rng = Rng::new(config.seed);
    let mut examples = Vec::with_capacity(config.n_examples);
    for id in 0..config.n_examples {
        let len = rng.range_inclusive(lo, hi);
        let mut source = Vec::with_capacity(len);
        let mut gold = Vec::new();
        for _ in 0..len {
            if rng.bernoulli(config.content_prob) {
                let t = vocab.content_token(rng.below(64) as u32);
                source.push(t);
                gold.push(t);
            } else {
                source.push(vocab.filler_token(rng.below(64) as u32));
            }
        }
        examples.push(CompressionExample { id: id as u32, source, gold });
    }
    Ok(Corpus { examples, split: Split::default(), config: *config })
}

/// Renders the inference prompt for one example, ending in the compress marker.
pub fn render_prompt(ex: &CompressionExample, kind: PromptKind, vocab: &Vocab) -> Result<TokenSequence> {
    let number = |count: usize| -> Result<TokenId> {
        vocab.number_token(count as u32).ok_or_else(|| {
            Error::Render(format!("count {count} exceeds number-token range 0..={MAX_NUMBER}"))
        })
    };
    let mut out = Vec::with_capacity(ex.source.len() + 8);
    out.push(Vocab::BOS);
    match kind {
        PromptKind::NoConstraint => {
            out.push(Vocab::SRC);
            out.extend_from_slice(&ex.source);
        }
        PromptKind::Length => {
            out.push(Vocab::SRC);
            out.extend_from_slice(&ex.source);
            out.push(Vocab::DEL);
            out.push(number(ex.del_len())?);
        }
        PromptKind::Priming => {
            out.push(Vocab::LEN);
            out.push(number(ex.src_len())?);
            out.push(Vocab::SRC);
            out.extend_from_slice(&ex.source);
            out.push(Vocab::KEEP);
            out.push(number(ex.keep_len())?);
            out.push(Vocab::DEL);
            out.push(number(ex.del_len())?);
        }
    }
    out.push(Vocab::COMPRESS);
    Ok(out)
}

/// Renders the teacher-forcing sequence `prompt ++ gold ++ EOS`.
///
/// Returns the full sequence and the prompt length; loss is taken only on
/// positions that predict tokens at index ≥ prompt length.
pub fn render_training_sequence(
    ex: &CompressionExample,
    kind: PromptKind,
    vocab: &Vocab,
) -> Result<(TokenSequence, usize)> {
    let mut seq = render_prompt(ex, kind, vocab)?;
    let prompt_len = seq.len();
    seq.extend_from_slice(&ex.gold);
    seq.push(Vocab::EOS);
    Ok((seq, prompt_len))
}

pub fn split_corpus(corpus: &mut Corpus, ratios: SplitRatios, seed: u64) -> Result<()> {
    for (name, r) in [("train", ratios.train), ("val", ratios.val), ("test", ratios.test)] {
        if r <= 0.0 {
            return Err(Error::Config(format!("split ratio `{name}` must be positive, got {r}")));
        }
    }
    let sum = ratios.train + ratios.val + ratios.test;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
    }
    let n = corpus.examples.len();
    let mut indices: Vec<u32> = (0..n as u32).collect();
    Rng::new(seed).shuffle(&mut indices);
    let n_train = (n as f64 * ratios.train).floor() as usize;
    let n_val = (n as f64 * ratios.val).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Config(format!(
            "splits ({n_train}, {n_val}, {}) leave an empty part for {n} examples",
            n - n_train - n_val
        )));
    }
    corpus.split = Split {
        train: indices[..n_train].to_vec(),
        val: indices[n_train..n_train + n_val].to_vec(),
        test: indices[n_train + n_val..].to_vec(),
        seed,
    };
    Ok(())
}

// ---------------------------------------------------------------------------
// Line-oriented corpus file with a sidecar header
// ---------------------------------------------------------------------------

fn ids_to_str(ids: &[TokenId]) -> String {
    let mut s = String::new();
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{id}");
    }
    s
}

fn parse_ids(s: &str) -> Result<TokenSequence> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(' ')
        .map(|t| t.parse::<u32>().map_err(|_| Error::Corruption(format!("bad token id `{t}`"))))
        .collect()
}

/// Writes `corpus` as `id<TAB>source-ids<TAB>gold-ids` lines plus a `.meta`
/// sidecar carrying the vocab layout, generation config, seed, and split.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut body = String::new();
    for ex in &corpus.examples {
        let _ = writeln!(body, "{}\t{}\t{}", ex.id, ids_to_str(&ex.source), ids_to_str(&ex.gold));
    }
    std::fs::write(path, body)?;

    let cfg = &corpus.config;
    let mut meta = String::new();
    let _ = writeln!(meta, "format = lenprobe-corpus-v1");
    let _ = writeln!(meta, "vocab = {}", Vocab::standard().layout_line());
    let _ = writeln!(meta, "n_examples = {}", cfg.n_examples);
    let _ = writeln!(meta, "len_range = {} {}", cfg.len_range.0, cfg.len_range.1);
    let _ = writeln!(meta, "content_prob = {}", cfg.content_prob);
    let _ = writeln!(meta, "seed = {}", cfg.seed);
    let _ = writeln!(meta, "split_seed = {}", corpus.split.seed);
    let _ = writeln!(meta, "split_train = {}", ids_to_str(&corpus.split.train));
    let _ = writeln!(meta, "split_val = {}", ids_to_str(&corpus.split.val));
    let _ = writeln!(meta, "split_test = {}", ids_to_str(&corpus.split.test));
    std::fs::write(sidecar_path(path), meta)?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta");
    std::path::PathBuf::from(os)
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let body = std::fs::read_to_string(path)?;
    let meta = std::fs::read_to_string(sidecar_path(path))?;

    let mut fields = std::collections::HashMap::new();
    for line in meta.lines() {
        if let Some((k, v)) = line.split_once('=') {
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| -> Result<&String> {
        fields.get(k).ok_or_else(|| Error::Corruption(format!("corpus sidecar missing `{k}`")))
    };
    if get("format")? != "lenprobe-corpus-v1" {
        return Err(Error::Corruption("unknown corpus format".into()));
    }
    let parse_usize = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|_| Error::Corruption(format!("bad `{k}` in sidecar")))
    };
    let parse_u64 = |k: &str| -> Result<u64> {
        get(k)?.parse().map_err(|_| Error::Corruption(format!("bad `{k}` in sidecar")))
    };
    let len_parts: Vec<usize> = get("len_range")?
        .split(' ')
        .map(|t| t.parse().map_err(|_| Error::Corruption("bad len_range".into())))
        .collect::<Result<_>>()?;
    if len_parts.len() != 2 {
        return Err(Error::Corruption("bad len_range".into()));
    }
    let config = CorpusConfig {
        n_examples: parse_usize("n_examples")?,
        len_range: (len_parts[0], len_parts[1]),
        content_prob: get("content_prob")?
            .parse()
            .map_err(|_| Error::Corruption("bad content_prob".into()))?,
        seed: parse_u64("seed")?,
    };
    let split = Split {
        train: parse_ids(get("split_train")?)?,
        val: parse_ids(get("split_val")?)?,
        test: parse_ids(get("split_test")?)?,
        seed: parse_u64("split_seed")?,
    };

    let mut examples = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        let mut parts = line.split('\t');
        let (id, src, gold) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c), None) => (a, b, c),
            _ => return Err(Error::Corruption(format!("corpus line {} malformed", lineno + 1))),
        };
        examples.push(CompressionExample {
            id: id.parse().map_err(|_| Error::Corruption(format!("bad id on line {}", lineno + 1)))?,
            source: parse_ids(src)?,
            gold: parse_ids(gold)?,
        });
    }
    if examples.len() != config.n_examples {
        return Err(Error::Corruption(format!(
            "corpus has {} lines but sidecar declares {}",
            examples.len(),
            config.n_examples
        )));
    }
    Ok(Corpus { examples, split, config })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_compression_ratio_tracks_content_prob() {
        let cfg = CorpusConfig { n_examples: 10_000, content_prob: 0.45, seed: 7, ..Default::default() };
        let corpus = generate_corpus(&cfg).unwrap();
        let cr = corpus.mean_compression_ratio();
        assert!((0.43..=0.47).contains(&cr), "mean CR {cr}");
    }

    #[test]
    fn all_content_means_gold_equals_source() {
        let cfg = CorpusConfig { n_examples: 1, content_prob: 1.0, seed: 1, ..Default::default() };
        let corpus = generate_corpus(&cfg).unwrap();
        assert_eq!(corpus.examples[0].gold, corpus.examples[0].source);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = CorpusConfig { n_examples: 200, seed: 99, ..Default::default() };
        assert_eq!(generate_corpus(&cfg).unwrap(), generate_corpus(&cfg).unwrap());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let empty = CorpusConfig { n_examples: 0, ..Default::default() };
        assert!(matches!(generate_corpus(&empty), Err(Error::EmptyCorpus)));
        let bad_p = CorpusConfig { content_prob: 0.0, ..Default::default() };
        assert!(matches!(generate_corpus(&bad_p), Err(Error::Config(_))));
        let bad_p2 = CorpusConfig { content_prob: 1.2, ..Default::default() };
        assert!(matches!(generate_corpus(&bad_p2), Err(Error::Config(_))));
        let bad_len = CorpusConfig { len_range: (4, 32), ..Default::default() };
        assert!(matches!(generate_corpus(&bad_len), Err(Error::Config(_))));
    }

    #[test]
    fn gold_is_the_content_subsequence_and_counts_add_up() {
        let cfg = CorpusConfig { n_examples: 500, seed: 13, ..Default::default() };
        let corpus = generate_corpus(&cfg).unwrap();
        let vocab = Vocab::standard();
        for ex in &corpus.examples {
            let refiltered: TokenSequence =
                ex.source.iter().copied().filter(|&t| vocab.is_content(t)).collect();
            assert_eq!(ex.gold, refiltered);
            assert_eq!(ex.keep_len() + ex.del_len(), ex.src_len());
        }
    }

    fn fixed_example(src_len: usize, keep: usize) -> CompressionExample {
        let vocab = Vocab::standard();
        let mut source = Vec::new();
        let mut gold = Vec::new();
        for i in 0..src_len {
            if i < keep {
                let t = vocab.content_token(i as u32 % 64);
                source.push(t);
                gold.push(t);
            } else {
                source.push(vocab.filler_token(i as u32 % 64));
            }
        }
        CompressionExample { id: 0, source, gold }
    }

    #[test]
    fn priming_prompt_contains_counts_in_order() {
        let vocab = Vocab::standard();
        let ex = fixed_example(10, 4);
        let prompt = render_prompt(&ex, PromptKind::Priming, &vocab).unwrap();
        let n10 = vocab.number_token(10).unwrap();
        let n4 = vocab.number_token(4).unwrap();
        let n6 = vocab.number_token(6).unwrap();
        let positions: Vec<usize> = prompt
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == n10 || t == n4 || t == n6)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(positions.len(), 3);
        assert_eq!(prompt[positions[0]], n10);
        assert_eq!(prompt[positions[1]], n4);
        assert_eq!(prompt[positions[2]], n6);
        assert_eq!(prompt.last(), Some(&Vocab::COMPRESS));
        assert_eq!(prompt.first(), Some(&Vocab::BOS));
    }

    #[test]
    fn no_constraint_prompt_has_no_number_tokens() {
        let vocab = Vocab::standard();
        let ex = fixed_example(12, 5);
        let prompt = render_prompt(&ex, PromptKind::NoConstraint, &vocab).unwrap();
        assert!(prompt.iter().all(|&t| !vocab.is_number(t)));
    }

    #[test]
    fn length_prompt_boundary_zero_delete() {
        let vocab = Vocab::standard();
        let ex = fixed_example(5, 5);
        let prompt = render_prompt(&ex, PromptKind::Length, &vocab).unwrap();
        assert!(prompt.contains(&vocab.number_token(0).unwrap()));
    }

    #[test]
    fn render_rejects_counts_beyond_number_range() {
        let vocab = Vocab::standard();
        let mut ex = fixed_example(10, 4);
        ex.source = (0..130).map(|i| vocab.filler_token(i % 64)).collect();
        ex.gold.clear();
        assert!(matches!(render_prompt(&ex, PromptKind::Priming, &vocab), Err(Error::Render(_))));
    }

    #[test]
    fn render_is_injective_across_kinds_and_examples() {
        let vocab = Vocab::standard();
        let cfg = CorpusConfig { n_examples: 60, seed: 5, ..Default::default() };
        let corpus = generate_corpus(&cfg).unwrap();
        let mut seen = std::collections::HashSet::new();
        for ex in &corpus.examples {
            for kind in PromptKind::ALL {
                let prompt = render_prompt(ex, kind, &vocab).unwrap();
                assert!(seen.insert(prompt), "duplicate prompt for example {} {kind:?}", ex.id);
            }
        }
    }

    #[test]
    fn training_sequence_appends_gold_and_eos() {
        let vocab = Vocab::standard();
        let ex = fixed_example(10, 4);
        let (seq, prompt_len) = render_training_sequence(&ex, PromptKind::Length, &vocab).unwrap();
        assert_eq!(seq[prompt_len - 1], Vocab::COMPRESS);
        assert_eq!(&seq[prompt_len..prompt_len + ex.gold.len()], ex.gold.as_slice());
        assert_eq!(seq.last(), Some(&Vocab::EOS));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let cfg = CorpusConfig { n_examples: 100, seed: 3, ..Default::default() };
        let mut corpus = generate_corpus(&cfg).unwrap();
        split_corpus(&mut corpus, SplitRatios { train: 0.8, val: 0.1, test: 0.1 }, 11).unwrap();
        assert_eq!(corpus.split.train.len(), 80);
        assert_eq!(corpus.split.val.len(), 10);
        assert_eq!(corpus.split.test.len(), 10);

        let mut again = generate_corpus(&cfg).unwrap();
        split_corpus(&mut again, SplitRatios { train: 0.8, val: 0.1, test: 0.1 }, 11).unwrap();
        assert_eq!(corpus.split, again.split);

        // disjoint and exhaustive
        let mut all: Vec<u32> = corpus
            .split
            .train
            .iter()
            .chain(&corpus.split.val)
            .chain(&corpus.split.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn degenerate_split_is_rejected() {
        let cfg = CorpusConfig { n_examples: 100, seed: 3, ..Default::default() };
        let mut corpus = generate_corpus(&cfg).unwrap();
        let r = split_corpus(&mut corpus, SplitRatios { train: 1.0, val: 0.0, test: 0.0 }, 1);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn corpus_file_round_trip() {
        let cfg = CorpusConfig { n_examples: 50, seed: 21, ..Default::default() };
        let mut corpus = generate_corpus(&cfg).unwrap();
        split_corpus(&mut corpus, SplitRatios { train: 0.8, val: 0.1, test: 0.1 }, 4).unwrap();
        let dir = std::env::temp_dir().join(format!("lenprobe-corpus-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("corpus.txt");
        write_corpus(&corpus, &path).unwrap();
        let back = read_corpus(&path).unwrap();
        assert_eq!(back, corpus);
        std::fs::remove_dir_all(&dir).ok();
    }
}
