//! The pipeline commands. Each one locks the output directory, checks its
//! upstream artifacts (by existence and provenance hash), does its work, and
//! writes a manifest. Given identical inputs every command is idempotent.

use std::path::{Path, PathBuf};

use lenprobe::capture::{collect_states, read_dataset, write_dataset, Provenance};
use lenprobe::corpus::{
    generate_corpus, read_corpus, render_prompt, split_corpus, write_corpus, Corpus, PromptKind,
};
use lenprobe::intervene::{sweep_intervention, SweepResult, SweepSelection, SweepSpec};
use lenprobe::metrics::{evaluate_run, EvalMetadata, EvalReport};
use lenprobe::model::{
    generate, load_checkpoint, save_checkpoint, token_exact_accuracy, train, Model, SplitSel,
    TapPoint, TrainConfig, TrainPhase,
};
use lenprobe::probe::{
    probe_grid, probe_per_unit, rank_units, CellData, ProbeConfig, ProbeReport, UnitRanking,
    UnitScores,
};
use lenprobe::rng::derive_seed;
use lenprobe::{Error, Result, TokenSequence, Vocab};

use crate::config::{ExperimentConfig, ModelChoice};
use crate::manifest::{hash_file_hex, require_artifact, DirLock, Manifest};

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub out_dir: PathBuf,
    pub override_provenance: bool,
}

impl Ctx {
    pub fn corpus_path(&self) -> PathBuf {
        self.out_dir.join("corpus.txt")
    }

    pub fn pretrained_path(&self) -> PathBuf {
        self.out_dir.join("model.ckpt")
    }

    pub fn finetuned_path(&self) -> PathBuf {
        self.out_dir.join(format!("model_ft_{}.ckpt", self.cfg.finetune_kind.name()))
    }

    pub fn model_path(&self, choice: ModelChoice) -> (PathBuf, &'static str) {
        match choice {
            ModelChoice::Pretrained => (self.pretrained_path(), "train"),
            ModelChoice::Finetuned => (self.finetuned_path(), "finetune"),
        }
    }

    pub fn states_path(&self) -> PathBuf {
        self.out_dir.join(format!("states_{}.lpds", self.cfg.collect_kind.name()))
    }

    pub fn grid_path(&self) -> PathBuf {
        self.out_dir.join(format!("grid_{}.json", self.cfg.collect_kind.name()))
    }

    pub fn units_path(&self) -> PathBuf {
        self.out_dir.join(format!("units_{}.json", self.cfg.collect_kind.name()))
    }

    pub fn sweep_path(&self) -> PathBuf {
        self.out_dir.join(format!("sweep_{}.json", self.cfg.collect_kind.name()))
    }

    pub fn eval_path(&self) -> PathBuf {
        self.out_dir.join(format!("eval_{}.json", self.cfg.eval_kind.name()))
    }

    fn manifest(&self, command: &str) -> Manifest {
        Manifest::new(command, self.cfg.seed, self.cfg.to_map())
    }

    fn load_corpus(&self) -> Result<Corpus> {
        require_artifact(&self.corpus_path(), "gen-corpus")?;
        read_corpus(&self.corpus_path())
    }

    fn load_model(&self, choice: ModelChoice) -> Result<(Model, PathBuf, String)> {
        let (path, producer) = self.model_path(choice);
        require_artifact(&path, producer)?;
        let model = load_checkpoint(&path)?;
        let hash = hash_file_hex(&path)?;
        Ok((model, path, hash))
    }

    fn check_provenance(&self, what: &str, expected: &str, actual: &str) -> Result<()> {
        if expected != actual {
            if self.override_provenance {
                eprintln!(
                    "warning: {what} provenance mismatch ({expected} vs {actual}); continuing under --override-provenance"
                );
                return Ok(());
            }
            return Err(Error::Provenance(format!(
                "{what} was produced from checkpoint {expected}, found {actual}; \
                 rerun the producing command or pass --override-provenance"
            )));
        }
        Ok(())
    }

    /// Test-split prompts of one kind, with aligned golds and sources.
    fn test_prompts(
        &self,
        corpus: &Corpus,
        kind: PromptKind,
        n: usize,
        vocab: &Vocab,
    ) -> Result<(Vec<(u32, TokenSequence)>, Vec<TokenSequence>, Vec<TokenSequence>)> {
        if corpus.split.test.is_empty() {
            return Err(Error::Data("corpus has no test split".into()));
        }
        let ids: Vec<u32> = corpus.split.test.iter().copied().take(n).collect();
        let mut prompts = Vec::with_capacity(ids.len());
        let mut golds = Vec::with_capacity(ids.len());
        let mut sources = Vec::with_capacity(ids.len());
        for &id in &ids {
            let ex = &corpus.examples[id as usize];
            prompts.push((id, render_prompt(ex, kind, vocab)?));
            golds.push(ex.gold.clone());
            sources.push(ex.source.clone());
        }
        Ok((prompts, golds, sources))
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("serialization failed: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Corruption(format!("{} is not valid JSON: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Artifact wrappers carrying provenance
// ---------------------------------------------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
pub struct GridArtifact {
    pub checkpoint_hash: String,
    pub prompt_kind: String,
    pub report: ProbeReport,
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct UnitsArtifact {
    pub checkpoint_hash: String,
    pub prompt_kind: String,
    pub layer: u16,
    pub tap: TapPoint,
    pub scores: UnitScores,
    pub ranking: UnitRanking,
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct SweepArtifact {
    pub checkpoint_hash: String,
    pub prompt_kind: String,
    pub result: SweepResult,
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

pub fn cmd_gen_corpus(ctx: &Ctx) -> Result<()> {
    let _lock = DirLock::acquire(&ctx.out_dir)?;
    let mut corpus = generate_corpus(&ctx.cfg.corpus_config())?;
    split_corpus(&mut corpus, ctx.cfg.split_ratios(), derive_seed(ctx.cfg.seed, "split"))?;
    write_corpus(&corpus, &ctx.corpus_path())?;
    let mut m = ctx.manifest("gen-corpus");
    m.add_output(&ctx.out_dir, &ctx.corpus_path())?;
    m.add_output(&ctx.out_dir, &lenprobe::corpus::sidecar_path(&ctx.corpus_path()))?;
    m.write(&ctx.out_dir)?;
    println!(
        "corpus: {} examples (train {} / val {} / test {}), mean CR {:.4}",
        corpus.examples.len(),
        corpus.split.train.len(),
        corpus.split.val.len(),
        corpus.split.test.len(),
        corpus.mean_compression_ratio()
    );
    Ok(())
}

pub fn cmd_train(ctx: &Ctx) -> Result<()> {
    let _lock = DirLock::acquire(&ctx.out_dir)?;
    let vocab = Vocab::standard();
    let corpus = ctx.load_corpus()?;
    let mut model = Model::new(ctx.cfg.model_config())?;
    let train_cfg = TrainConfig {
        epochs: ctx.cfg.train_epochs,
        batch: ctx.cfg.train_batch,
        lr: ctx.cfg.train_lr,
        phase: TrainPhase::Pretrain,
        seed: derive_seed(ctx.cfg.seed, "train"),
        grad_clip: 1.0,
        threads: ctx.cfg.threads,
        log_epochs: true,
    };
    let report = train(&mut model, &corpus, &vocab, &train_cfg)?;
    let acc = token_exact_accuracy(&model, &corpus, &vocab, SplitSel::Val, TrainPhase::Pretrain)?;
    save_checkpoint(&model, &ctx.pretrained_path())?;
    let mut m = ctx.manifest("train");
    m.add_input(&ctx.out_dir, &ctx.corpus_path())?;
    m.add_output(&ctx.out_dir, &ctx.pretrained_path())?;
    m.write(&ctx.out_dir)?;
    println!(
        "pretrain: epoch losses {:?}, held-out token accuracy {:.4}",
        report.epoch_losses.iter().map(|l| (l * 1e4).round() / 1e4).collect::<Vec<_>>(),
        acc
    );
    Ok(())
}

pub fn cmd_finetune(ctx: &Ctx) -> Result<()> {
    let _lock = DirLock::acquire(&ctx.out_dir)?;
    let vocab = Vocab::standard();
    let corpus = ctx.load_corpus()?;
    let (mut model, pretrained_path, _) = ctx.load_model(ModelChoice::Pretrained)?;
    let kind = ctx.cfg.finetune_kind;
    let train_cfg = TrainConfig {
        epochs: ctx.cfg.finetune_epochs,
        batch: ctx.cfg.train_batch,
        lr: ctx.cfg.train_lr,
        phase: TrainPhase::FineTune(kind),
        seed: derive_seed(ctx.cfg.seed, "finetune"),
        grad_clip: 1.0,
        threads: ctx.cfg.threads,
        log_epochs: true,
    };
    let report = train(&mut model, &corpus, &vocab, &train_cfg)?;
    let acc =
        token_exact_accuracy(&model, &corpus, &vocab, SplitSel::Val, TrainPhase::FineTune(kind))?;
    save_checkpoint(&model, &ctx.finetuned_path())?;
    let mut m = ctx.manifest("finetune");
    m.add_input(&ctx.out_dir, &ctx.corpus_path())?;
    m.add_input(&ctx.out_dir, &pretrained_path)?;
    m.add_output(&ctx.out_dir, &ctx.finetuned_path())?;
    m.write(&ctx.out_dir)?;
    println!(
        "finetune[{}]: epoch losses {:?}, held-out token accuracy {:.4}",
        kind.name(),
        report.epoch_losses.iter().map(|l| (l * 1e4).round() / 1e4).collect::<Vec<_>>(),
        acc
    );
    Ok(())
}

pub fn cmd_collect(ctx: &Ctx) -> Result<()> {
    let _lock = DirLock::acquire(&ctx.out_dir)?;
    let vocab = Vocab::standard();
    let corpus = ctx.load_corpus()?;
    let (model, model_path, checkpoint_hash) = ctx.load_model(ctx.cfg.collect_model)?;
    let decode = ctx.cfg.decode_config()?;
    let kind = ctx.cfg.collect_kind;
    let (prompts, _, _) = ctx.test_prompts(&corpus, kind, ctx.cfg.collect_n_prompts, &vocab)?;
    let dataset = collect_states(
        &model,
        &prompts,
        &ctx.cfg.collect_layers(),
        &ctx.cfg.collect_taps(),
        &decode,
        derive_seed(ctx.cfg.seed, "collect-split"),
        Provenance {
            checkpoint_hash,
            prompt_kind: kind.name().to_string(),
            decode: decode.describe(),
        },
        ctx.cfg.threads,
    )?;
    write_dataset(&dataset, &ctx.states_path())?;
    let mut m = ctx.manifest("collect");
    m.add_input(&ctx.out_dir, &ctx.corpus_path())?;
    m.add_input(&ctx.out_dir, &model_path)?;
    m.add_output(&ctx.out_dir, &ctx.states_path())?;
    m.write(&ctx.out_dir)?;
    println!(
        "collect[{}]: {} records over {} prompts ({} per cell)",
        kind.name(),
        dataset.records.len(),
        prompts.len(),
        dataset.records_per_cell()
    );
    Ok(())
}

fn load_states_checked(ctx: &Ctx) -> Result<lenprobe::capture::ActivationDataset> {
    require_artifact(&ctx.states_path(), "collect")?;
    let dataset = read_dataset(&ctx.states_path())?;
    let (model_path, producer) = ctx.model_path(ctx.cfg.collect_model);
    require_artifact(&model_path, producer)?;
    let hash = hash_file_hex(&model_path)?;
    ctx.check_provenance("activation dataset", &dataset.provenance.checkpoint_hash, &hash)?;
    Ok(dataset)
}

pub fn cmd_probe(ctx: &Ctx) -> Result<()> {
    let _lock = DirLock::acquire(&ctx.out_dir)?;
    let dataset = load_states_checked(ctx)?;
    let probe_cfg = ProbeConfig {
        hidden_width: ctx.cfg.probe_hidden,
        dropout: ctx.cfg.probe_dropout,
        lr: ctx.cfg.probe_lr,
        max_epochs: ctx.cfg.probe_max_epochs,
        seed: derive_seed(ctx.cfg.seed, "probe"),
        ..ProbeConfig::full_vector(0)
    };
    let report = probe_grid(
        &dataset,
        &dataset.layers.clone(),
        &dataset.taps.clone(),
        &probe_cfg,
        ctx.cfg.probe_n_runs,
        ctx.cfg.threads,
    )?;
    let artifact = GridArtifact {
        checkpoint_hash: dataset.provenance.checkpoint_hash.clone(),
        prompt_kind: dataset.provenance.prompt_kind.clone(),
        report,
    };
    write_json(&ctx.grid_path(), &artifact)?;
    let csv_path = ctx.grid_path().with_extension("csv");
    std::fs::write(&csv_path, artifact.report.to_csv())?;
    let mut m = ctx.manifest("probe");
    m.add_input(&ctx.out_dir, &ctx.states_path())?;
    m.add_output(&ctx.out_dir, &ctx.grid_path())?;
    m.add_output(&ctx.out_dir, &csv_path)?;
    m.write(&ctx.out_dir)?;
    if let Some(best) = artifact.report.best_cell() {
        println!(
            "probe grid: {} cells, best layer {} {} with R² {:.3}",
            artifact.report.cells.len(),
            best.layer,
            best.tap.name(),
            best.r2_mean
        );
    }
    Ok(())
}

pub fn cmd_rank(ctx: &Ctx) -> Result<()> {
    let _lock = DirLock::acquire(&ctx.out_dir)?;
    let dataset = load_states_checked(ctx)?;
    let cell = CellData::from_dataset(&dataset, ctx.cfg.rank_layer, ctx.cfg.rank_tap)?;
    let probe_cfg = ProbeConfig {
        hidden_width: ctx.cfg.probe_hidden,
        dropout: ctx.cfg.probe_dropout,
        lr: ctx.cfg.probe_lr,
        max_epochs: ctx.cfg.probe_max_epochs,
        seed: derive_seed(ctx.cfg.seed, "rank"),
        ..ProbeConfig::per_unit(0)
    };
    let scores = probe_per_unit(&cell, &probe_cfg, ctx.cfg.threads)?;
    let ranking = rank_units(&scores, ctx.cfg.rank_k, ctx.cfg.rank_m)?;
    let artifact = UnitsArtifact {
        checkpoint_hash: dataset.provenance.checkpoint_hash.clone(),
        prompt_kind: dataset.provenance.prompt_kind.clone(),
        layer: ctx.cfg.rank_layer,
        tap: ctx.cfg.rank_tap,
        scores,
        ranking,
    };
    write_json(&ctx.units_path(), &artifact)?;
    let csv_path = ctx.units_path().with_extension("csv");
    std::fs::write(&csv_path, artifact.scores.to_csv())?;
    let mut m = ctx.manifest("rank");
    m.add_input(&ctx.out_dir, &ctx.states_path())?;
    m.add_output(&ctx.out_dir, &ctx.units_path())?;
    m.add_output(&ctx.out_dir, &csv_path)?;
    m.write(&ctx.out_dir)?;
    let top: Vec<String> = artifact.ranking.order[..5.min(artifact.ranking.order.len())]
        .iter()
        .map(|&u| format!("{:.3} ({u})", artifact.scores.scores[u]))
        .collect();
    println!(
        "rank[layer {} {}]: top-5 {}, avg-{} {:.3}",
        ctx.cfg.rank_layer,
        ctx.cfg.rank_tap.name(),
        top.join("  "),
        artifact.ranking.m,
        artifact.ranking.avg_top_m
    );
    Ok(())
}

pub fn cmd_sweep(ctx: &Ctx) -> Result<()> {
    let _lock = DirLock::acquire(&ctx.out_dir)?;
    let vocab = Vocab::standard();
    let corpus = ctx.load_corpus()?;
    let (model, model_path, checkpoint_hash) = ctx.load_model(ctx.cfg.sweep_model)?;
    require_artifact(&ctx.units_path(), "rank")?;
    let units: UnitsArtifact = read_json(&ctx.units_path())?;
    ctx.check_provenance("unit ranking", &units.checkpoint_hash, &checkpoint_hash)?;
    if units.layer != ctx.cfg.rank_layer || units.tap != ctx.cfg.rank_tap {
        return Err(Error::Provenance(format!(
            "unit ranking is for layer {} {}, config wants layer {} {}",
            units.layer,
            units.tap.name(),
            ctx.cfg.rank_layer,
            ctx.cfg.rank_tap.name()
        )));
    }
    let decode = ctx.cfg.decode_config()?;
    let kind = ctx.cfg.collect_kind;
    let (prompts, golds, sources) =
        ctx.test_prompts(&corpus, kind, ctx.cfg.sweep_n_prompts, &vocab)?;
    let k = units.ranking.k;
    let spec = SweepSpec {
        layer: units.layer as usize,
        tap: units.tap,
        scope: ctx.cfg.sweep_scope,
        scales: ctx.cfg.sweep_scales.clone(),
        selections: vec![
            SweepSelection { name: format!("top-{k}"), units: units.ranking.top_k.clone() },
            SweepSelection {
                name: format!("smallest-{k}"),
                units: units.ranking.smallest_k.clone(),
            },
        ],
    };
    let result =
        sweep_intervention(&model, &prompts, &golds, &sources, &vocab, &spec, &decode, ctx.cfg.threads)?;
    let artifact = SweepArtifact {
        checkpoint_hash,
        prompt_kind: kind.name().to_string(),
        result,
    };
    write_json(&ctx.sweep_path(), &artifact)?;
    let csv_path = ctx.sweep_path().with_extension("csv");
    std::fs::write(&csv_path, artifact.result.to_csv())?;
    let mut m = ctx.manifest("sweep");
    m.add_input(&ctx.out_dir, &ctx.corpus_path())?;
    m.add_input(&ctx.out_dir, &model_path)?;
    m.add_input(&ctx.out_dir, &ctx.units_path())?;
    m.add_output(&ctx.out_dir, &ctx.sweep_path())?;
    m.add_output(&ctx.out_dir, &csv_path)?;
    m.write(&ctx.out_dir)?;
    println!(
        "sweep[{} layer {} {}]: {} cells over {} prompts",
        kind.name(),
        spec.layer,
        spec.tap.name(),
        artifact.result.cells.len(),
        artifact.result.n_prompts
    );
    Ok(())
}

pub fn cmd_evaluate(ctx: &Ctx) -> Result<()> {
    let _lock = DirLock::acquire(&ctx.out_dir)?;
    let vocab = Vocab::standard();
    let corpus = ctx.load_corpus()?;
    let (model, model_path, _) = ctx.load_model(ctx.cfg.eval_model)?;
    let decode = ctx.cfg.decode_config()?;
    let kind = ctx.cfg.eval_kind;
    let (prompts, golds, sources) =
        ctx.test_prompts(&corpus, kind, ctx.cfg.eval_n_prompts, &vocab)?;
    let outputs: Vec<_> = lenprobe::par::run_indexed(prompts.len(), ctx.cfg.threads, |i| {
        generate(&model, &prompts[i].1, &decode.for_example(prompts[i].0), None, None)
    });
    let mut outs = Vec::with_capacity(outputs.len());
    for o in outputs {
        outs.push(o?);
    }
    let ids: Vec<u32> = prompts.iter().map(|(id, _)| *id).collect();
    let report = evaluate_run(
        &outs,
        &golds,
        &sources,
        &ids,
        &vocab,
        EvalMetadata {
            prompt_kind: kind.name().to_string(),
            decode: decode.describe(),
            intervention: "none".to_string(),
        },
    )?;
    write_json(&ctx.eval_path(), &report)?;
    let csv_path = ctx.eval_path().with_extension("csv");
    std::fs::write(&csv_path, report.to_csv())?;
    let mut m = ctx.manifest("evaluate");
    m.add_input(&ctx.out_dir, &ctx.corpus_path())?;
    m.add_input(&ctx.out_dir, &model_path)?;
    m.add_output(&ctx.out_dir, &ctx.eval_path())?;
    m.add_output(&ctx.out_dir, &csv_path)?;
    m.write(&ctx.out_dir)?;
    println!(
        "evaluate[{}]: ΔCR {:+.4} ± {:.4}, Rouge-L F {:.4} ± {:.4} over {} prompts",
        kind.name(),
        report.delta_cr.mean,
        report.delta_cr.stderr,
        report.rouge_f.mean,
        report.rouge_f.stderr,
        report.rows.len()
    );
    Ok(())
}

pub fn cmd_report(ctx: &Ctx) -> Result<()> {
    let _lock = DirLock::acquire(&ctx.out_dir)?;
    let grid: Option<GridArtifact> =
        ctx.grid_path().exists().then(|| read_json(&ctx.grid_path())).transpose()?;
    let units: Option<UnitsArtifact> =
        ctx.units_path().exists().then(|| read_json(&ctx.units_path())).transpose()?;
    let sweep: Option<SweepArtifact> =
        ctx.sweep_path().exists().then(|| read_json(&ctx.sweep_path())).transpose()?;
    let eval: Option<EvalReport> =
        ctx.eval_path().exists().then(|| read_json(&ctx.eval_path())).transpose()?;

    let text = crate::report::render(
        grid.as_ref(),
        units.as_ref(),
        sweep.as_ref(),
        eval.as_ref(),
    );
    let report_path = ctx.out_dir.join("report.txt");
    std::fs::write(&report_path, &text)?;
    print!("{text}");

    let mut m = ctx.manifest("report");
    m.add_output(&ctx.out_dir, &report_path)?;
    if let Some(g) = &grid {
        let p = ctx.out_dir.join("report_grid.csv");
        std::fs::write(&p, g.report.to_csv())?;
        m.add_output(&ctx.out_dir, &p)?;
    }
    if let Some(u) = &units {
        let p = ctx.out_dir.join("report_units.csv");
        std::fs::write(&p, u.scores.to_csv())?;
        m.add_output(&ctx.out_dir, &p)?;
    }
    if let Some(s) = &sweep {
        let p = ctx.out_dir.join("report_sweep.csv");
        std::fs::write(&p, s.result.to_csv())?;
        m.add_output(&ctx.out_dir, &p)?;
    }
    m.write(&ctx.out_dir)?;
    Ok(())
}
