// Scratch pilot for tuning the end-to-end experiment. Not part of the test suite.
//
// Usage: pilot <n> <epochs> <threads> <lr> <batch> <mode> <ckpt> <rank_layer> <rank_tap> <finetune_epochs>
//   mode: train-only | full | post   (post loads <ckpt> instead of training)

use std::time::Instant;

use lenprobe::capture::{collect_states, Provenance};
use lenprobe::corpus::{generate_corpus, render_prompt, split_corpus, CorpusConfig, PromptKind, SplitRatios};
use lenprobe::intervene::{sweep_intervention, PositionScope, SweepSelection, SweepSpec};
use lenprobe::metrics::spearman;
use lenprobe::model::{
    load_checkpoint, save_checkpoint, token_exact_accuracy, train, DecodeConfig, Model,
    ModelConfig, SplitSel, TapPoint, TrainConfig, TrainPhase,
};
use lenprobe::probe::{probe_grid, probe_per_unit, rank_units, CellData, ProbeConfig};
use lenprobe::vocab::Vocab;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_examples: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8000);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(12);
    let threads: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2);
    let lr: f32 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.5e-3);
    let batch: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(16);
    let mode: String = args.get(6).cloned().unwrap_or_else(|| "full".into());
    let ckpt: String = args.get(7).cloned().unwrap_or_else(|| "/tmp/pilot_model.ckpt".into());
    let rank_layer: u16 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(2);
    let rank_tap = args
        .get(9)
        .map(|s| TapPoint::from_name(s).unwrap())
        .unwrap_or(TapPoint::AttnOut);
    let finetune_epochs: usize = args.get(10).and_then(|s| s.parse().ok()).unwrap_or(0);

    let vocab = Vocab::standard();
    let t0 = Instant::now();
    let mut corpus = generate_corpus(&CorpusConfig {
        n_examples,
        len_range: (8, 32),
        content_prob: 0.45,
        seed: 7,
    })
    .unwrap();
    split_corpus(&mut corpus, SplitRatios { train: 0.8, val: 0.1, test: 0.1 }, 7).unwrap();
    println!("[{:>6.1?}] corpus: {} examples, mean CR {:.4}", t0.elapsed(), n_examples, corpus.mean_compression_ratio());

    let mut model = if mode == "post" {
        let m = load_checkpoint(std::path::Path::new(&ckpt)).unwrap();
        println!("[{:>6.1?}] loaded checkpoint {ckpt}", t0.elapsed());
        m
    } else {
        let mut model = Model::new(ModelConfig { seed: 13, ..Default::default() }).unwrap();
        println!("params: {}", model.param_count());
        let cfg = TrainConfig { epochs, batch, lr, phase: TrainPhase::Pretrain, seed: 99, grad_clip: 1.0, threads, log_epochs: true };
        train(&mut model, &corpus, &vocab, &cfg).unwrap();
        let acc_train = token_exact_accuracy(&model, &corpus, &vocab, SplitSel::Train, TrainPhase::Pretrain).unwrap();
        let acc = token_exact_accuracy(&model, &corpus, &vocab, SplitSel::Val, TrainPhase::Pretrain).unwrap();
        println!("[{:>6.1?}] token accuracy: train {acc_train:.4} val {acc:.4}", t0.elapsed());
        save_checkpoint(&model, std::path::Path::new(&ckpt)).unwrap();
        model
    };

    if finetune_epochs > 0 {
        let cfg = TrainConfig {
            epochs: finetune_epochs,
            batch,
            lr: lr * 0.5,
            phase: TrainPhase::FineTune(PromptKind::Priming),
            seed: 100,
            grad_clip: 1.0,
            threads,
            log_epochs: true,
        };
        train(&mut model, &corpus, &vocab, &cfg).unwrap();
        let acc = token_exact_accuracy(&model, &corpus, &vocab, SplitSel::Val, TrainPhase::FineTune(PromptKind::Priming)).unwrap();
        println!("[{:>6.1?}] finetuned[priming] val accuracy: {acc:.4}", t0.elapsed());
    } else {
        let acc_priming = token_exact_accuracy(&model, &corpus, &vocab, SplitSel::Val, TrainPhase::FineTune(PromptKind::Priming)).unwrap();
        println!("[{:>6.1?}] val token accuracy (priming): {:.4}", t0.elapsed(), acc_priming);
    }
    if mode == "train-only" {
        return;
    }

    // collect on test-split priming prompts
    let decode = DecodeConfig::greedy(40);
    let test_ids: Vec<u32> = corpus.split.test.iter().copied().take(300).collect();
    let prompts: Vec<(u32, Vec<u32>)> = test_ids
        .iter()
        .map(|&id| (id, render_prompt(&corpus.examples[id as usize], PromptKind::Priming, &vocab).unwrap()))
        .collect();
    let layers: Vec<u16> = (1..=6).collect();
    let ds = collect_states(
        &model,
        &prompts,
        &layers,
        &TapPoint::ALL,
        &decode,
        55,
        Provenance { checkpoint_hash: "pilot".into(), prompt_kind: "priming".into(), decode: decode.describe() },
        threads,
    )
    .unwrap();
    println!("[{:>6.1?}] collected {} records ({} per cell)", t0.elapsed(), ds.records.len(), ds.records_per_cell());

    if mode != "post" {
        let grid = probe_grid(&ds, &layers, &TapPoint::ALL, &ProbeConfig::full_vector(5), 2, threads).unwrap();
        println!("[{:>6.1?}] grid:", t0.elapsed());
        print!("{:>6}", "layer");
        for tap in TapPoint::ALL {
            print!("{:>16}", tap.name());
        }
        println!();
        for &l in &layers {
            print!("{l:>6}");
            for tap in TapPoint::ALL {
                match grid.cell(l, tap) {
                    Some(c) => print!("{:>16.3}", c.r2_mean),
                    None => print!("{:>16}", "-"),
                }
            }
            println!();
        }
    }

    // per-unit at the requested locus
    let cell = CellData::from_dataset(&ds, rank_layer, rank_tap).unwrap();
    let scores = probe_per_unit(&cell, &ProbeConfig::per_unit(6), threads).unwrap();
    let ranking = rank_units(&scores, 10, 30).unwrap();
    println!("[{:>6.1?}] locus layer {rank_layer} {}", t0.elapsed(), rank_tap.name());
    print!("top-5:");
    for &u in ranking.order[..5].iter() {
        print!(" {:.3}({u})", scores.scores[u]);
    }
    println!("  avg30 {:.3}", ranking.avg_top_m);
    println!(
        "smallest-10 scores: {:?}",
        ranking.smallest_k.iter().map(|&u| (scores.scores[u] * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );

    // steering sweep on 100 prompts
    let sweep_ids: Vec<u32> = corpus.split.test.iter().copied().take(100).collect();
    let sweep_prompts: Vec<(u32, Vec<u32>)> = sweep_ids
        .iter()
        .map(|&id| (id, render_prompt(&corpus.examples[id as usize], PromptKind::Priming, &vocab).unwrap()))
        .collect();
    let golds: Vec<Vec<u32>> = sweep_ids.iter().map(|&id| corpus.examples[id as usize].gold.clone()).collect();
    let sources: Vec<Vec<u32>> = sweep_ids.iter().map(|&id| corpus.examples[id as usize].source.clone()).collect();
    let spec = SweepSpec {
        layer: rank_layer as usize,
        tap: rank_tap,
        scope: PositionScope::AllGenerated,
        scales: SweepSpec::default_scales(),
        selections: vec![
            SweepSelection { name: "top-10".into(), units: ranking.top_k.clone() },
            SweepSelection { name: "smallest-10".into(), units: ranking.smallest_k.clone() },
        ],
    };
    let sweep = sweep_intervention(&model, &sweep_prompts, &golds, &sources, &vocab, &spec, &decode, threads).unwrap();
    println!("[{:>6.1?}] sweep at layer {rank_layer} {}:", t0.elapsed(), rank_tap.name());
    let scales = SweepSpec::default_scales();
    for sel in ["top-10", "smallest-10"] {
        let mut lens = Vec::new();
        print!("{sel:>12}:");
        for &s in &scales {
            let c = sweep.cell(sel, s).unwrap();
            print!(" s{:+.0}: len {:>5.2} dCR {:+.3} RL {:.3} |", s, c.mean_gen_len, c.mean_delta_cr, c.mean_rouge_l);
            lens.push(c.mean_gen_len);
        }
        let rho = spearman(&scales.iter().map(|&s| s as f64).collect::<Vec<_>>(), &lens);
        println!(" spearman {rho:+.3}");
        let base = sweep.cell(sel, 1.0).unwrap().mean_delta_cr;
        let max_dev = scales
            .iter()
            .map(|&s| (sweep.cell(sel, s).unwrap().mean_delta_cr - base).abs())
            .fold(0.0f64, f64::max);
        println!("{sel:>12}: max |dCR - dCR(base)| = {max_dev:.4}");
    }
    println!("[{:>6.1?}] done", t0.elapsed());
}
