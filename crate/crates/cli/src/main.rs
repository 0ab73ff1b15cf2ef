use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lenprobe_cli::commands;
use lenprobe_cli::{build_ctx, exit_code_for};

#[derive(Parser)]
#[command(
    name = "lenprobe",
    version,
    about = "Locate, quantify, and steer output-length representations in a toy transformer"
)]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration file (key = value lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for all artifacts of this run.
    #[arg(long, default_value = "runs/default", global = true)]
    out_dir: PathBuf,

    /// Master seed override; every stage derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel stages (results are identical for any value).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Proceed despite provenance-hash mismatches between artifacts.
    #[arg(long, global = true)]
    override_provenance: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic compression corpus and its split.
    GenCorpus,
    /// Pretrain the model on all three prompt kinds.
    Train,
    /// Fine-tune the pretrained model on a single prompt kind.
    Finetune,
    /// Generate from test prompts and record tap activations.
    Collect,
    /// Train regression probes over the layer × tap grid.
    Probe,
    /// Probe every hidden unit at the configured locus and rank them.
    Rank,
    /// Sweep unit-scaling interventions over scales × selections.
    Sweep,
    /// Evaluate baseline generation with ΔCR and Rouge-L.
    Evaluate,
    /// Summarize a run directory into tables and plot-ready CSVs.
    Report,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            // help and version requests are not usage errors
            let benign = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if benign { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    let ctx = match build_ctx(args.config, args.out_dir, args.seed, args.threads, args.override_provenance)
    {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code_for(&e) as u8);
        }
    };
    let result = match args.command {
        Command::GenCorpus => commands::cmd_gen_corpus(&ctx),
        Command::Train => commands::cmd_train(&ctx),
        Command::Finetune => commands::cmd_finetune(&ctx),
        Command::Collect => commands::cmd_collect(&ctx),
        Command::Probe => commands::cmd_probe(&ctx),
        Command::Rank => commands::cmd_rank(&ctx),
        Command::Sweep => commands::cmd_sweep(&ctx),
        Command::Evaluate => commands::cmd_evaluate(&ctx),
        Command::Report => commands::cmd_report(&ctx),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
