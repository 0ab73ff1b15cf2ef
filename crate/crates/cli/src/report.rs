//! Human-readable summary tables for a run directory.

use std::collections::BTreeSet;
use std::fmt::Write;

use lenprobe::metrics::EvalReport;
use lenprobe::model::TapPoint;

use crate::commands::{GridArtifact, SweepArtifact, UnitsArtifact};

pub fn render(
    grid: Option<&GridArtifact>,
    units: Option<&UnitsArtifact>,
    sweep: Option<&SweepArtifact>,
    eval: Option<&EvalReport>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "lenprobe run report");
    let _ = writeln!(out, "===================");

    match grid {
        Some(g) => render_grid(&mut out, g),
        None => {
            let _ = writeln!(out, "\nprobe grid: absent (run `lenprobe probe`)");
        }
    }
    match units {
        Some(u) => render_units(&mut out, u),
        None => {
            let _ = writeln!(out, "\nunit ranking: absent (run `lenprobe rank`)");
        }
    }
    match sweep {
        Some(s) => render_sweep(&mut out, s),
        None => {
            let _ = writeln!(out, "\nsweep: absent (run `lenprobe sweep`)");
        }
    }
    match eval {
        Some(e) => render_eval(&mut out, e),
        None => {
            let _ = writeln!(out, "\nevaluation: absent (run `lenprobe evaluate`)");
        }
    }
    out
}

fn render_grid(out: &mut String, g: &GridArtifact) {
    let _ = writeln!(
        out,
        "\nprobe grid [{} prompts, {} runs per cell] — val R² mean ± stderr",
        g.prompt_kind, g.report.n_runs
    );
    let layers: BTreeSet<u16> = g.report.cells.iter().map(|c| c.layer).collect();
    let _ = write!(out, "{:>6}", "layer");
    for tap in TapPoint::ALL {
        let _ = write!(out, "  {:>16}", tap.name());
    }
    let _ = writeln!(out);
    for &layer in &layers {
        let _ = write!(out, "{layer:>6}");
        for tap in TapPoint::ALL {
            match g.report.cell(layer, tap) {
                Some(c) => {
                    let _ = write!(out, "  {:>8.3} ±{:>5.3}", c.r2_mean, c.r2_stderr);
                }
                None => {
                    let _ = write!(out, "  {:>16}", "absent");
                }
            }
        }
        let _ = writeln!(out);
    }
    for a in &g.report.absent {
        let _ = writeln!(out, "  absent: layer {} {} — {}", a.layer, a.tap.name(), a.reason);
    }
}

fn render_units(out: &mut String, u: &UnitsArtifact) {
    let _ = writeln!(
        out,
        "\nper-unit R² [layer {} {} on {} prompts]",
        u.layer,
        u.tap.name(),
        u.prompt_kind
    );
    let top: Vec<String> = u
        .ranking
        .order
        .iter()
        .take(5)
        .map(|&unit| format!("{:.3} ({unit})", u.scores.scores[unit]))
        .collect();
    let _ = writeln!(out, "  top-5: {}", top.join("  "));
    let _ = writeln!(out, "  avg-{}: {:.3}", u.ranking.m, u.ranking.avg_top_m);
    let _ = writeln!(out, "  top-{}: {:?}", u.ranking.k, u.ranking.top_k);
    let _ = writeln!(out, "  smallest-{}: {:?}", u.ranking.k, u.ranking.smallest_k);
}

fn render_sweep(out: &mut String, s: &SweepArtifact) {
    let _ = writeln!(
        out,
        "\nintervention sweep [layer {} {}, {}, {} prompts, decode {}]",
        s.result.layer,
        s.result.tap.name(),
        s.prompt_kind,
        s.result.n_prompts,
        s.result.decode
    );
    let selections: Vec<String> = {
        let mut seen = Vec::new();
        for c in &s.result.cells {
            if !seen.contains(&c.selection) {
                seen.push(c.selection.clone());
            }
        }
        seen
    };
    for sel in &selections {
        let mut cells: Vec<_> = s.result.cells.iter().filter(|c| &c.selection == sel).collect();
        cells.sort_by(|a, b| a.scale.total_cmp(&b.scale));
        let _ = writeln!(out, "  {sel}:");
        let _ = writeln!(
            out,
            "    {:>6} {:>10} {:>12} {:>12} {:>10}",
            "scale", "mean len", "ΔCR", "Rouge-L F", "stderr ΔCR"
        );
        for c in cells {
            let _ = writeln!(
                out,
                "    {:>6} {:>10.2} {:>+12.4} {:>12.4} {:>10.4}",
                c.scale, c.mean_gen_len, c.mean_delta_cr, c.mean_rouge_l, c.stderr_delta_cr
            );
        }
    }
}

fn render_eval(out: &mut String, e: &EvalReport) {
    let _ = writeln!(
        out,
        "\nbaseline evaluation [{} prompts, {}, decode {}]",
        e.rows.len(),
        e.metadata.prompt_kind,
        e.metadata.decode
    );
    let _ = writeln!(out, "  ΔCR:       {:+.4} ± {:.4}", e.delta_cr.mean, e.delta_cr.stderr);
    let _ = writeln!(out, "  Rouge-L F: {:.4} ± {:.4}", e.rouge_f.mean, e.rouge_f.stderr);
    let _ = writeln!(out, "  CR (gen):  {:.4} ± {:.4}", e.cr_gen.mean, e.cr_gen.stderr);
    let _ = writeln!(out, "  CR (gold): {:.4} ± {:.4}", e.cr_gold.mean, e.cr_gold.stderr);
}
