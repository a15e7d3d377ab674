//! Aggregates search runs into summary, checkpoint and paired tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use coagents::search::checkpoints;
use coagents::vrp::gap;
use serde::{Deserialize, Serialize};

use crate::config::{write_json, ReportConfig};
use crate::error::{CliError, Result};
use crate::run::{read_trace, RunResults};
use crate::source::{read_best_known, reference, NamedInstance};
use crate::stats::{mean, paired_bootstrap, PairedComparison, TIE_TOLERANCE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub iteration: usize,
    pub fraction: f64,
    pub mean_best_objective: f64,
    pub mean_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Last component of the run directory.
    pub label: String,
    pub dir: PathBuf,
    pub solver: String,
    pub instances: usize,
    pub budget: usize,
    pub feasible: usize,
    pub mean_objective: f64,
    pub mean_gap: f64,
    /// Total wall-clock over the set, timed runs only.
    pub total_ms: Option<f64>,
    /// Mean per-instance wall-clock, timed runs only.
    pub mean_ms: Option<f64>,
    pub checkpoints: Vec<CheckpointRow>,
    pub gaps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub candidate: String,
    pub baseline: String,
    /// Candidate gap minus baseline gap, paired by instance.
    pub gap: PairedComparison,
    pub final_candidate: f64,
    pub final_baseline: f64,
    /// The candidate ends above the baseline at the last checkpoint, beyond
    /// rounding noise relative to the baseline.
    pub regression: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub references: BTreeMap<String, f64>,
    pub runs: Vec<RunSummary>,
    pub comparisons: Vec<Comparison>,
}

/// Candidate final objective above the baseline's beyond rounding noise.
pub fn is_regression(candidate: f64, baseline: f64) -> bool {
    !(candidate <= baseline + TIE_TOLERANCE * baseline.abs().max(1.0))
}

pub fn build_report(c: &ReportConfig) -> Result<Report> {
    if c.runs.is_empty() {
        return Err(CliError::Usage("report needs at least one run directory".into()));
    }
    let best_known = read_best_known(c.best_known.as_deref())?;
    let results: Vec<RunResults> = c.runs.iter().map(RunResults::read).collect::<Result<_>>()?;
    let first = &results[0];
    for (dir, r) in c.runs.iter().zip(&results).skip(1) {
        let same = r.instances.len() == first.instances.len()
            && r.instances.iter().zip(&first.instances).all(|(a, b)| a.name == b.name && a.instance == b.instance);
        if !same {
            return Err(CliError::Mismatch(format!("{} was run on a different instance set than {}", dir.display(), c.runs[0].display())));
        }
    }
    let mut references = BTreeMap::new();
    for r in &first.instances {
        let instance = r.instance.clone().into_instance().map_err(|msg| CliError::Parse { path: c.runs[0].join(crate::run::RESULTS_FILE), msg })?;
        let named = NamedInstance { name: r.name.clone(), instance };
        references.insert(r.name.clone(), reference(&named, &best_known)?.objective);
    }
    let mut runs = Vec::new();
    for (dir, res) in c.runs.iter().zip(&results) {
        let gaps: Vec<f64> = res.instances.iter().map(|r| gap(r.objective, references[&r.name])).collect();
        let mut per_ckpt = vec![(0usize, Vec::new(), Vec::new()); c.checkpoints];
        for r in &res.instances {
            let trace = read_trace(dir, &r.name)?;
            for (slot, (at, best)) in per_ckpt.iter_mut().zip(checkpoints(&trace, c.checkpoints, res.budget)) {
                slot.0 = at;
                slot.1.push(best);
                slot.2.push(gap(best, references[&r.name]));
            }
        }
        let times: Vec<f64> = res.instances.iter().filter_map(|r| r.elapsed_ms).collect();
        let timed = res.timing && times.len() == res.instances.len();
        runs.push(RunSummary {
            label: dir.file_name().map_or_else(|| dir.display().to_string(), |f| f.to_string_lossy().into_owned()),
            dir: dir.clone(),
            solver: res.solver.clone(),
            instances: res.instances.len(),
            budget: res.budget,
            feasible: res.instances.iter().filter(|r| r.feasible).count(),
            mean_objective: mean(&res.instances.iter().map(|r| r.objective).collect::<Vec<_>>()),
            mean_gap: mean(&gaps),
            total_ms: timed.then(|| times.iter().sum()),
            mean_ms: timed.then(|| mean(&times)),
            checkpoints: per_ckpt
                .into_iter()
                .enumerate()
                .map(|(i, (at, objs, gs))| CheckpointRow {
                    iteration: at,
                    fraction: (i + 1) as f64 / c.checkpoints as f64,
                    mean_best_objective: mean(&objs),
                    mean_gap: mean(&gs),
                })
                .collect(),
            gaps,
        });
    }
    let comparisons = runs
        .iter()
        .skip(1)
        .map(|b| {
            let a = &runs[0];
            let last = |r: &RunSummary| r.checkpoints.last().map_or(r.mean_objective, |c| c.mean_best_objective);
            let (fa, fb) = (last(a), last(b));
            Comparison {
                candidate: a.label.clone(),
                baseline: b.label.clone(),
                gap: paired_bootstrap(&a.gaps, &b.gaps, c.bootstrap.resamples, c.bootstrap.level, c.bootstrap.seed),
                final_candidate: fa,
                final_baseline: fb,
                regression: is_regression(fa, fb),
            }
        })
        .collect();
    Ok(Report { references, runs, comparisons })
}

fn ms(v: Option<f64>) -> String {
    v.map_or("-".into(), |m| format!("{m:.1}"))
}

pub fn render_markdown(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Search report\n");
    let _ = writeln!(s, "| run | solver | instances | feasible | mean objective | mean gap | total ms | mean ms |");
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
    for run in &r.runs {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.4} | {:.4} | {} | {} |",
            run.label,
            run.solver,
            run.instances,
            run.feasible,
            run.mean_objective,
            run.mean_gap,
            ms(run.total_ms),
            ms(run.mean_ms)
        );
    }
    if let Some(first) = r.runs.first() {
        let _ = writeln!(s, "\n## Best objective at checkpoints\n");
        let mut head = "| fraction | iteration |".to_string();
        let mut rule = "|---|---|".to_string();
        for run in &r.runs {
            let _ = write!(head, " {} objective | {} gap |", run.label, run.label);
            rule.push_str("---|---|");
        }
        let _ = writeln!(s, "{head}\n{rule}");
        for (i, c) in first.checkpoints.iter().enumerate() {
            let _ = write!(s, "| {:.1} | {} |", c.fraction, c.iteration);
            for run in &r.runs {
                let row = &run.checkpoints[i];
                let _ = write!(s, " {:.4} | {:.4} |", row.mean_best_objective, row.mean_gap);
            }
            s.push('\n');
        }
    }
    if !r.comparisons.is_empty() {
        let _ = writeln!(s, "\n## Paired comparison (gap difference, candidate minus baseline)\n");
        let _ = writeln!(s, "| candidate | baseline | mean diff | CI low | CI high | effect size | wins | ties | losses | final | flag |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|---|");
        for c in &r.comparisons {
            let _ = writeln!(
                s,
                "| {} | {} | {:.4} | {:.4} | {:.4} | {:.3} | {} | {} | {} | {:.4} vs {:.4} | {} |",
                c.candidate,
                c.baseline,
                c.gap.mean_diff,
                c.gap.ci_low,
                c.gap.ci_high,
                c.gap.effect_size,
                c.gap.wins,
                c.gap.ties,
                c.gap.losses,
                c.final_candidate,
                c.final_baseline,
                if c.regression { "REGRESSION" } else { "ok" }
            );
        }
    }
    s
}

pub fn write_report(dir: &Path, r: &Report) -> Result<()> {
    write_json(dir.join("report.json"), r)?;
    let path = dir.join("report.md");
    std::fs::write(&path, render_markdown(r)).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_noise_is_not_a_regression() {
        assert!(!is_regression(4.512_800_000_000_001, 4.5128));
        assert!(!is_regression(4.0, 4.5));
        assert!(is_regression(4.5129, 4.5128));
        assert!(is_regression(f64::NAN, 4.5128));
    }
}
