//! Command implementations. Each one writes its outputs and a manifest into
//! the configured directory.

use std::path::{Path, PathBuf};

use coagents::nn::{Adam, AgentModel, Head};
use coagents::search::{alns_solve, coagents_solve, Ablation, Agents, SearchBudget, SearchConfig, SearchResult, TraceRow};
use coagents::train::{mean_loss, train, Dataset, LossRow, TrainConfig};
use coagents::vrp::io::{write_instance, InstanceRecord};
use coagents::vrp::{gap, generate_instance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::*;
use crate::error::{CliError, Result};
use crate::parallel::{par_map, sub_seed};
use crate::report::{build_report, write_report};
use crate::source::{generated_name, load_instances, read_best_known, reference, reference_solution, NamedInstance};
use crate::stats::{mean, paired_bootstrap, PairedComparison};

pub const RESULTS_FILE: &str = "results.json";
pub const TRACE_DIR: &str = "traces";
pub const LOSS_FILE: &str = "loss.csv";
pub const MODEL_FILE: &str = "model.json";

/// Outcome of one instance in a search run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub name: String,
    pub instance: InstanceRecord,
    pub seed: u64,
    pub objective: f64,
    pub feasible: bool,
    pub routes: Vec<Vec<usize>>,
    pub iterations: usize,
    pub moves_applied: usize,
    pub jumps: usize,
    pub agent_calls: usize,
    /// Wall-clock time, present only for timed runs.
    pub elapsed_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub solver: String,
    pub budget: usize,
    pub timing: bool,
    pub instances: Vec<InstanceResult>,
}

impl RunResults {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        read_json(dir.as_ref().join(RESULTS_FILE))
    }
}

pub fn trace_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(TRACE_DIR).join(format!("{name}.csv"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

pub fn read_trace(dir: &Path, name: &str) -> Result<Vec<TraceRow>> {
    read_csv(&trace_path(dir, name))
}

/// Runs a resolved configuration and writes its manifest.
pub fn execute(config: &RunConfig) -> Result<RunManifest> {
    let started = now_unix_ms();
    create_dir(config.out())?;
    let seeds = match config {
        RunConfig::Gen(c) => gen(c)?,
        RunConfig::Dataset(c) => dataset(c)?,
        RunConfig::Train(c) => train_cmd(c)?,
        RunConfig::Solve(c) => solve(c)?,
        RunConfig::Alns(c) => alns(c)?,
        RunConfig::Ablate(c) => ablate(c)?,
        RunConfig::Report(c) => report(c)?,
    };
    let manifest = RunManifest {
        config: config.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds,
        started_unix_ms: started,
        finished_unix_ms: now_unix_ms(),
    };
    manifest.write(config.out())?;
    Ok(manifest)
}

/// Re-executes the run recorded in `manifest` on one thread, optionally
/// into a different directory.
pub fn rerun(manifest: &Path, out: Option<PathBuf>) -> Result<RunManifest> {
    let mut config = RunManifest::read(manifest)?.config;
    if let Some(o) = out {
        config.set_out(o);
    }
    config.set_jobs(1);
    execute(&config)
}

fn per_item_seeds(base: u64, count: usize) -> Vec<u64> {
    std::iter::once(base).chain((0..count).map(|i| sub_seed(base, i))).collect()
}

fn gen(c: &GenConfig) -> Result<Vec<u64>> {
    for i in 0..c.count {
        let inst = generate_instance(c.n, c.variant, sub_seed(c.seed, i))?;
        write_instance(&inst, c.out.join(format!("{}.json", generated_name(c.seed, i))))?;
    }
    Ok(per_item_seeds(c.seed, c.count))
}

pub const DATASET_FILE: &str = "dataset.json";

fn dataset(c: &DatasetConfig) -> Result<Vec<u64>> {
    let instances = load_instances(&c.source)?;
    let best_known = read_best_known(c.best_known.as_deref())?;
    let parts = par_map(&instances, c.jobs, |i, inst| {
        let reference = reference_solution(inst, &best_known)?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(c.seed, i));
        let mut part = Dataset::new(c.kind);
        match c.kind {
            coagents::train::DatasetKind::Select => part.add_selection(&inst.instance, &reference, &c.selection, &mut rng),
            coagents::train::DatasetKind::Jump => part.add_jump(&inst.instance, &reference, &c.jump, &mut rng)?,
        }
        Ok(part)
    })?;
    let mut ds = Dataset::new(c.kind);
    for p in parts {
        ds.merge(p)?;
    }
    ds.write(c.out.join(DATASET_FILE))?;
    let mut counts = ds.counts.clone();
    counts.insert("examples".into(), ds.len());
    counts.insert("instances".into(), ds.instances.len());
    write_json(c.out.join("counts.json"), &counts)?;
    Ok(per_item_seeds(c.seed, instances.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub agent: Head,
    pub start_step: u64,
    pub end_step: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub aborted: Option<String>,
}

fn train_cmd(c: &TrainRunConfig) -> Result<Vec<u64>> {
    let data_set = Dataset::read(&c.dataset)?;
    let (mut model, mut opt) = match &c.resume {
        Some(path) => {
            let (m, ck) = AgentModel::<f64>::load(path)?;
            if m.head() != c.agent || m.config() != &c.model {
                return Err(CliError::Mismatch(format!("checkpoint {} does not match the requested agent or model", path.display())));
            }
            let opt = match &ck.optimizer {
                Some(r) => Adam::from_record(m.params(), r)?,
                None => return Err(CliError::Mismatch(format!("checkpoint {} has no optimizer state to resume", path.display()))),
            };
            (m, opt)
        }
        None => {
            let m = AgentModel::<f64>::new(c.model.clone(), c.agent, c.seed)?;
            let opt = Adam::new(m.params(), c.schedule);
            (m, opt)
        }
    };
    let data = data_set.samples::<f64>(&c.model)?;
    let val = match &c.validation {
        Some(p) => Dataset::read(p)?.samples::<f64>(&c.model)?,
        None => Vec::new(),
    };
    let start_step = opt.step_count();
    let ckpt_dir = c.out.join("checkpoints");
    if c.checkpoint_every.is_some() {
        create_dir(&ckpt_dir)?;
    }
    let tc = TrainConfig {
        schedule: opt.schedule,
        batch_size: c.batch_size,
        max_steps: c.steps.saturating_sub(start_step),
        // A resumed run draws a fresh shuffle stream.
        seed: sub_seed(c.seed, start_step as usize),
        checkpoint_every: c.checkpoint_every,
        eval_every: c.eval_every,
    };
    let initial_loss = mean_loss(&model, &data)?;
    let report = train(&mut model, &mut opt, &data, &val, &tc, |m, o| {
        let path = ckpt_dir.join(format!("step_{:06}.json", o.step_count()));
        m.save(&path, o.step_count(), Some(o.to_record())).map_err(Into::into)
    })?;
    let mut curve: Vec<LossRow> = Vec::new();
    if let Some(path) = &c.resume {
        // Keep the earlier part of the curve when the checkpoint came from a
        // train run directory.
        if let Some(prev) = run_dir_of(path).map(|d| d.join(LOSS_FILE)).filter(|p| p.exists()) {
            curve = read_csv::<LossRow>(&prev)?.into_iter().filter(|r| r.step <= start_step).collect();
        }
    }
    curve.extend(report.curve);
    write_csv(&c.out.join(LOSS_FILE), &curve)?;
    model.save(c.out.join(MODEL_FILE), opt.step_count(), Some(opt.to_record()))?;
    let summary = TrainSummary {
        agent: c.agent,
        start_step,
        end_step: opt.step_count(),
        initial_loss,
        final_loss: report.final_loss,
        aborted: report.aborted,
    };
    write_json(c.out.join("train.json"), &summary)?;
    Ok(vec![c.seed, tc.seed])
}

fn run_dir_of(checkpoint: &Path) -> Option<&Path> {
    let dir = checkpoint.parent()?;
    if dir.file_name().is_some_and(|f| f == "checkpoints") {
        dir.parent()
    } else {
        Some(dir)
    }
}

pub fn load_agents(src: &AgentSource) -> Result<(AgentModel<f64>, Option<AgentModel<f64>>)> {
    match src {
        AgentSource::Checkpoints { select, jump } => {
            let (s, _) = AgentModel::<f64>::load(select)?;
            let j = match jump {
                Some(p) => Some(AgentModel::<f64>::load(p)?.0),
                None => None,
            };
            Ok((s, j))
        }
        AgentSource::Untrained { config, seed } => Ok((
            AgentModel::new(config.clone(), Head::Select, sub_seed(*seed, 0))?,
            Some(AgentModel::new(config.clone(), Head::Jump, sub_seed(*seed, 1))?),
        )),
    }
}

fn instance_result(inst: &NamedInstance, seed: u64, r: &SearchResult, timing: bool) -> InstanceResult {
    InstanceResult {
        name: inst.name.clone(),
        instance: InstanceRecord::from_instance(&inst.instance),
        seed,
        objective: r.best.objective(),
        feasible: r.best.is_feasible(),
        routes: r.best.routes().to_vec(),
        iterations: r.stats.iterations,
        moves_applied: r.stats.moves_applied,
        jumps: r.stats.jumps,
        agent_calls: r.stats.agent_calls,
        elapsed_ms: timing.then(|| r.elapsed.as_secs_f64() * 1e3),
    }
}

fn write_run(out: &Path, solver: String, budget: usize, timing: bool, rows: Vec<(InstanceResult, Vec<TraceRow>)>) -> Result<RunResults> {
    create_dir(&out.join(TRACE_DIR))?;
    let mut instances = Vec::with_capacity(rows.len());
    for (res, trace) in rows {
        write_csv(&trace_path(out, &res.name), &trace)?;
        instances.push(res);
    }
    let results = RunResults { solver, budget, timing, instances };
    write_json(out.join(RESULTS_FILE), &results)?;
    Ok(results)
}

fn solve_into(c: &SolveConfig, instances: &[NamedInstance]) -> Result<RunResults> {
    let (select, jump) = load_agents(&c.agents)?;
    let agents = Agents { select: &select, jump: if c.ablation == Ablation::NoJump { None } else { jump.as_ref() } };
    if c.psg_traces {
        create_dir(&c.out.join("psg"))?;
    }
    let rows = par_map(instances, c.jobs, |i, inst| {
        let seed = sub_seed(c.search.seed, i);
        let cfg = SearchConfig {
            budget: SearchBudget::iterations(c.search.iterations, seed),
            stagnation: c.search.stagnation,
            beam_width: c.search.beam_width,
            sample_cap: c.search.sample_cap,
            ablation: c.ablation,
            timing: c.timing,
        };
        let r = coagents_solve(&inst.instance, agents, &cfg, None)?;
        if let (true, Some(pool)) = (c.psg_traces, &r.psg) {
            pool.write_trace(c.out.join("psg").join(format!("{}.json", inst.name)))?;
        }
        Ok((instance_result(inst, seed, &r, c.timing), r.trace))
    })?;
    let solver = match c.ablation {
        Ablation::Full => "coagents".to_string(),
        a => format!("coagents:{a}"),
    };
    write_run(&c.out, solver, c.search.iterations, c.timing, rows)
}

fn solve(c: &SolveConfig) -> Result<Vec<u64>> {
    let instances = load_instances(&c.source)?;
    solve_into(c, &instances)?;
    Ok(per_item_seeds(c.search.seed, instances.len()))
}

fn alns(c: &AlnsConfig) -> Result<Vec<u64>> {
    let instances = load_instances(&c.source)?;
    let rows = par_map(&instances, c.jobs, |i, inst| {
        let seed = sub_seed(c.seed, i);
        let r = alns_solve(&inst.instance, &SearchBudget::iterations(c.iterations, seed), c.timing)?;
        Ok((instance_result(inst, seed, &r, c.timing), r.trace))
    })?;
    write_run(&c.out, "alns".into(), c.iterations, c.timing, rows)?;
    Ok(per_item_seeds(c.seed, instances.len()))
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Ablation,
    pub mean_objective: f64,
    pub mean_gap: f64,
    pub mean_ms: Option<f64>,
    /// Gap of this variant minus gap of the full method, paired by instance.
    pub vs_full: Option<PairedComparison>,
}

#[derive(Serialize)]
struct AblationCsvRow {
    variant: String,
    mean_objective: String,
    mean_gap: String,
    gap_diff_vs_full: String,
    ci_low: String,
    ci_high: String,
    mean_ms: String,
}

fn ablate(c: &AblateConfig) -> Result<Vec<u64>> {
    let instances = load_instances(&c.source)?;
    let best_known = read_best_known(c.best_known.as_deref())?;
    let refs = par_map(&instances, c.jobs, |_, inst| Ok(reference(inst, &best_known)?.objective))?;
    let mut gaps: Vec<(Ablation, Vec<f64>, RunResults)> = Vec::new();
    for variant in Ablation::ALL {
        let sub = SolveConfig {
            source: c.source.clone(),
            agents: c.agents.clone(),
            search: c.search.clone(),
            ablation: variant,
            psg_traces: false,
            timing: c.timing,
            jobs: c.jobs,
            out: c.out.join(variant.name()),
        };
        create_dir(&sub.out)?;
        let started = now_unix_ms();
        let res = solve_into(&sub, &instances)?;
        RunManifest {
            config: RunConfig::Solve(sub.clone()),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: per_item_seeds(c.search.seed, instances.len()),
            started_unix_ms: started,
            finished_unix_ms: now_unix_ms(),
        }
        .write(&sub.out)?;
        let g: Vec<f64> = res.instances.iter().zip(&refs).map(|(r, &opt)| gap(r.objective, opt)).collect();
        gaps.push((variant, g, res));
    }
    let full = gaps[0].1.clone();
    let rows: Vec<AblationRow> = gaps
        .iter()
        .map(|(variant, g, res)| AblationRow {
            variant: *variant,
            mean_objective: mean(&res.instances.iter().map(|r| r.objective).collect::<Vec<_>>()),
            mean_gap: mean(g),
            mean_ms: res.timing.then(|| mean(&res.instances.iter().filter_map(|r| r.elapsed_ms).collect::<Vec<_>>())),
            vs_full: (*variant != Ablation::Full)
                .then(|| paired_bootstrap(g, &full, c.bootstrap.resamples, c.bootstrap.level, c.bootstrap.seed)),
        })
        .collect();
    write_json(c.out.join("ablation.json"), &rows)?;
    let csv_rows: Vec<AblationCsvRow> = rows
        .iter()
        .map(|r| {
            let cmp = |f: fn(&PairedComparison) -> f64| r.vs_full.as_ref().map_or(String::new(), |p| format!("{:.4}", f(p)));
            AblationCsvRow {
                variant: r.variant.to_string(),
                mean_objective: format!("{:.4}", r.mean_objective),
                mean_gap: format!("{:.4}", r.mean_gap),
                gap_diff_vs_full: cmp(|p| p.mean_diff),
                ci_low: cmp(|p| p.ci_low),
                ci_high: cmp(|p| p.ci_high),
                mean_ms: r.mean_ms.map_or(String::new(), |m| format!("{m:.1}")),
            }
        })
        .collect();
    write_csv(&c.out.join("ablation.csv"), &csv_rows)?;
    Ok(per_item_seeds(c.search.seed, instances.len()))
}

fn report(c: &ReportConfig) -> Result<Vec<u64>> {
    let r = build_report(c)?;
    write_report(&c.out, &r)?;
    Ok(vec![c.bootstrap.seed])
}
