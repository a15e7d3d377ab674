//! Flag parsing and resolution into explicit run configurations.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coagents::nn::{Head, ModelConfig, StepSchedule};
use coagents::psg::SAMPLE_CAP;
use coagents::search::{Ablation, DEFAULT_BEAM_WIDTH, DEFAULT_ITERATIONS, DEFAULT_STAGNATION};
use coagents::train::{DatasetKind, JumpOptions, SelectionOptions, TrainConfig};
use coagents::vrp::Variant;

use crate::config::*;
use crate::error::{CliError, Result};
use crate::source::expand_paths;

#[derive(Debug, Parser)]
#[command(name = "coagents", version, about = "Learned local search for vehicle routing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate random instances.
    Gen(GenArgs),
    /// Build a selection or jump training set.
    Dataset(DatasetArgs),
    /// Train one agent on a dataset.
    Train(TrainArgs),
    /// Run the agent-driven search.
    Solve(SolveArgs),
    /// Run the ALNS baseline.
    Alns(AlnsArgs),
    /// Run the four ablation variants and tabulate them.
    Ablate(AblateArgs),
    /// Aggregate result directories.
    Report(ReportArgs),
    /// Re-execute a run from its manifest on one thread.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct InstanceArgs {
    /// Instance files or directories of them.
    #[arg(long, num_args = 1.., conflicts_with = "gen")]
    pub instances: Vec<PathBuf>,
    /// Generated set `n,count,variant[,seed]`.
    #[arg(long)]
    pub gen: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value = "cvrp")]
    pub variant: Variant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Select,
    Jump,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[command(flatten)]
    pub source: InstanceArgs,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON map from instance name to `{objective, routes}`.
    #[arg(long)]
    pub best_known: Option<PathBuf>,
    /// Comma-separated target gaps, as fractions.
    #[arg(long, value_delimiter = ',')]
    pub tiers: Option<Vec<f64>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub alns_iterations: Option<usize>,
    #[arg(long)]
    pub max_targets: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelPreset {
    Desk,
    Full,
}

impl ModelPreset {
    fn config(self) -> ModelConfig {
        match self {
            ModelPreset::Desk => ModelConfig::desk(),
            ModelPreset::Full => ModelConfig::full(),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SchedulePreset {
    /// Tenth-length schedule.
    Desk,
    Full,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub agent: KindArg,
    #[arg(long, value_enum, default_value = "desk")]
    pub model: ModelPreset,
    #[arg(long, value_enum, default_value = "desk")]
    pub schedule: SchedulePreset,
    /// Total steps counted from the start of training.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Continue from a checkpoint holding optimizer state.
    #[arg(long, conflicts_with = "model")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AgentArgs {
    /// Selection agent checkpoint.
    #[arg(long, required_unless_present = "untrained")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub jump_checkpoint: Option<PathBuf>,
    /// Use freshly initialized agents instead of checkpoints.
    #[arg(long, conflicts_with_all = ["checkpoint", "jump_checkpoint"])]
    pub untrained: bool,
    #[arg(long, value_enum, default_value = "desk", requires = "untrained")]
    pub model: Option<ModelPreset>,
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub budget_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Iterations without improvement before a jump, or `never`.
    #[arg(long, default_value_t = DEFAULT_STAGNATION.to_string())]
    pub stagnation: String,
    #[arg(long, default_value_t = DEFAULT_BEAM_WIDTH)]
    pub beam_width: usize,
    #[arg(long, default_value_t = SAMPLE_CAP)]
    pub sample_cap: usize,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub source: InstanceArgs,
    #[command(flatten)]
    pub agents: AgentArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, default_value = "full")]
    pub ablation: Ablation,
    /// Also write the explored search graph of every instance.
    #[arg(long)]
    pub psg_traces: bool,
    /// Record wall-clock times (outputs are then no longer reproducible).
    #[arg(long)]
    pub timing: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlnsArgs {
    #[command(flatten)]
    pub source: InstanceArgs,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub budget_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub timing: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[arg(long, default_value_t = 2000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub bootstrap_seed: u64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub source: InstanceArgs,
    #[command(flatten)]
    pub agents: AgentArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    #[arg(long)]
    pub best_known: Option<PathBuf>,
    #[arg(long)]
    pub timing: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Result directories; the first is compared against each other one.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub best_known: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub checkpoints: usize,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What the binary should do once flags are resolved.
#[derive(Debug)]
pub enum Action {
    Run(RunConfig),
    Rerun { manifest: PathBuf, out: Option<PathBuf> },
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn parse_gen_spec(spec: &str) -> Result<InstanceSource> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(usage(format!("--gen expects n,count,variant[,seed], got `{spec}`")));
    }
    let num = |s: &str, what: &str| s.parse::<u64>().map_err(|_| usage(format!("--gen: {what} `{s}` is not a non-negative integer")));
    Ok(InstanceSource::Generated {
        n: num(parts[0], "n")? as usize,
        count: num(parts[1], "count")? as usize,
        variant: parts[2].parse().map_err(usage)?,
        seed: parts.get(3).map_or(Ok(0), |s| num(s, "seed"))?,
    })
}

fn resolve_source(a: &InstanceArgs) -> Result<InstanceSource> {
    match (&a.gen, a.instances.is_empty()) {
        (Some(_), false) => Err(usage("--instances and --gen are mutually exclusive")),
        (Some(spec), true) => parse_gen_spec(spec),
        (None, false) => {
            let paths = expand_paths(&a.instances)?;
            if paths.is_empty() {
                return Err(usage("--instances matched no instance files"));
            }
            Ok(InstanceSource::Files { paths })
        }
        (None, true) => Err(usage("one of --instances or --gen is required")),
    }
}

fn resolve_agents(a: &AgentArgs) -> Result<AgentSource> {
    match (&a.checkpoint, a.untrained) {
        (Some(_), true) => Err(usage("--checkpoint and --untrained are mutually exclusive")),
        (Some(select), false) => Ok(AgentSource::Checkpoints { select: select.clone(), jump: a.jump_checkpoint.clone() }),
        (None, true) => Ok(AgentSource::Untrained { config: a.model.unwrap_or(ModelPreset::Desk).config(), seed: a.model_seed }),
        (None, false) => Err(usage("missing checkpoint: pass --checkpoint or --untrained")),
    }
}

fn resolve_search(a: &SearchArgs) -> Result<SearchParams> {
    let stagnation = match a.stagnation.as_str() {
        "never" | "inf" => None,
        s => Some(s.parse().map_err(|_| usage(format!("--stagnation expects a count or `never`, got `{s}`")))?),
    };
    if stagnation == Some(0) {
        return Err(usage("--stagnation must be positive"));
    }
    if a.budget_iters == 0 {
        return Err(usage("--budget-iters must be positive"));
    }
    Ok(SearchParams { iterations: a.budget_iters, seed: a.seed, stagnation, beam_width: a.beam_width, sample_cap: a.sample_cap })
}

fn resolve_bootstrap(a: &BootstrapArgs) -> Result<BootstrapParams> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(usage("--level must lie in (0, 1)"));
    }
    Ok(BootstrapParams { resamples: a.resamples, level: a.level, seed: a.bootstrap_seed })
}

fn kind_head(k: KindArg) -> Head {
    match k {
        KindArg::Select => Head::Select,
        KindArg::Jump => Head::Jump,
    }
}

pub fn resolve(cli: Cli) -> Result<Action> {
    let cfg = match cli.command {
        Command::Rerun(a) => return Ok(Action::Rerun { manifest: a.manifest, out: a.out }),
        Command::Gen(a) => RunConfig::Gen(GenConfig { n: a.n, count: a.count, variant: a.variant, seed: a.seed, out: a.out }),
        Command::Dataset(a) => {
            let mut selection = SelectionOptions::default();
            let mut jump = JumpOptions::default();
            if let Some(t) = a.tiers {
                if t.iter().any(|&x| !(x > 0.0)) {
                    return Err(usage("--tiers must be positive fractions"));
                }
                selection.tiers = t;
            }
            if let Some(r) = a.repeats {
                selection.repeats = r;
            }
            if let Some(m) = a.max_nodes {
                selection.max_nodes = m;
                jump.max_nodes = m;
            }
            if let Some(s) = a.starts {
                jump.starts = s;
            }
            if let Some(i) = a.alns_iterations {
                jump.alns_iterations = i;
            }
            if let Some(t) = a.max_targets {
                jump.max_targets = t;
            }
            let kind = match a.kind {
                KindArg::Select => DatasetKind::Select,
                KindArg::Jump => DatasetKind::Jump,
            };
            RunConfig::Dataset(DatasetConfig {
                source: resolve_source(&a.source)?,
                kind,
                seed: a.seed,
                best_known: a.best_known,
                selection,
                jump,
                jobs: a.jobs,
                out: a.out,
            })
        }
        Command::Train(a) => {
            let head = kind_head(a.agent);
            let base = match a.schedule {
                SchedulePreset::Desk => TrainConfig::desk(head),
                SchedulePreset::Full if head == Head::Select => TrainConfig::select(),
                SchedulePreset::Full => TrainConfig::jump(),
            };
            let model = match &a.resume {
                Some(p) => coagents::nn::read_checkpoint(p)?.config,
                None => a.model.config(),
            };
            let schedule = StepSchedule { base: a.lr.unwrap_or(base.schedule.base), ..base.schedule };
            RunConfig::Train(TrainRunConfig {
                dataset: a.dataset,
                validation: a.validation,
                agent: head,
                model,
                schedule,
                batch_size: a.batch_size.unwrap_or(base.batch_size),
                steps: a.steps.unwrap_or(base.max_steps),
                seed: a.seed,
                checkpoint_every: a.checkpoint_every.or(base.checkpoint_every).filter(|&c| c > 0),
                eval_every: a.eval_every.unwrap_or(base.eval_every),
                resume: a.resume,
                out: a.out,
            })
        }
        Command::Solve(a) => RunConfig::Solve(SolveConfig {
            source: resolve_source(&a.source)?,
            agents: resolve_agents(&a.agents)?,
            search: resolve_search(&a.search)?,
            ablation: a.ablation,
            psg_traces: a.psg_traces,
            timing: a.timing,
            jobs: a.jobs,
            out: a.out,
        }),
        Command::Alns(a) => {
            if a.budget_iters == 0 {
                return Err(usage("--budget-iters must be positive"));
            }
            RunConfig::Alns(AlnsConfig {
                source: resolve_source(&a.source)?,
                iterations: a.budget_iters,
                seed: a.seed,
                timing: a.timing,
                jobs: a.jobs,
                out: a.out,
            })
        }
        Command::Ablate(a) => RunConfig::Ablate(AblateConfig {
            source: resolve_source(&a.source)?,
            agents: resolve_agents(&a.agents)?,
            search: resolve_search(&a.search)?,
            best_known: a.best_known,
            bootstrap: resolve_bootstrap(&a.bootstrap)?,
            timing: a.timing,
            jobs: a.jobs,
            out: a.out,
        }),
        Command::Report(a) => {
            if a.checkpoints == 0 {
                return Err(usage("--checkpoints must be positive"));
            }
            RunConfig::Report(ReportConfig {
                runs: a.runs,
                best_known: a.best_known,
                checkpoints: a.checkpoints,
                bootstrap: resolve_bootstrap(&a.bootstrap)?,
                out: a.out,
            })
        }
    };
    Ok(Action::Run(cfg))
}

/// Parses and resolves a full argument list (program name first).
pub fn parse_action<I, S>(argv: I) -> std::result::Result<Action, String>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| e.to_string())?;
    resolve(cli).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_config(args: &[&str]) -> RunConfig {
        match parse_action(args).unwrap() {
            Action::Run(c) => c,
            other => panic!("expected a run, got {other:?}"),
        }
    }

    #[test]
    fn gen_spec_is_explicit_after_resolution() {
        let c = run_config(&["coagents", "alns", "--gen", "8,50,cvrp", "--out", "o"]);
        let RunConfig::Alns(a) = c else { panic!() };
        assert_eq!(a.source, InstanceSource::Generated { n: 8, count: 50, variant: Variant::Cvrp, seed: 0 });
        assert_eq!(a.iterations, DEFAULT_ITERATIONS);
        assert!(parse_gen_spec("8,50").is_err());
        assert!(parse_gen_spec("8,x,cvrp").is_err());
        assert!(parse_gen_spec("8,5,tsp").is_err());
    }

    #[test]
    fn conflicting_instance_flags_are_refused() {
        let err = parse_action(["coagents", "alns", "--gen", "8,5,cvrp", "--instances", "a.json", "--out", "o"]).unwrap_err();
        assert!(err.contains("--gen") && err.contains("--instances"), "{err}");
        let err = parse_action(["coagents", "alns", "--out", "o"]).unwrap_err();
        assert!(err.contains("--instances") || err.contains("--gen"), "{err}");
    }

    #[test]
    fn solve_needs_agents_and_refuses_both_kinds() {
        assert!(parse_action(["coagents", "solve", "--gen", "8,5,cvrp", "--out", "o"]).is_err());
        assert!(parse_action(["coagents", "solve", "--gen", "8,5,cvrp", "--checkpoint", "a", "--untrained", "--out", "o"]).is_err());
        let c = run_config(&["coagents", "solve", "--gen", "8,5,cvrp", "--untrained", "--stagnation", "never", "--out", "o"]);
        let RunConfig::Solve(s) = c else { panic!() };
        assert_eq!(s.search.stagnation, None);
        let c = run_config(&["coagents", "solve", "--gen", "8,5,cvrp", "--checkpoint", "a", "--out", "o"]);
        let RunConfig::Solve(d) = c else { panic!() };
        assert_eq!(d.search.stagnation, Some(DEFAULT_STAGNATION));
        assert_eq!(s.agents, AgentSource::Untrained { config: ModelConfig::desk(), seed: 0 });
    }

    #[test]
    fn train_defaults_follow_the_schedule_preset() {
        let c = run_config(&["coagents", "train", "--dataset", "d.json", "--agent", "jump", "--out", "o"]);
        let RunConfig::Train(t) = c else { panic!() };
        assert_eq!((t.batch_size, t.steps), (16, 2_500));
        assert_eq!(t.schedule, StepSchedule::default());
        let c = run_config(&["coagents", "train", "--dataset", "d.json", "--agent", "select", "--schedule", "full", "--lr", "0.001", "--out", "o"]);
        let RunConfig::Train(t) = c else { panic!() };
        assert_eq!((t.batch_size, t.steps, t.schedule.base), (48, 50_000, 1e-3));
    }
}
