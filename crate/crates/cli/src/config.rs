//! Fully resolved run configurations and the manifest written next to every
//! output.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use coagents::nn::{Head, ModelConfig, StepSchedule};
use coagents::search::Ablation;
use coagents::train::{DatasetKind, JumpOptions, SelectionOptions};
use coagents::vrp::Variant;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Where the instances of a run come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceSource {
    /// Instance files in this order.
    Files { paths: Vec<PathBuf> },
    /// `count` generated instances; instance `i` uses `sub_seed(seed, i)`.
    Generated { n: usize, count: usize, variant: Variant, seed: u64 },
}

/// The agents driving a search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSource {
    Checkpoints { select: PathBuf, jump: Option<PathBuf> },
    /// Freshly initialized networks, the control arm for trained ones.
    Untrained { config: ModelConfig, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub iterations: usize,
    pub seed: u64,
    pub stagnation: Option<usize>,
    pub beam_width: usize,
    pub sample_cap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub count: usize,
    pub variant: Variant,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub source: InstanceSource,
    pub kind: DatasetKind,
    pub seed: u64,
    pub best_known: Option<PathBuf>,
    pub selection: SelectionOptions,
    pub jump: JumpOptions,
    pub jobs: usize,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub dataset: PathBuf,
    pub validation: Option<PathBuf>,
    pub agent: Head,
    pub model: ModelConfig,
    pub schedule: StepSchedule,
    pub batch_size: usize,
    /// Total optimizer steps, counted from the start of training.
    pub steps: u64,
    pub seed: u64,
    pub checkpoint_every: Option<u64>,
    pub eval_every: u64,
    pub resume: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub source: InstanceSource,
    pub agents: AgentSource,
    pub search: SearchParams,
    pub ablation: Ablation,
    pub psg_traces: bool,
    pub timing: bool,
    pub jobs: usize,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlnsConfig {
    pub source: InstanceSource,
    pub iterations: usize,
    pub seed: u64,
    pub timing: bool,
    pub jobs: usize,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblateConfig {
    pub source: InstanceSource,
    pub agents: AgentSource,
    pub search: SearchParams,
    pub best_known: Option<PathBuf>,
    pub bootstrap: BootstrapParams,
    pub timing: bool,
    pub jobs: usize,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapParams {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    /// Result directories; the first is compared against each other one.
    pub runs: Vec<PathBuf>,
    pub best_known: Option<PathBuf>,
    pub checkpoints: usize,
    pub bootstrap: BootstrapParams,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunConfig {
    Gen(GenConfig),
    Dataset(DatasetConfig),
    Train(TrainRunConfig),
    Solve(SolveConfig),
    Alns(AlnsConfig),
    Ablate(AblateConfig),
    Report(ReportConfig),
}

impl RunConfig {
    pub fn name(&self) -> &'static str {
        match self {
            RunConfig::Gen(_) => "gen",
            RunConfig::Dataset(_) => "dataset",
            RunConfig::Train(_) => "train",
            RunConfig::Solve(_) => "solve",
            RunConfig::Alns(_) => "alns",
            RunConfig::Ablate(_) => "ablate",
            RunConfig::Report(_) => "report",
        }
    }

    pub fn out(&self) -> &Path {
        match self {
            RunConfig::Gen(c) => &c.out,
            RunConfig::Dataset(c) => &c.out,
            RunConfig::Train(c) => &c.out,
            RunConfig::Solve(c) => &c.out,
            RunConfig::Alns(c) => &c.out,
            RunConfig::Ablate(c) => &c.out,
            RunConfig::Report(c) => &c.out,
        }
    }

    pub fn set_out(&mut self, out: PathBuf) {
        match self {
            RunConfig::Gen(c) => c.out = out,
            RunConfig::Dataset(c) => c.out = out,
            RunConfig::Train(c) => c.out = out,
            RunConfig::Solve(c) => c.out = out,
            RunConfig::Alns(c) => c.out = out,
            RunConfig::Ablate(c) => c.out = out,
            RunConfig::Report(c) => c.out = out,
        }
    }

    /// Worker threads; outputs never depend on it.
    pub fn jobs(&self) -> usize {
        match self {
            RunConfig::Dataset(c) => c.jobs,
            RunConfig::Solve(c) => c.jobs,
            RunConfig::Alns(c) => c.jobs,
            RunConfig::Ablate(c) => c.jobs,
            _ => 1,
        }
    }

    pub fn set_jobs(&mut self, jobs: usize) {
        match self {
            RunConfig::Dataset(c) => c.jobs = jobs,
            RunConfig::Solve(c) => c.jobs = jobs,
            RunConfig::Alns(c) => c.jobs = jobs,
            RunConfig::Ablate(c) => c.jobs = jobs,
            _ => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub code_version: String,
    /// Base seed followed by any per-item seeds derived from it.
    pub seeds: Vec<u64>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

impl RunManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Parse { path: path.to_path_buf(), msg: e.to_string() })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        write_json(dir.as_ref().join(MANIFEST_FILE), self)
    }
}

pub fn now_unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_through_json() {
        let m = RunManifest {
            config: RunConfig::Gen(GenConfig { n: 8, count: 3, variant: Variant::Cvrp, seed: 1, out: "x".into() }),
            code_version: "0.1.0".into(),
            seeds: vec![1, 2, 3],
            started_unix_ms: 5,
            finished_unix_ms: 6,
        };
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"command\":\"gen\""));
        assert_eq!(serde_json::from_str::<RunManifest>(&text).unwrap(), m);
    }
}
