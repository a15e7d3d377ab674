//! Instance sets and gap references.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use coagents::vrp::io::read_instance;
use coagents::vrp::{brute_force_optimum, generate_instance, ProblemInstance, Solution, ORACLE_MAX_CUSTOMERS};
use serde::{Deserialize, Serialize};

use crate::config::{InstanceSource, MANIFEST_FILE};
use crate::error::{CliError, Result};
use crate::parallel::sub_seed;

#[derive(Clone, Debug)]
pub struct NamedInstance {
    pub name: String,
    pub instance: ProblemInstance,
}

/// Expands directories into their `.json` files (sorted, manifests skipped).
pub fn expand_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files = Vec::new();
            for entry in std::fs::read_dir(p).map_err(|e| CliError::io(p, e))? {
                let path = entry.map_err(|e| CliError::io(p, e))?.path();
                let is_json = path.extension().is_some_and(|e| e == "json");
                if is_json && path.file_name().is_some_and(|f| f != MANIFEST_FILE) {
                    files.push(path);
                }
            }
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn generated_name(seed: u64, i: usize) -> String {
    format!("gen{seed}_{i:04}")
}

pub fn load_instances(source: &InstanceSource) -> Result<Vec<NamedInstance>> {
    match source {
        InstanceSource::Files { paths } => paths
            .iter()
            .map(|p| {
                let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Ok(NamedInstance { name, instance: read_instance(p)? })
            })
            .collect(),
        InstanceSource::Generated { n, count, variant, seed } => (0..*count)
            .map(|i| Ok(NamedInstance { name: generated_name(*seed, i), instance: generate_instance(*n, *variant, sub_seed(*seed, i))? }))
            .collect(),
    }
}

/// One entry of a best-known file. Routes are optional; when present they
/// must reproduce the objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestKnownEntry {
    pub objective: f64,
    #[serde(default)]
    pub routes: Option<Vec<Vec<usize>>>,
}

pub type BestKnown = BTreeMap<String, BestKnownEntry>;

pub fn read_best_known(path: Option<&Path>) -> Result<BestKnown> {
    match path {
        Some(p) => crate::config::read_json(p),
        None => Ok(BestKnown::new()),
    }
}

#[derive(Clone, Debug)]
pub struct Reference {
    pub objective: f64,
    pub solution: Option<Solution>,
}

/// Gap reference: the best-known entry if there is one, else the exact
/// oracle, else an error.
pub fn reference(inst: &NamedInstance, best_known: &BestKnown) -> Result<Reference> {
    if let Some(e) = best_known.get(&inst.name) {
        let solution = match &e.routes {
            Some(r) => {
                let s = Solution::new(r.clone(), &inst.instance)?;
                if !s.is_feasible() || (s.objective() - e.objective).abs() > 1e-6 * e.objective.abs().max(1.0) {
                    return Err(CliError::Mismatch(format!(
                        "best-known routes for `{}` evaluate to {} (feasible: {}), file says {}",
                        inst.name,
                        s.objective(),
                        s.is_feasible(),
                        e.objective
                    )));
                }
                Some(s)
            }
            None => None,
        };
        return Ok(Reference { objective: e.objective, solution });
    }
    let n = inst.instance.num_customers();
    if n > ORACLE_MAX_CUSTOMERS {
        return Err(CliError::NoReference {
            name: inst.name.clone(),
            reason: format!("{n} customers is beyond the exact oracle ({ORACLE_MAX_CUSTOMERS})"),
        });
    }
    let s = brute_force_optimum(&inst.instance)?;
    Ok(Reference { objective: s.objective(), solution: Some(s) })
}

/// A reference that carries routes, as dataset generation needs them.
pub fn reference_solution(inst: &NamedInstance, best_known: &BestKnown) -> Result<Solution> {
    match reference(inst, best_known)?.solution {
        Some(s) => Ok(s),
        None => match brute_force_optimum(&inst.instance) {
            Ok(s) => Ok(s),
            Err(e) => Err(CliError::NoReference { name: inst.name.clone(), reason: format!("best-known entry has no routes and {e}") }),
        },
    }
}
