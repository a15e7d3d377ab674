use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::alns::{AdaptiveWeights, REACTION, SCORE_BEST, SCORE_BETTER, SEGMENT};
use super::beam::{constrained_beam_search, greedy_decode, BeamSampling, DEFAULT_BEAM_WIDTH};
use super::{nearest_neighbor, randomized_greedy, Clock, Incumbent, SearchBudget, SearchResult, SearchStats, TraceRow};
use crate::error::{Error, Result};
use crate::moves::{apply_move, MoveKind, IMPROVEMENT_EPS};
use crate::nn::{AgentModel, Head, ModelInput};
use crate::psg::{EdgeKind, PsgPool, PsgSample, SAMPLE_CAP};
use crate::scalar::Real;
use crate::vrp::{ProblemInstance, Solution};

/// Consecutive non-improving iterations before a jump.
pub const DEFAULT_STAGNATION: usize = 20;

/// Which agents are replaced by their classical fallback.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// Always expand the sample's incumbent.
    NoNsa,
    /// Pick the move kind with adaptive roulette weights.
    NoMsa,
    /// Restart from a randomized greedy construction instead of jumping.
    NoJump,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoNsa, Ablation::NoMsa, Ablation::NoJump];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoNsa => "no_nsa",
            Ablation::NoMsa => "no_msa",
            Ablation::NoJump => "no_jump",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (full, no_nsa, no_msa, no_jump)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub budget: SearchBudget,
    /// `None` never jumps.
    pub stagnation: Option<usize>,
    pub beam_width: usize,
    pub sample_cap: usize,
    pub ablation: Ablation,
    /// Record wall-clock milliseconds in the trace.
    pub timing: bool,
}

impl SearchConfig {
    pub fn new(budget: SearchBudget) -> Self {
        Self {
            budget,
            stagnation: Some(DEFAULT_STAGNATION),
            beam_width: DEFAULT_BEAM_WIDTH,
            sample_cap: SAMPLE_CAP,
            ablation: Ablation::Full,
            timing: false,
        }
    }
}

/// The trained networks driving a search.
#[derive(Clone, Copy, Debug)]
pub struct Agents<'a, T> {
    pub select: &'a AgentModel<T>,
    pub jump: Option<&'a AgentModel<T>>,
}

impl<T: Real> Agents<'_, T> {
    fn check(&self, ablation: Ablation) -> Result<()> {
        if self.select.head() != Head::Select {
            return Err(Error::Config("selection model has a jump head".into()));
        }
        match self.jump {
            Some(j) if j.head() != Head::Jump => return Err(Error::Config("jump model has a selection head".into())),
            Some(j) if j.config().edge_slots() != self.select.config().edge_slots() => {
                return Err(Error::Config("models disagree on the move set".into()))
            }
            None if ablation != Ablation::NoJump => {
                return Err(Error::Config("a jump model is required unless jumps are ablated".into()))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Index drawn with probability proportional to `weights` over `allowed`
/// entries; uniform when they carry no mass.
fn categorical<R: Rng + ?Sized>(weights: &[f64], allowed: &[bool], rng: &mut R) -> Option<usize> {
    let idx: Vec<usize> = (0..weights.len()).filter(|&i| allowed[i]).collect();
    if idx.is_empty() {
        return None;
    }
    let total: f64 = idx.iter().map(|&i| weights[i].max(0.0)).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Some(idx[rng.gen_range(0..idx.len())]);
    }
    let mut x = rng.gen::<f64>() * total;
    for &i in &idx {
        let w = weights[i].max(0.0);
        if x < w {
            return Some(i);
        }
        x -= w;
    }
    idx.last().copied()
}

/// Decodes a new solution from the jump head run at `anchor` of `sample`.
pub fn jump<T: Real, R: Rng + ?Sized>(
    inst: &ProblemInstance,
    model: &AgentModel<T>,
    sample: &PsgSample,
    anchor: &Solution,
    beam_width: usize,
    rng: &mut R,
) -> Result<Solution> {
    let batch = sample.subgraph(inst);
    let local = batch.routes.iter().position(|r| r.as_slice() == anchor.routes());
    let (input, idx) = match local {
        Some(i) => (ModelInput::<T>::from_batch(&batch, inst, model.config())?, i),
        None => {
            let single = PsgSample::new(0, anchor.clone(), 1).subgraph(inst);
            (ModelInput::<T>::from_batch(&single, inst, model.config())?, 0)
        }
    };
    let p = model.predict_jump(&input, idx)?;
    Ok(constrained_beam_search(&p, anchor, inst, beam_width, BeamSampling::Weighted, rng)
        .unwrap_or_else(|| greedy_decode(&p, inst)))
}

/// Agent-driven local search with jumps on stagnation.
///
/// Every iteration picks a node of the active sample and a move kind, applies
/// the best candidate of that kind there and records the result. After
/// `stagnation` iterations without improving the sample's best, the jump
/// agent decodes a new start from that best and a new sample begins.
pub fn coagents_solve<T: Real>(
    inst: &ProblemInstance,
    agents: Agents<'_, T>,
    config: &SearchConfig,
    init: Option<Solution>,
) -> Result<SearchResult> {
    config.budget.validate()?;
    agents.check(config.ablation)?;
    let clock = Clock::new(config.timing);
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.budget.seed);
    let init = init.unwrap_or_else(|| nearest_neighbor(inst));
    let mut incumbent = Incumbent::new(&init);
    let mut pool = PsgPool::new(config.sample_cap);
    let mut cur = pool.start_sample(init, None, inst);
    let mut stall = 0;
    let mut kind_weights = AdaptiveWeights::new(MoveKind::COUNT, REACTION);
    let mut stats = SearchStats::default();
    let mut trace = Vec::new();
    let cfg = agents.select.config();

    while !config.budget.exhausted(stats.iterations, start) {
        let sample = pool.sample(cur);
        let batch = sample.subgraph(inst);
        let has_move: Vec<bool> = batch.move_mask.iter().map(|m| m.iter().any(|&b| b)).collect();
        if !has_move.iter().any(|&b| b) {
            break;
        }
        stats.iterations += 1;
        let input = ModelInput::<T>::from_batch(&batch, inst, cfg)?;
        let (p_node, p_move) = agents.select.predict_select(&input)?;
        stats.agent_calls += 1;

        let i = match config.ablation {
            Ablation::NoNsa => {
                let best_id = sample.local_best().0;
                let target = if sample.contains(best_id) { best_id } else { sample.newest().id };
                let li = batch.local_index(target).expect("node of this sample");
                if has_move[li] {
                    li
                } else {
                    categorical(&p_node, &has_move, &mut rng).expect("some node has a move")
                }
            }
            _ => categorical(&p_node, &has_move, &mut rng).expect("some node has a move"),
        };
        let mask = batch.move_mask[i];
        let k = match config.ablation {
            Ablation::NoMsa => kind_weights.pick(&mut rng, &mask),
            _ => categorical(&p_move[i], &mask, &mut rng).expect("node has a move"),
        };
        let kind = MoveKind::ALL[k];
        let node_id = batch.node_ids[i];
        let node = sample.get(node_id).expect("node of this sample");
        let mv = node.best_moves(inst)[k].clone().expect("masked kinds have a candidate");
        let next = apply_move(&node.solution, &mv, inst)?;
        let local_before = sample.local_best().1.penalized();
        let improved = next.penalized() < local_before - IMPROVEMENT_EPS;
        let new_best = incumbent.offer(&next);
        let current_obj = next.penalized();
        pool.add_node(cur, node_id, EdgeKind::Move(kind), next, inst)?;
        stats.moves_applied += 1;
        if config.ablation == Ablation::NoMsa {
            kind_weights.record(k, if new_best { SCORE_BEST } else if improved { SCORE_BETTER } else { 0.0 });
            if stats.iterations % SEGMENT == 0 {
                kind_weights.end_segment();
            }
        }
        stall = if improved { 0 } else { stall + 1 };
        trace.push(TraceRow {
            iteration: stats.iterations,
            best_obj: incumbent.objective(),
            current_obj,
            action: EdgeKind::Move(kind).to_string(),
            sample_id: cur,
            elapsed_ms: clock.ms(),
        });

        if config.stagnation.is_some_and(|t| stall >= t) {
            let sample = pool.sample(cur);
            let (anchor_id, anchor) = sample.local_best();
            let anchor = anchor.clone();
            let (fresh, action, origin) = match (config.ablation, agents.jump) {
                (Ablation::NoJump, _) | (_, None) => (randomized_greedy(inst, &mut rng), "restart", None),
                (_, Some(jm)) => {
                    stats.agent_calls += 1;
                    (jump(inst, jm, sample, &anchor, config.beam_width, &mut rng)?, "jump", Some(anchor_id))
                }
            };
            incumbent.offer(&fresh);
            let current_obj = fresh.penalized();
            cur = pool.start_sample(fresh, origin, inst);
            stats.jumps += 1;
            stall = 0;
            trace.push(TraceRow {
                iteration: stats.iterations,
                best_obj: incumbent.objective(),
                current_obj,
                action: action.into(),
                sample_id: cur,
                elapsed_ms: clock.ms(),
            });
        }
    }
    Ok(SearchResult { best: incumbent.into_solution(), trace, psg: Some(pool), stats, elapsed: start.elapsed() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;
    use crate::vrp::{generate_instance, Variant};

    fn models() -> (AgentModel<f64>, AgentModel<f64>) {
        let cfg = ModelConfig::desk();
        (AgentModel::new(cfg.clone(), Head::Select, 1).unwrap(), AgentModel::new(cfg, Head::Jump, 2).unwrap())
    }

    #[test]
    fn untrained_agents_never_lose_the_start() {
        let (sel, jm) = models();
        for seed in 0..4 {
            let inst = generate_instance(8, Variant::Vrptw, seed).unwrap();
            let init = nearest_neighbor(&inst);
            let mut cfg = SearchConfig::new(SearchBudget::iterations(60, seed));
            cfg.stagnation = Some(10);
            let r = coagents_solve(&inst, Agents { select: &sel, jump: Some(&jm) }, &cfg, Some(init.clone())).unwrap();
            assert!(r.best.is_feasible());
            assert!(r.best_objective() <= init.objective() + 1e-12);
            assert!(r.stats.iterations <= 60);
            assert!(r.trace.windows(2).all(|w| w[1].best_obj <= w[0].best_obj));
            assert!(r.stats.jumps > 0);
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let (sel, jm) = models();
        let inst = generate_instance(7, Variant::Cvrp, 3).unwrap();
        let cfg = SearchConfig::new(SearchBudget::iterations(80, 9));
        let a = coagents_solve(&inst, Agents { select: &sel, jump: Some(&jm) }, &cfg, None).unwrap();
        let b = coagents_solve(&inst, Agents { select: &sel, jump: Some(&jm) }, &cfg, None).unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(a.best.same_routes(&b.best));
    }

    #[test]
    fn refuses_mismatched_heads() {
        let (sel, jm) = models();
        let inst = generate_instance(5, Variant::Cvrp, 0).unwrap();
        let cfg = SearchConfig::new(SearchBudget::iterations(5, 0));
        assert!(coagents_solve(&inst, Agents { select: &jm, jump: Some(&sel) }, &cfg, None).is_err());
        assert!(coagents_solve(&inst, Agents { select: &sel, jump: None }, &cfg, None).is_err());
        let mut no_jump = cfg;
        no_jump.ablation = Ablation::NoJump;
        assert!(coagents_solve(&inst, Agents { select: &sel, jump: None }, &no_jump, None).is_ok());
    }

    #[test]
    fn every_variant_respects_the_budget() {
        let (sel, jm) = models();
        let inst = generate_instance(6, Variant::Vrptw, 5).unwrap();
        for ablation in Ablation::ALL {
            let mut cfg = SearchConfig::new(SearchBudget::iterations(40, 1));
            cfg.ablation = ablation;
            let r = coagents_solve(&inst, Agents { select: &sel, jump: Some(&jm) }, &cfg, None).unwrap();
            assert!(r.stats.iterations <= 40);
            assert_eq!(r.trace.iter().filter(|t| t.action.starts_with("move")).count(), r.stats.iterations);
            assert_eq!(ablation.to_string().parse::<Ablation>().unwrap(), ablation);
        }
    }

    #[test]
    fn categorical_respects_the_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let i = categorical(&[0.9, 0.0, 0.5], &[false, true, true], &mut rng).unwrap();
            assert_eq!(i, 2);
        }
        let i = categorical(&[0.0, 0.0], &[true, true], &mut rng).unwrap();
        assert!(i < 2);
        assert_eq!(categorical(&[1.0], &[false], &mut rng), None);
    }
}
