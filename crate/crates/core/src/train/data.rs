use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moves::{
    apply_move, decision_set, descend, enumerate_all, enumerate_moves, penalized_objective, random_improving_move,
    successor_matrix, MoveKind, DEFAULT_MAX_DRAWS, IMPROVEMENT_EPS,
};
use crate::nn::{ModelConfig, ModelInput};
use crate::psg::{sample_training_subgraphs, EdgeKind, PsgSample, SubgraphBatch, TaggedChain};
use crate::scalar::Real;
use crate::search::{alns_search, random_start, SearchBudget};
use crate::vrp::io::InstanceRecord;
use crate::vrp::{gap, ProblemInstance, Solution};

use super::fit::{JumpSample, SelectSample, TrainSample};

/// Target gaps to the reference solution, as fractions.
pub const DEFAULT_TIERS: [f64; 7] = [0.001, 0.01, 0.02, 0.03, 0.04, 0.05, 0.10];
/// Perturb-and-improve runs per tier.
pub const DEFAULT_REPEATS: usize = 8;
/// Random starts per instance for jump data.
pub const DEFAULT_STARTS: usize = 4;
/// Reference plus neighbours kept per jump example.
pub const DEFAULT_MAX_TARGETS: usize = 8;
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub tiers: Vec<f64>,
    pub repeats: usize,
    /// Nodes kept in each training subgraph.
    pub max_nodes: usize,
    /// Random draws allowed while pushing a solution past its tier.
    pub perturb_draws: usize,
    /// Improving moves allowed per chain.
    pub max_chain: usize,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self { tiers: DEFAULT_TIERS.to_vec(), repeats: DEFAULT_REPEATS, max_nodes: 8, perturb_draws: 2000, max_chain: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpOptions {
    pub starts: usize,
    /// ALNS iterations after the initial descent of each start.
    pub alns_iterations: usize,
    pub max_targets: usize,
    pub max_nodes: usize,
}

impl Default for JumpOptions {
    fn default() -> Self {
        Self { starts: DEFAULT_STARTS, alns_iterations: 30, max_targets: DEFAULT_MAX_TARGETS, max_nodes: 8 }
    }
}

/// Pushes `reference` away from its own arcs with random moves that lower
/// the arc-penalized objective, until the plain gap reaches `tier`.
///
/// Feasibility is kept throughout. Returns `None` if the tier is not
/// reached within `draws` draws.
pub fn perturb<R: Rng + ?Sized>(
    inst: &ProblemInstance,
    reference: &Solution,
    tier: f64,
    draws: usize,
    rng: &mut R,
) -> Option<Solution> {
    let protected = decision_set(reference);
    let span = (0..inst.num_locations())
        .flat_map(|i| (0..inst.num_locations()).map(move |j| (i, j)))
        .map(|(i, j)| inst.dist(i, j))
        .fold(0.0, f64::max);
    let lambda = 10.0 * span.max(1e-9);
    let target = reference.objective();
    let mut cur = reference.clone();
    let mut cur_pen = penalized_objective(&cur, &protected, lambda);
    for _ in 0..draws {
        if gap(cur.objective(), target) >= tier {
            return Some(cur);
        }
        let kind = MoveKind::ALL[rng.gen_range(0..MoveKind::COUNT)];
        let moves = enumerate_moves(&cur, inst, kind);
        if moves.is_empty() {
            continue;
        }
        let m = &moves[rng.gen_range(0..moves.len())];
        if cur.is_feasible() && !m.result_feasible {
            continue;
        }
        let next = apply_move(&cur, m, inst).expect("enumerated on this solution");
        let pen = penalized_objective(&next, &protected, lambda);
        if pen < cur_pen - IMPROVEMENT_EPS {
            cur = next;
            cur_pen = pen;
        }
    }
    (gap(cur.objective(), target) >= tier).then_some(cur)
}

/// Random improving moves from `start` until none is found or `max_len`
/// moves were applied.
pub fn improvement_chain<R: Rng + ?Sized>(
    inst: &ProblemInstance,
    start: Solution,
    reference: &Solution,
    max_len: usize,
    rng: &mut R,
) -> TaggedChain {
    let mut solutions = vec![start];
    let mut kinds = Vec::new();
    while kinds.len() < max_len {
        let last = solutions.last().expect("chain is never empty");
        let Some(m) = random_improving_move(last, inst, rng, DEFAULT_MAX_DRAWS) else { break };
        let next = apply_move(last, &m, inst).expect("enumerated on this solution");
        kinds.push(m.kind);
        solutions.push(next);
    }
    TaggedChain { solutions, kinds, reference: reference.clone() }
}

/// Perturb-and-improve chains with the tier each started from.
#[derive(Clone, Debug)]
pub struct SelectionChains {
    pub chains: Vec<(f64, TaggedChain)>,
    /// Perturbations that never reached their tier.
    pub unreachable: usize,
    /// Non-positive tiers dropped up front.
    pub degenerate_tiers: usize,
}

pub fn generate_selection_data<R: Rng + ?Sized>(
    inst: &ProblemInstance,
    reference: &Solution,
    opts: &SelectionOptions,
    rng: &mut R,
) -> SelectionChains {
    let tiers: Vec<f64> = opts.tiers.iter().copied().filter(|&t| t > 0.0).collect();
    let mut out = SelectionChains { chains: Vec::new(), unreachable: 0, degenerate_tiers: opts.tiers.len() - tiers.len() };
    for &tier in &tiers {
        for _ in 0..opts.repeats {
            match perturb(inst, reference, tier, opts.perturb_draws, rng) {
                Some(start) => out.chains.push((tier, improvement_chain(inst, start, reference, opts.max_chain, rng))),
                None => out.unreachable += 1,
            }
        }
    }
    out
}

/// `reference` first, then feasible one-move neighbours of it that some move
/// turns back into it, cheapest first, `max` in total.
pub fn jump_targets(inst: &ProblemInstance, reference: &Solution, max: usize) -> Vec<Solution> {
    let mut seen = vec![reference.canonical_routes()];
    let mut cands: Vec<Solution> = Vec::new();
    for m in enumerate_all(reference, inst) {
        if !m.result_feasible {
            continue;
        }
        let d = apply_move(reference, &m, inst).expect("enumerated on this solution");
        let key = d.canonical_routes();
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        cands.push(d);
    }
    cands.sort_by(|a, b| a.objective().total_cmp(&b.objective()).then_with(|| a.canonical_routes().cmp(&b.canonical_routes())));
    let mut out = vec![reference.clone()];
    for d in cands {
        if out.len() >= max {
            break;
        }
        if converts_back(inst, &d, reference) {
            out.push(d);
        }
    }
    out
}

/// True when one move turns `from` into `to`.
pub fn converts_back(inst: &ProblemInstance, from: &Solution, to: &Solution) -> bool {
    enumerate_all(from, inst)
        .iter()
        .any(|m| apply_move(from, m, inst).is_ok_and(|s| s.same_routes(to)))
}

/// One random start: a six-move descent recorded as move edges, then ALNS
/// with each accepted solution recorded behind a jump edge.
pub fn trajectory<R: Rng + ?Sized>(
    inst: &ProblemInstance,
    alns_iterations: usize,
    cap: usize,
    rng: &mut R,
) -> Result<PsgSample> {
    let start = random_start(inst, rng);
    let n = inst.num_customers();
    let (local, path) = descend(&start, inst, 10 * n * n + 10);
    let mut sample = PsgSample::new(0, start, cap);
    for (kind, s) in path {
        let parent = sample.newest().id;
        sample.add_node(parent, EdgeKind::Move(kind), s)?;
    }
    if alns_iterations > 0 {
        let mut accepted = Vec::new();
        alns_search(inst, local, &SearchBudget::iterations(alns_iterations, 0), rng, false, |s| accepted.push(s.clone()))?;
        for s in accepted {
            let parent = sample.newest().id;
            sample.add_node(parent, EdgeKind::Jump, s)?;
        }
    }
    Ok(sample)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectExample {
    pub instance: usize,
    pub tier: f64,
    /// Gap of the chain's root to the reference.
    pub root_gap: f64,
    pub batch: SubgraphBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpExample {
    pub instance: usize,
    pub batch: SubgraphBatch,
    /// Local index of the node the jump starts from.
    pub anchor: usize,
    /// Reference first, then its neighbours, as routes.
    pub targets: Vec<Vec<Vec<usize>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Select,
    Jump,
}

/// Serialized training set with the instances it refers to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub version: u32,
    pub kind: DatasetKind,
    pub instances: Vec<InstanceRecord>,
    /// Reference solution per instance.
    pub references: Vec<Vec<Vec<usize>>>,
    pub select: Vec<SelectExample>,
    pub jump: Vec<JumpExample>,
    /// Named counters: emitted examples per tier, skipped chains, unreachable tiers.
    pub counts: BTreeMap<String, usize>,
}

impl Dataset {
    pub fn new(kind: DatasetKind) -> Self {
        Self {
            version: DATASET_VERSION,
            kind,
            instances: Vec::new(),
            references: Vec::new(),
            select: Vec::new(),
            jump: Vec::new(),
            counts: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        match self.kind {
            DatasetKind::Select => self.select.len(),
            DatasetKind::Jump => self.jump.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bump(&mut self, key: String, by: usize) {
        *self.counts.entry(key).or_default() += by;
    }

    /// Appends selection examples for one instance.
    pub fn add_selection<R: Rng + ?Sized>(
        &mut self,
        inst: &ProblemInstance,
        reference: &Solution,
        opts: &SelectionOptions,
        rng: &mut R,
    ) {
        let idx = self.push_instance(inst, reference);
        let gen = generate_selection_data(inst, reference, opts, rng);
        self.bump("unreachable_tiers".into(), gen.unreachable);
        self.bump("degenerate_tiers".into(), gen.degenerate_tiers);
        for (tier, chain) in gen.chains {
            let root_gap = gap(chain.solutions[0].objective(), reference.objective());
            let (batches, skipped) = sample_training_subgraphs(std::slice::from_ref(&chain), inst, rng, opts.max_nodes);
            self.bump("skipped_labels".into(), skipped);
            for batch in batches {
                self.bump(format!("tier_{tier}"), 1);
                self.select.push(SelectExample { instance: idx, tier, root_gap, batch });
            }
        }
    }

    /// Appends one jump example per random start for one instance.
    pub fn add_jump<R: Rng + ?Sized>(
        &mut self,
        inst: &ProblemInstance,
        reference: &Solution,
        opts: &JumpOptions,
        rng: &mut R,
    ) -> Result<()> {
        let idx = self.push_instance(inst, reference);
        let targets: Vec<Vec<Vec<usize>>> =
            jump_targets(inst, reference, opts.max_targets).iter().map(|s| s.routes().to_vec()).collect();
        self.bump(format!("targets_{}", targets.len()), 1);
        for _ in 0..opts.starts {
            let sample = trajectory(inst, opts.alns_iterations, opts.max_nodes, rng)?;
            let batch = sample.subgraph(inst);
            let best = sample.local_best().0;
            let anchor_id = if sample.contains(best) { best } else { sample.newest().id };
            let anchor = batch.local_index(anchor_id).expect("node of this sample");
            self.jump.push(JumpExample { instance: idx, batch, anchor, targets: targets.clone() });
        }
        Ok(())
    }

    fn push_instance(&mut self, inst: &ProblemInstance, reference: &Solution) -> usize {
        self.instances.push(InstanceRecord::from_instance(inst));
        self.references.push(reference.routes().to_vec());
        self.instances.len() - 1
    }

    pub fn instance(&self, i: usize) -> Result<ProblemInstance> {
        let rec = self.instances.get(i).ok_or_else(|| Error::InvalidInstance(format!("dataset has no instance {i}")))?;
        rec.clone().into_instance().map_err(Error::InvalidInstance)
    }

    /// Dense training samples for every example.
    pub fn samples<T: Real>(&self, cfg: &ModelConfig) -> Result<Vec<TrainSample<T>>> {
        let insts = (0..self.instances.len()).map(|i| self.instance(i)).collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(self.len());
        match self.kind {
            DatasetKind::Select => {
                for ex in &self.select {
                    let inst = &insts[ex.instance];
                    let (Some(y_node), Some(y_move)) = (&ex.batch.node_labels, &ex.batch.move_labels) else {
                        return Err(Error::InvalidInstance("selection example without labels".into()));
                    };
                    out.push(TrainSample::Select(SelectSample {
                        input: ModelInput::from_batch(&ex.batch, inst, cfg)?,
                        y_node: y_node.clone(),
                        y_move: y_move.clone(),
                    }));
                }
            }
            DatasetKind::Jump => {
                for ex in &self.jump {
                    let inst = &insts[ex.instance];
                    let n = inst.num_customers();
                    let targets = ex
                        .targets
                        .iter()
                        .map(|r| Ok(successor_matrix(&Solution::new(r.clone(), inst)?, n)))
                        .collect::<Result<Vec<_>>>()?;
                    out.push(TrainSample::Jump(JumpSample {
                        input: ModelInput::from_batch(&ex.batch, inst, cfg)?,
                        anchor: ex.anchor,
                        targets,
                    }));
                }
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds: Dataset =
            serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), msg: e.to_string() })?;
        if ds.version != DATASET_VERSION {
            return Err(Error::Parse { path: path.to_path_buf(), msg: format!("dataset version {} (expected {DATASET_VERSION})", ds.version) });
        }
        Ok(ds)
    }

    /// Appends every example of `other`, renumbering its instances.
    pub fn merge(&mut self, other: Dataset) -> Result<()> {
        if other.kind != self.kind {
            return Err(Error::Config("cannot merge datasets of different kinds".into()));
        }
        let offset = self.instances.len();
        self.instances.extend(other.instances);
        self.references.extend(other.references);
        self.select.extend(other.select.into_iter().map(|mut e| {
            e.instance += offset;
            e
        }));
        self.jump.extend(other.jump.into_iter().map(|mut e| {
            e.instance += offset;
            e
        }));
        for (k, v) in other.counts {
            *self.counts.entry(k).or_default() += v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moves::is_local_optimum;
    use crate::vrp::{brute_force_optimum, generate_instance, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perturbed_roots_reach_their_tier_and_chains_descend() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = SelectionOptions { repeats: 2, ..Default::default() };
        for seed in 0..3 {
            let inst = generate_instance(7, Variant::Cvrp, seed).unwrap();
            let opt = brute_force_optimum(&inst).unwrap();
            let gen = generate_selection_data(&inst, &opt, &opts, &mut rng);
            assert!(!gen.chains.is_empty());
            for (tier, chain) in &gen.chains {
                assert!(gap(chain.solutions[0].objective(), opt.objective()) >= *tier);
                assert!(chain.solutions.iter().all(Solution::is_feasible));
                assert!(chain.solutions.windows(2).all(|w| w[1].penalized() < w[0].penalized()));
            }
        }
    }

    #[test]
    fn zero_tier_is_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = generate_instance(5, Variant::Cvrp, 2).unwrap();
        let opt = brute_force_optimum(&inst).unwrap();
        let opts = SelectionOptions { tiers: vec![0.0, 0.05], repeats: 1, ..Default::default() };
        let gen = generate_selection_data(&inst, &opt, &opts, &mut rng);
        assert_eq!(gen.degenerate_tiers, 1);
        assert!(gen.chains.iter().all(|(t, _)| *t == 0.05));
    }

    #[test]
    fn jump_targets_convert_back_in_one_move() {
        for seed in 0..4 {
            let inst = generate_instance(6, Variant::Vrptw, seed).unwrap();
            let opt = brute_force_optimum(&inst).unwrap();
            let targets = jump_targets(&inst, &opt, DEFAULT_MAX_TARGETS);
            assert!(targets[0].same_routes(&opt));
            assert!(targets.len() <= DEFAULT_MAX_TARGETS);
            for d in &targets[1..] {
                assert!(d.is_feasible());
                assert!(!d.same_routes(&opt));
                assert!(converts_back(&inst, d, &opt));
            }
            for t in &targets {
                let y = successor_matrix(t, 6);
                for (i, row) in y.iter().enumerate() {
                    assert_eq!(row.iter().sum::<f64>(), 1.0);
                    assert_eq!(row[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn trajectories_end_at_local_optima() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..3 {
            let inst = generate_instance(7, Variant::Cvrp, seed).unwrap();
            let s = trajectory(&inst, 15, 64, &mut rng).unwrap();
            assert!(is_local_optimum(&s.newest().solution, &inst));
        }
    }

    #[test]
    fn dataset_round_trip_and_determinism() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut ds = Dataset::new(DatasetKind::Select);
            let inst = generate_instance(6, Variant::Cvrp, 3).unwrap();
            let opt = brute_force_optimum(&inst).unwrap();
            ds.add_selection(&inst, &opt, &SelectionOptions { repeats: 1, ..Default::default() }, &mut rng);
            ds
        };
        let a = build();
        assert_eq!(a.to_json().unwrap(), build().to_json().unwrap());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        a.write(&p).unwrap();
        assert_eq!(Dataset::read(&p).unwrap(), a);
        let samples = a.samples::<f64>(&ModelConfig::desk()).unwrap();
        assert_eq!(samples.len(), a.len());
    }
}
