use rand::Rng;

use super::{EdgeKind, PsgSample, SubgraphBatch};
use crate::moves::{apply_move, decision_set, DecisionSet, MoveKind};
use crate::vrp::{ProblemInstance, Solution};

/// An improvement chain (root first) with the reference solution it is
/// labelled against.
#[derive(Clone, Debug)]
pub struct TaggedChain {
    pub solutions: Vec<Solution>,
    /// `kinds[i]` turned `solutions[i]` into `solutions[i + 1]`.
    pub kinds: Vec<MoveKind>,
    pub reference: Solution,
}

impl TaggedChain {
    /// Replays the first `len` solutions into a fresh sample.
    pub fn replay(&self, len: usize, cap: usize) -> PsgSample {
        let mut sample = PsgSample::new(0, self.solutions[0].clone(), cap);
        let mut last = sample.root();
        for (s, &k) in self.solutions[1..len].iter().zip(&self.kinds) {
            last = sample
                .add_node(last, EdgeKind::Move(k), s.clone())
                .expect("previous node is the newest and always retained");
        }
        sample
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LabelOutcome {
    Labeled(SubgraphBatch),
    /// Two (node, kind) pairs are equally close to the reference.
    Tie,
    /// No node has any applicable move.
    Unlabelable,
}

/// Marks the (node, kind) pair whose best move lands closest to the
/// reference: most arcs shared with it, then lower objective.
pub fn label_subgraph(sample: &PsgSample, inst: &ProblemInstance, reference: &DecisionSet) -> LabelOutcome {
    let mut batch = sample.subgraph(inst);
    let mut best: Option<((usize, f64), (usize, usize))> = None;
    let mut tied = false;
    for (i, node) in sample.nodes().enumerate() {
        for (k, mv) in node.best_moves(inst).iter().enumerate() {
            let Some(mv) = mv else { continue };
            let next = apply_move(&node.solution, mv, inst).expect("candidate of this node");
            let score = (decision_set(&next).intersection(reference).count(), next.penalized());
            match &best {
                None => best = Some((score, (i, k))),
                Some((b, _)) => {
                    if score.0 > b.0 || (score.0 == b.0 && score.1 < b.1 - 1e-9) {
                        best = Some((score, (i, k)));
                        tied = false;
                    } else if score.0 == b.0 && (score.1 - b.1).abs() <= 1e-9 {
                        tied = true;
                    }
                }
            }
        }
    }
    let Some((_, (i, k))) = best else { return LabelOutcome::Unlabelable };
    if tied {
        return LabelOutcome::Tie;
    }
    let mut nodes = vec![0.0; batch.len()];
    let mut moves = vec![[0.0; MoveKind::COUNT]; batch.len()];
    nodes[i] = 1.0;
    moves[i][k] = 1.0;
    batch.node_labels = Some(nodes);
    batch.move_labels = Some(moves);
    LabelOutcome::Labeled(batch)
}

/// Draws one labelled subgraph per chain: a prefix ending at a random step,
/// windowed to the last `max_nodes` nodes. Returns the batches and the number
/// of chains skipped for ties or missing moves.
pub fn sample_training_subgraphs<R: Rng + ?Sized>(
    chains: &[TaggedChain],
    inst: &ProblemInstance,
    rng: &mut R,
    max_nodes: usize,
) -> (Vec<SubgraphBatch>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for chain in chains {
        if chain.solutions.is_empty() {
            skipped += 1;
            continue;
        }
        let len = rng.gen_range(1..=chain.solutions.len());
        let sample = chain.replay(len, max_nodes);
        match label_subgraph(&sample, inst, &decision_set(&chain.reference)) {
            LabelOutcome::Labeled(b) => out.push(b),
            _ => skipped += 1,
        }
    }
    (out, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moves::{random_improving_move, DEFAULT_MAX_DRAWS};
    use crate::vrp::{brute_force_optimum, generate_instance, Customer, Depot, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain_from(inst: &ProblemInstance, start: Solution, reference: Solution, rng: &mut ChaCha8Rng) -> TaggedChain {
        let mut solutions = vec![start];
        let mut kinds = Vec::new();
        while let Some(m) = random_improving_move(solutions.last().unwrap(), inst, rng, DEFAULT_MAX_DRAWS) {
            let next = apply_move(solutions.last().unwrap(), &m, inst).unwrap();
            kinds.push(m.kind);
            solutions.push(next);
        }
        TaggedChain { solutions, kinds, reference }
    }

    #[test]
    fn reversed_route_ties() {
        let cs = (1..=3)
            .map(|i| Customer { id: i, x: i as f64, y: 0.0, demand: 1.0, window: None, service_time: 0.0 })
            .collect();
        let inst = ProblemInstance::new(Variant::Cvrp, 10.0, Depot { x: 0.0, y: 0.0, window: None }, cs).unwrap();
        let reference = Solution::new(vec![vec![1, 2, 3]], &inst).unwrap();
        let root = Solution::new(vec![vec![3, 2, 1]], &inst).unwrap();
        let sample = PsgSample::new(0, root, 64);
        match label_subgraph(&sample, &inst, &decision_set(&reference)) {
            // Every kind that fixes the order lands on the reference itself,
            // so more than one pair ties.
            LabelOutcome::Tie => {}
            other => panic!("expected a tie, got {other:?}"),
        }
    }

    #[test]
    fn emitted_batches_have_one_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut emitted = 0;
        for seed in 0..20 {
            let inst = generate_instance(6, Variant::Cvrp, seed).unwrap();
            let opt = brute_force_optimum(&inst).unwrap();
            let start = Solution::new((1..=6).map(|c| vec![c]).collect(), &inst).unwrap();
            let chain = chain_from(&inst, start, opt, &mut rng);
            let (batches, skipped) = sample_training_subgraphs(&[chain], &inst, &mut rng, 8);
            assert_eq!(batches.len() + skipped, 1);
            for b in &batches {
                let nodes = b.node_labels.as_ref().unwrap();
                let moves = b.move_labels.as_ref().unwrap();
                assert_eq!(nodes.iter().sum::<f64>(), 1.0);
                assert_eq!(moves.iter().flatten().sum::<f64>(), 1.0);
                let i = nodes.iter().position(|&y| y == 1.0).unwrap();
                let k = moves[i].iter().position(|&y| y == 1.0).unwrap();
                assert!(b.move_mask[i][k]);
                assert!(b.len() <= 8);
            }
            emitted += batches.len();
        }
        assert!(emitted > 0);
    }

    #[test]
    fn labelled_pair_is_the_strict_maximizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        for seed in 0..10 {
            let inst = generate_instance(6, Variant::Cvrp, 100 + seed).unwrap();
            let opt = brute_force_optimum(&inst).unwrap();
            let start = Solution::new((1..=6).map(|c| vec![c]).collect(), &inst).unwrap();
            let chain = chain_from(&inst, start, opt.clone(), &mut rng);
            let sample = chain.replay(chain.solutions.len().min(3), 8);
            let LabelOutcome::Labeled(b) = label_subgraph(&sample, &inst, &decision_set(&opt)) else { continue };
            let arcs = |s: &Solution| -> Vec<(usize, usize)> {
                s.routes()
                    .iter()
                    .flat_map(|r| {
                        let full: Vec<usize> = std::iter::once(0).chain(r.iter().copied()).chain([0]).collect();
                        full.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
                    })
                    .collect()
            };
            let target = arcs(&opt);
            let mut scores = Vec::new();
            for (i, node) in sample.nodes().enumerate() {
                for (k, mv) in node.best_moves(&inst).iter().enumerate() {
                    if let Some(mv) = mv {
                        let next = apply_move(&node.solution, mv, &inst).unwrap();
                        let overlap = arcs(&next).iter().filter(|a| target.contains(a)).count();
                        scores.push(((i, k), overlap, next.penalized()));
                    }
                }
            }
            let yi = b.node_labels.as_ref().unwrap().iter().position(|&y| y == 1.0).unwrap();
            let yk = b.move_labels.as_ref().unwrap()[yi].iter().position(|&y| y == 1.0).unwrap();
            let (_, bo, bp) = *scores.iter().find(|s| s.0 == (yi, yk)).unwrap();
            for &(pair, o, p) in &scores {
                if pair != (yi, yk) {
                    assert!(o < bo || (o == bo && p > bp));
                }
            }
            checked += 1;
        }
        assert!(checked > 0);
    }
}
