//! Neighbourhood moves: the edges of the search space.
//!
//! Six classical kinds cover intra- and inter-route edits. Each kind has a
//! stable index used to look up its learned embedding, so the order of
//! [`MoveKind::ALL`] is part of the checkpoint format.

mod decisions;
mod enumerate;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use decisions::{decision_set, penalized_objective, successor_matrix, DecisionSet};
pub use enumerate::{apply_move, best_move, enumerate_all, enumerate_moves, Move, Operands};

use crate::vrp::{ProblemInstance, Solution};

/// Strict improvement threshold used by every "improving" test.
pub const IMPROVEMENT_EPS: f64 = 1e-9;

/// Default number of draws in [`random_improving_move`].
pub const DEFAULT_MAX_DRAWS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MoveKind {
    RelocateOne,
    SwapOneOne,
    TwoOptIntra,
    TwoOptStar,
    OrOptSeg2,
    CrossExchange,
}

impl MoveKind {
    pub const COUNT: usize = 6;
    pub const ALL: [MoveKind; 6] = [
        MoveKind::RelocateOne,
        MoveKind::SwapOneOne,
        MoveKind::TwoOptIntra,
        MoveKind::TwoOptStar,
        MoveKind::OrOptSeg2,
        MoveKind::CrossExchange,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::RelocateOne => "relocate",
            MoveKind::SwapOneOne => "swap",
            MoveKind::TwoOptIntra => "2opt",
            MoveKind::TwoOptStar => "2opt*",
            MoveKind::OrOptSeg2 => "oropt2",
            MoveKind::CrossExchange => "cross",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl std::fmt::Display for MoveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Draws random kinds and random candidates until one strictly improves the
/// penalized objective without breaking feasibility of a feasible source.
///
/// Gives up after `max_draws` draws; returns `None` at a local optimum.
pub fn random_improving_move<R: Rng + ?Sized>(
    solution: &Solution,
    inst: &ProblemInstance,
    rng: &mut R,
    max_draws: usize,
) -> Option<Move> {
    let mut lists: [Option<Vec<Move>>; MoveKind::COUNT] = Default::default();
    for _ in 0..max_draws {
        let k = rng.gen_range(0..MoveKind::COUNT);
        let list = lists[k].get_or_insert_with(|| enumerate_moves(solution, inst, MoveKind::ALL[k]));
        if list.is_empty() {
            if lists.iter().all(|l| l.as_ref().is_some_and(|l| l.is_empty())) {
                return None;
            }
            continue;
        }
        let m = &list[rng.gen_range(0..list.len())];
        if m.is_improving(solution) {
            return Some(m.clone());
        }
    }
    None
}

/// Best-improvement descent over all six kinds until no move improves.
///
/// Returns the local optimum and the applied moves with the solutions they
/// produced, in order.
pub fn descend(start: &Solution, inst: &ProblemInstance, max_steps: usize) -> (Solution, Vec<(MoveKind, Solution)>) {
    let mut cur = start.clone();
    let mut path = Vec::new();
    for _ in 0..max_steps {
        let best = enumerate_all(&cur, inst)
            .into_iter()
            .filter(|m| m.is_improving(&cur))
            .min_by(|a, b| a.penalized_delta().total_cmp(&b.penalized_delta()));
        let Some(m) = best else { break };
        let next = apply_move(&cur, &m, inst).expect("move enumerated on this solution");
        path.push((m.kind, next.clone()));
        cur = next;
    }
    (cur, path)
}

/// True when no move of any kind improves `solution`.
pub fn is_local_optimum(solution: &Solution, inst: &ProblemInstance) -> bool {
    enumerate_all(solution, inst).iter().all(|m| !m.is_improving(solution))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vrp::{generate_instance, Customer, Depot, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn indices_are_contiguous() {
        for (i, k) in MoveKind::ALL.iter().enumerate() {
            assert_eq!(k.index(), i);
            assert_eq!(MoveKind::from_index(i), Some(*k));
            assert_eq!(MoveKind::from_name(k.name()), Some(*k));
        }
        assert_eq!(MoveKind::from_index(6), None);
    }

    fn square() -> ProblemInstance {
        let pts = [(1.0, 1.0), (1.0, 2.0), (2.0, 1.0), (2.0, 2.0)];
        let cs = pts
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Customer { id: i + 1, x, y, demand: 1.0, window: None, service_time: 0.0 })
            .collect();
        ProblemInstance::new(Variant::Cvrp, 100.0, Depot { x: 0.0, y: 0.0, window: None }, cs).unwrap()
    }

    #[test]
    fn crossing_tour_has_improving_move() {
        let inst = square();
        // 1 -> 4 -> 2 -> 3 crosses itself.
        let s = Solution::new(vec![vec![1, 4, 2, 3]], &inst).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = random_improving_move(&s, &inst, &mut rng, 10_000).expect("improving move");
        assert!(m.delta < 0.0);
        let uncrossed = enumerate_moves(&s, &inst, MoveKind::TwoOptIntra)
            .into_iter()
            .min_by(|a, b| a.delta.total_cmp(&b.delta))
            .unwrap();
        let t = apply_move(&s, &uncrossed, &inst).unwrap();
        assert!(t.objective() < s.objective());
    }

    #[test]
    fn none_at_local_optimum() {
        let inst = generate_instance(7, Variant::Cvrp, 3).unwrap();
        let start = Solution::new((1..=7).map(|c| vec![c]).collect(), &inst).unwrap();
        let (opt, path) = descend(&start, &inst, 1000);
        assert!(!path.is_empty());
        assert!(is_local_optimum(&opt, &inst));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(random_improving_move(&opt, &inst, &mut rng, 500).is_none());
        for w in path.windows(2) {
            assert!(w[1].1.penalized() < w[0].1.penalized());
        }
    }

    #[test]
    fn random_descent_bounded_by_oracle() {
        let inst = generate_instance(7, Variant::Cvrp, 11).unwrap();
        let opt = crate::vrp::brute_force_optimum(&inst).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cur = Solution::new((1..=7).map(|c| vec![c]).collect(), &inst).unwrap();
        while let Some(m) = random_improving_move(&cur, &inst, &mut rng, DEFAULT_MAX_DRAWS) {
            cur = apply_move(&cur, &m, &inst).unwrap();
        }
        assert!(cur.is_feasible());
        assert!(cur.objective() >= opt.objective() - 1e-9);
    }
}
