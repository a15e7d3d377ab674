use rand::seq::SliceRandom;
use rand::Rng;

use crate::vrp::{route_eval, ProblemInstance, Solution, INFEASIBILITY_PENALTY};

/// Default number of candidates kept alive.
pub const DEFAULT_BEAM_WIDTH: usize = 16;

/// Routes of the anchor dropped before decoding.
pub const DISCARDED_ROUTES: usize = 3;

/// How the next beam is drawn from the expanded pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeamSampling {
    /// Highest-weight candidates, ties broken by expansion order.
    Argmax,
    /// Weighted draws without replacement.
    Weighted,
}

/// Mean successor probability along each route, depot arcs included.
pub fn route_scores(p: &[Vec<f64>], routes: &[Vec<usize>]) -> Vec<f64> {
    routes
        .iter()
        .map(|r| {
            let cycle: Vec<usize> = std::iter::once(0).chain(r.iter().copied()).chain([0]).collect();
            let arcs = cycle.windows(2);
            let len = arcs.len() as f64;
            arcs.map(|w| p[w[0]][w[1]]).sum::<f64>() / len
        })
        .collect()
}

/// Routes of `anchor` that survive the cut of the [`DISCARDED_ROUTES`] least
/// probable ones. Anchors with that many routes or fewer keep nothing.
pub fn retained_routes(p: &[Vec<f64>], anchor: &Solution) -> Vec<Vec<usize>> {
    let routes = anchor.routes();
    if routes.len() <= DISCARDED_ROUTES {
        return Vec::new();
    }
    let scores = route_scores(p, routes);
    let mut order: Vec<usize> = (0..routes.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order[DISCARDED_ROUTES..].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| routes[i].clone()).collect()
}

fn route_cost(route: &[usize], inst: &ProblemInstance) -> f64 {
    let ev = route_eval(route, inst);
    ev.distance + INFEASIBILITY_PENALTY * (ev.lateness + (ev.load - inst.capacity()).max(0.0))
}

#[derive(Clone, Debug)]
struct Candidate {
    closed: Vec<Vec<usize>>,
    open: Vec<usize>,
    visited: Vec<bool>,
    remaining: usize,
    log_weight: f64,
    closed_cost: f64,
    /// Penalized cost so far; no completion can cost less.
    bound: f64,
}

impl Candidate {
    fn last(&self) -> usize {
        self.open.last().copied().unwrap_or(0)
    }

    /// Allowed successors with their renormalized weights.
    fn extensions(&self, p: &[Vec<f64>]) -> Vec<(usize, f64)> {
        let last = self.last();
        let mut allowed: Vec<usize> = (1..self.visited.len()).filter(|&c| !self.visited[c]).collect();
        if !self.open.is_empty() {
            allowed.push(0);
        }
        let total: f64 = allowed.iter().map(|&c| p[last][c]).sum();
        let uniform = 1.0 / allowed.len() as f64;
        allowed.into_iter().map(|c| (c, if total > 0.0 { p[last][c] / total } else { uniform })).collect()
    }

    fn extend(&self, next: usize, w: f64, inst: &ProblemInstance) -> Candidate {
        let mut c = self.clone();
        c.log_weight += w.ln();
        if next == 0 {
            let route = std::mem::take(&mut c.open);
            c.closed_cost += route_cost(&route, inst);
            c.closed.push(route);
        } else {
            c.open.push(next);
            c.visited[next] = true;
            c.remaining -= 1;
        }
        c.bound = c.closed_cost + route_cost(&c.open, inst);
        c
    }

    fn finish(mut self, retained: &[Vec<usize>], inst: &ProblemInstance) -> Solution {
        if !self.open.is_empty() {
            self.closed.push(std::mem::take(&mut self.open));
        }
        let routes = retained.iter().cloned().chain(self.closed).collect();
        Solution::new(routes, inst).expect("candidate covers every customer once")
    }
}

/// Rebuilds the routes discarded from `anchor` by a beam search guided by the
/// successor probabilities `p` (rows and columns over locations `0..=n`).
///
/// Returns the finished candidate with the lowest penalized objective, or
/// `None` if the beam produced no complete solution.
pub fn constrained_beam_search<R: Rng + ?Sized>(
    p: &[Vec<f64>],
    anchor: &Solution,
    inst: &ProblemInstance,
    width: usize,
    sampling: BeamSampling,
    rng: &mut R,
) -> Option<Solution> {
    let n_loc = inst.num_locations();
    assert_eq!(p.len(), n_loc, "probability rows must match the locations");
    let retained = retained_routes(p, anchor);
    let mut visited = vec![false; n_loc];
    visited[0] = true;
    let mut covered = 0;
    let mut retained_cost = 0.0;
    for r in &retained {
        for &c in r {
            visited[c] = true;
            covered += 1;
        }
        retained_cost += route_cost(r, inst);
    }
    let seed = Candidate {
        closed: Vec::new(),
        open: Vec::new(),
        visited,
        remaining: inst.num_customers() - covered,
        log_weight: 0.0,
        closed_cost: retained_cost,
        bound: retained_cost,
    };
    if seed.remaining == 0 {
        return Some(seed.finish(&retained, inst));
    }
    let width = width.max(1);
    let mut beam = vec![seed];
    let mut finished: Vec<Solution> = Vec::new();
    let worst_finished = |f: &[Solution]| f.iter().map(Solution::penalized).fold(f64::NEG_INFINITY, f64::max);
    loop {
        let best_bound = beam.iter().map(|c| c.bound).fold(f64::INFINITY, f64::min);
        if beam.is_empty() || (!finished.is_empty() && best_bound >= worst_finished(&finished)) {
            break;
        }
        let mut pool: Vec<Candidate> = Vec::new();
        for c in &beam {
            for (next, w) in c.extensions(p) {
                if w > 0.0 {
                    pool.push(c.extend(next, w, inst));
                }
            }
        }
        let take = width.saturating_sub(finished.len()).min(pool.len());
        beam = match sampling {
            BeamSampling::Argmax => {
                let mut order: Vec<usize> = (0..pool.len()).collect();
                order.sort_by(|&a, &b| pool[b].log_weight.total_cmp(&pool[a].log_weight).then(a.cmp(&b)));
                order.truncate(take);
                order.sort_unstable();
                order.into_iter().map(|i| pool[i].clone()).collect()
            }
            BeamSampling::Weighted => {
                let top = pool.iter().map(|c| c.log_weight).fold(f64::NEG_INFINITY, f64::max);
                let idx: Vec<usize> = (0..pool.len()).collect();
                let mut picked: Vec<usize> = idx
                    .choose_multiple_weighted(rng, take, |&i| (pool[i].log_weight - top).exp().max(1e-300))
                    .expect("weights are positive and finite")
                    .copied()
                    .collect();
                picked.sort_unstable();
                picked.into_iter().map(|i| pool[i].clone()).collect()
            }
        };
        let (done, open): (Vec<Candidate>, Vec<Candidate>) = beam.into_iter().partition(|c| c.remaining == 0);
        finished.extend(done.into_iter().map(|c| c.finish(&retained, inst)));
        beam = open;
    }
    finished.into_iter().min_by(|a, b| a.penalized().total_cmp(&b.penalized()))
}

/// Follows the most probable unvisited successor from the depot until every
/// customer is placed. Returns to the depot only when that is the most
/// probable move.
pub fn greedy_decode(p: &[Vec<f64>], inst: &ProblemInstance) -> Solution {
    let n = inst.num_customers();
    let mut visited = vec![false; n + 1];
    let mut routes = Vec::new();
    let mut route: Vec<usize> = Vec::new();
    for _ in 0..n {
        let last = route.last().copied().unwrap_or(0);
        let mut best = None;
        for c in 1..=n {
            if !visited[c] && best.map_or(true, |(_, v)| p[last][c] > v) {
                best = Some((c, p[last][c]));
            }
        }
        let (c, v) = best.expect("an unvisited customer remains");
        if !route.is_empty() && p[last][0] > v {
            routes.push(std::mem::take(&mut route));
            // Restart from the depot row.
            let mut best = None;
            for c in 1..=n {
                if !visited[c] && best.map_or(true, |(_, v)| p[0][c] > v) {
                    best = Some((c, p[0][c]));
                }
            }
            let (c, _) = best.expect("an unvisited customer remains");
            visited[c] = true;
            route.push(c);
        } else {
            visited[c] = true;
            route.push(c);
        }
    }
    if !route.is_empty() {
        routes.push(route);
    }
    Solution::new(routes, inst).expect("each customer placed once")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moves::successor_matrix;
    use crate::vrp::{brute_force_optimum, generate_instance, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_hot_matrix_reconstructs_the_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for seed in 0..20 {
            let inst = generate_instance(5, Variant::Cvrp, seed).unwrap();
            let opt = brute_force_optimum(&inst).unwrap();
            let p = successor_matrix(&opt, 5);
            let giant = Solution::new(vec![(1..=5).collect()], &inst).unwrap();
            for anchor in [&giant, &opt] {
                let got = constrained_beam_search(&p, anchor, &inst, DEFAULT_BEAM_WIDTH, BeamSampling::Argmax, &mut rng).unwrap();
                assert!(got.same_routes(&opt), "seed {seed}: {:?} vs {:?}", got.routes(), opt.routes());
            }
            assert!(greedy_decode(&p, &inst).report().uncovered.is_empty());
        }
    }

    #[test]
    fn few_routes_are_all_discarded() {
        let inst = generate_instance(6, Variant::Cvrp, 1).unwrap();
        let s = Solution::new(vec![vec![1, 2], vec![3, 4], vec![5, 6]], &inst).unwrap();
        let p = vec![vec![1.0 / 7.0; 7]; 7];
        assert!(retained_routes(&p, &s).is_empty());
        let s4 = Solution::new(vec![vec![1, 2], vec![3], vec![4], vec![5, 6]], &inst).unwrap();
        let mut p4 = vec![vec![0.0; 7]; 7];
        p4[0][5] = 1.0;
        p4[5][6] = 1.0;
        p4[6][0] = 1.0;
        assert_eq!(retained_routes(&p4, &s4), vec![vec![5, 6]]);
    }

    #[test]
    fn weighted_beam_covers_every_customer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..10 {
            let inst = generate_instance(9, Variant::Vrptw, seed).unwrap();
            let n = 10;
            let p: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let row: Vec<f64> = (0..n).map(|j| if i == j { 0.0 } else { rng.gen_range(0.01..1.0) }).collect();
                    let s: f64 = row.iter().sum();
                    row.into_iter().map(|v| v / s).collect()
                })
                .collect();
            let anchor = Solution::new((1..=9).map(|c| vec![c]).collect(), &inst).unwrap();
            let got = constrained_beam_search(&p, &anchor, &inst, 4, BeamSampling::Weighted, &mut rng).unwrap();
            assert!(got.report().uncovered.is_empty());
            assert!(greedy_decode(&p, &inst).report().uncovered.is_empty());
        }
    }

    #[test]
    fn single_customer_round_trip() {
        let inst = generate_instance(1, Variant::Cvrp, 3).unwrap();
        let anchor = Solution::new(vec![vec![1]], &inst).unwrap();
        let p = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = constrained_beam_search(&p, &anchor, &inst, 16, BeamSampling::Weighted, &mut rng).unwrap();
        assert!(got.same_routes(&anchor));
    }
}
