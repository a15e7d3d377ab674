use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{nearest_neighbor, Clock, Incumbent, SearchBudget, SearchResult, SearchStats, TraceRow};
use crate::error::Result;
use crate::moves::descend;
use crate::vrp::{route_eval, ProblemInstance, Solution, INFEASIBILITY_PENALTY};

/// Operator score for a new global best.
pub const SCORE_BEST: f64 = 33.0;
/// Operator score for improving on the current solution.
pub const SCORE_BETTER: f64 = 9.0;
/// Operator score for an accepted non-improving solution.
pub const SCORE_ACCEPTED: f64 = 13.0;
/// Weight given to the last segment's average score.
pub const REACTION: f64 = 0.1;
/// Iterations per weight update.
pub const SEGMENT: usize = 100;

/// Roulette-wheel operator weights adapted once per segment.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveWeights {
    weights: Vec<f64>,
    scores: Vec<f64>,
    uses: Vec<usize>,
    reaction: f64,
}

impl AdaptiveWeights {
    pub fn new(count: usize, reaction: f64) -> Self {
        Self { weights: vec![1.0 / count as f64; count], scores: vec![0.0; count], uses: vec![0; count], reaction }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Draws an operator among those `allowed`. Panics if none is allowed.
    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R, allowed: &[bool]) -> usize {
        let total: f64 = self.weights.iter().zip(allowed).filter(|p| *p.1).map(|p| p.0).sum();
        let mut x = rng.gen::<f64>() * total;
        let mut last = None;
        for (i, (&w, &ok)) in self.weights.iter().zip(allowed).enumerate() {
            if !ok {
                continue;
            }
            last = Some(i);
            if x < w {
                return i;
            }
            x -= w;
        }
        last.expect("at least one operator allowed")
    }

    pub fn record(&mut self, op: usize, score: f64) {
        self.scores[op] += score;
        self.uses[op] += 1;
    }

    /// Blends in the segment's mean scores and renormalizes to sum one.
    pub fn end_segment(&mut self) {
        for i in 0..self.weights.len() {
            if self.uses[i] > 0 {
                let mean = self.scores[i] / self.uses[i] as f64;
                self.weights[i] = (1.0 - self.reaction) * self.weights[i] + self.reaction * mean;
            }
            self.scores[i] = 0.0;
            self.uses[i] = 0;
        }
        let floor = 1e-6;
        for w in &mut self.weights {
            *w = w.max(floor);
        }
        let total: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= total;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Destroy {
    Random,
    Worst,
    Related,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Repair {
    Greedy,
    Regret2,
}

impl Destroy {
    pub const ALL: [Destroy; 3] = [Destroy::Random, Destroy::Worst, Destroy::Related];
}

impl Repair {
    pub const ALL: [Repair; 2] = [Repair::Greedy, Repair::Regret2];
}

impl fmt::Display for Destroy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Destroy::Random => "random",
            Destroy::Worst => "worst",
            Destroy::Related => "shaw",
        })
    }
}

impl fmt::Display for Repair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Repair::Greedy => "greedy",
            Repair::Regret2 => "regret2",
        })
    }
}

fn route_cost(route: &[usize], inst: &ProblemInstance) -> f64 {
    let ev = route_eval(route, inst);
    ev.distance + INFEASIBILITY_PENALTY * (ev.lateness + (ev.load - inst.capacity()).max(0.0))
}

/// Removes `q` customers. Returns the remaining routes (possibly empty ones)
/// and the removed customers in removal order.
pub(crate) fn destroy<R: Rng + ?Sized>(
    routes: &[Vec<usize>],
    op: Destroy,
    q: usize,
    inst: &ProblemInstance,
    rng: &mut R,
) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut routes = routes.to_vec();
    let mut removed = Vec::with_capacity(q);
    let take = |routes: &mut Vec<Vec<usize>>, c: usize| {
        for r in routes.iter_mut() {
            r.retain(|&x| x != c);
        }
    };
    match op {
        Destroy::Random => {
            let mut all: Vec<usize> = routes.iter().flatten().copied().collect();
            all.shuffle(rng);
            for &c in all.iter().take(q) {
                take(&mut routes, c);
                removed.push(c);
            }
        }
        Destroy::Worst => {
            for _ in 0..q {
                let mut savings: Vec<(f64, usize)> = Vec::new();
                for r in &routes {
                    let base = route_cost(r, inst);
                    for (i, &c) in r.iter().enumerate() {
                        let mut without = r.clone();
                        without.remove(i);
                        savings.push((base - route_cost(&without, inst), c));
                    }
                }
                if savings.is_empty() {
                    break;
                }
                savings.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                let idx = ((rng.gen::<f64>().powi(3)) * savings.len() as f64) as usize;
                let c = savings[idx.min(savings.len() - 1)].1;
                take(&mut routes, c);
                removed.push(c);
            }
        }
        Destroy::Related => {
            let all: Vec<usize> = routes.iter().flatten().copied().collect();
            if all.is_empty() {
                return (routes, removed);
            }
            let span = (0..inst.num_locations())
                .flat_map(|i| (0..inst.num_locations()).map(move |j| (i, j)))
                .map(|(i, j)| inst.dist(i, j))
                .fold(0.0, f64::max)
                .max(1e-12);
            let horizon = inst.horizon();
            let relate = |a: usize, b: usize| {
                let mut r = 9.0 * inst.dist(a, b) / span;
                if let (Some(wa), Some(wb)) = (inst.window(a), inst.window(b)) {
                    r += 3.0 * (wa.early - wb.early).abs() / horizon;
                }
                r + 2.0 * (inst.demand(a) - inst.demand(b)).abs() / inst.capacity()
            };
            let first = all[rng.gen_range(0..all.len())];
            take(&mut routes, first);
            removed.push(first);
            while removed.len() < q {
                let pivot = removed[rng.gen_range(0..removed.len())];
                let mut rest: Vec<usize> = routes.iter().flatten().copied().collect();
                if rest.is_empty() {
                    break;
                }
                rest.sort_by(|&a, &b| relate(pivot, a).total_cmp(&relate(pivot, b)).then(a.cmp(&b)));
                let idx = ((rng.gen::<f64>().powi(6)) * rest.len() as f64) as usize;
                let c = rest[idx.min(rest.len() - 1)];
                take(&mut routes, c);
                removed.push(c);
            }
        }
    }
    (routes, removed)
}

/// Cheapest insertion of `c` into each route (and a fresh route, last).
/// Entries are `(cost increase, route, position)`.
fn insertion_options(routes: &[Vec<usize>], c: usize, inst: &ProblemInstance) -> Vec<(f64, usize, usize)> {
    let mut out = Vec::with_capacity(routes.len() + 1);
    for (ri, r) in routes.iter().enumerate() {
        let base = route_cost(r, inst);
        let mut best: Option<(f64, usize)> = None;
        for pos in 0..=r.len() {
            let mut with = r.clone();
            with.insert(pos, c);
            let d = route_cost(&with, inst) - base;
            if best.map_or(true, |b| d < b.0) {
                best = Some((d, pos));
            }
        }
        let (d, pos) = best.expect("at least one position");
        out.push((d, ri, pos));
    }
    out.push((route_cost(&[c], inst), routes.len(), 0));
    out
}

/// Reinserts every removed customer.
pub(crate) fn repair(mut routes: Vec<Vec<usize>>, mut removed: Vec<usize>, op: Repair, inst: &ProblemInstance) -> Vec<Vec<usize>> {
    routes.retain(|r| !r.is_empty());
    while !removed.is_empty() {
        // (customer index, option, priority); lower priority wins.
        let mut chosen: Option<(usize, (f64, usize, usize), f64)> = None;
        for (k, &c) in removed.iter().enumerate() {
            let mut opts = insertion_options(&routes, c, inst);
            opts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let best = opts[0];
            let priority = match op {
                Repair::Greedy => best.0,
                Repair::Regret2 => {
                    let second = opts.get(1).map_or(best.0, |o| o.0);
                    -(second - best.0)
                }
            };
            let better = chosen.as_ref().map_or(true, |(_, o, p)| {
                priority < *p - 1e-12 || ((priority - *p).abs() <= 1e-12 && best.0 < o.0)
            });
            if better {
                chosen = Some((k, best, priority));
            }
        }
        let (k, (_, ri, pos), _) = chosen.expect("a removed customer remains");
        let c = removed.remove(k);
        if ri == routes.len() {
            routes.push(vec![c]);
        } else {
            routes[ri].insert(pos, c);
        }
    }
    routes
}

/// ALNS from `init`. `on_accept` sees every accepted solution in order.
pub fn alns_search<R: Rng + ?Sized>(
    inst: &ProblemInstance,
    init: Solution,
    budget: &SearchBudget,
    rng: &mut R,
    timing: bool,
    mut on_accept: impl FnMut(&Solution),
) -> Result<SearchResult> {
    budget.validate()?;
    let clock = Clock::new(timing);
    let start = std::time::Instant::now();
    let n = inst.num_customers();
    let mut destroy_w = AdaptiveWeights::new(Destroy::ALL.len(), REACTION);
    let mut repair_w = AdaptiveWeights::new(Repair::ALL.len(), REACTION);
    let mut current = init;
    let mut incumbent = Incumbent::new(&current);
    let mut trace = Vec::new();
    let mut stats = SearchStats::default();
    // Start hot enough to accept a 5% worse solution half the time.
    let t0 = (0.05 * current.penalized() / std::f64::consts::LN_2).max(1e-9);
    let cooling = budget.max_iterations.map_or(0.999, |m| 0.002f64.powf(1.0 / m.max(1) as f64));
    let mut temperature = t0;
    let q_min = ((n as f64 * 0.1).ceil() as usize).max(1).min(n);
    let q_max = ((n as f64 * 0.4).ceil() as usize).max(q_min).min(n);
    while !budget.exhausted(stats.iterations, start) && n > 0 {
        stats.iterations += 1;
        let di = destroy_w.pick(rng, &[true; 3]);
        let ri = repair_w.pick(rng, &[true; 2]);
        let q = rng.gen_range(q_min..=q_max);
        let (partial, removed) = destroy(current.routes(), Destroy::ALL[di], q, inst, rng);
        let rebuilt = Solution::new(repair(partial, removed, Repair::ALL[ri], inst), inst)?;
        let (candidate, path) = descend(&rebuilt, inst, 10 * n * n);
        stats.moves_applied += path.len();
        let diff = candidate.penalized() - current.penalized();
        let accepted = diff < 0.0 || rng.gen::<f64>() < (-diff / temperature).exp();
        let score = if incumbent.offer(&candidate) {
            SCORE_BEST
        } else if diff < -crate::moves::IMPROVEMENT_EPS {
            SCORE_BETTER
        } else if accepted {
            SCORE_ACCEPTED
        } else {
            0.0
        };
        destroy_w.record(di, score);
        repair_w.record(ri, score);
        if accepted {
            current = candidate;
            on_accept(&current);
        }
        temperature *= cooling;
        if stats.iterations % SEGMENT == 0 {
            destroy_w.end_segment();
            repair_w.end_segment();
        }
        trace.push(TraceRow {
            iteration: stats.iterations,
            best_obj: incumbent.objective(),
            current_obj: current.penalized(),
            action: format!("alns:{}+{}", Destroy::ALL[di], Repair::ALL[ri]),
            sample_id: 0,
            elapsed_ms: clock.ms(),
        });
    }
    Ok(SearchResult { best: incumbent.into_solution(), trace, psg: None, stats, elapsed: start.elapsed() })
}

/// ALNS from the nearest-neighbour construction with its own seeded stream.
pub fn alns_solve(inst: &ProblemInstance, budget: &SearchBudget, timing: bool) -> Result<SearchResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    alns_search(inst, nearest_neighbor(inst), budget, &mut rng, timing, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vrp::{brute_force_optimum, generate_instance, Variant};

    #[test]
    fn destroy_then_repair_restores_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..10 {
            let inst = generate_instance(10, Variant::Vrptw, seed).unwrap();
            let s = nearest_neighbor(&inst);
            for d in Destroy::ALL {
                for r in Repair::ALL {
                    let q = rng.gen_range(1..=4);
                    let (partial, removed) = destroy(s.routes(), d, q, &inst, &mut rng);
                    assert_eq!(removed.len(), q);
                    assert_eq!(partial.iter().map(Vec::len).sum::<usize>(), 10 - q);
                    let back = Solution::new(repair(partial, removed, r, &inst), &inst).unwrap();
                    assert!(back.report().uncovered.is_empty());
                }
            }
        }
    }

    #[test]
    fn weights_stay_positive_and_normalized() {
        let mut w = AdaptiveWeights::new(3, REACTION);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for seg in 0..50 {
            for _ in 0..SEGMENT {
                let i = w.pick(&mut rng, &[true, true, seg % 2 == 0]);
                w.record(i, if i == 0 { SCORE_BEST } else { 0.0 });
            }
            w.end_segment();
            assert!(w.weights().iter().all(|&x| x > 0.0));
            assert!((w.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(w.weights()[0] > 0.9);
    }

    #[test]
    fn regret_prefers_the_customer_with_the_larger_regret() {
        use crate::vrp::{Customer, Depot};
        // Customer 1 sits next to route [2] and would cost about 19.5 more on
        // its own route; customer 3 only about 0.95 more. Both positions
        // around 2 cost the same for 1, so the first one is taken.
        let cs = vec![
            Customer { id: 1, x: 10.0, y: 0.5, demand: 1.0, window: None, service_time: 0.0 },
            Customer { id: 2, x: 10.0, y: 0.0, demand: 1.0, window: None, service_time: 0.0 },
            Customer { id: 3, x: 0.0, y: 1.0, demand: 1.0, window: None, service_time: 0.0 },
        ];
        let inst = ProblemInstance::new(Variant::Cvrp, 2.0, Depot { x: 0.0, y: 0.0, window: None }, cs).unwrap();
        let out = repair(vec![vec![2]], vec![3, 1], Repair::Regret2, &inst);
        assert_eq!(out, vec![vec![1, 2], vec![3]]);
    }

    #[test]
    fn reaches_the_optimum_on_small_instances() {
        let mut gaps = Vec::new();
        for seed in 0..8 {
            let inst = generate_instance(7, Variant::Cvrp, seed).unwrap();
            let opt = brute_force_optimum(&inst).unwrap();
            let r = alns_solve(&inst, &SearchBudget::iterations(200, seed), false).unwrap();
            assert!(r.best.is_feasible());
            assert!(r.best_objective() >= opt.objective() - 1e-9);
            assert!(r.trace.windows(2).all(|w| w[1].best_obj <= w[0].best_obj));
            assert_eq!(r.trace.len(), 200);
            gaps.push(crate::vrp::gap(r.best_objective(), opt.objective()));
        }
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!(mean < 0.01, "mean gap {mean}");
    }
}
