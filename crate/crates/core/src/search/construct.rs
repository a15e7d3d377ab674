use rand::seq::SliceRandom;
use rand::Rng;

use crate::vrp::{route_eval, ProblemInstance, Solution};

/// True when `route` followed by `c` respects capacity and every window.
fn can_append(route: &[usize], c: usize, inst: &ProblemInstance) -> bool {
    let mut r = route.to_vec();
    r.push(c);
    let ev = route_eval(&r, inst);
    ev.load <= inst.capacity() + 1e-9 && ev.late_visits == 0
}

/// Builds routes by repeatedly appending one of the `choices` nearest
/// appendable customers, opening a new route when none fits.
fn greedy<R: Rng + ?Sized>(inst: &ProblemInstance, choices: usize, mut rng: Option<&mut R>) -> Solution {
    let n = inst.num_customers();
    let mut left: Vec<usize> = (1..=n).collect();
    let mut routes = Vec::new();
    let mut route: Vec<usize> = Vec::new();
    while !left.is_empty() {
        let last = route.last().copied().unwrap_or(0);
        let mut cands: Vec<usize> = left.iter().copied().filter(|&c| can_append(&route, c, inst)).collect();
        if cands.is_empty() {
            if route.is_empty() {
                // A customer that is infeasible even alone still gets a route.
                cands = left.clone();
            } else {
                routes.push(std::mem::take(&mut route));
                continue;
            }
        }
        cands.sort_by(|&a, &b| inst.dist(last, a).total_cmp(&inst.dist(last, b)).then(a.cmp(&b)));
        let pick = match rng.as_deref_mut() {
            Some(r) => cands[r.gen_range(0..choices.min(cands.len()))],
            None => cands[0],
        };
        route.push(pick);
        left.retain(|&c| c != pick);
    }
    if !route.is_empty() {
        routes.push(route);
    }
    Solution::new(routes, inst).expect("every customer placed once")
}

/// Nearest-neighbour construction that keeps every route feasible.
pub fn nearest_neighbor(inst: &ProblemInstance) -> Solution {
    greedy::<rand::rngs::ThreadRng>(inst, 1, None)
}

/// Nearest-neighbour with a random pick among the three closest candidates.
pub fn randomized_greedy<R: Rng + ?Sized>(inst: &ProblemInstance, rng: &mut R) -> Solution {
    greedy(inst, 3, Some(rng))
}

/// Random customer order cut into routes whenever the next customer no
/// longer fits.
pub fn random_start<R: Rng + ?Sized>(inst: &ProblemInstance, rng: &mut R) -> Solution {
    let mut order: Vec<usize> = (1..=inst.num_customers()).collect();
    order.shuffle(rng);
    let mut routes: Vec<Vec<usize>> = Vec::new();
    let mut route = Vec::new();
    for c in order {
        if !route.is_empty() && !can_append(&route, c, inst) {
            routes.push(std::mem::take(&mut route));
        }
        route.push(c);
    }
    if !route.is_empty() {
        routes.push(route);
    }
    Solution::new(routes, inst).expect("every customer placed once")
}
