use serde::{Deserialize, Serialize};

use super::{MoveKind, IMPROVEMENT_EPS};
use crate::error::{Error, Result};
use crate::vrp::{route_eval, ProblemInstance, RouteEval, Solution, INFEASIBILITY_PENALTY};

/// Concrete operands of a move, as route indices and positions in the source
/// solution. A target route index equal to the number of routes means "open
/// a new route".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operands {
    /// Move the customer at `(route, pos)` to `to_pos` of `to_route` (position
    /// counted after removal).
    Relocate { route: usize, pos: usize, to_route: usize, to_pos: usize },
    Swap { r1: usize, p1: usize, r2: usize, p2: usize },
    /// Reverse positions `i..=j` of `route`.
    TwoOpt { route: usize, i: usize, j: usize },
    /// Exchange the tails `r1[a..]` and `r2[b..]`.
    TwoOptStar { r1: usize, a: usize, r2: usize, b: usize },
    /// Move the pair at `pos, pos + 1` of `route`, orientation kept.
    OrOpt { route: usize, pos: usize, to_route: usize, to_pos: usize },
    /// Exchange `r1[p1..p1 + len1]` with `r2[p2..p2 + len2]`.
    Cross { r1: usize, p1: usize, len1: usize, r2: usize, p2: usize, len2: usize },
}

/// A grounded move on one specific solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub kind: MoveKind,
    pub operands: Operands,
    /// Change in total distance.
    pub delta: f64,
    /// Change in total violation (capacity excess plus lateness).
    pub penalty_delta: f64,
    pub result_feasible: bool,
    /// Stamp of the solution the move was enumerated on.
    pub source: u64,
}

impl Move {
    pub fn penalized_delta(&self) -> f64 {
        self.delta + INFEASIBILITY_PENALTY * self.penalty_delta
    }

    /// Strictly improves the penalized objective and keeps a feasible source feasible.
    pub fn is_improving(&self, source: &Solution) -> bool {
        self.penalized_delta() < -IMPROVEMENT_EPS && (self.result_feasible || !source.is_feasible())
    }
}

#[inline]
fn at(route: &[usize], p: isize) -> usize {
    if p < 0 || p as usize >= route.len() {
        0
    } else {
        route[p as usize]
    }
}

/// Element `q` of `route` with `len` entries removed starting at `start`;
/// the depot outside the range.
#[inline]
fn at_removed(route: &[usize], start: usize, len: usize, q: isize) -> usize {
    if q < 0 {
        return 0;
    }
    let q = q as usize;
    let idx = if q < start { q } else { q + len };
    if idx >= route.len() {
        0
    } else {
        route[idx]
    }
}

fn violation(ev: &RouteEval, cap: f64) -> f64 {
    (ev.load - cap).max(0.0) + ev.lateness
}

fn bad(ev: &RouteEval, cap: f64) -> bool {
    ev.load > cap || ev.late_visits > 0
}

/// Routes replaced (`Some(index)`) or created (`None`) by a move.
pub(crate) fn modified_routes(routes: &[Vec<usize>], op: &Operands) -> Vec<(Option<usize>, Vec<usize>)> {
    let slot = |r: usize| (r < routes.len()).then_some(r);
    match *op {
        Operands::Relocate { route, pos, to_route, to_pos } => move_segment(routes, route, pos, 1, to_route, to_pos, slot),
        Operands::OrOpt { route, pos, to_route, to_pos } => move_segment(routes, route, pos, 2, to_route, to_pos, slot),
        Operands::Swap { r1, p1, r2, p2 } => {
            if r1 == r2 {
                let mut r = routes[r1].clone();
                r.swap(p1, p2);
                vec![(Some(r1), r)]
            } else {
                let mut a = routes[r1].clone();
                let mut b = routes[r2].clone();
                std::mem::swap(&mut a[p1], &mut b[p2]);
                vec![(Some(r1), a), (Some(r2), b)]
            }
        }
        Operands::TwoOpt { route, i, j } => {
            let mut r = routes[route].clone();
            r[i..=j].reverse();
            vec![(Some(route), r)]
        }
        Operands::TwoOptStar { r1, a, r2, b } => {
            let (x, y) = (&routes[r1], &routes[r2]);
            let n1 = x[..a].iter().chain(&y[b..]).copied().collect();
            let n2 = y[..b].iter().chain(&x[a..]).copied().collect();
            vec![(Some(r1), n1), (Some(r2), n2)]
        }
        Operands::Cross { r1, p1, len1, r2, p2, len2 } => {
            let (x, y) = (&routes[r1], &routes[r2]);
            let n1 = x[..p1].iter().chain(&y[p2..p2 + len2]).chain(&x[p1 + len1..]).copied().collect();
            let n2 = y[..p2].iter().chain(&x[p1..p1 + len1]).chain(&y[p2 + len2..]).copied().collect();
            vec![(Some(r1), n1), (Some(r2), n2)]
        }
    }
}

fn move_segment(
    routes: &[Vec<usize>],
    route: usize,
    pos: usize,
    len: usize,
    to_route: usize,
    to_pos: usize,
    slot: impl Fn(usize) -> Option<usize>,
) -> Vec<(Option<usize>, Vec<usize>)> {
    let seg: Vec<usize> = routes[route][pos..pos + len].to_vec();
    let mut src = routes[route].clone();
    src.drain(pos..pos + len);
    if to_route == route {
        src.splice(to_pos..to_pos, seg);
        return vec![(Some(route), src)];
    }
    let dst = match slot(to_route) {
        Some(r) => {
            let mut d = routes[r].clone();
            d.splice(to_pos..to_pos, seg);
            d
        }
        None => seg,
    };
    vec![(Some(route), src), (slot(to_route), dst)]
}

struct Scan<'a> {
    inst: &'a ProblemInstance,
    routes: &'a [Vec<usize>],
    evals: Vec<RouteEval>,
    bad_routes: usize,
    covered: bool,
    stamp: u64,
    kind: MoveKind,
    out: Vec<Move>,
}

impl<'a> Scan<'a> {
    fn new(solution: &'a Solution, inst: &'a ProblemInstance, kind: MoveKind) -> Self {
        let routes = solution.routes();
        let evals: Vec<RouteEval> = routes.iter().map(|r| route_eval(r, inst)).collect();
        let bad_routes = evals.iter().filter(|e| bad(e, inst.capacity())).count();
        Self {
            inst,
            routes,
            evals,
            bad_routes,
            covered: solution.report().uncovered.is_empty(),
            stamp: solution.stamp(),
            kind,
            out: Vec::new(),
        }
    }

    #[inline]
    fn d(&self, a: usize, b: usize) -> f64 {
        self.inst.dist(a, b)
    }

    fn push(&mut self, operands: Operands, delta: f64) {
        let cap = self.inst.capacity();
        let mut penalty_delta = 0.0;
        let mut bad_routes = self.bad_routes as isize;
        for (idx, r) in modified_routes(self.routes, &operands) {
            if let Some(i) = idx {
                penalty_delta -= violation(&self.evals[i], cap);
                bad_routes -= bad(&self.evals[i], cap) as isize;
            }
            let ev = route_eval(&r, self.inst);
            penalty_delta += violation(&ev, cap);
            bad_routes += bad(&ev, cap) as isize;
        }
        self.out.push(Move {
            kind: self.kind,
            operands,
            delta,
            penalty_delta,
            result_feasible: self.covered && bad_routes == 0,
            source: self.stamp,
        });
    }

    /// Segment `routes[r][p..p+len]` moved into every other position.
    fn segment_moves(&mut self, len: usize, make: impl Fn(usize, usize, usize, usize) -> Operands) {
        let nr = self.routes.len();
        for r in 0..nr {
            let route = self.routes[r].as_slice();
            if route.len() < len {
                continue;
            }
            for p in 0..=(route.len() - len) {
                let first = route[p];
                let last = route[p + len - 1];
                let a = at(route, p as isize - 1);
                let b = at(route, (p + len) as isize);
                let gain = self.d(a, first) + self.d(last, b) - self.d(a, b);
                for r2 in 0..nr {
                    let target = self.routes[r2].as_slice();
                    let (skip_start, skip_len) = if r2 == r { (p, len) } else { (0, 0) };
                    let tlen = target.len() - skip_len;
                    for q in 0..=tlen {
                        if r2 == r && q == p {
                            continue;
                        }
                        let x = at_removed(target, skip_start, skip_len, q as isize - 1);
                        let y = at_removed(target, skip_start, skip_len, q as isize);
                        let ins = self.d(x, first) + self.d(last, y) - self.d(x, y);
                        self.push(make(r, p, r2, q), ins - gain);
                    }
                }
                if route.len() > len {
                    let ins = self.d(0, first) + self.d(last, 0);
                    self.push(make(r, p, nr, 0), ins - gain);
                }
            }
        }
    }

    fn swaps(&mut self) {
        let nr = self.routes.len();
        for r1 in 0..nr {
            for p1 in 0..self.routes[r1].len() {
                for r2 in r1..nr {
                    let start = if r2 == r1 { p1 + 1 } else { 0 };
                    for p2 in start..self.routes[r2].len() {
                        let delta = self.swap_delta(r1, p1, r2, p2);
                        self.push(Operands::Swap { r1, p1, r2, p2 }, delta);
                    }
                }
            }
        }
    }

    fn swap_delta(&self, r1: usize, p1: usize, r2: usize, p2: usize) -> f64 {
        let x = &self.routes[r1];
        let y = &self.routes[r2];
        let (c1, c2) = (x[p1], y[p2]);
        let (a1, b1) = (at(x, p1 as isize - 1), at(x, p1 as isize + 1));
        let (a2, b2) = (at(y, p2 as isize - 1), at(y, p2 as isize + 1));
        if r1 == r2 && p2 == p1 + 1 {
            return self.d(a1, c2) + self.d(c1, b2) - self.d(a1, c1) - self.d(c2, b2);
        }
        self.d(a1, c2) + self.d(c2, b1) - self.d(a1, c1) - self.d(c1, b1) + self.d(a2, c1) + self.d(c1, b2)
            - self.d(a2, c2)
            - self.d(c2, b2)
    }

    fn two_opt(&mut self) {
        for route in 0..self.routes.len() {
            let r = self.routes[route].as_slice();
            for i in 0..r.len() {
                for j in (i + 1)..r.len() {
                    let a = at(r, i as isize - 1);
                    let b = at(r, j as isize + 1);
                    let delta = self.d(a, r[j]) + self.d(r[i], b) - self.d(a, r[i]) - self.d(r[j], b);
                    self.push(Operands::TwoOpt { route, i, j }, delta);
                }
            }
        }
    }

    fn two_opt_star(&mut self) {
        let nr = self.routes.len();
        for r1 in 0..nr {
            for r2 in (r1 + 1)..nr {
                let (x, y) = (self.routes[r1].as_slice(), self.routes[r2].as_slice());
                for a in 0..=x.len() {
                    for b in 0..=y.len() {
                        if (a == 0 && b == 0) || (a == x.len() && b == y.len()) {
                            continue;
                        }
                        let (x1, y1) = (at(x, a as isize - 1), at(x, a as isize));
                        let (x2, y2) = (at(y, b as isize - 1), at(y, b as isize));
                        let delta = self.d(x1, y2) + self.d(x2, y1) - self.d(x1, y1) - self.d(x2, y2);
                        self.push(Operands::TwoOptStar { r1, a, r2, b }, delta);
                    }
                }
            }
        }
    }

    fn cross(&mut self) {
        let nr = self.routes.len();
        for r1 in 0..nr {
            for r2 in (r1 + 1)..nr {
                for (len1, len2) in [(1, 2), (2, 1), (2, 2)] {
                    let (x, y) = (self.routes[r1].as_slice(), self.routes[r2].as_slice());
                    if x.len() < len1 || y.len() < len2 {
                        continue;
                    }
                    for p1 in 0..=(x.len() - len1) {
                        for p2 in 0..=(y.len() - len2) {
                            let (s1f, s1l) = (x[p1], x[p1 + len1 - 1]);
                            let (s2f, s2l) = (y[p2], y[p2 + len2 - 1]);
                            let (a1, b1) = (at(x, p1 as isize - 1), at(x, (p1 + len1) as isize));
                            let (a2, b2) = (at(y, p2 as isize - 1), at(y, (p2 + len2) as isize));
                            let delta = self.d(a1, s2f) + self.d(s2l, b1) - self.d(a1, s1f) - self.d(s1l, b1)
                                + self.d(a2, s1f)
                                + self.d(s1l, b2)
                                - self.d(a2, s2f)
                                - self.d(s2l, b2);
                            self.push(Operands::Cross { r1, p1, len1, r2, p2, len2 }, delta);
                        }
                    }
                }
            }
        }
    }
}

/// Every candidate of `kind` on `solution`, in scan order, with distance
/// deltas computed from the changed arcs and the feasibility of the result.
pub fn enumerate_moves(solution: &Solution, inst: &ProblemInstance, kind: MoveKind) -> Vec<Move> {
    let mut scan = Scan::new(solution, inst, kind);
    match kind {
        MoveKind::RelocateOne => scan.segment_moves(1, |route, pos, to_route, to_pos| Operands::Relocate {
            route,
            pos,
            to_route,
            to_pos,
        }),
        MoveKind::OrOptSeg2 => scan.segment_moves(2, |route, pos, to_route, to_pos| Operands::OrOpt {
            route,
            pos,
            to_route,
            to_pos,
        }),
        MoveKind::SwapOneOne => scan.swaps(),
        MoveKind::TwoOptIntra => scan.two_opt(),
        MoveKind::TwoOptStar => scan.two_opt_star(),
        MoveKind::CrossExchange => scan.cross(),
    }
    scan.out
}

/// Candidates of all six kinds.
pub fn enumerate_all(solution: &Solution, inst: &ProblemInstance) -> Vec<Move> {
    MoveKind::ALL
        .iter()
        .flat_map(|&k| enumerate_moves(solution, inst, k))
        .collect()
}

/// Candidate of `kind` with the lowest penalized delta, preferring candidates
/// that keep (or reach) feasibility. `None` when the kind has no candidate.
pub fn best_move(solution: &Solution, inst: &ProblemInstance, kind: MoveKind) -> Option<Move> {
    enumerate_moves(solution, inst, kind).into_iter().min_by(|a, b| {
        b.result_feasible
            .cmp(&a.result_feasible)
            .then(a.penalized_delta().total_cmp(&b.penalized_delta()))
    })
}

/// Applies a move enumerated on exactly this solution.
pub fn apply_move(solution: &Solution, mv: &Move, inst: &ProblemInstance) -> Result<Solution> {
    if mv.source != solution.stamp() {
        return Err(Error::StaleMove { expected: mv.source, found: solution.stamp() });
    }
    let mut routes = solution.routes().to_vec();
    for (idx, r) in modified_routes(solution.routes(), &mv.operands) {
        match idx {
            Some(i) => routes[i] = r,
            None => routes.push(r),
        }
    }
    let next = Solution::new(routes, inst)?;
    debug_assert!(
        (next.objective() - solution.objective() - mv.delta).abs() < 1e-7,
        "{:?}: delta {} vs {}",
        mv.operands,
        mv.delta,
        next.objective() - solution.objective()
    );
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vrp::{generate_instance, Variant};
    use proptest::prelude::*;

    fn sol(inst: &ProblemInstance, routes: Vec<Vec<usize>>) -> Solution {
        Solution::new(routes, inst).unwrap()
    }

    #[test]
    fn two_opt_count_on_three_customer_route() {
        let inst = generate_instance(3, Variant::Cvrp, 0).unwrap();
        let s = sol(&inst, vec![vec![1, 2, 3]]);
        let l = 3;
        assert_eq!(enumerate_moves(&s, &inst, MoveKind::TwoOptIntra).len(), l * (l - 1) / 2);
    }

    #[test]
    fn relocate_single_customer_has_no_candidate() {
        let inst = generate_instance(1, Variant::Cvrp, 0).unwrap();
        let s = sol(&inst, vec![vec![1]]);
        assert!(enumerate_moves(&s, &inst, MoveKind::RelocateOne).is_empty());
    }

    #[test]
    fn swap_between_singletons() {
        let inst = generate_instance(2, Variant::Cvrp, 4).unwrap();
        let s = sol(&inst, vec![vec![1], vec![2]]);
        let moves = enumerate_moves(&s, &inst, MoveKind::SwapOneOne);
        assert_eq!(moves.len(), 1);
        let t = apply_move(&s, &moves[0], &inst).unwrap();
        assert!((t.objective() - s.objective() - moves[0].delta).abs() < 1e-12);
    }

    #[test]
    fn closed_form_counts() {
        let inst = generate_instance(7, Variant::Cvrp, 2).unwrap();
        let s = sol(&inst, vec![vec![1, 2, 3], vec![4, 5, 6, 7]]);
        let (l1, l2) = (3usize, 4usize);
        let n = l1 + l2;
        let count = |k| enumerate_moves(&s, &inst, k).len();
        assert_eq!(count(MoveKind::SwapOneOne), n * (n - 1) / 2);
        assert_eq!(count(MoveKind::TwoOptIntra), l1 * (l1 - 1) / 2 + l2 * (l2 - 1) / 2);
        assert_eq!(count(MoveKind::TwoOptStar), (l1 + 1) * (l2 + 1) - 2);
        // relocate: each customer into (n - 1 + routes) slots minus its own, plus a new route
        let reloc: usize = [l1, l2]
            .iter()
            .map(|&l| l * ((n - 1 + 2) - 1 + 1))
            .sum();
        assert_eq!(count(MoveKind::RelocateOne), reloc);
        let oropt: usize = [l1, l2].iter().map(|&l| (l - 1) * ((n - 2 + 2) - 1 + 1)).sum();
        assert_eq!(count(MoveKind::OrOptSeg2), oropt);
        let cross = (l1 * (l2 - 1)) + ((l1 - 1) * l2) + ((l1 - 1) * (l2 - 1));
        assert_eq!(count(MoveKind::CrossExchange), cross);
    }

    #[test]
    fn stale_move_rejected() {
        let inst = generate_instance(4, Variant::Cvrp, 0).unwrap();
        let s = sol(&inst, vec![vec![1, 2], vec![3, 4]]);
        let m = enumerate_moves(&s, &inst, MoveKind::SwapOneOne).remove(0);
        let t = apply_move(&s, &m, &inst).unwrap();
        assert!(matches!(apply_move(&t, &m, &inst), Err(Error::StaleMove { .. })));
    }

    #[test]
    fn relocate_and_back_is_identity() {
        let inst = generate_instance(5, Variant::Cvrp, 9).unwrap();
        let s = sol(&inst, vec![vec![1, 2, 3], vec![4, 5]]);
        let m = enumerate_moves(&s, &inst, MoveKind::RelocateOne)
            .into_iter()
            .find(|m| m.operands == Operands::Relocate { route: 0, pos: 1, to_route: 1, to_pos: 2 })
            .unwrap();
        let t = apply_move(&s, &m, &inst).unwrap();
        assert_eq!(t.routes(), &[vec![1, 3], vec![4, 5, 2]]);
        let back = enumerate_moves(&t, &inst, MoveKind::RelocateOne)
            .into_iter()
            .find(|m| m.operands == Operands::Relocate { route: 1, pos: 2, to_route: 0, to_pos: 1 })
            .unwrap();
        let u = apply_move(&t, &back, &inst).unwrap();
        assert_eq!(u, s);
    }

    #[test]
    fn chain_of_moves_matches_evaluate() {
        use rand::{Rng, SeedableRng};
        let inst = generate_instance(8, Variant::Cvrp, 8).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut s = sol(&inst, vec![vec![1, 2, 3, 4], vec![5, 6, 7, 8]]);
        let mut expected = s.objective();
        for _ in 0..5 {
            let k = MoveKind::ALL[rng.gen_range(0..6)];
            let moves = enumerate_moves(&s, &inst, k);
            let m = &moves[rng.gen_range(0..moves.len())];
            expected += m.delta;
            s = apply_move(&s, m, &inst).unwrap();
        }
        let (obj, _) = crate::vrp::evaluate(s.routes(), &inst).unwrap();
        assert!((obj - expected).abs() < 1e-9);
    }

    #[test]
    fn feasibility_annotation_matches_result() {
        for variant in [Variant::Cvrp, Variant::Vrptw] {
            let inst = generate_instance(8, variant, 21).unwrap();
            let s = sol(&inst, vec![vec![1, 2, 3], vec![4, 5], vec![6, 7, 8]]);
            for m in enumerate_all(&s, &inst) {
                let t = apply_move(&s, &m, &inst).unwrap();
                assert_eq!(m.result_feasible, t.is_feasible(), "{:?}", m.operands);
                let dp = t.report().total_capacity_excess() + t.report().total_lateness
                    - s.report().total_capacity_excess()
                    - s.report().total_lateness;
                assert!((dp - m.penalty_delta).abs() < 1e-9);
            }
        }
    }

    fn arb_solution() -> impl Strategy<Value = (u64, Vec<Vec<usize>>, u8)> {
        (any::<u64>(), 2usize..9, any::<u8>()).prop_flat_map(|(seed, n, v)| {
            (Just(seed), Just(n), Just(v), Just((1..=n).collect::<Vec<_>>()).prop_shuffle(), proptest::collection::vec(any::<bool>(), n))
                .prop_map(|(seed, _n, v, perm, cuts)| {
                    let mut routes = vec![Vec::new()];
                    for (c, cut) in perm.into_iter().zip(cuts) {
                        if cut && !routes.last().unwrap().is_empty() {
                            routes.push(Vec::new());
                        }
                        routes.last_mut().unwrap().push(c);
                    }
                    (seed, routes, v)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn every_delta_matches_reevaluation((seed, routes, v) in arb_solution()) {
            let n = routes.iter().map(Vec::len).sum();
            let variant = if v % 2 == 0 { Variant::Cvrp } else { Variant::Vrptw };
            let inst = generate_instance(n, variant, seed).unwrap();
            let s = sol(&inst, routes);
            for m in enumerate_all(&s, &inst) {
                let t = apply_move(&s, &m, &inst).unwrap();
                prop_assert!((t.objective() - s.objective() - m.delta).abs() <= 1e-9);
                prop_assert!(t.report().uncovered.is_empty());
                prop_assert_eq!(t.num_customers(), n);
            }
        }
    }
}
