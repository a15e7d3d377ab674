use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ProblemInstance;
use crate::error::{Error, Result};

/// Weight applied to lateness, capacity excess and uncovered customers when
/// search has to rank infeasible intermediates.
pub const INFEASIBILITY_PENALTY: f64 = 1e4;

/// Per-constraint feasibility of a solution.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub is_feasible: bool,
    /// Load above capacity, one entry per route.
    pub capacity_excess: Vec<f64>,
    /// Number of customers (and depot returns) served after their window closed.
    pub tw_violations: usize,
    pub total_lateness: f64,
    /// Customers not visited exactly once (missing or repeated).
    pub uncovered: BTreeSet<usize>,
}

impl FeasibilityReport {
    pub fn total_capacity_excess(&self) -> f64 {
        self.capacity_excess.iter().sum()
    }

    pub fn penalty(&self) -> f64 {
        INFEASIBILITY_PENALTY
            * (self.total_lateness + self.total_capacity_excess() + self.uncovered.len() as f64)
    }
}

/// Distance, load and schedule of one route `depot -> route -> depot`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RouteEval {
    pub distance: f64,
    pub load: f64,
    pub lateness: f64,
    pub late_visits: usize,
}

/// Evaluates a single route. Ids must be valid customer ids.
pub fn route_eval(route: &[usize], inst: &ProblemInstance) -> RouteEval {
    let mut ev = RouteEval::default();
    if route.is_empty() {
        return ev;
    }
    let timed = inst.window(0).is_some() || inst.window(route[0]).is_some();
    let mut t = inst.window(0).map_or(0.0, |w| w.early);
    let mut prev = 0;
    for &c in route {
        let leg = inst.dist(prev, c);
        ev.distance += leg;
        ev.load += inst.demand(c);
        if timed {
            let arrival = t + leg;
            let mut start = arrival;
            if let Some(w) = inst.window(c) {
                if arrival > w.late {
                    ev.lateness += arrival - w.late;
                    ev.late_visits += 1;
                }
                start = arrival.max(w.early);
            }
            t = start + inst.service_time(c);
        }
        prev = c;
    }
    let back = inst.dist(prev, 0);
    ev.distance += back;
    if timed {
        if let Some(w) = inst.window(0) {
            let arrival = t + back;
            if arrival > w.late {
                ev.lateness += arrival - w.late;
                ev.late_visits += 1;
            }
        }
    }
    ev
}

/// Objective (total route distance) and feasibility of `routes`.
///
/// Unknown ids are a structural error; missing or duplicated customers are
/// reported in [`FeasibilityReport::uncovered`].
pub fn evaluate(routes: &[Vec<usize>], inst: &ProblemInstance) -> Result<(f64, FeasibilityReport)> {
    let n = inst.num_customers();
    let mut seen = vec![0u32; n + 1];
    for &c in routes.iter().flatten() {
        if c == 0 || c > n {
            return Err(Error::UnknownCustomer(c));
        }
        seen[c] += 1;
    }
    let mut report = FeasibilityReport {
        uncovered: (1..=n).filter(|&c| seen[c] != 1).collect(),
        ..Default::default()
    };
    let mut objective = 0.0;
    for route in routes {
        let ev = route_eval(route, inst);
        objective += ev.distance;
        report.capacity_excess.push((ev.load - inst.capacity()).max(0.0));
        report.tw_violations += ev.late_visits;
        report.total_lateness += ev.lateness;
    }
    report.is_feasible = report.uncovered.is_empty()
        && report.tw_violations == 0
        && report.capacity_excess.iter().all(|&e| e == 0.0);
    Ok((objective, report))
}

/// A set of routes with its cached objective and feasibility report.
///
/// Solutions are immutable. Empty routes are dropped on construction. The
/// `stamp` is a fingerprint of the route content and identifies the exact
/// solution a move was enumerated on.
#[derive(Clone, Debug)]
pub struct Solution {
    routes: Vec<Vec<usize>>,
    objective: f64,
    report: FeasibilityReport,
    stamp: u64,
}

impl PartialEq for Solution {
    fn eq(&self, other: &Self) -> bool {
        self.routes == other.routes
    }
}

impl Solution {
    pub fn new(mut routes: Vec<Vec<usize>>, inst: &ProblemInstance) -> Result<Self> {
        routes.retain(|r| !r.is_empty());
        let (objective, report) = evaluate(&routes, inst)?;
        let stamp = fingerprint(&routes);
        Ok(Self {
            routes,
            objective,
            report,
            stamp,
        })
    }

    /// The empty solution (no routes).
    pub fn empty(inst: &ProblemInstance) -> Self {
        Self::new(Vec::new(), inst).expect("empty solution is structurally valid")
    }

    pub fn routes(&self) -> &[Vec<usize>] {
        &self.routes
    }

    pub fn into_routes(self) -> Vec<Vec<usize>> {
        self.routes
    }

    /// Total distance.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    /// Distance plus [`INFEASIBILITY_PENALTY`] times all violations.
    pub fn penalized(&self) -> f64 {
        self.objective + self.report.penalty()
    }

    pub fn report(&self) -> &FeasibilityReport {
        &self.report
    }

    pub fn is_feasible(&self) -> bool {
        self.report.is_feasible
    }

    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }

    pub fn num_customers(&self) -> usize {
        self.routes.iter().map(Vec::len).sum()
    }

    /// Routes sorted lexicographically; two solutions with the same routes in
    /// a different order share this form.
    pub fn canonical_routes(&self) -> Vec<Vec<usize>> {
        let mut r = self.routes.clone();
        r.sort();
        r
    }

    pub fn same_routes(&self, other: &Solution) -> bool {
        self.routes.len() == other.routes.len() && self.canonical_routes() == other.canonical_routes()
    }

    /// `(route index, position)` of every customer, indexed by id.
    pub fn positions(&self, n: usize) -> Vec<Option<(usize, usize)>> {
        let mut pos = vec![None; n + 1];
        for (r, route) in self.routes.iter().enumerate() {
            for (p, &c) in route.iter().enumerate() {
                if c <= n {
                    pos[c] = Some((r, p));
                }
            }
        }
        pos
    }
}

fn fingerprint(routes: &[Vec<usize>]) -> u64 {
    // FNV-1a over ids with a separator per route.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for r in routes {
        for &c in r {
            eat(c as u64);
        }
        eat(u64::MAX);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vrp::{Customer, Depot, TimeWindow, Variant};

    fn single(x: f64, y: f64) -> ProblemInstance {
        ProblemInstance::new(
            Variant::Cvrp,
            10.0,
            Depot { x: 0.0, y: 0.0, window: None },
            vec![Customer { id: 1, x, y, demand: 1.0, window: None, service_time: 0.0 }],
        )
        .unwrap()
    }

    #[test]
    fn three_four_five_round_trip() {
        let inst = single(3.0, 4.0);
        let s = Solution::new(vec![vec![1]], &inst).unwrap();
        assert!((s.objective() - 10.0).abs() < 1e-12);
        assert!(s.is_feasible());
    }

    #[test]
    fn empty_solution_is_uncovered() {
        let inst = single(3.0, 4.0);
        let s = Solution::empty(&inst);
        assert_eq!(s.objective(), 0.0);
        assert_eq!(s.report().uncovered, [1].into_iter().collect());
        assert!(!s.is_feasible());
    }

    #[test]
    fn unknown_customer_is_structural_error() {
        let inst = single(3.0, 4.0);
        assert!(matches!(Solution::new(vec![vec![2]], &inst), Err(Error::UnknownCustomer(2))));
        assert!(matches!(Solution::new(vec![vec![0]], &inst), Err(Error::UnknownCustomer(0))));
    }

    #[test]
    fn duplicates_are_reported_not_raised() {
        let inst = single(3.0, 4.0);
        let s = Solution::new(vec![vec![1], vec![1]], &inst).unwrap();
        assert!(s.report().uncovered.contains(&1));
        assert!(!s.is_feasible());
    }

    #[test]
    fn lateness_and_waiting() {
        let inst = ProblemInstance::new(
            Variant::Vrptw,
            10.0,
            Depot { x: 0.0, y: 0.0, window: Some(TimeWindow { early: 0.0, late: 100.0 }) },
            vec![
                Customer { id: 1, x: 3.0, y: 4.0, demand: 1.0, window: Some(TimeWindow { early: 8.0, late: 9.0 }), service_time: 1.0 },
                Customer { id: 2, x: 3.0, y: 0.0, demand: 1.0, window: Some(TimeWindow { early: 0.0, late: 10.0 }), service_time: 0.0 },
            ],
        )
        .unwrap();
        // arrive at 1 at t=5, wait to 8, leave at 9, reach 2 at 13 > 10.
        let s = Solution::new(vec![vec![1, 2]], &inst).unwrap();
        assert_eq!(s.report().tw_violations, 1);
        assert!((s.report().total_lateness - 3.0).abs() < 1e-12);
        assert!(!s.is_feasible());
        let ok = Solution::new(vec![vec![2, 1]], &inst).unwrap();
        assert!(ok.is_feasible());
        assert!((s.objective() - ok.objective()).abs() < 1e-12);
    }

    #[test]
    fn stamp_tracks_content() {
        let inst = single(1.0, 1.0);
        let a = Solution::new(vec![vec![1]], &inst).unwrap();
        let b = a.clone();
        assert_eq!(a.stamp(), b.stamp());
        assert_ne!(a.stamp(), Solution::empty(&inst).stamp());
    }
}
