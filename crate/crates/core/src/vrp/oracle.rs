//! Exact optimum for tiny instances by set-partition dynamic programming.

use super::{route_eval, ProblemInstance, Solution, Variant};
use crate::error::{Error, Result};

/// Largest customer count [`brute_force_optimum`] accepts.
pub const ORACLE_MAX_CUSTOMERS: usize = 10;

/// Exact minimum-distance feasible solution.
///
/// Every capacity-feasible customer subset gets its optimal single-route
/// cost (Held-Karp for CVRP, pruned permutation search with window checks
/// for VRPTW); the subsets are then combined by a DP over set partitions.
pub fn brute_force_optimum(inst: &ProblemInstance) -> Result<Solution> {
    let n = inst.num_customers();
    if n > ORACLE_MAX_CUSTOMERS {
        return Err(Error::InstanceTooLarge { n, max: ORACLE_MAX_CUSTOMERS });
    }
    let full = (1usize << n) - 1;
    let routes = match inst.variant() {
        Variant::Cvrp => held_karp_routes(inst),
        Variant::Vrptw => permutation_routes(inst),
    };

    // best[mask] = optimal cost of serving exactly `mask`.
    let mut best = vec![f64::INFINITY; full + 1];
    let mut choice = vec![0usize; full + 1];
    best[0] = 0.0;
    for mask in 1..=full {
        let low = mask & mask.wrapping_neg();
        let rest = mask ^ low;
        // Subsets of `mask` containing its lowest customer.
        let mut sub = rest;
        loop {
            let part = sub | low;
            if let Some((cost, _)) = &routes[part] {
                let total = cost + best[mask ^ part];
                if total < best[mask] {
                    best[mask] = total;
                    choice[mask] = part;
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    if !best[full].is_finite() {
        return Err(Error::InvalidInstance("no feasible solution exists".into()));
    }
    let mut out = Vec::new();
    let mut mask = full;
    while mask != 0 {
        let part = choice[mask];
        out.push(routes[part].as_ref().expect("chosen part is routable").1.clone());
        mask ^= part;
    }
    Solution::new(out, inst)
}

fn subset_demand(inst: &ProblemInstance, mask: usize) -> f64 {
    (0..inst.num_customers())
        .filter(|b| mask >> b & 1 == 1)
        .map(|b| inst.demand(b + 1))
        .sum()
}

type RouteTable = Vec<Option<(f64, Vec<usize>)>>;

fn held_karp_routes(inst: &ProblemInstance) -> RouteTable {
    let n = inst.num_customers();
    let size = 1usize << n;
    let mut dp = vec![f64::INFINITY; size * n];
    let mut parent = vec![usize::MAX; size * n];
    for j in 0..n {
        dp[(1 << j) * n + j] = inst.dist(0, j + 1);
    }
    for mask in 1..size {
        for j in 0..n {
            let cur = dp[mask * n + j];
            if mask >> j & 1 == 0 || !cur.is_finite() {
                continue;
            }
            for k in 0..n {
                if mask >> k & 1 == 1 {
                    continue;
                }
                let next = mask | 1 << k;
                let cand = cur + inst.dist(j + 1, k + 1);
                if cand < dp[next * n + k] {
                    dp[next * n + k] = cand;
                    parent[next * n + k] = j;
                }
            }
        }
    }
    let mut table = vec![None; size];
    for mask in 1..size {
        if subset_demand(inst, mask) > inst.capacity() {
            continue;
        }
        let (mut last, mut cost) = (usize::MAX, f64::INFINITY);
        for j in 0..n {
            if mask >> j & 1 == 1 {
                let c = dp[mask * n + j] + inst.dist(j + 1, 0);
                if c < cost {
                    cost = c;
                    last = j;
                }
            }
        }
        let mut route = Vec::new();
        let mut m = mask;
        let mut j = last;
        while j != usize::MAX {
            route.push(j + 1);
            let p = parent[m * n + j];
            m ^= 1 << j;
            j = p;
        }
        route.reverse();
        table[mask] = Some((cost, route));
    }
    table
}

fn permutation_routes(inst: &ProblemInstance) -> RouteTable {
    let n = inst.num_customers();
    let size = 1usize << n;
    let mut table = vec![None; size];
    for (mask, slot) in table.iter_mut().enumerate().skip(1) {
        if subset_demand(inst, mask) > inst.capacity() {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).collect();
        let mut search = PermSearch {
            inst,
            best_cost: f64::INFINITY,
            best: Vec::new(),
            path: Vec::with_capacity(members.len()),
            used: vec![false; members.len()],
        };
        let t0 = inst.window(0).map_or(0.0, |w| w.early);
        search.dfs(&members, 0, t0, 0.0);
        if search.best_cost.is_finite() {
            *slot = Some((search.best_cost, search.best));
        }
    }
    table
}

struct PermSearch<'a> {
    inst: &'a ProblemInstance,
    best_cost: f64,
    best: Vec<usize>,
    path: Vec<usize>,
    used: Vec<bool>,
}

impl PermSearch<'_> {
    fn dfs(&mut self, members: &[usize], prev: usize, time: f64, cost: f64) {
        if self.path.len() == members.len() {
            let total = cost + self.inst.dist(prev, 0);
            if total < self.best_cost && route_eval(&self.path, self.inst).late_visits == 0 {
                self.best_cost = total;
                self.best = self.path.clone();
            }
            return;
        }
        for (idx, &c) in members.iter().enumerate() {
            if self.used[idx] {
                continue;
            }
            let leg = self.inst.dist(prev, c);
            let arrival = time + leg;
            let w = self.inst.window(c).expect("vrptw customer window");
            if arrival > w.late || cost + leg + self.inst.dist(c, 0) >= self.best_cost {
                continue;
            }
            let next_t = arrival.max(w.early) + self.inst.service_time(c);
            self.used[idx] = true;
            self.path.push(c);
            self.dfs(members, c, next_t, cost + leg);
            self.path.pop();
            self.used[idx] = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vrp::{generate_instance, Customer, Depot};

    /// Every solution is a customer permutation cut into consecutive routes.
    pub(crate) fn enumerate_optimum(inst: &ProblemInstance) -> f64 {
        let n = inst.num_customers();
        let mut perm: Vec<usize> = (1..=n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            for cuts in 0..(1u32 << (n - 1)) {
                let mut routes = vec![vec![p[0]]];
                for i in 1..n {
                    if cuts >> (i - 1) & 1 == 1 {
                        routes.push(Vec::new());
                    }
                    routes.last_mut().unwrap().push(p[i]);
                }
                let s = Solution::new(routes, inst).unwrap();
                if s.is_feasible() && s.objective() < best {
                    best = s.objective();
                }
            }
        });
        best
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn single_customer_is_round_trip() {
        let inst = generate_instance(1, Variant::Cvrp, 0).unwrap();
        let s = brute_force_optimum(&inst).unwrap();
        assert_eq!(s.routes(), &[vec![1]]);
        assert!((s.objective() - 2.0 * inst.dist(0, 1)).abs() < 1e-12);
    }

    #[test]
    fn collinear_customers_single_route_in_order() {
        let cs = (1..=3)
            .map(|i| Customer { id: i, x: i as f64, y: 0.0, demand: 1.0, window: None, service_time: 0.0 })
            .collect();
        let inst = ProblemInstance::new(Variant::Cvrp, 1e9, Depot { x: 0.0, y: 0.0, window: None }, cs).unwrap();
        let s = brute_force_optimum(&inst).unwrap();
        assert_eq!(s.num_routes(), 1);
        let r = &s.routes()[0];
        assert!(r == &vec![1, 2, 3] || r == &vec![3, 2, 1]);
        assert!((s.objective() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn matches_enumeration_on_small_instances() {
        for seed in 0..6 {
            for variant in [Variant::Cvrp, Variant::Vrptw] {
                let inst = generate_instance(6, variant, seed).unwrap();
                let dp = brute_force_optimum(&inst).unwrap();
                assert!(dp.is_feasible());
                let brute = enumerate_optimum(&inst);
                assert!((dp.objective() - brute).abs() < 1e-9, "{variant} seed {seed}");
            }
        }
    }

    #[test]
    fn refuses_large_instances() {
        let inst = generate_instance(11, Variant::Cvrp, 0).unwrap();
        assert!(matches!(
            brute_force_optimum(&inst),
            Err(Error::InstanceTooLarge { n: 11, max: 10 })
        ));
    }
}
