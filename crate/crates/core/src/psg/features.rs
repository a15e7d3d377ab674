use std::f64::consts::TAU;

use crate::vrp::ProblemInstance;

/// Width of a node's global feature vector.
pub const GLOBAL_FEATURES: usize = 8;
/// Width of one location row: `[x, y, demand / capacity, early, late, is_depot]`,
/// windows scaled by the horizon.
pub const LOCAL_FEATURES: usize = 6;

/// Per-location features of an instance, depot first. They do not depend on
/// the solution; route structure enters through [`route_angles`].
pub fn local_features(inst: &ProblemInstance) -> Vec<[f64; LOCAL_FEATURES]> {
    let h = inst.horizon();
    (0..inst.num_locations())
        .map(|loc| {
            let (x, y) = inst.coords(loc);
            let (e, l) = inst.window(loc).map_or((0.0, 1.0), |w| (w.early / h, w.late / h));
            [x, y, inst.demand(loc) / inst.capacity(), e, l, if loc == 0 { 1.0 } else { 0.0 }]
        })
        .collect()
}

/// Evenly spaced angle of each location on its route cycle: the customer at
/// rank `r` (1-based) of a route with `len` customers sits at
/// `2π·r / (len + 1)`; the depot and unrouted customers sit at 0.
pub fn route_angles(routes: &[Vec<usize>], num_locations: usize) -> Vec<f64> {
    let mut z = vec![0.0; num_locations];
    for r in routes {
        let cycle = (r.len() + 1) as f64;
        for (p, &c) in r.iter().enumerate() {
            if c < num_locations {
                z[c] = TAU * (p + 1) as f64 / cycle;
            }
        }
    }
    z
}

/// Return probabilities `(T¹_ii, …, T^steps_ii)` of a random walk on the
/// undirected version of `edges`, with `T = D⁻¹A`. Isolated nodes get zeros.
pub fn random_walk_pe(num_nodes: usize, edges: &[(usize, usize)], steps: usize) -> Vec<Vec<f64>> {
    let k = num_nodes;
    let mut adj = vec![0.0; k * k];
    for &(a, b) in edges {
        if a != b {
            adj[a * k + b] = 1.0;
            adj[b * k + a] = 1.0;
        }
    }
    let mut t = adj.clone();
    for i in 0..k {
        let deg: f64 = adj[i * k..(i + 1) * k].iter().sum();
        if deg > 0.0 {
            t[i * k..(i + 1) * k].iter_mut().for_each(|v| *v /= deg);
        }
    }
    let mut out = vec![vec![0.0; steps]; k];
    let mut power = t.clone();
    for s in 0..steps {
        for (i, row) in out.iter_mut().enumerate() {
            row[s] = power[i * k + i];
        }
        if s + 1 < steps {
            let mut next = vec![0.0; k * k];
            for i in 0..k {
                for m in 0..k {
                    let a = power[i * k + m];
                    if a != 0.0 {
                        for j in 0..k {
                            next[i * k + j] += a * t[m * k + j];
                        }
                    }
                }
            }
            power = next;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vrp::{generate_instance, Variant};

    #[test]
    fn single_node_has_zero_encoding() {
        assert_eq!(random_walk_pe(1, &[], 4), vec![vec![0.0; 4]]);
    }

    #[test]
    fn two_node_path() {
        let pe = random_walk_pe(2, &[(0, 1)], 2);
        assert_eq!(pe, vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn three_node_path_center_returns() {
        let pe = random_walk_pe(3, &[(0, 1), (1, 2)], 3);
        assert_eq!(pe[1][1], 1.0);
        assert_eq!(pe[0][1], 0.5);
        assert_eq!(pe[1][2], 0.0);
    }

    #[test]
    fn encoding_is_relabeling_invariant() {
        let edges = [(0, 1), (1, 2), (1, 3), (3, 4)];
        let perm = [3, 0, 4, 1, 2];
        let relabeled: Vec<_> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let a = random_walk_pe(5, &edges, 6);
        let b = random_walk_pe(5, &relabeled, 6);
        for i in 0..5 {
            for s in 0..6 {
                assert!((a[i][s] - b[perm[i]][s]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn angles_and_rows() {
        let inst = generate_instance(3, Variant::Vrptw, 2).unwrap();
        let z = route_angles(&[vec![2, 3], vec![1]], 4);
        assert_eq!(z[0], 0.0);
        assert!((z[2] - TAU / 3.0).abs() < 1e-12);
        assert!((z[1] - TAU / 2.0).abs() < 1e-12);
        let rows = local_features(&inst);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0][5], 1.0);
        assert!(rows[1..].iter().all(|r| r[5] == 0.0 && r[3] <= r[4]));
    }
}
