use std::collections::BTreeSet;

use crate::vrp::Solution;

/// Directed arcs `(from, to)` of a solution, depot arcs included.
pub type DecisionSet = BTreeSet<(usize, usize)>;

pub fn decision_set(solution: &Solution) -> DecisionSet {
    let mut set = DecisionSet::new();
    for r in solution.routes() {
        let mut prev = 0;
        for &c in r {
            set.insert((prev, c));
            prev = c;
        }
        set.insert((prev, 0));
    }
    set
}

/// Objective plus `lambda` per protected arc still present.
pub fn penalized_objective(solution: &Solution, protected: &DecisionSet, lambda: f64) -> f64 {
    let hits = decision_set(solution).intersection(protected).count();
    solution.objective() + lambda * hits as f64
}

/// Row-stochastic 0/1 successor matrix over locations `0..=n`.
///
/// Customers point to their successor (the depot after the last customer of
/// a route). The depot points to the first customer of the route whose
/// first customer has the lowest id.
pub fn successor_matrix(solution: &Solution, n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n + 1]; n + 1];
    for r in solution.routes() {
        for w in r.windows(2) {
            m[w[0]][w[1]] = 1.0;
        }
        if let Some(&last) = r.last() {
            m[last][0] = 1.0;
        }
    }
    if let Some(first) = solution.routes().iter().filter_map(|r| r.first().copied()).min() {
        m[0][first] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vrp::{generate_instance, Variant};

    #[test]
    fn arc_count_is_customers_plus_routes() {
        let inst = generate_instance(6, Variant::Cvrp, 1).unwrap();
        let s = Solution::new(vec![vec![3, 1], vec![2, 6, 5], vec![4]], &inst).unwrap();
        assert_eq!(decision_set(&s).len(), 6 + 3);
    }

    #[test]
    fn penalty_against_self_and_disjoint() {
        let inst = generate_instance(4, Variant::Cvrp, 2).unwrap();
        let s = Solution::new(vec![vec![1, 2, 3, 4]], &inst).unwrap();
        let own = decision_set(&s);
        let p = penalized_objective(&s, &own, 7.0);
        assert!((p - (s.objective() + 7.0 * own.len() as f64)).abs() < 1e-12);
        let disjoint: DecisionSet = [(1, 3), (3, 1)].into_iter().collect();
        assert_eq!(penalized_objective(&s, &disjoint, 7.0), s.objective());
    }

    #[test]
    fn penalty_matches_counted_overlap() {
        let inst = generate_instance(6, Variant::Cvrp, 3).unwrap();
        let a = Solution::new(vec![vec![1, 2, 3], vec![4, 5, 6]], &inst).unwrap();
        let b = Solution::new(vec![vec![1, 2, 6], vec![4, 5, 3]], &inst).unwrap();
        let arcs = |routes: &[Vec<usize>]| -> Vec<(usize, usize)> {
            let mut v = Vec::new();
            for r in routes {
                let full: Vec<usize> = std::iter::once(0).chain(r.iter().copied()).chain(std::iter::once(0)).collect();
                v.extend(full.windows(2).map(|w| (w[0], w[1])));
            }
            v
        };
        let (xa, xb) = (arcs(a.routes()), arcs(b.routes()));
        let overlap = xa.iter().filter(|e| xb.contains(e)).count();
        assert_eq!(overlap, 6);
        let lambda = 3.5;
        let p = penalized_objective(&a, &decision_set(&b), lambda);
        assert!((p - a.objective() - lambda * overlap as f64).abs() < 1e-12);
    }

    #[test]
    fn successor_rows_sum_to_one() {
        let inst = generate_instance(5, Variant::Cvrp, 4).unwrap();
        let s = Solution::new(vec![vec![4, 2], vec![3, 1, 5]], &inst).unwrap();
        let m = successor_matrix(&s, 5);
        for (i, row) in m.iter().enumerate() {
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            assert_eq!(row[i], 0.0);
        }
        assert_eq!(m[0][3], 1.0);
        assert_eq!(m[2][0], 1.0);
    }
}
