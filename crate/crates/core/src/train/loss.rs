use crate::error::{Error, Result};
use crate::moves::MoveKind;
use crate::nn::layers::SelectOut;
use crate::nn::{Tape, Var};
use crate::scalar::Real;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

/// Clamped binary cross-entropy of one prediction.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Selection loss summed over every node and every (node, kind) pair.
pub fn select_loss_value(
    p_node: &[f64],
    p_move: &[[f64; MoveKind::COUNT]],
    y_node: &[f64],
    y_move: &[[f64; MoveKind::COUNT]],
) -> f64 {
    let nodes: f64 = p_node.iter().zip(y_node).map(|(&p, &y)| bce(p, y)).sum();
    let moves: f64 = p_move.iter().flatten().zip(y_move.iter().flatten()).map(|(&p, &y)| bce(p, y)).sum();
    nodes + moves
}

/// Index of the target nearest to `p` in half the entrywise L1 distance.
/// Ties go to the lower index.
pub fn closest_reference(p: &[Vec<f64>], targets: &[Vec<Vec<f64>>]) -> usize {
    let dist = |y: &Vec<Vec<f64>>| -> f64 {
        0.5 * y.iter().zip(p).flat_map(|(yr, pr)| yr.iter().zip(pr).map(|(a, b)| (a - b).abs())).sum::<f64>()
    };
    let mut best = (0, f64::INFINITY);
    for (k, y) in targets.iter().enumerate() {
        let d = dist(y);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

/// Jump loss against the closest target, over off-diagonal entries.
pub fn jump_loss_value(p: &[Vec<f64>], targets: &[Vec<Vec<f64>>]) -> (f64, usize) {
    let k = closest_reference(p, targets);
    let y = &targets[k];
    let mut total = 0.0;
    for (i, (pr, yr)) in p.iter().zip(y).enumerate() {
        for (j, (&pv, &yv)) in pr.iter().zip(yr).enumerate() {
            if i != j {
                total += bce(pv, yv);
            }
        }
    }
    (total, k)
}

/// `-Σ w1·ln p + w0·ln(1 - p)` on the tape, with clamped `p`.
fn weighted_bce<T: Real>(t: &mut Tape<T>, p: Var, w1: Vec<T>, w0: Vec<T>) -> Result<Var> {
    let shape = t.shape(p);
    let lo = T::lit(PROB_CLAMP);
    let pc = t.clamp(p, lo, T::one() - lo);
    let lp = t.ln(pc);
    let neg = t.scale(pc, -T::one());
    let q = t.add_scalar(neg, T::one());
    let lq = t.ln(q);
    let w1 = t.constant(shape, w1)?;
    let w0 = t.constant(shape, w0)?;
    let a = t.mul(lp, w1)?;
    let b = t.mul(lq, w0)?;
    let s = t.add(a, b)?;
    let s = t.sum(s);
    Ok(t.scale(s, -T::one()))
}

/// Selection loss on the tape for one subgraph.
pub fn loss_select<T: Real>(
    t: &mut Tape<T>,
    out: &SelectOut,
    y_node: &[f64],
    y_move: &[[f64; MoveKind::COUNT]],
) -> Result<Var> {
    let k = t.shape(out.p_node)[0];
    if y_node.len() != k || y_move.len() != k {
        return Err(Error::Shape { op: "loss_select", detail: format!("{k} nodes, {} / {} labels", y_node.len(), y_move.len()) });
    }
    let lit = |v: &f64| T::lit(*v);
    let node = weighted_bce(t, out.p_node, y_node.iter().map(lit).collect(), y_node.iter().map(|y| T::lit(1.0 - y)).collect())?;
    let ym: Vec<f64> = y_move.iter().flatten().copied().collect();
    let mv = weighted_bce(t, out.p_move, ym.iter().map(lit).collect(), ym.iter().map(|y| T::lit(1.0 - y)).collect())?;
    t.add(node, mv)
}

/// Jump loss on the tape for `p: [1, n, n]`. Returns the loss and the index
/// of the target it was taken against.
pub fn loss_jump<T: Real>(t: &mut Tape<T>, p: Var, targets: &[Vec<Vec<f64>>]) -> Result<(Var, usize)> {
    let [_, n, m] = t.shape(p);
    if targets.is_empty() || targets.iter().any(|y| y.len() != n || y.iter().any(|r| r.len() != m)) {
        return Err(Error::Shape { op: "loss_jump", detail: format!("targets do not match a {n}x{m} prediction") });
    }
    let pv: Vec<Vec<f64>> = t.value(p).chunks(m).map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
    let k = closest_reference(&pv, targets);
    let y = &targets[k];
    let mut w1 = Vec::with_capacity(n * m);
    let mut w0 = Vec::with_capacity(n * m);
    for (i, row) in y.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let off = if i == j { 0.0 } else { 1.0 };
            w1.push(T::lit(off * v));
            w0.push(T::lit(off * (1.0 - v)));
        }
    }
    Ok((weighted_bce(t, p, w1, w0)?, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_term_at_one_half() {
        assert!((bce(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce(0.5, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions_cost_the_clamp_only() {
        let l = select_loss_value(&[1.0, 0.0], &[[0.0; 6], [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]], &[1.0, 0.0], &[[0.0; 6], [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]]);
        let per = -(1.0f64 - 1e-7).ln();
        assert!((l - 14.0 * per).abs() < 1e-12);
        assert!(l < 2e-6);
    }

    #[test]
    fn tape_loss_matches_scalar_resummation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let k = rng.gen_range(1..6);
            let pn: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
            let pm: Vec<[f64; 6]> = (0..k).map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0))).collect();
            let yn: Vec<f64> = (0..k).map(|_| rng.gen_range(0..2) as f64).collect();
            let ym: Vec<[f64; 6]> = (0..k).map(|_| std::array::from_fn(|_| rng.gen_range(0..2) as f64)).collect();
            let mut t = Tape::<f64>::new();
            let p_node = t.constant([k, 1, 1], pn.clone()).unwrap();
            let p_move = t.constant([k, 1, 6], pm.iter().flatten().copied().collect()).unwrap();
            let l = loss_select(&mut t, &SelectOut { p_node, p_move }, &yn, &ym).unwrap();
            let mut naive = 0.0;
            for i in 0..k {
                naive += bce(pn[i], yn[i]);
                for m in 0..6 {
                    naive += bce(pm[i][m], ym[i][m]);
                }
            }
            assert!((t.scalar(l) - naive).abs() < 1e-10);
            assert!((select_loss_value(&pn, &pm, &yn, &ym) - naive).abs() < 1e-10);
        }
    }

    #[test]
    fn closest_reference_by_hand() {
        let p = vec![vec![0.0, 0.7, 0.3], vec![0.6, 0.0, 0.4], vec![0.5, 0.5, 0.0]];
        let y1 = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        let y2 = vec![vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        // y1: rows 0.3+0.3, 0.6+0.6, 0.5+0.5 -> 2.8 / 2 = 1.4
        // y2: rows 0.7+0.7, 0.4+0.4, 0.5+0.5 -> 3.2 / 2 = 1.6
        assert_eq!(closest_reference(&p, &[y2.clone(), y1.clone()]), 1);
        assert_eq!(closest_reference(&p, &[y1.clone()]), 0);
        let (l, k) = jump_loss_value(&y2, &[y1, y2.clone()]);
        assert_eq!(k, 1);
        assert!(l < 1e-5);
    }

    #[test]
    fn tape_jump_loss_matches_scalar() {
        let p = vec![vec![0.0, 0.7, 0.3], vec![0.6, 0.0, 0.4], vec![0.5, 0.5, 0.0]];
        let y = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        let mut t = Tape::<f64>::new();
        let pv = t.constant([1, 3, 3], p.iter().flatten().copied().collect()).unwrap();
        let (l, k) = loss_jump(&mut t, pv, &[y.clone()]).unwrap();
        assert_eq!(k, 0);
        assert!((t.scalar(l) - jump_loss_value(&p, &[y]).0).abs() < 1e-12);
    }
}
