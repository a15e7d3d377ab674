use std::f64::consts::PI;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::moves::MoveKind;
use crate::psg::{local_features, random_walk_pe, route_angles, SubgraphBatch, GLOBAL_FEATURES, LOCAL_FEATURES};
use crate::scalar::Real;
use crate::vrp::ProblemInstance;

/// Cyclic encoding of a position angle `z` on a route cycle.
///
/// Frequencies grow geometrically from 1 to `base` across the `d_pe`
/// components; even components use `sin`, odd ones `cos`, of the triangle
/// wave `ω·|(z mod 4π/ω) − 2π/ω|`.
pub fn cyclic_positional_embedding(z: f64, d_pe: usize, base: f64) -> Vec<f64> {
    (0..d_pe)
        .map(|d| {
            let omega = if d_pe > 1 { base.powf(d as f64 / (d_pe - 1) as f64) } else { 1.0 };
            let arg = omega * (z.rem_euclid(4.0 * PI / omega) - 2.0 * PI / omega).abs();
            if d % 2 == 0 {
                arg.sin()
            } else {
                arg.cos()
            }
        })
        .collect()
}

/// Dense inputs for one subgraph of `k` nodes over `n_loc` locations.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput<T> {
    pub k: usize,
    pub n_loc: usize,
    /// `[k, 1, GLOBAL_FEATURES]`, normalized.
    pub x_u: Vec<T>,
    /// `[k, 1, d_pos]`
    pub u_pos: Vec<T>,
    /// `[k, n_loc, LOCAL_FEATURES]`
    pub x_v: Vec<T>,
    /// `[k, n_loc, d_pe]`
    pub v_pe: Vec<T>,
    /// `(src, dst, edge slot)`
    pub edges: Vec<(usize, usize, usize)>,
    /// `[k, n_loc, n_loc]` 0/1 route adjacency.
    pub route_adj: Vec<T>,
    pub move_mask: Vec<[bool; MoveKind::COUNT]>,
}

fn slog(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// Scale-free version of the raw global features. Objectives are taken
/// relative to the best node in the subgraph.
pub fn normalize_global(rows: &[[f64; GLOBAL_FEATURES]], total_demand: f64) -> Vec<[f64; GLOBAL_FEATURES]> {
    let reference = rows.iter().map(|r| r[0]).fold(f64::INFINITY, f64::min);
    let reference = if reference.is_finite() && reference > 0.0 { reference } else { 1.0 };
    rows.iter()
        .map(|r| {
            let count = r[7];
            let (mean_rel, std_rel) = if count > 0.0 {
                let mean = r[5] / count;
                let var = (r[6] / count - mean * mean).max(0.0);
                (slog(10.0 * (mean / reference - 1.0)), slog(10.0 * var.sqrt() / reference))
            } else {
                (0.0, 0.0)
            };
            [
                slog(10.0 * (r[0] / reference - 1.0)),
                r[1] / r[2].max(1.0),
                r[2] / 100.0,
                if total_demand > 0.0 { r[3] / total_demand } else { 1.0 },
                slog(10.0 * r[4] / reference),
                mean_rel,
                std_rel,
                count.ln_1p(),
            ]
        })
        .collect()
}

impl<T: Real> ModelInput<T> {
    pub fn from_batch(batch: &SubgraphBatch, inst: &ProblemInstance, cfg: &ModelConfig) -> Result<Self> {
        let k = batch.len();
        if k == 0 {
            return Err(Error::Degenerate("empty subgraph".into()));
        }
        let n_loc = inst.num_locations();
        let lit = |v: f64| T::lit(v);
        let x_u = normalize_global(&batch.global, inst.total_demand()).iter().flatten().map(|&v| lit(v)).collect();
        let pairs: Vec<(usize, usize)> = batch.edges.iter().map(|&(s, d, _)| (s, d)).collect();
        let u_pos = random_walk_pe(k, &pairs, cfg.d_pos).iter().flatten().map(|&v| lit(v)).collect();
        let rows = local_features(inst);
        let mut x_v = Vec::with_capacity(k * n_loc * LOCAL_FEATURES);
        let mut v_pe = Vec::with_capacity(k * n_loc * cfg.d_pe);
        let mut route_adj = vec![T::zero(); k * n_loc * n_loc];
        let base = n_loc.max(2) as f64;
        for (i, routes) in batch.routes.iter().enumerate() {
            x_v.extend(rows.iter().flatten().map(|&v| lit(v)));
            for z in route_angles(routes, n_loc) {
                v_pe.extend(cyclic_positional_embedding(z, cfg.d_pe, base).into_iter().map(lit));
            }
            let adj = &mut route_adj[i * n_loc * n_loc..(i + 1) * n_loc * n_loc];
            for r in routes {
                let cycle: Vec<usize> = std::iter::once(0).chain(r.iter().copied()).chain([0]).collect();
                for w in cycle.windows(2) {
                    if w[0] != w[1] && w[0] < n_loc && w[1] < n_loc {
                        adj[w[0] * n_loc + w[1]] = T::one();
                        adj[w[1] * n_loc + w[0]] = T::one();
                    }
                }
            }
        }
        if let Some(&(s, d, e)) = batch.edges.iter().find(|&&(s, d, e)| s >= k || d >= k || e >= cfg.edge_slots()) {
            return Err(Error::Shape { op: "input", detail: format!("edge ({s}, {d}, kind {e}) outside {k} nodes") });
        }
        Ok(Self { k, n_loc, x_u, u_pos, x_v, v_pe, edges: batch.edges.clone(), route_adj, move_mask: batch.move_mask.clone() })
    }
}
