//! The building blocks of the agent networks.
//!
//! Layouts: node-level tensors are `[K, 1, width]`, location-level tensors
//! `[K, N, width]` (one batch entry per graph node, one row per location,
//! depot first). Attention across graph nodes reshapes to `[1, K, width]`.

use rand::Rng;

use super::config::ModelConfig;
use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::moves::MoveKind;
use crate::psg::{GLOBAL_FEATURES, LOCAL_FEATURES};
use crate::scalar::Real;

/// `x W (+ b)` with `W: [1, in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    fn new<T: Real, R: Rng + ?Sized>(ps: &mut ParamStore<T>, name: &str, i: usize, o: usize, bias: bool, rng: &mut R) -> Self {
        let w = ps.uniform(&format!("{name}.weight"), [1, i, o], rng);
        let b = bias.then(|| ps.zeros(&format!("{name}.bias"), [1, 1, o]));
        Self { w, b }
    }

    /// Output projection starting at zero, so the residual branch is off.
    fn zeroed<T: Real>(ps: &mut ParamStore<T>, name: &str, i: usize, o: usize) -> Self {
        Self { w: ps.zeros(&format!("{name}.weight"), [1, i, o]), b: None }
    }

    pub fn forward<T: Real>(&self, ps: &ParamStore<T>, t: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = t.param(ps, self.w);
        let y = t.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = t.param(ps, b);
                t.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Two-layer GELU feed-forward.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    fn new<T: Real, R: Rng + ?Sized>(ps: &mut ParamStore<T>, name: &str, d: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(ps, &format!("{name}.up"), d, hidden, true, rng),
            down: Linear::new(ps, &format!("{name}.down"), hidden, d, true, rng),
        }
    }

    pub fn forward<T: Real>(&self, ps: &ParamStore<T>, t: &mut Tape<T>, x: Var) -> Result<Var> {
        let h = self.up.forward(ps, t, x)?;
        let h = t.gelu(h);
        self.down.forward(ps, t, h)
    }
}

/// Solution summary `z_i = mean_k GELU(G(u_i ⌢ v_ik))`, with `G` split into
/// its node and location halves so `u_i` is broadcast instead of copied.
#[derive(Clone, Debug)]
pub struct Pool {
    pub node: Linear,
    pub loc: Linear,
}

impl Pool {
    fn new<T: Real, R: Rng + ?Sized>(ps: &mut ParamStore<T>, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            node: Linear::new(ps, &format!("{name}.node"), cfg.du(), cfg.d_z, false, rng),
            loc: Linear::new(ps, &format!("{name}.loc"), cfg.dv(), cfg.d_z, true, rng),
        }
    }

    pub fn forward<T: Real>(&self, ps: &ParamStore<T>, t: &mut Tape<T>, u: Var, v: Var) -> Result<Var> {
        let a = self.node.forward(ps, t, u)?;
        let b = self.loc.forward(ps, t, v)?;
        let s = t.add(a, b)?;
        let g = t.gelu(s);
        Ok(t.mean_rows(g))
    }
}

/// Raw features to embeddings, with the positional parts appended.
#[derive(Clone, Debug)]
pub struct Embed {
    pub node: Linear,
    pub loc: Linear,
}

impl Embed {
    pub fn new<T: Real, R: Rng + ?Sized>(ps: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            node: Linear::new(ps, "embed.node", GLOBAL_FEATURES, cfg.d_u, true, rng),
            loc: Linear::new(ps, "embed.loc", LOCAL_FEATURES, cfg.d_v, true, rng),
        }
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        t: &mut Tape<T>,
        x_u: Var,
        u_pos: Var,
        x_v: Var,
        v_pe: Var,
    ) -> Result<(Var, Var)> {
        let u = self.node.forward(ps, t, x_u)?;
        let u = t.concat_cols(u, u_pos)?;
        let v = self.loc.forward(ps, t, x_v)?;
        let v = t.concat_cols(v, v_pe)?;
        Ok((u, v))
    }
}

/// Gated graph convolution over the search-graph edges.
#[derive(Clone, Debug)]
pub struct Ggcn {
    pub pool: Pool,
    pub gate_src: Linear,
    pub gate_dst: Linear,
    pub gate_edge: Linear,
    pub hidden: Linear,
    pub node_out: Linear,
    pub loc_out: Linear,
}

/// Outputs of [`Ggcn::forward`].
#[derive(Clone, Copy, Debug)]
pub struct GgcnOut {
    pub u: Var,
    pub v: Var,
    /// `[E, 1, hidden]`, absent without edges.
    pub gates: Option<Var>,
}

impl Ggcn {
    pub fn new<T: Real, R: Rng + ?Sized>(ps: &mut ParamStore<T>, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let h = cfg.ggcn_hidden;
        Self {
            pool: Pool::new(ps, &format!("{name}.pool"), cfg, rng),
            gate_src: Linear::new(ps, &format!("{name}.gate_src"), cfg.d_z, h, false, rng),
            gate_dst: Linear::new(ps, &format!("{name}.gate_dst"), cfg.d_z, h, false, rng),
            gate_edge: Linear::new(ps, &format!("{name}.gate_edge"), cfg.d_e, h, false, rng),
            hidden: Linear::new(ps, &format!("{name}.hidden"), cfg.dv(), h, false, rng),
            node_out: Linear::zeroed(ps, &format!("{name}.node_out"), cfg.d_z, cfg.du()),
            loc_out: Linear::zeroed(ps, &format!("{name}.loc_out"), h, cfg.dv()),
        }
    }

    /// `edges` are `(src, dst, slot)`; `table` is the `[slots, 1, d_e]`
    /// edge-kind embedding.
    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        t: &mut Tape<T>,
        u: Var,
        v: Var,
        edges: &[(usize, usize, usize)],
        table: Var,
    ) -> Result<GgcnOut> {
        let k = t.shape(u)[0];
        let z = self.pool.forward(ps, t, u, v)?;
        let h = self.hidden.forward(ps, t, v)?;
        let mut gates = None;
        let mut h_new = h;
        if !edges.is_empty() {
            let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
            let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
            let kind: Vec<usize> = edges.iter().map(|e| e.2).collect();
            let mut out_deg = vec![0usize; k];
            let mut in_deg = vec![0usize; k];
            for &(s, d, _) in edges {
                out_deg[s] += 1;
                in_deg[d] += 1;
            }
            let zs = self.gate_src.forward(ps, t, z)?;
            let zd = self.gate_dst.forward(ps, t, z)?;
            let gs = t.gather_batch(zs, src.clone())?;
            let gd = t.gather_batch(zd, dst.clone())?;
            let emb = t.gather_batch(table, kind)?;
            let ge = self.gate_edge.forward(ps, t, emb)?;
            let pre = t.add(gs, gd)?;
            let pre = t.add(pre, ge)?;
            let gate = t.tanh(pre);
            gates = Some(gate);

            let h_dst = t.gather_batch(h, dst.clone())?;
            let to_src = t.mul(gate, h_dst)?;
            let w_out = src.iter().map(|&s| T::one() / T::lit(out_deg[s] as f64)).collect();
            let out_msg = t.scatter_batch(to_src, src.clone(), w_out, k)?;

            let h_src = t.gather_batch(h, src)?;
            let to_dst = t.mul(gate, h_src)?;
            let w_in = dst.iter().map(|&d| T::one() / T::lit(in_deg[d] as f64)).collect();
            let in_msg = t.scatter_batch(to_dst, dst, w_in, k)?;

            h_new = t.add(h, out_msg)?;
            h_new = t.add(h_new, in_msg)?;
        }
        let pooled = t.mean_rows(h_new);
        let s = t.add(z, pooled)?;
        let du = self.node_out.forward(ps, t, s)?;
        let u_hat = t.add(u, du)?;
        let dv = self.loc_out.forward(ps, t, h_new)?;
        let v_hat = t.add(v, dv)?;
        Ok(GgcnOut { u: u_hat, v: v_hat, gates })
    }
}

/// Multi-head attention weights `softmax(Q Kᵀ / sqrt(d_k))`, averaged over
/// heads. `q` and `k` are `[B, rows, heads·d_k]`; `bias` is added to every
/// head's scores before the softmax.
fn averaged_attention<T: Real>(
    t: &mut Tape<T>,
    q: Var,
    k: Var,
    heads: usize,
    bias: Option<Var>,
    mask: Option<Vec<bool>>,
) -> Result<Var> {
    let width = t.shape(q)[2];
    let dk = width / heads;
    let scale = T::one() / T::lit(dk as f64).sqrt();
    let mut acc: Option<Var> = None;
    for h in 0..heads {
        let qh = t.slice_cols(q, h * dk, dk)?;
        let kh = t.slice_cols(k, h * dk, dk)?;
        let kt = t.transpose(kh);
        let s = t.matmul(qh, kt)?;
        let mut s = t.scale(s, scale);
        if let Some(b) = bias {
            s = t.add(s, b)?;
        }
        let a = match &mask {
            Some(m) => t.softmax_masked(s, m.clone())?,
            None => t.softmax(s),
        };
        acc = Some(match acc {
            Some(prev) => t.add(prev, a)?,
            None => a,
        });
    }
    let sum = acc.expect("at least one head");
    Ok(t.scale(sum, T::one() / T::lit(heads as f64)))
}

/// Attention across graph nodes; location matrices move as whole blocks.
#[derive(Clone, Debug)]
pub struct Transformer {
    pub pool: Pool,
    pub query: Linear,
    pub key: Linear,
    pub loc_value: Linear,
    pub ffn: FeedForward,
    pub ln_scale: ParamId,
    pub ln_shift: ParamId,
    pub node_value: Linear,
    pub heads: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct TransformerOut {
    pub u: Var,
    pub v: Var,
    /// `[1, K, K]`
    pub attention: Var,
}

impl Transformer {
    pub fn new<T: Real, R: Rng + ?Sized>(ps: &mut ParamStore<T>, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let dv = cfg.dv();
        Self {
            pool: Pool::new(ps, &format!("{name}.pool"), cfg, rng),
            query: Linear::new(ps, &format!("{name}.query"), cfg.d_z, cfg.tf_hidden, false, rng),
            key: Linear::new(ps, &format!("{name}.key"), cfg.d_z, cfg.tf_hidden, false, rng),
            loc_value: Linear::new(ps, &format!("{name}.loc_value"), dv, dv, false, rng),
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), dv, cfg.ffn_hidden, rng),
            ln_scale: ps.filled(&format!("{name}.ln.scale"), [1, 1, dv], 1.0),
            ln_shift: ps.zeros(&format!("{name}.ln.shift"), [1, 1, dv]),
            node_value: Linear::zeroed(ps, &format!("{name}.node_value"), cfg.du(), cfg.du()),
            heads: cfg.tf_heads,
        }
    }

    pub fn forward<T: Real>(&self, ps: &ParamStore<T>, t: &mut Tape<T>, u: Var, v: Var) -> Result<TransformerOut> {
        let [k, n, dv] = t.shape(v);
        let du = t.shape(u)[2];
        let z = self.pool.forward(ps, t, u, v)?;
        let z = t.reshape(z, [1, k, t.shape(z)[2]])?;
        let q = self.query.forward(ps, t, z)?;
        let kk = self.key.forward(ps, t, z)?;
        let a = averaged_attention(t, q, kk, self.heads, None, None)?;

        let vw = self.loc_value.forward(ps, t, v)?;
        let vw = t.reshape(vw, [1, k, n * dv])?;
        let att = t.matmul(a, vw)?;
        let att = t.reshape(att, [k, n, dv])?;
        let x = t.add(v, att)?;
        let f = self.ffn.forward(ps, t, x)?;
        let y = t.add(x, f)?;
        let y = t.layer_norm(y, T::lit(1e-5));
        let g = t.param(ps, self.ln_scale);
        let b = t.param(ps, self.ln_shift);
        let y = t.mul(y, g)?;
        let v_out = t.add(y, b)?;

        let uf = t.reshape(u, [1, k, du])?;
        let uv = self.node_value.forward(ps, t, uf)?;
        let ut = t.matmul(a, uv)?;
        let ut = t.reshape(ut, [k, 1, du])?;
        let u_out = t.add(u, ut)?;
        Ok(TransformerOut { u: u_out, v: v_out, attention: a })
    }
}

/// Attention among the locations of each solution, biased towards
/// locations adjacent on a route. Returns the update added to the location
/// matrix.
#[derive(Clone, Debug)]
pub struct RouteAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub adjacency_bias: ParamId,
    pub ffn: FeedForward,
    pub out: Linear,
    pub heads: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct RouteAttentionOut {
    pub delta: Var,
    /// `[K, N, N]`
    pub attention: Var,
}

impl RouteAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(ps: &mut ParamStore<T>, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let dv = cfg.dv();
        Self {
            query: Linear::new(ps, &format!("{name}.query"), dv, cfg.tf_hidden, false, rng),
            key: Linear::new(ps, &format!("{name}.key"), dv, cfg.tf_hidden, false, rng),
            value: Linear::new(ps, &format!("{name}.value"), dv, dv, false, rng),
            adjacency_bias: ps.filled(&format!("{name}.adjacency_bias"), [1, 1, 1], 1.0),
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), dv, cfg.ffn_hidden, rng),
            out: Linear::zeroed(ps, &format!("{name}.out"), dv, dv),
            heads: cfg.e2e_heads,
        }
    }

    /// Queries come from the block input, keys and values from the
    /// transformer output.
    pub fn forward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        t: &mut Tape<T>,
        v_prev: Var,
        v_mixed: Var,
        adjacency: Var,
    ) -> Result<RouteAttentionOut> {
        let q = self.query.forward(ps, t, v_prev)?;
        let k = self.key.forward(ps, t, v_mixed)?;
        let beta = t.param(ps, self.adjacency_bias);
        let bias = t.mul(adjacency, beta)?;
        let a = averaged_attention(t, q, k, self.heads, Some(bias), None)?;
        let vals = self.value.forward(ps, t, v_mixed)?;
        let o = t.matmul(a, vals)?;
        let f = self.ffn.forward(ps, t, o)?;
        let y = t.add(o, f)?;
        let delta = self.out.forward(ps, t, y)?;
        Ok(RouteAttentionOut { delta, attention: a })
    }
}

/// Node and (node, move kind) probabilities.
#[derive(Clone, Debug)]
pub struct SelectDecoder {
    pub pool: Pool,
    pub node: Linear,
    pub move_ctx: Linear,
    pub move_kind: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct SelectOut {
    /// `[K, 1, 1]`
    pub p_node: Var,
    /// `[K, 1, MoveKind::COUNT]`
    pub p_move: Var,
}

impl SelectDecoder {
    pub fn new<T: Real, R: Rng + ?Sized>(ps: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            pool: Pool::new(ps, "select.pool", cfg, rng),
            node: Linear::new(ps, "select.node", cfg.d_z, 1, false, rng),
            move_ctx: Linear::new(ps, "select.move_ctx", cfg.d_z, 1, false, rng),
            move_kind: Linear::new(ps, "select.move_kind", cfg.d_e, 1, false, rng),
        }
    }

    pub fn forward<T: Real>(&self, ps: &ParamStore<T>, t: &mut Tape<T>, u: Var, v: Var, table: Var) -> Result<SelectOut> {
        let z = self.pool.forward(ps, t, u, v)?;
        self.forward_from_summary(ps, t, z, table)
    }

    /// Same as [`forward`](Self::forward) from a precomputed `z: [K, 1, d_z]`.
    pub fn forward_from_summary<T: Real>(&self, ps: &ParamStore<T>, t: &mut Tape<T>, z: Var, table: Var) -> Result<SelectOut> {
        let ln = self.node.forward(ps, t, z)?;
        let p_node = t.sigmoid(ln);
        let ctx = self.move_ctx.forward(ps, t, z)?;
        let kinds = t.gather_batch(table, (0..MoveKind::COUNT).collect())?;
        let kl = self.move_kind.forward(ps, t, kinds)?;
        let kl = t.reshape(kl, [1, 1, MoveKind::COUNT])?;
        let lm = t.add(ctx, kl)?;
        let p_move = t.sigmoid(lm);
        Ok(SelectOut { p_node, p_move })
    }
}

/// Successor distribution over the locations of one solution.
#[derive(Clone, Debug)]
pub struct JumpDecoder {
    pub query: Linear,
    pub key: Linear,
    pub heads: usize,
}

impl JumpDecoder {
    pub fn new<T: Real, R: Rng + ?Sized>(ps: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            query: Linear::new(ps, "jump.query", cfg.dv(), cfg.tf_hidden, false, rng),
            key: Linear::new(ps, "jump.key", cfg.dv(), cfg.tf_hidden, false, rng),
            heads: cfg.jump_heads,
        }
    }

    /// `v: [1, N, dv]` to `P: [1, N, N]` with a zero diagonal and unit rows.
    pub fn forward<T: Real>(&self, ps: &ParamStore<T>, t: &mut Tape<T>, v: Var) -> Result<Var> {
        let n = t.shape(v)[1];
        if n < 2 {
            return Err(Error::Degenerate(format!("successor matrix needs at least 2 locations, got {n}")));
        }
        let q = self.query.forward(ps, t, v)?;
        let k = self.key.forward(ps, t, v)?;
        let mask = (0..n * n).map(|i| i / n != i % n).collect();
        averaged_attention(t, q, k, self.heads, None, Some(mask))
    }
}
