use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::input::ModelInput;
use super::layers::{Embed, Ggcn, JumpDecoder, RouteAttention, SelectDecoder, SelectOut, Transformer};
use super::optim::AdamRecord;
use super::params::{ParamStore, TensorRecord};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::moves::MoveKind;
use crate::psg::{GLOBAL_FEATURES, LOCAL_FEATURES};
use crate::scalar::Real;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Which decoder sits on top of the shared backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Select,
    Jump,
}

impl std::fmt::Display for Head {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Head::Select => "select",
            Head::Jump => "jump",
        })
    }
}

impl std::str::FromStr for Head {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "select" => Ok(Head::Select),
            "jump" => Ok(Head::Jump),
            other => Err(Error::Config(format!("unknown agent `{other}` (expected select or jump)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub ggcn: Ggcn,
    pub transformer: Transformer,
    pub route: RouteAttention,
}

/// Everything the backbone recorded, for inspection and tests.
#[derive(Clone, Debug)]
pub struct BackboneOut {
    pub u: Var,
    pub v: Var,
    pub u_in: Var,
    pub v_in: Var,
    pub gates: Vec<Var>,
    pub node_attention: Vec<Var>,
    pub route_attention: Vec<Var>,
    pub edge_table: Var,
}

/// Embeddings, a stack of core blocks, and one decoder head.
#[derive(Clone, Debug)]
pub struct AgentModel<T> {
    config: ModelConfig,
    head: Head,
    params: ParamStore<T>,
    embed: Embed,
    blocks: Vec<Block>,
    edge_table: super::params::ParamId,
    select: Option<SelectDecoder>,
    jump: Option<JumpDecoder>,
}

/// Serialized model, optionally with optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub head: Head,
    pub config: ModelConfig,
    /// Move kind names in embedding-slot order.
    pub move_kinds: Vec<String>,
    pub step: u64,
    pub tensors: Vec<TensorRecord>,
    pub optimizer: Option<AdamRecord>,
}

impl<T: Real> AgentModel<T> {
    pub fn new(config: ModelConfig, head: Head, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let edge_table = ps.uniform("edge_kinds", [config.edge_slots(), 1, config.d_e], &mut rng);
        let embed = Embed::new(&mut ps, &config, &mut rng);
        let blocks = (0..config.layers)
            .map(|l| Block {
                ggcn: Ggcn::new(&mut ps, &format!("block{l}.ggcn"), &config, &mut rng),
                transformer: Transformer::new(&mut ps, &format!("block{l}.transformer"), &config, &mut rng),
                route: RouteAttention::new(&mut ps, &format!("block{l}.route"), &config, &mut rng),
            })
            .collect();
        let (select, jump) = match head {
            Head::Select => (Some(SelectDecoder::new(&mut ps, &config, &mut rng)), None),
            Head::Jump => (None, Some(JumpDecoder::new(&mut ps, &config, &mut rng))),
        };
        Ok(Self { config, head, params: ps, embed, blocks, edge_table, select, jump })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn embed(&self) -> &Embed {
        &self.embed
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn select_decoder(&self) -> Option<&SelectDecoder> {
        self.select.as_ref()
    }

    pub fn jump_decoder(&self) -> Option<&JumpDecoder> {
        self.jump.as_ref()
    }

    pub fn edge_table(&self) -> super::params::ParamId {
        self.edge_table
    }

    /// Redraws every parameter uniformly in `±scale`, including the
    /// zero-initialized output projections. Used by gradient checks.
    pub fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            for v in self.params.data_mut(id).iter_mut() {
                *v = T::lit(rng.gen_range(-scale..=scale));
            }
        }
    }

    /// Zeroes the projections that close each residual branch.
    pub fn zero_output_projections(&mut self) {
        let ids: Vec<_> = self
            .blocks
            .iter()
            .flat_map(|b| [b.ggcn.node_out.w, b.ggcn.loc_out.w, b.transformer.node_value.w, b.route.out.w])
            .collect();
        for id in ids {
            self.params.data_mut(id).iter_mut().for_each(|v| *v = T::zero());
        }
    }

    fn check_input(&self, input: &ModelInput<T>) -> Result<()> {
        let (k, n) = (input.k, input.n_loc);
        let want = [
            ("x_u", input.x_u.len(), k * GLOBAL_FEATURES),
            ("u_pos", input.u_pos.len(), k * self.config.d_pos),
            ("x_v", input.x_v.len(), k * n * LOCAL_FEATURES),
            ("v_pe", input.v_pe.len(), k * n * self.config.d_pe),
            ("route_adj", input.route_adj.len(), k * n * n),
        ];
        for (name, got, expected) in want {
            if got != expected {
                return Err(Error::Shape { op: "embed", detail: format!("{name} has {got} values, expected {expected}") });
            }
        }
        Ok(())
    }

    /// Embeddings and the core-block stack.
    pub fn backbone(&self, t: &mut Tape<T>, input: &ModelInput<T>) -> Result<BackboneOut> {
        self.check_input(input)?;
        let (k, n, c) = (input.k, input.n_loc, &self.config);
        let ps = &self.params;
        let x_u = t.constant([k, 1, GLOBAL_FEATURES], input.x_u.clone())?;
        let u_pos = t.constant([k, 1, c.d_pos], input.u_pos.clone())?;
        let x_v = t.constant([k, n, LOCAL_FEATURES], input.x_v.clone())?;
        let v_pe = t.constant([k, n, c.d_pe], input.v_pe.clone())?;
        let adj = t.constant([k, n, n], input.route_adj.clone())?;
        let table = t.param(ps, self.edge_table);
        let (mut u, mut v) = self.embed.forward(ps, t, x_u, u_pos, x_v, v_pe)?;
        let (u_in, v_in) = (u, v);
        let mut out = BackboneOut {
            u,
            v,
            u_in,
            v_in,
            gates: Vec::new(),
            node_attention: Vec::new(),
            route_attention: Vec::new(),
            edge_table: table,
        };
        for b in &self.blocks {
            let g = b.ggcn.forward(ps, t, u, v, &input.edges, table)?;
            let tr = b.transformer.forward(ps, t, g.u, g.v)?;
            let ra = b.route.forward(ps, t, v, tr.v, adj)?;
            out.gates.extend(g.gates);
            out.node_attention.push(tr.attention);
            out.route_attention.push(ra.attention);
            u = tr.u;
            v = t.add(v, ra.delta)?;
        }
        out.u = u;
        out.v = v;
        Ok(out)
    }

    pub fn forward_select(&self, t: &mut Tape<T>, input: &ModelInput<T>) -> Result<(SelectOut, BackboneOut)> {
        let dec = self.select.as_ref().ok_or_else(|| Error::Config("model has no selection head".into()))?;
        let bb = self.backbone(t, input)?;
        let out = dec.forward(&self.params, t, bb.u, bb.v, bb.edge_table)?;
        Ok((out, bb))
    }

    /// Successor matrix `[1, N, N]` for the solution at local index `anchor`.
    pub fn forward_jump(&self, t: &mut Tape<T>, input: &ModelInput<T>, anchor: usize) -> Result<(Var, BackboneOut)> {
        let dec = self.jump.as_ref().ok_or_else(|| Error::Config("model has no jump head".into()))?;
        if anchor >= input.k {
            return Err(Error::Shape { op: "jump", detail: format!("anchor {anchor} of {} nodes", input.k) });
        }
        let bb = self.backbone(t, input)?;
        let va = t.gather_batch(bb.v, vec![anchor])?;
        let p = dec.forward(&self.params, t, va)?;
        Ok((p, bb))
    }

    /// Node probabilities and per-node move probabilities, as plain vectors.
    pub fn predict_select(&self, input: &ModelInput<T>) -> Result<(Vec<f64>, Vec<[f64; MoveKind::COUNT]>)> {
        let mut t = Tape::new();
        let (out, _) = self.forward_select(&mut t, input)?;
        let p_node = t.value(out.p_node).iter().map(|v| v.as_f64()).collect();
        let p_move = t
            .value(out.p_move)
            .chunks(MoveKind::COUNT)
            .map(|c| std::array::from_fn(|m| c[m].as_f64()))
            .collect();
        Ok((p_node, p_move))
    }

    /// Row-stochastic successor matrix for the anchor solution.
    pub fn predict_jump(&self, input: &ModelInput<T>, anchor: usize) -> Result<Vec<Vec<f64>>> {
        let mut t = Tape::new();
        let (p, _) = self.forward_jump(&mut t, input, anchor)?;
        let n = input.n_loc;
        Ok(t.value(p).chunks(n).map(|r| r.iter().map(|v| v.as_f64()).collect()).collect())
    }

    pub fn to_checkpoint(&self, step: u64, optimizer: Option<AdamRecord>) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            head: self.head,
            config: self.config.clone(),
            move_kinds: MoveKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            step,
            tensors: self.params.to_records(),
            optimizer,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("version {} (expected {CHECKPOINT_VERSION})", ck.version)));
        }
        let kinds: Vec<String> = MoveKind::ALL.iter().map(|k| k.name().to_string()).collect();
        if ck.move_kinds != kinds {
            return Err(Error::Checkpoint(format!("move kinds {:?} do not match {:?}", ck.move_kinds, kinds)));
        }
        let mut m = Self::new(ck.config.clone(), ck.head, 0)?;
        m.params.load_records(&ck.tensors)?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>, step: u64, optimizer: Option<AdamRecord>) -> Result<()> {
        write_checkpoint(&self.to_checkpoint(step, optimizer), path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Checkpoint)> {
        let ck = read_checkpoint(path)?;
        Ok((Self::from_checkpoint(&ck)?, ck))
    }
}

pub fn write_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(ck)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), msg: e.to_string() })
}
