//! Central finite-difference checks of tape gradients.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Gradients below this magnitude are compared absolutely rather than
/// relatively; it sits well above the round-off of a central difference.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR)
}

/// Compares the backward pass of `f` with central differences of step
/// `h` on `samples` scalars drawn from the parameters in `ids` (all
/// parameters when empty). `f` must build a scalar on the fresh tape.
pub fn check_gradients<R, F>(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    samples: usize,
    h: f64,
    rng: &mut R,
    f: F,
) -> Result<GradCheckReport>
where
    R: Rng + ?Sized,
    F: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let pool: Vec<ParamId> = if ids.is_empty() { store.ids().collect() } else { ids.to_vec() };
    let mut slots: Vec<(ParamId, usize)> = pool
        .iter()
        .flat_map(|&id| (0..store.tensor(id).data.len()).map(move |j| (id, j)))
        .collect();
    for i in (1..slots.len()).rev() {
        slots.swap(i, rng.gen_range(0..=i));
    }
    slots.truncate(samples);

    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    let grads = tape.backward(loss)?;

    let eval = |id: ParamId, j: usize, d: f64| -> Result<f64> {
        let mut s = store.clone();
        s.data_mut(id)[j] += d;
        let mut t = Tape::new();
        let l = f(&s, &mut t)?;
        Ok(t.scalar(l))
    };
    let mut report = GradCheckReport::default();
    for (id, j) in slots {
        let analytic = grads.get(id).map_or(0.0, |g| g[j]);
        let numeric = (eval(id, j, h)? - eval(id, j, -h)?) / (2.0 * h);
        report.entries.push(GradCheckEntry {
            name: store.tensor(id).name.clone(),
            index: j,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    Ok(report)
}

/// `Σ out ⊙ R` with a fixed random `R`, a scalar readout that does not
/// cancel by symmetry.
pub fn random_readout<R: Rng + ?Sized>(t: &mut Tape<f64>, out: Var, rng: &mut R) -> Result<Var> {
    let s = t.shape(out);
    let r = (0..s[0] * s[1] * s[2]).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c = t.constant(s, r)?;
    let m = t.mul(out, c)?;
    Ok(t.sum(m))
}

/// Parameter groups of a model checked separately, by name pattern.
fn layer_of(name: &str) -> &'static str {
    if name.starts_with("embed.") {
        "embed"
    } else if name.contains(".ggcn.") {
        "ggcn"
    } else if name.contains(".transformer.") {
        "transformer"
    } else if name.contains(".route.") {
        "route_attention"
    } else if name.starts_with("select.") {
        "select_decoder"
    } else if name.starts_with("jump.") {
        "jump_decoder"
    } else {
        "edge_kinds"
    }
}

/// Finite-difference checks per layer and for the whole stack, each on
/// `samples` random scalars, through a random readout of the model output.
pub fn check_model_layers<R: Rng + ?Sized>(
    model: &super::model::AgentModel<f64>,
    input: &super::input::ModelInput<f64>,
    anchor: usize,
    samples: usize,
    h: f64,
    rng: &mut R,
) -> Result<Vec<(String, GradCheckReport)>> {
    use super::model::{AgentModel, Head};
    let readout_seed: u64 = rng.gen();
    let f = |ps: &ParamStore<f64>, t: &mut Tape<f64>| -> Result<Var> {
        let mut m: AgentModel<f64> = model.clone();
        *m.params_mut() = ps.clone();
        let mut r = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(readout_seed);
        match m.head() {
            Head::Select => {
                let (out, _) = m.forward_select(t, input)?;
                let a = random_readout(t, out.p_node, &mut r)?;
                let b = random_readout(t, out.p_move, &mut r)?;
                t.add(a, b)
            }
            Head::Jump => {
                let (p, _) = m.forward_jump(t, input, anchor)?;
                random_readout(t, p, &mut r)
            }
        }
    };
    let store = model.params();
    let mut groups: Vec<(&'static str, Vec<ParamId>)> = Vec::new();
    for (id, t) in store.iter() {
        let layer = layer_of(&t.name);
        match groups.iter_mut().find(|g| g.0 == layer) {
            Some(g) => g.1.push(id),
            None => groups.push((layer, vec![id])),
        }
    }
    let mut out = Vec::new();
    for (name, ids) in groups {
        out.push((name.to_string(), check_gradients(store, &ids, samples, h, rng, f)?));
    }
    out.push(("stack".to_string(), check_gradients(store, &[], samples, h, rng, f)?));
    Ok(out)
}
