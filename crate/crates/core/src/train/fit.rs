use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_jump, loss_select};
use crate::error::{Error, Result};
use crate::moves::MoveKind;
use crate::nn::{Adam, AgentModel, Gradients, Head, ModelInput, StepSchedule, Tape, Var};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct SelectSample<T> {
    pub input: ModelInput<T>,
    pub y_node: Vec<f64>,
    pub y_move: Vec<[f64; MoveKind::COUNT]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpSample<T> {
    pub input: ModelInput<T>,
    pub anchor: usize,
    /// Successor matrices, the reference first.
    pub targets: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainSample<T> {
    Select(SelectSample<T>),
    Jump(JumpSample<T>),
}

impl<T: Real> TrainSample<T> {
    pub fn head(&self) -> Head {
        match self {
            TrainSample::Select(_) => Head::Select,
            TrainSample::Jump(_) => Head::Jump,
        }
    }

    /// Records the forward pass and the loss of this sample on `t`.
    pub fn loss(&self, model: &AgentModel<T>, t: &mut Tape<T>) -> Result<Var> {
        match self {
            TrainSample::Select(s) => {
                let (out, _) = model.forward_select(t, &s.input)?;
                loss_select(t, &out, &s.y_node, &s.y_move)
            }
            TrainSample::Jump(s) => {
                let (p, _) = model.forward_jump(t, &s.input, s.anchor)?;
                Ok(loss_jump(t, p, &s.targets)?.0)
            }
        }
    }

    pub fn loss_value(&self, model: &AgentModel<T>) -> Result<f64> {
        let mut t = Tape::new();
        let l = self.loss(model, &mut t)?;
        Ok(t.scalar(l).as_f64())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: StepSchedule,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    /// Calls the checkpoint hook every this many steps.
    pub checkpoint_every: Option<u64>,
    /// Evaluates the validation set every this many steps.
    pub eval_every: u64,
}

impl TrainConfig {
    /// Full-length selection schedule.
    pub fn select() -> Self {
        Self { schedule: StepSchedule::default(), batch_size: 48, max_steps: 50_000, seed: 0, checkpoint_every: Some(1000), eval_every: 100 }
    }

    /// Full-length jump schedule.
    pub fn jump() -> Self {
        Self { batch_size: 16, max_steps: 25_000, ..Self::select() }
    }

    /// Tenth-length schedules for one-core runs.
    pub fn desk(head: Head) -> Self {
        match head {
            Head::Select => Self { max_steps: 5_000, ..Self::select() },
            Head::Jump => Self { max_steps: 2_500, ..Self::jump() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<LossRow>,
    /// Optimizer steps taken in this call.
    pub steps: u64,
    /// Set when training stopped on a non-finite loss or gradient; the model
    /// then holds the parameters from before that step.
    pub aborted: Option<String>,
    /// Mean loss over the whole training set after the last step.
    pub final_loss: f64,
}

/// Mean loss over `data`.
pub fn mean_loss<T: Real>(model: &AgentModel<T>, data: &[TrainSample<T>]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in data {
        total += s.loss_value(model)?;
    }
    Ok(total / data.len() as f64)
}

/// Minibatch training with shuffled epochs.
///
/// Each step averages loss and gradients over `batch_size` samples (the
/// whole set when smaller) and takes one optimizer step. `on_checkpoint`
/// receives the model and optimizer every `checkpoint_every` steps.
pub fn train<T: Real>(
    model: &mut AgentModel<T>,
    opt: &mut Adam<T>,
    data: &[TrainSample<T>],
    val: &[TrainSample<T>],
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(&AgentModel<T>, &Adam<T>) -> Result<()>,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if let Some(s) = data.iter().chain(val).find(|s| s.head() != model.head()) {
        return Err(Error::Config(format!("{} sample for a {} model", s.head(), model.head())));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = cfg.batch_size.min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut pos = 0;
    let mut curve = Vec::new();
    let mut aborted = None;
    let mut steps = 0;
    while steps < cfg.max_steps {
        let mut grads = Gradients::default();
        let mut loss = 0.0;
        for _ in 0..batch {
            if pos == order.len() {
                order.shuffle(&mut rng);
                pos = 0;
            }
            let s = &data[order[pos]];
            pos += 1;
            let mut t = Tape::new();
            let l = s.loss(model, &mut t)?;
            loss += t.scalar(l).as_f64();
            grads.accumulate(&t.backward(l)?);
        }
        loss /= batch as f64;
        grads.scale(T::lit(1.0 / batch as f64));
        if !loss.is_finite() || !grads.is_finite() {
            aborted = Some(format!("non-finite loss or gradient at step {}", opt.step_count() + 1));
            break;
        }
        let lr = opt.current_lr();
        opt.update(model.params_mut(), &grads);
        steps += 1;
        let step = opt.step_count();
        let val_loss = if !val.is_empty() && cfg.eval_every > 0 && step % cfg.eval_every == 0 {
            Some(mean_loss(model, val)?)
        } else {
            None
        };
        curve.push(LossRow { step, lr, loss, val_loss });
        if cfg.checkpoint_every.is_some_and(|c| c > 0 && step % c == 0) {
            on_checkpoint(model, opt)?;
        }
    }
    let final_loss = mean_loss(model, data)?;
    Ok(TrainReport { curve, steps, aborted, final_loss })
}
