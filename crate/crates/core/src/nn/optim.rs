use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::Gradients;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Step decay: `base · gamma^⌊t / step_size⌋`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub base: f64,
    pub step_size: u64,
    pub gamma: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { base: 1e-4, step_size: 100, gamma: 0.998 }
    }
}

impl StepSchedule {
    pub fn at(&self, step: u64) -> f64 {
        self.base * self.gamma.powi((step / self.step_size) as i32)
    }
}

/// Serialized optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamRecord {
    pub step: u64,
    pub schedule: StepSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Adaptive-moment optimizer over a whole parameter store.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub schedule: StepSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, schedule: StepSchedule) -> Self {
        let zeros: Vec<Vec<T>> = store.iter().map(|(_, t)| vec![T::zero(); t.data.len()]).collect();
        Self { schedule, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    /// Completed updates.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Learning rate the next update will use.
    pub fn current_lr(&self) -> f64 {
        self.schedule.at(self.step)
    }

    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) {
        let lr = T::lit(self.current_lr());
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - T::lit(self.beta1.powi(t));
        let c2 = T::one() - T::lit(self.beta2.powi(t));
        let eps = T::lit(self.eps);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for (((p, &gi), mi), vi) in store.data_mut(id).iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *p = *p - lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    pub fn to_record(&self) -> AdamRecord {
        let conv = |x: &Vec<Vec<T>>| x.iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
        AdamRecord {
            step: self.step,
            schedule: self.schedule,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            m: conv(&self.m),
            v: conv(&self.v),
        }
    }

    pub fn from_record(store: &ParamStore<T>, r: &AdamRecord) -> Result<Self> {
        let sizes: Vec<usize> = store.iter().map(|(_, t)| t.data.len()).collect();
        let ok = |x: &Vec<Vec<f64>>| x.len() == sizes.len() && x.iter().zip(&sizes).all(|(a, &b)| a.len() == b);
        if !ok(&r.m) || !ok(&r.v) {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        let conv = |x: &Vec<Vec<f64>>| x.iter().map(|r| r.iter().map(|&v| T::lit(v)).collect()).collect();
        Ok(Self { schedule: r.schedule, beta1: r.beta1, beta2: r.beta2, eps: r.eps, step: r.step, m: conv(&r.m), v: conv(&r.v) })
    }
}
