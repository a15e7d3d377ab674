//! Search drivers: the agent loop, jumps by beam search, and an ALNS
//! baseline sharing the same trace format.

mod agents;
mod alns;
mod beam;
mod construct;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use agents::{coagents_solve, jump, Ablation, Agents, SearchConfig, DEFAULT_STAGNATION};
pub use alns::{alns_search, alns_solve, AdaptiveWeights, Destroy, Repair, REACTION, SCORE_ACCEPTED, SCORE_BEST, SCORE_BETTER, SEGMENT};
pub use beam::{constrained_beam_search, greedy_decode, retained_routes, route_scores, BeamSampling, DEFAULT_BEAM_WIDTH, DISCARDED_ROUTES};
pub use construct::{nearest_neighbor, random_start, randomized_greedy};

use crate::error::{Error, Result};
use crate::psg::PsgPool;
use crate::vrp::Solution;

/// Default iteration budget.
pub const DEFAULT_ITERATIONS: usize = 1000;

/// Stopping rule for one search run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_iterations: Option<usize>,
    pub time_limit: Option<Duration>,
    pub seed: u64,
}

impl SearchBudget {
    pub fn iterations(max_iterations: usize, seed: u64) -> Self {
        Self { max_iterations: Some(max_iterations), time_limit: None, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations.is_none() && self.time_limit.is_none() {
            return Err(Error::Config("search budget needs an iteration or time limit".into()));
        }
        Ok(())
    }

    fn exhausted(&self, done: usize, start: Instant) -> bool {
        self.max_iterations.is_some_and(|m| done >= m) || self.time_limit.is_some_and(|t| start.elapsed() >= t)
    }
}

/// One line of a search trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Best feasible objective so far (infinite before the first one).
    pub best_obj: f64,
    /// Penalized objective of the solution just produced.
    pub current_obj: f64,
    /// `move:<kind>`, `jump`, `restart` or `alns:<destroy>+<repair>`.
    pub action: String,
    pub sample_id: usize,
    /// Zero unless timing was requested.
    pub elapsed_ms: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub iterations: usize,
    pub moves_applied: usize,
    pub jumps: usize,
    pub agent_calls: usize,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub best: Solution,
    pub trace: Vec<TraceRow>,
    pub psg: Option<PsgPool>,
    pub stats: SearchStats,
    pub elapsed: Duration,
}

impl SearchResult {
    pub fn best_objective(&self) -> f64 {
        self.best.objective()
    }

    /// Best objective after each of `count` evenly spaced fractions of
    /// `budget` iterations. A run that stopped early keeps its final value.
    pub fn checkpoints(&self, count: usize, budget: usize) -> Vec<(usize, f64)> {
        checkpoints(&self.trace, count, budget)
    }
}

pub fn checkpoints(trace: &[TraceRow], count: usize, budget: usize) -> Vec<(usize, f64)> {
    (1..=count)
        .map(|i| {
            let at = (i * budget).div_ceil(count);
            let best = trace
                .iter()
                .take_while(|r| r.iteration <= at)
                .last()
                .map_or(f64::INFINITY, |r| r.best_obj);
            (at, best)
        })
        .collect()
}

/// Best feasible solution tracker shared by the drivers.
#[derive(Clone, Debug)]
pub(crate) struct Incumbent {
    best: Option<Solution>,
    fallback: Solution,
}

impl Incumbent {
    pub(crate) fn new(start: &Solution) -> Self {
        Self { best: start.is_feasible().then(|| start.clone()), fallback: start.clone() }
    }

    /// True when `s` becomes the new best.
    pub(crate) fn offer(&mut self, s: &Solution) -> bool {
        if s.is_feasible() {
            if self.best.as_ref().map_or(true, |b| s.objective() < b.objective() - crate::moves::IMPROVEMENT_EPS) {
                self.best = Some(s.clone());
                return true;
            }
        } else if self.best.is_none() && s.penalized() < self.fallback.penalized() {
            self.fallback = s.clone();
        }
        false
    }

    pub(crate) fn objective(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, Solution::objective)
    }

    pub(crate) fn into_solution(self) -> Solution {
        self.best.unwrap_or(self.fallback)
    }
}

pub(crate) struct Clock {
    start: Instant,
    timing: bool,
}

impl Clock {
    pub(crate) fn new(timing: bool) -> Self {
        Self { start: Instant::now(), timing }
    }

    pub(crate) fn ms(&self) -> f64 {
        if self.timing {
            self.start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    }
}
