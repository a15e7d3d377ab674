//! Routing instances, solutions and their evaluation.

mod generate;
mod instance;
pub mod io;
mod oracle;
mod solution;

pub use generate::{default_capacity, generate_instance, HORIZON};
pub use instance::{Customer, Depot, ProblemInstance, TimeWindow, Variant};
pub use oracle::{brute_force_optimum, ORACLE_MAX_CUSTOMERS};
pub use solution::{evaluate, route_eval, FeasibilityReport, RouteEval, Solution, INFEASIBILITY_PENALTY};

/// Relative optimality gap `(objective - reference) / reference`.
pub fn gap(objective: f64, reference: f64) -> f64 {
    (objective - reference) / reference
}
