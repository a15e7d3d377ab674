use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cvrp,
    Vrptw,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Cvrp => "cvrp",
            Variant::Vrptw => "vrptw",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cvrp" => Ok(Variant::Cvrp),
            "vrptw" => Ok(Variant::Vrptw),
            other => Err(format!("unknown variant `{other}` (expected cvrp or vrptw)")),
        }
    }
}

/// Service window `[early, late]` on the start of service.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub early: f64,
    pub late: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Customer {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub demand: f64,
    pub window: Option<TimeWindow>,
    pub service_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Depot {
    pub x: f64,
    pub y: f64,
    pub window: Option<TimeWindow>,
}

/// A CVRP or VRPTW instance over the complete graph `{0} ∪ C`.
///
/// Location `0` is the depot, customers are `1..=n`. Travel time equals
/// Euclidean distance. The fleet is unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    variant: Variant,
    capacity: f64,
    depot: Depot,
    customers: Vec<Customer>,
    dist: Vec<f64>,
}

impl ProblemInstance {
    /// Validates the data and precomputes the distance matrix.
    ///
    /// Customers may be given in any order but their ids must be exactly
    /// `1..=n`.
    pub fn new(variant: Variant, capacity: f64, depot: Depot, mut customers: Vec<Customer>) -> Result<Self> {
        if !(capacity > 0.0) || !capacity.is_finite() {
            return Err(Error::InvalidInstance(format!("capacity must be positive, got {capacity}")));
        }
        customers.sort_by_key(|c| c.id);
        for (pos, c) in customers.iter().enumerate() {
            if c.id != pos + 1 {
                return Err(Error::InvalidInstance(format!(
                    "customer ids must be unique and contiguous from 1; found {} at position {}",
                    c.id,
                    pos + 1
                )));
            }
            if !(c.x.is_finite() && c.y.is_finite()) {
                return Err(Error::InvalidInstance(format!("customer {} has non-finite coordinates", c.id)));
            }
            if c.demand < 0.0 || c.demand > capacity {
                return Err(Error::InvalidInstance(format!(
                    "customer {} demand {} outside [0, capacity={capacity}]",
                    c.id, c.demand
                )));
            }
            if c.service_time < 0.0 {
                return Err(Error::InvalidInstance(format!("customer {} has negative service time", c.id)));
            }
            if let Some(w) = c.window {
                if w.early > w.late {
                    return Err(Error::InvalidInstance(format!(
                        "customer {} window [{}, {}] is empty",
                        c.id, w.early, w.late
                    )));
                }
            }
        }
        if variant == Variant::Vrptw && customers.iter().any(|c| c.window.is_none()) {
            return Err(Error::InvalidInstance("every VRPTW customer needs a time window".into()));
        }

        let n = customers.len() + 1;
        let mut pts = Vec::with_capacity(n);
        pts.push((depot.x, depot.y));
        pts.extend(customers.iter().map(|c| (c.x, c.y)));
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (pts[i].0 - pts[j].0).hypot(pts[i].1 - pts[j].1);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        Ok(Self {
            variant,
            capacity,
            depot,
            customers,
            dist,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn depot(&self) -> &Depot {
        &self.depot
    }

    pub fn customers(&self) -> &[Customer] {
        &self.customers
    }

    /// Number of customers `n` (the depot is not counted).
    pub fn num_customers(&self) -> usize {
        self.customers.len()
    }

    /// Number of locations, `n + 1`.
    pub fn num_locations(&self) -> usize {
        self.customers.len() + 1
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.num_locations() + j]
    }

    /// Customer `id`; panics on the depot or an out-of-range id.
    #[inline]
    pub fn customer(&self, id: usize) -> &Customer {
        &self.customers[id - 1]
    }

    #[inline]
    pub fn demand(&self, loc: usize) -> f64 {
        if loc == 0 {
            0.0
        } else {
            self.customers[loc - 1].demand
        }
    }

    #[inline]
    pub fn service_time(&self, loc: usize) -> f64 {
        if loc == 0 {
            0.0
        } else {
            self.customers[loc - 1].service_time
        }
    }

    /// Time window at `loc`; only reported for VRPTW instances.
    #[inline]
    pub fn window(&self, loc: usize) -> Option<TimeWindow> {
        if self.variant == Variant::Cvrp {
            return None;
        }
        if loc == 0 {
            self.depot.window
        } else {
            self.customers[loc - 1].window
        }
    }

    pub fn coords(&self, loc: usize) -> (f64, f64) {
        if loc == 0 {
            (self.depot.x, self.depot.y)
        } else {
            let c = &self.customers[loc - 1];
            (c.x, c.y)
        }
    }

    pub fn total_demand(&self) -> f64 {
        self.customers.iter().map(|c| c.demand).sum()
    }

    /// Sum of all depot round trips, an upper bound on any reasonable objective.
    pub fn round_trip_bound(&self) -> f64 {
        (1..self.num_locations()).map(|i| 2.0 * self.dist(0, i)).sum()
    }

    /// Latest time the depot accepts returning vehicles.
    pub fn horizon(&self) -> f64 {
        self.window(0).map_or(f64::INFINITY, |w| w.late)
    }
}
