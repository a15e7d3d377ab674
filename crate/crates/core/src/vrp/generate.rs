use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Customer, Depot, ProblemInstance, TimeWindow, Variant};
use crate::error::{Error, Result};

/// Depot closing time of generated VRPTW instances (travel time = distance
/// in the unit square).
pub const HORIZON: f64 = 4.0;

const SERVICE_TIME: f64 = 0.05;
const MIN_WIDTH: f64 = 0.1;
const MAX_WIDTH: f64 = 0.6;

/// Vehicle capacity used by the generator for `n` customers.
///
/// 40 at `n >= 50`, 30 at `20 <= n < 50`; smaller instances get 15 so that
/// they still need several routes.
pub fn default_capacity(n: usize) -> f64 {
    match n {
        0..=19 => 15.0,
        20..=49 => 30.0,
        _ => 40.0,
    }
}

/// Generates a random instance with `n` customers, deterministic in `seed`.
///
/// Depot and customers are uniform in the unit square and demands uniform
/// integers in `[1, 9]`. For VRPTW every customer gets a window `[e, e + w]`
/// with `w ~ U[0.1, 0.6]` and `e` drawn so that the direct trip
/// depot -> customer -> depot respects both the window and the depot horizon.
pub fn generate_instance(n: usize, variant: Variant, seed: u64) -> Result<ProblemInstance> {
    if n == 0 {
        return Err(Error::InvalidInstance("generator needs at least one customer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depot_xy = (rng.gen::<f64>(), rng.gen::<f64>());
    let timed = variant == Variant::Vrptw;
    let mut customers = Vec::with_capacity(n);
    for id in 1..=n {
        let x: f64 = rng.gen();
        let y: f64 = rng.gen();
        let demand = rng.gen_range(1..=9) as f64;
        let (window, service_time) = if timed {
            let t0 = (x - depot_xy.0).hypot(y - depot_xy.1);
            let width = rng.gen_range(MIN_WIDTH..MAX_WIDTH);
            let hi = HORIZON - t0 - SERVICE_TIME - width;
            let early = if hi > t0 { rng.gen_range(t0..hi) } else { t0 };
            (Some(TimeWindow { early, late: early + width }), SERVICE_TIME)
        } else {
            (None, 0.0)
        };
        customers.push(Customer { id, x, y, demand, window, service_time });
    }
    let depot = Depot {
        x: depot_xy.0,
        y: depot_xy.1,
        window: timed.then_some(TimeWindow { early: 0.0, late: HORIZON }),
    };
    ProblemInstance::new(variant, default_capacity(n), depot, customers)
}
