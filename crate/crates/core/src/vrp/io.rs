//! Instance and solution files.
//!
//! Instances are JSON documents:
//!
//! ```text
//! { "variant": "vrptw", "capacity": 15.0,
//!   "depot": { "x": 0.5, "y": 0.5, "e": 0.0, "l": 4.0 },
//!   "customers": [ { "id": 1, "x": 0.1, "y": 0.9, "demand": 3.0,
//!                    "e": 1.2, "l": 1.5, "service": 0.05 } ] }
//! ```
//!
//! `e`, `l` and `service` are optional. Solutions are
//! `{ "routes": [[...], ...], "objective": f64 }`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Customer, Depot, ProblemInstance, Solution, TimeWindow, Variant};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DepotRecord {
    x: f64,
    y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    l: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomerRecord {
    id: usize,
    x: f64,
    y: f64,
    demand: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    service: Option<f64>,
}

/// On-disk form of a [`ProblemInstance`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    variant: Variant,
    capacity: f64,
    depot: DepotRecord,
    customers: Vec<CustomerRecord>,
}

fn window(e: Option<f64>, l: Option<f64>, what: &str) -> std::result::Result<Option<TimeWindow>, String> {
    match (e, l) {
        (None, None) => Ok(None),
        (Some(early), Some(late)) => Ok(Some(TimeWindow { early, late })),
        _ => Err(format!("{what}: `e` and `l` must be given together")),
    }
}

impl InstanceRecord {
    pub fn from_instance(inst: &ProblemInstance) -> Self {
        let d = inst.depot();
        Self {
            variant: inst.variant(),
            capacity: inst.capacity(),
            depot: DepotRecord {
                x: d.x,
                y: d.y,
                e: d.window.map(|w| w.early),
                l: d.window.map(|w| w.late),
            },
            customers: inst
                .customers()
                .iter()
                .map(|c| CustomerRecord {
                    id: c.id,
                    x: c.x,
                    y: c.y,
                    demand: c.demand,
                    e: c.window.map(|w| w.early),
                    l: c.window.map(|w| w.late),
                    service: (c.service_time != 0.0).then_some(c.service_time),
                })
                .collect(),
        }
    }

    pub fn into_instance(self) -> std::result::Result<ProblemInstance, String> {
        let depot = Depot {
            x: self.depot.x,
            y: self.depot.y,
            window: window(self.depot.e, self.depot.l, "depot")?,
        };
        let customers = self
            .customers
            .into_iter()
            .map(|c| {
                Ok(Customer {
                    id: c.id,
                    x: c.x,
                    y: c.y,
                    demand: c.demand,
                    window: window(c.e, c.l, &format!("customer {}", c.id))?,
                    service_time: c.service.unwrap_or(0.0),
                })
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        ProblemInstance::new(self.variant, self.capacity, depot, customers).map_err(|e| e.to_string())
    }
}

impl Serialize for ProblemInstance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        InstanceRecord::from_instance(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProblemInstance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        InstanceRecord::deserialize(d)?
            .into_instance()
            .map_err(serde::de::Error::custom)
    }
}

pub fn parse_instance(text: &str, path: &Path) -> Result<ProblemInstance> {
    let record: InstanceRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    record.into_instance().map_err(|msg| Error::Parse { path: path.to_path_buf(), msg })
}

pub fn read_instance(path: impl AsRef<Path>) -> Result<ProblemInstance> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_instance(&text, path)
}

pub fn write_instance(inst: &ProblemInstance, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&InstanceRecord::from_instance(inst))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub routes: Vec<Vec<usize>>,
    pub objective: f64,
}

impl From<&Solution> for SolutionRecord {
    fn from(s: &Solution) -> Self {
        Self {
            routes: s.routes().to_vec(),
            objective: s.objective(),
        }
    }
}

pub fn write_solution(sol: &Solution, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&SolutionRecord::from(sol))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a solution file and re-evaluates it against `inst`.
pub fn read_solution(path: impl AsRef<Path>, inst: &ProblemInstance) -> Result<Solution> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rec: SolutionRecord = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Solution::new(rec.routes, inst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vrp::generate_instance;

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        for variant in [Variant::Cvrp, Variant::Vrptw] {
            let inst = generate_instance(12, variant, 99).unwrap();
            let p = dir.path().join(format!("{variant}.json"));
            write_instance(&inst, &p).unwrap();
            assert_eq!(read_instance(&p).unwrap(), inst);
        }
    }

    #[test]
    fn missing_capacity_names_the_field() {
        let text = r#"{"variant":"cvrp","depot":{"x":0,"y":0},"customers":[]}"#;
        let err = parse_instance(text, Path::new("x.json")).unwrap_err().to_string();
        assert!(err.contains("capacity"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn hand_written_file_matches_construction() {
        let text = r#"{
            "variant": "cvrp",
            "capacity": 10,
            "depot": {"x": 0, "y": 0},
            "customers": [
                {"id": 2, "x": 0, "y": 4, "demand": 3},
                {"id": 1, "x": 3, "y": 0, "demand": 2}
            ]
        }"#;
        let parsed = parse_instance(text, Path::new("hand.json")).unwrap();
        let built = ProblemInstance::new(
            Variant::Cvrp,
            10.0,
            Depot { x: 0.0, y: 0.0, window: None },
            vec![
                Customer { id: 1, x: 3.0, y: 0.0, demand: 2.0, window: None, service_time: 0.0 },
                Customer { id: 2, x: 0.0, y: 4.0, demand: 3.0, window: None, service_time: 0.0 },
            ],
        )
        .unwrap();
        assert_eq!(parsed, built);
        assert_eq!(parsed.dist(1, 2), 5.0);
    }

    #[test]
    fn half_window_rejected() {
        let text = r#"{"variant":"cvrp","capacity":5,"depot":{"x":0,"y":0,"e":1},"customers":[]}"#;
        let err = parse_instance(text, Path::new("w.json")).unwrap_err().to_string();
        assert!(err.contains("depot"), "{err}");
    }

    #[test]
    fn solution_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inst = generate_instance(4, Variant::Cvrp, 1).unwrap();
        let sol = Solution::new(vec![vec![1, 2], vec![4, 3]], &inst).unwrap();
        let p = dir.path().join("sol.json");
        write_solution(&sol, &p).unwrap();
        let back = read_solution(&p, &inst).unwrap();
        assert_eq!(back, sol);
        assert_eq!(back.objective(), sol.objective());
    }
}
