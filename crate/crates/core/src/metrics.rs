//! Prediction error and safety-event metrics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{LaneId, VehicleId};
use crate::sim::TrajectorySet;

/// Default hard-braking threshold, m/s² of deceleration.
pub const DEFAULT_BRAKE_THRESHOLD: f64 = 3.0;

/// Per-timestep RMSE across target vehicles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseSeries {
    pub t0: f64,
    pub dt: f64,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl RmseSeries {
    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn final_position(&self) -> f64 {
        self.position.last().copied().unwrap_or(0.0)
    }

    pub fn final_velocity(&self) -> f64 {
        self.velocity.last().copied().unwrap_or(0.0)
    }
}

/// `sqrt(mean over targets of (pred - truth)^2)` per timestep, separately
/// for position and velocity.
pub fn rmse_series(pred: &TrajectorySet, truth: &TrajectorySet, targets: &[VehicleId]) -> Result<RmseSeries> {
    if pred.len != truth.len
        || (pred.dt - truth.dt).abs() > 1e-9 * truth.dt
        || (pred.t0 - truth.t0).abs() > 1e-6 * truth.dt
    {
        return Err(Error::Input(alloc::format!(
            "time bases differ: predicted ({}, {}, {}) vs truth ({}, {}, {})",
            pred.t0,
            pred.dt,
            pred.len,
            truth.t0,
            truth.dt,
            truth.len
        )));
    }
    if targets.is_empty() {
        return Err(Error::Input("no target vehicles".into()));
    }
    let mut pos = vec![0.0; truth.len];
    let mut vel = vec![0.0; truth.len];
    for &id in targets {
        let p = pred.get(id).ok_or(Error::UnknownVehicle(id))?;
        let t = truth.get(id).ok_or(Error::UnknownVehicle(id))?;
        for k in 0..truth.len {
            let (a, b) = match (p.at(k), t.at(k)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::Input(alloc::format!(
                        "vehicle {id} has no sample at step {k}"
                    )))
                }
            };
            pos[k] += (a.position - b.position) * (a.position - b.position);
            vel[k] += (a.velocity - b.velocity) * (a.velocity - b.velocity);
        }
    }
    let n = targets.len() as f64;
    for x in pos.iter_mut().chain(vel.iter_mut()) {
        *x = libm::sqrt(*x / n);
    }
    Ok(RmseSeries {
        t0: truth.t0,
        dt: truth.dt,
        position: pos,
        velocity: vel,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub collisions: usize,
    pub hard_brakes: usize,
    pub collisions_cumulative: Vec<usize>,
    pub hard_brakes_cumulative: Vec<usize>,
}

/// Count collisions and hard-braking events.
///
/// A collision is the first step at which two same-lane vehicles' bumper
/// intervals touch or overlap; each pair counts once. A hard brake is one
/// vehicle-step with acceleration below `-brake_threshold`. With `targets`
/// given, only hard brakes of targets and collisions involving at least one
/// target are counted.
pub fn count_events(traj: &TrajectorySet, targets: Option<&[VehicleId]>, brake_threshold: f64) -> EventCounts {
    let counted = |id: VehicleId| targets.is_none_or(|t| t.contains(&id));
    let mut seen: BTreeSet<(VehicleId, VehicleId)> = BTreeSet::new();
    let mut collisions = 0;
    let mut hard_brakes = 0;
    let mut collisions_cumulative = Vec::with_capacity(traj.len);
    let mut hard_brakes_cumulative = Vec::with_capacity(traj.len);

    for k in 0..traj.len {
        let mut lanes: BTreeMap<LaneId, Vec<(VehicleId, f64, f64)>> = BTreeMap::new();
        for s in &traj.series {
            if let Some(p) = s.at(k) {
                lanes.entry(p.lane).or_default().push((s.id, p.position - s.length, p.position));
                if counted(s.id) && p.acceleration < -brake_threshold {
                    hard_brakes += 1;
                }
            }
        }
        for cars in lanes.values() {
            for (i, a) in cars.iter().enumerate() {
                for b in &cars[i + 1..] {
                    if !(counted(a.0) || counted(b.0)) {
                        continue;
                    }
                    // gap of whichever is behind: leader rear minus follower front
                    let gap = if a.2 <= b.2 { b.1 - a.2 } else { a.1 - b.2 };
                    let key = if a.0 < b.0 { (a.0, b.0) } else { (b.0, a.0) };
                    if gap <= 0.0 && seen.insert(key) {
                        collisions += 1;
                    }
                }
            }
        }
        collisions_cumulative.push(collisions);
        hard_brakes_cumulative.push(hard_brakes);
    }
    EventCounts {
        collisions,
        hard_brakes,
        collisions_cumulative,
        hard_brakes_cumulative,
    }
}

/// End-of-horizon results of one model on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub scenario_id: String,
    pub model: String,
    pub position_rmse: f64,
    pub velocity_rmse: f64,
    pub collisions: usize,
    pub hard_brakes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<MeanStd> {
        if values.is_empty() {
            return Err(Error::Input("cannot aggregate zero values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Ok(MeanStd {
            mean,
            std: libm::sqrt(var),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub scenarios: Vec<ScenarioScore>,
    pub position_rmse: MeanStd,
    pub velocity_rmse: MeanStd,
    pub collisions: MeanStd,
    pub hard_brakes: MeanStd,
}

/// Mean and population standard deviation across scenarios.
pub fn aggregate(model: &str, scores: Vec<ScenarioScore>) -> Result<EvalReport> {
    let col = |f: fn(&ScenarioScore) -> f64| MeanStd::of(&scores.iter().map(f).collect::<Vec<_>>());
    Ok(EvalReport {
        model: model.into(),
        position_rmse: col(|s| s.position_rmse)?,
        velocity_rmse: col(|s| s.velocity_rmse)?,
        collisions: col(|s| s.collisions as f64)?,
        hard_brakes: col(|s| s.hard_brakes as f64)?,
        scenarios: scores,
    })
}
