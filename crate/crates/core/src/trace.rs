//! Canonical longitudinal trajectory records and their assembly into
//! scenarios (per-frame scenes plus per-vehicle series).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FilterObservation;
use crate::ids::{LaneId, VehicleId};
use crate::sim::{Scene, TrajectoryPoint, TrajectorySet, VehicleSeries};

/// Column order of the canonical CSV.
pub const CANONICAL_COLUMNS: [&str; 8] = [
    "scenario_id",
    "frame",
    "time",
    "vehicle_id",
    "lane",
    "position",
    "velocity",
    "length",
];

/// One vehicle at one frame. Units are meters, seconds and m/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub scenario_id: String,
    pub frame: i64,
    pub time: f64,
    pub vehicle_id: VehicleId,
    pub lane: LaneId,
    pub position: f64,
    pub velocity: Option<f64>,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CanonicalTrace {
    /// Sampling interval declared for the whole trace, s.
    pub dt: f64,
    pub rows: Vec<TraceRow>,
}

/// One scenario of a trace: scenes per frame and the matching series.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub first_frame: i64,
    pub scenes: Vec<Scene>,
    pub trajectories: TrajectorySet,
}

impl CanonicalTrace {
    /// Scenario ids in order of first appearance.
    pub fn scenario_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for row in &self.rows {
            if !ids.contains(&row.scenario_id.as_str()) {
                ids.push(&row.scenario_id);
            }
        }
        ids
    }

    /// Validate and assemble every scenario.
    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Input(alloc::format!("declared dt {} is not positive", self.dt)));
        }
        self.scenario_ids()
            .into_iter()
            .map(|id| {
                let rows: Vec<&TraceRow> = self.rows.iter().filter(|r| r.scenario_id == id).collect();
                assemble(id, &rows, self.dt)
            })
            .collect()
    }
}

fn time_tolerance(dt: f64) -> f64 {
    1e-6 * dt.max(1.0)
}

fn assemble(id: &str, rows: &[&TraceRow], dt: f64) -> Result<Scenario> {
    let mut per_vehicle: BTreeMap<VehicleId, Vec<&TraceRow>> = BTreeMap::new();
    for row in rows {
        check_row(row)?;
        per_vehicle.entry(row.vehicle_id).or_default().push(row);
    }
    let first_frame = rows.iter().map(|r| r.frame).min().unwrap_or(0);
    let last_frame = rows.iter().map(|r| r.frame).max().unwrap_or(-1);
    let anchor = rows.iter().find(|r| r.frame == first_frame);
    let t0 = anchor.map_or(0.0, |r| r.time);

    for row in rows {
        let expected = t0 + (row.frame - first_frame) as f64 * dt;
        if (row.time - expected).abs() > time_tolerance(dt) {
            return Err(Error::Input(alloc::format!(
                "scenario {id}: non-uniform time base, frame {} at t = {} but dt = {dt} implies {expected}",
                row.frame,
                row.time
            )));
        }
    }

    let mut series = Vec::with_capacity(per_vehicle.len());
    for (vid, mut vrows) in per_vehicle {
        vrows.sort_by_key(|r| r.frame);
        for pair in vrows.windows(2) {
            if pair[1].frame == pair[0].frame {
                return Err(Error::Input(alloc::format!(
                    "scenario {id}: vehicle {vid} has two rows for frame {}",
                    pair[0].frame
                )));
            }
            if pair[1].frame != pair[0].frame + 1 {
                return Err(Error::MissingFrame {
                    vehicle: vid,
                    frame: pair[0].frame + 1,
                });
            }
            if pair[1].position < pair[0].position {
                return Err(Error::Input(alloc::format!(
                    "scenario {id}: vehicle {vid} moves backwards at frame {}",
                    pair[1].frame
                )));
            }
        }
        let positions: Vec<f64> = vrows.iter().map(|r| r.position).collect();
        let derived = differentiate(&positions, dt);
        let velocities: Vec<f64> = vrows
            .iter()
            .zip(&derived)
            .map(|(r, &d)| r.velocity.unwrap_or(d))
            .collect();
        let accelerations = differentiate(&velocities, dt);
        let points = vrows
            .iter()
            .enumerate()
            .map(|(i, r)| TrajectoryPoint {
                position: r.position,
                velocity: velocities[i],
                acceleration: accelerations[i],
                lane: r.lane,
            })
            .collect();
        series.push(VehicleSeries {
            id: vid,
            length: vrows[0].length,
            start: (vrows[0].frame - first_frame) as usize,
            points,
            truncated: false,
        });
    }

    let len = (last_frame - first_frame + 1).max(0) as usize;
    let trajectories = TrajectorySet {
        t0,
        dt,
        len,
        series,
    };
    let scenes = (0..len)
        .map(|k| trajectories.scene_at(k))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        id: id.into(),
        first_frame,
        scenes,
        trajectories,
    })
}

fn check_row(row: &TraceRow) -> Result<()> {
    if !row.position.is_finite() || !row.time.is_finite() {
        return Err(Error::Input(alloc::format!(
            "vehicle {} frame {}: non-finite position or time",
            row.vehicle_id,
            row.frame
        )));
    }
    if !(row.length.is_finite() && row.length > 0.0) {
        return Err(Error::Input(alloc::format!(
            "vehicle {} frame {}: length must be positive",
            row.vehicle_id,
            row.frame
        )));
    }
    if let Some(v) = row.velocity {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Input(alloc::format!(
                "vehicle {} frame {}: velocity must be finite and non-negative",
                row.vehicle_id,
                row.frame
            )));
        }
    }
    Ok(())
}

/// Central differences inside, one-sided differences at both ends. A single
/// sample has derivative zero.
pub fn differentiate(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| match n {
            0 | 1 => 0.0,
            _ if i == 0 => (values[1] - values[0]) / dt,
            _ if i == n - 1 => (values[n - 1] - values[n - 2]) / dt,
            _ => (values[i + 1] - values[i - 1]) / (2.0 * dt),
        })
        .collect()
}

impl Scenario {
    pub fn dt(&self) -> f64 {
        self.trajectories.dt
    }

    /// Transitions of `vehicle` over samples `from..=from + steps` (clipped
    /// to the vehicle's presence), ready for the particle filter.
    pub fn filter_observations(
        &self,
        vehicle: VehicleId,
        from: usize,
        steps: usize,
    ) -> Result<Vec<FilterObservation>> {
        let series = self
            .trajectories
            .get(vehicle)
            .ok_or(Error::UnknownVehicle(vehicle))?;
        let first = series.start.max(from);
        let last = (series.start + series.points.len()).min(from + steps + 1);
        let mut out = Vec::new();
        for k in first..last.saturating_sub(1) {
            let here = series.at(k).expect("within presence");
            let next = series.at(k + 1).expect("within presence");
            out.push(FilterObservation {
                ego: self.scenes[k].ego_observation(vehicle)?,
                position: here.position,
                velocity: here.velocity,
                next_position: next.position,
                dt: self.dt(),
            });
        }
        Ok(out)
    }
}

impl TrajectorySet {
    /// Rows of the canonical format, frames numbered from `first_frame`.
    pub fn to_rows(&self, scenario_id: &str, first_frame: i64) -> Vec<TraceRow> {
        let mut rows = Vec::new();
        for k in 0..self.len {
            for s in &self.series {
                if let Some(p) = s.at(k) {
                    rows.push(TraceRow {
                        scenario_id: scenario_id.into(),
                        frame: first_frame + k as i64,
                        time: self.time(k),
                        vehicle_id: s.id,
                        lane: p.lane,
                        position: p.position,
                        velocity: Some(p.velocity),
                        length: s.length,
                    });
                }
            }
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn row(vehicle: u64, frame: i64, position: f64, velocity: Option<f64>) -> TraceRow {
        TraceRow {
            scenario_id: "s".into(),
            frame,
            time: frame as f64 * 0.1,
            vehicle_id: VehicleId(vehicle),
            lane: LaneId(1),
            position,
            velocity,
            length: 4.5,
        }
    }

    #[test]
    fn two_vehicles_three_frames() {
        let rows = (0..3)
            .flat_map(|f| [row(1, f, f as f64, Some(10.0)), row(2, f, 50.0 + f as f64, Some(10.0))])
            .collect();
        let trace = CanonicalTrace { dt: 0.1, rows };
        let scenarios = trace.scenarios().unwrap();
        assert_eq!(scenarios.len(), 1);
        assert_eq!(scenarios[0].scenes.len(), 3);
        assert!(scenarios[0].scenes.iter().all(|s| s.len() == 2));
        assert_eq!(scenarios[0].trajectories.len, 3);
    }

    #[test]
    fn missing_frame_names_vehicle_and_frame() {
        let trace = CanonicalTrace {
            dt: 0.1,
            rows: vec![row(1, 0, 0.0, None), row(1, 1, 1.0, None), row(1, 3, 3.0, None), row(2, 0, 9.0, None)],
        };
        assert_eq!(
            trace.scenarios(),
            Err(Error::MissingFrame {
                vehicle: VehicleId(1),
                frame: 2
            })
        );
    }

    #[test]
    fn velocity_derived_by_central_difference() {
        let trace = CanonicalTrace {
            dt: 0.1,
            rows: vec![row(1, 0, 0.0, None), row(1, 1, 1.0, None), row(1, 2, 2.0, None)],
        };
        let s = &trace.scenarios().unwrap()[0];
        let points = &s.trajectories.get(VehicleId(1)).unwrap().points;
        assert_relative_eq!(points[1].velocity, 10.0, max_relative = 1e-12);
        assert_relative_eq!(points[0].velocity, 10.0, max_relative = 1e-12);
        assert_relative_eq!(points[2].velocity, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn non_uniform_time_is_rejected() {
        let mut bad = row(1, 2, 2.0, None);
        bad.time = 0.25;
        let trace = CanonicalTrace {
            dt: 0.1,
            rows: vec![row(1, 0, 0.0, None), row(1, 1, 1.0, None), bad],
        };
        assert!(matches!(trace.scenarios(), Err(Error::Input(m)) if m.contains("non-uniform")));
    }

    #[test]
    fn backwards_motion_is_rejected() {
        let trace = CanonicalTrace {
            dt: 0.1,
            rows: vec![row(1, 0, 5.0, None), row(1, 1, 4.0, None)],
        };
        assert!(trace.scenarios().is_err());
    }

    #[test]
    fn late_arrivals_start_later_on_the_time_base() {
        let trace = CanonicalTrace {
            dt: 0.1,
            rows: vec![row(1, 0, 0.0, Some(10.0)), row(1, 1, 1.0, Some(10.0)), row(1, 2, 2.0, Some(10.0)), row(2, 1, 40.0, Some(10.0)), row(2, 2, 41.0, Some(10.0))],
        };
        let s = &trace.scenarios().unwrap()[0];
        assert_eq!(s.trajectories.get(VehicleId(2)).unwrap().start, 1);
        assert_eq!(s.scenes[0].len(), 1);
        assert_eq!(s.scenes[1].len(), 2);
        let obs = s.filter_observations(VehicleId(1), 0, 2).unwrap();
        assert_eq!(obs.len(), 2);
        assert!(obs[0].ego.leader().is_none());
        assert_eq!(obs[1].ego.leader().unwrap().gap, 40.0 - 4.5 - 1.0);
    }

    #[test]
    fn differentiate_edges() {
        assert_eq!(differentiate(&[], 0.1), Vec::<f64>::new());
        assert_eq!(differentiate(&[3.0], 0.1), vec![0.0]);
        let d = differentiate(&[0.0, 1.0, 4.0], 1.0);
        assert_eq!(d, vec![1.0, 2.0, 3.0]);
    }
}
