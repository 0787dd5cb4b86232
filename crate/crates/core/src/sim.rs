//! Scenes and multi-vehicle forward rollouts.
//!
//! Each rollout step computes every acceleration from the frozen scene at
//! time `t` and only then moves all vehicles, so results do not depend on
//! the order vehicles are visited in.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{LaneId, VehicleId};
use crate::models::{propagate, DriverModel, EgoObservation, IdmParams, ModelSpec, VehicleState};
use crate::seed;

/// Gap reported to a driver model when bumpers touch or overlap, m.
/// Collisions themselves are counted by the metrics.
pub const CONTACT_GAP: f64 = 1e-3;

/// All vehicles at one instant, indexed by lane in order of position.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    timestamp: f64,
    vehicles: Vec<VehicleState>,
    by_id: BTreeMap<VehicleId, usize>,
    lanes: BTreeMap<LaneId, Vec<usize>>,
}

/// The nearest same-lane vehicle ahead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Leader {
    pub id: VehicleId,
    /// Leader rear bumper minus ego front bumper, m.
    pub gap: f64,
    /// Leader speed minus ego speed, m/s.
    pub relative_speed: f64,
}

impl Scene {
    /// A scene whose vehicles are strictly ordered in every lane with no
    /// overlapping bumper intervals.
    pub fn new(timestamp: f64, vehicles: Vec<VehicleState>) -> Result<Self> {
        let scene = Scene::observed(timestamp, vehicles)?;
        for order in scene.lanes.values() {
            for pair in order.windows(2) {
                let (behind, ahead) = (&scene.vehicles[pair[0]], &scene.vehicles[pair[1]]);
                if ahead.rear() <= behind.position {
                    return Err(Error::Input(alloc::format!(
                        "vehicles {} and {} overlap in lane {}",
                        behind.id,
                        ahead.id,
                        behind.lane
                    )));
                }
            }
        }
        Ok(scene)
    }

    /// A scene as recorded or simulated: vehicles may touch or overlap, ids
    /// must still be unique.
    pub fn observed(timestamp: f64, vehicles: Vec<VehicleState>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        let mut lanes: BTreeMap<LaneId, Vec<usize>> = BTreeMap::new();
        for (i, v) in vehicles.iter().enumerate() {
            if by_id.insert(v.id, i).is_some() {
                return Err(Error::Input(alloc::format!(
                    "vehicle {} appears twice in one scene",
                    v.id
                )));
            }
            lanes.entry(v.lane).or_default().push(i);
        }
        for order in lanes.values_mut() {
            order.sort_by(|&a, &b| {
                vehicles[a]
                    .position
                    .total_cmp(&vehicles[b].position)
                    .then(vehicles[a].id.cmp(&vehicles[b].id))
            });
        }
        Ok(Scene {
            timestamp,
            vehicles,
            by_id,
            lanes,
        })
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn get(&self, id: VehicleId) -> Option<&VehicleState> {
        self.by_id.get(&id).map(|&i| &self.vehicles[i])
    }

    pub fn contains(&self, id: VehicleId) -> bool {
        self.by_id.contains_key(&id)
    }

    /// Vehicle ids of `lane` from rear to front.
    pub fn lane_order(&self, lane: LaneId) -> impl Iterator<Item = VehicleId> + '_ {
        self.lanes
            .get(&lane)
            .into_iter()
            .flatten()
            .map(|&i| self.vehicles[i].id)
    }

    /// Nearest same-lane vehicle strictly ahead of `id`, if any.
    pub fn leader_of(&self, id: VehicleId) -> Result<Option<Leader>> {
        let &idx = self.by_id.get(&id).ok_or(Error::UnknownVehicle(id))?;
        let ego = &self.vehicles[idx];
        let order = &self.lanes[&ego.lane];
        let rank = order
            .iter()
            .position(|&i| i == idx)
            .expect("lane index covers every vehicle");
        let leader = order[rank + 1..]
            .iter()
            .map(|&i| &self.vehicles[i])
            .find(|v| v.position > ego.position);
        Ok(leader.map(|l| Leader {
            id: l.id,
            gap: l.rear() - ego.position,
            relative_speed: l.velocity - ego.velocity,
        }))
    }

    /// Driver-model input for `id`. Touching or overlapping leaders are
    /// reported at [`CONTACT_GAP`].
    pub fn ego_observation(&self, id: VehicleId) -> Result<EgoObservation> {
        let ego = self.get(id).ok_or(Error::UnknownVehicle(id))?;
        match self.leader_of(id)? {
            Some(l) => EgoObservation::following(ego.velocity, l.relative_speed, l.gap.max(CONTACT_GAP)),
            None => EgoObservation::free(ego.velocity),
        }
    }
}

/// Free-function form of [`Scene::leader_of`].
pub fn leader_of(scene: &Scene, id: VehicleId) -> Result<Option<Leader>> {
    scene.leader_of(id)
}

/// One sample of a vehicle trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub position: f64,
    pub velocity: f64,
    /// Acceleration applied from this sample to the next, m/s².
    pub acceleration: f64,
    pub lane: LaneId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSeries {
    pub id: VehicleId,
    pub length: f64,
    /// Index of the first sample on the shared time base.
    pub start: usize,
    pub points: Vec<TrajectoryPoint>,
    /// The vehicle left the recorded region before the end of the time base.
    pub truncated: bool,
}

impl VehicleSeries {
    pub fn at(&self, k: usize) -> Option<&TrajectoryPoint> {
        k.checked_sub(self.start).and_then(|i| self.points.get(i))
    }

    pub fn covers(&self, from: usize, to_inclusive: usize) -> bool {
        self.start <= from && self.start + self.points.len() > to_inclusive
    }
}

/// Per-vehicle series on a uniform time base `t0 + k * dt`, `k < len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub t0: f64,
    pub dt: f64,
    pub len: usize,
    pub series: Vec<VehicleSeries>,
}

impl TrajectorySet {
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn get(&self, id: VehicleId) -> Option<&VehicleSeries> {
        self.series.iter().find(|s| s.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.series.iter().map(|s| s.id)
    }

    /// Index of time `t` on the time base, if it falls on a sample.
    pub fn index_of_time(&self, t: f64) -> Option<usize> {
        let k = libm::round((t - self.t0) / self.dt);
        if k < 0.0 || k as usize >= self.len {
            return None;
        }
        let tol = 1e-6 * self.dt;
        ((self.time(k as usize) - t).abs() <= tol).then_some(k as usize)
    }

    /// Samples `from..=from + steps`, re-based to start at index 0. Series
    /// that do not reach `from` are dropped.
    pub fn window(&self, from: usize, steps: usize) -> TrajectorySet {
        let end = from + steps;
        let series = self
            .series
            .iter()
            .filter_map(|s| {
                let first = s.start.max(from);
                let last = (s.start + s.points.len()).min(end + 1);
                if first >= last {
                    return None;
                }
                Some(VehicleSeries {
                    id: s.id,
                    length: s.length,
                    start: first - from,
                    points: s.points[first - s.start..last - s.start].to_vec(),
                    truncated: s.truncated || last < end + 1,
                })
            })
            .collect();
        TrajectorySet {
            t0: self.time(from),
            dt: self.dt,
            len: (steps + 1).min(self.len.saturating_sub(from)),
            series,
        }
    }

    /// Scene at sample `k` from every series present there.
    pub fn scene_at(&self, k: usize) -> Result<Scene> {
        let vehicles = self
            .series
            .iter()
            .filter_map(|s| {
                s.at(k).map(|p| VehicleState {
                    id: s.id,
                    position: p.position,
                    velocity: p.velocity,
                    length: s.length,
                    lane: p.lane,
                })
            })
            .collect();
        Scene::observed(self.time(k), vehicles)
    }
}

/// How vehicles without an assigned model move during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonTargetMode {
    /// Snap to the recorded trajectory at every step.
    #[default]
    Replay,
    /// Drive with the deterministic IDM and the background parameters.
    DeterministicIdm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Simulated duration, s.
    pub horizon: f64,
    pub dt: f64,
    pub targets: BTreeMap<VehicleId, ModelSpec>,
    pub non_targets: NonTargetMode,
    /// Parameters of deterministic-IDM non-targets.
    pub background: IdmParams,
    /// Replace stochastic IDM targets by their noise-free mean.
    pub mean_only: bool,
    pub seed: u64,
}

impl RolloutConfig {
    pub fn new(horizon: f64, dt: f64) -> Self {
        RolloutConfig {
            horizon,
            dt,
            targets: BTreeMap::new(),
            non_targets: NonTargetMode::Replay,
            background: IdmParams::default(),
            mean_only: false,
            seed: 0,
        }
    }

    /// `horizon / dt`, which must be a whole number of steps.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::domain("dt", self.dt));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::domain("horizon", self.horizon));
        }
        let steps = self.horizon / self.dt;
        let rounded = libm::round(steps);
        if (steps - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(Error::Config(alloc::format!(
                "horizon {} is not a whole number of {} s steps",
                self.horizon,
                self.dt
            )));
        }
        Ok(rounded as usize)
    }
}

enum Driver {
    Model(ModelSpec, crate::seed::StreamRng),
    Replay(usize),
}

/// Step `scene0` forward `horizon / dt` times.
///
/// `data` is required when non-targets are replayed; its time base must
/// contain the scene timestamp and cover the horizon. Replayed vehicles that
/// leave the recording stop there and their series is flagged truncated.
pub fn rollout(scene0: &Scene, data: Option<&TrajectorySet>, cfg: &RolloutConfig) -> Result<TrajectorySet> {
    let steps = cfg.steps()?;
    for id in cfg.targets.keys() {
        if !scene0.contains(*id) {
            return Err(Error::UnknownVehicle(*id));
        }
    }

    let replay = match (cfg.non_targets, data) {
        (NonTargetMode::DeterministicIdm, _) => None,
        (NonTargetMode::Replay, None) => {
            let all_targets = scene0.vehicles().iter().all(|v| cfg.targets.contains_key(&v.id));
            if !all_targets {
                return Err(Error::Input("replaying non-targets requires recorded data".into()));
            }
            None
        }
        (NonTargetMode::Replay, Some(data)) => {
            if (data.dt - cfg.dt).abs() > 1e-9 * cfg.dt {
                return Err(Error::Input(alloc::format!(
                    "replay data dt {} differs from rollout dt {}",
                    data.dt,
                    cfg.dt
                )));
            }
            let k0 = data.index_of_time(scene0.timestamp()).ok_or_else(|| {
                Error::Input(alloc::format!(
                    "replay data does not contain t = {}",
                    scene0.timestamp()
                ))
            })?;
            if k0 + steps >= data.len {
                return Err(Error::Input(alloc::format!(
                    "replay data covers {} of the {} steps required",
                    data.len - 1 - k0,
                    steps
                )));
            }
            Some((data, k0))
        }
    };

    let mut drivers = BTreeMap::new();
    for v in scene0.vehicles() {
        let driver = if let Some(&spec) = cfg.targets.get(&v.id) {
            let spec = if cfg.mean_only { spec.mean_only() } else { spec };
            Driver::Model(spec, seed::stream(cfg.seed, v.id))
        } else if let Some((data, _)) = replay {
            let idx = data
                .series
                .iter()
                .position(|s| s.id == v.id)
                .ok_or(Error::UnknownVehicle(v.id))?;
            Driver::Replay(idx)
        } else {
            Driver::Model(
                ModelSpec::Idm {
                    params: cfg.background,
                },
                seed::stream(cfg.seed, v.id),
            )
        };
        drivers.insert(v.id, driver);
    }

    let mut out: Vec<VehicleSeries> = scene0
        .vehicles()
        .iter()
        .map(|v| VehicleSeries {
            id: v.id,
            length: v.length,
            start: 0,
            points: Vec::with_capacity(steps + 1),
            truncated: false,
        })
        .collect();
    let slot: BTreeMap<VehicleId, usize> = out.iter().enumerate().map(|(i, s)| (s.id, i)).collect();

    let mut scene = scene0.clone();
    for k in 0..=steps {
        let mut accels = Vec::with_capacity(scene.len());
        for v in scene.vehicles() {
            let accel = match drivers.get_mut(&v.id).expect("driver per vehicle") {
                Driver::Model(spec, rng) => spec.act(&scene.ego_observation(v.id)?, rng)?,
                Driver::Replay(idx) => {
                    let (data, k0) = replay.expect("replay drivers need data");
                    data.series[*idx].at(k0 + k).map_or(0.0, |p| p.acceleration)
                }
            };
            accels.push(accel);
        }
        for (v, &a) in scene.vehicles().iter().zip(&accels) {
            out[slot[&v.id]].points.push(TrajectoryPoint {
                position: v.position,
                velocity: v.velocity,
                acceleration: a,
                lane: v.lane,
            });
        }
        if k == steps {
            break;
        }

        let mut next = Vec::with_capacity(scene.len());
        for (v, &a) in scene.vehicles().iter().zip(&accels) {
            match &drivers[&v.id] {
                Driver::Model(..) => next.push(propagate(v, a, cfg.dt)?),
                Driver::Replay(idx) => {
                    let (data, k0) = replay.expect("replay drivers need data");
                    match data.series[*idx].at(k0 + k + 1) {
                        Some(p) => next.push(VehicleState {
                            position: p.position,
                            velocity: p.velocity,
                            lane: p.lane,
                            ..*v
                        }),
                        None => out[slot[&v.id]].truncated = true,
                    }
                }
            }
        }
        scene = Scene::observed(scene0.timestamp() + (k + 1) as f64 * cfg.dt, next)?;
    }

    Ok(TrajectorySet {
        t0: scene0.timestamp(),
        dt: cfg.dt,
        len: steps + 1,
        series: out,
    })
}
