//! Estimation and benchmarking over loaded scenarios, independent of files.

use std::collections::{BTreeMap, BTreeSet};

use carfollow_core::filter::{run_filter, FilterConfig, Particle};
use carfollow_core::metrics::{count_events, rmse_series, EventCounts, RmseSeries, ScenarioScore};
use carfollow_core::models::{IdmParams, ModelSpec, Preset, StochasticParams};
use carfollow_core::seed::{self, StreamRng};
use carfollow_core::sim::{rollout, RolloutConfig, TrajectorySet};
use carfollow_core::trace::Scenario;
use carfollow_core::{Error, VehicleId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BenchmarkConfig, ModelName, TargetSelection};
use crate::error::{CliError, Result};

/// Pick targets among `candidates` (sorted output).
pub fn select_targets(candidates: &[VehicleId], selection: &TargetSelection, seed: u64) -> Vec<VehicleId> {
    let mut picked: Vec<VehicleId> = match selection {
        TargetSelection::All => candidates.to_vec(),
        TargetSelection::Count(n) => {
            let mut pool = candidates.to_vec();
            pool.shuffle(&mut StreamRng::seed_from_u64(seed));
            pool.truncate(*n);
            pool
        }
        TargetSelection::Ids(ids) => candidates.iter().copied().filter(|c| ids.contains(c)).collect(),
    };
    picked.sort();
    picked
}

/// Fail when explicitly requested ids appear in none of the scenarios.
pub fn check_requested_ids(scenarios: &[Scenario], selection: &TargetSelection) -> Result<()> {
    if let TargetSelection::Ids(ids) = selection {
        let present: BTreeSet<VehicleId> = scenarios.iter().flat_map(|s| s.trajectories.ids()).collect();
        let missing: Vec<String> = ids.iter().filter(|i| !present.contains(i)).map(|i| i.to_string()).collect();
        if !missing.is_empty() {
            return Err(CliError::usage(format!("requested vehicles not in the trace: {}", missing.join(", "))));
        }
    }
    Ok(())
}

/// Seed of one vehicle's filter.
pub fn vehicle_seed(root: u64, scenario_id: &str, vehicle: VehicleId) -> u64 {
    seed::derive_seed(seed::scenario_seed(root, scenario_id), vehicle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateStatus {
    Ok,
    /// Fewer than two frames in the observation window.
    Skipped,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCount {
    pub v_des: f64,
    pub sigma_idm: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleEstimate {
    pub scenario_id: String,
    pub vehicle_id: VehicleId,
    pub status: EstimateStatus,
    /// Observed transitions used.
    pub steps: usize,
    pub mean: Option<Particle>,
    pub convergence: Vec<f64>,
    /// Final population as occupied grid cells.
    pub posterior: Vec<CellCount>,
    pub message: Option<String>,
}

/// One filter job: a vehicle and its observation window.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateJob {
    pub scenario: usize,
    pub vehicle: VehicleId,
    pub from: usize,
    pub steps: usize,
}

fn estimate_one(scenario: &Scenario, job: &EstimateJob, filter: &FilterConfig, root: u64) -> Result<VehicleEstimate> {
    let mut est = VehicleEstimate {
        scenario_id: scenario.id.clone(),
        vehicle_id: job.vehicle,
        status: EstimateStatus::Skipped,
        steps: 0,
        mean: None,
        convergence: Vec::new(),
        posterior: Vec::new(),
        message: None,
    };
    let obs = scenario.filter_observations(job.vehicle, job.from, job.steps)?;
    if obs.is_empty() {
        est.message = Some("fewer than two frames in the observation window".into());
        return Ok(est);
    }
    est.steps = obs.len();
    match run_filter(&obs, filter, vehicle_seed(root, &scenario.id, job.vehicle)) {
        Ok(run) => {
            let mut cells: BTreeMap<(u32, u32), usize> = BTreeMap::new();
            for p in run.set.points() {
                *cells.entry((p.v_des, p.sigma)).or_default() += 1;
            }
            est.posterior = cells
                .into_iter()
                .map(|((v, s), count)| {
                    let p = run.set.grid().particle(carfollow_core::filter::GridPoint { v_des: v, sigma: s });
                    CellCount {
                        v_des: p.v_des,
                        sigma_idm: p.sigma_idm,
                        count,
                    }
                })
                .collect();
            est.status = EstimateStatus::Ok;
            est.mean = Some(run.mean);
            est.convergence = run.trace.0;
        }
        Err(e @ (Error::Degenerate { .. } | Error::ZeroWeights)) => {
            est.status = EstimateStatus::Degenerate;
            est.message = Some(e.to_string());
        }
        Err(e) => return Err(e.into()),
    }
    Ok(est)
}

/// Run every job in parallel; results come back in job order.
pub fn estimate(scenarios: &[Scenario], jobs: &[EstimateJob], filter: &FilterConfig, root: u64) -> Result<Vec<VehicleEstimate>> {
    // fail on a bad config before spawning anything
    carfollow_core::filter::ParticleFilter::new(filter.clone())?;
    jobs.par_iter()
        .map(|job| estimate_one(&scenarios[job.scenario], job, filter, root))
        .collect()
}

/// Jobs for every selected vehicle of every scenario.
pub fn estimate_jobs(
    scenarios: &[Scenario],
    selection: &TargetSelection,
    from: usize,
    steps: Option<usize>,
    root: u64,
) -> Vec<EstimateJob> {
    let mut jobs = Vec::new();
    for (i, s) in scenarios.iter().enumerate() {
        let ids: Vec<VehicleId> = s.trajectories.ids().collect();
        for vehicle in select_targets(&ids, selection, seed::scenario_seed(root, &s.id)) {
            jobs.push(EstimateJob {
                scenario: i,
                vehicle,
                from,
                steps: steps.unwrap_or(s.trajectories.len),
            });
        }
    }
    jobs
}

/// Where a benchmark rollout starts and which vehicles it predicts.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPlan {
    pub scenario: usize,
    /// Sample the rollout starts from.
    pub start: usize,
    pub horizon_steps: usize,
    pub targets: Vec<VehicleId>,
}

/// Rollouts cover the final `horizon` of each scenario; estimation uses up
/// to `estimation_window` before that. Targets must be present for the
/// whole horizon and for at least one transition before it. Scenarios too
/// short for the horizon are skipped with a warning.
pub fn plan_benchmark(scenarios: &[Scenario], cfg: &BenchmarkConfig, root: u64) -> Result<Vec<BenchmarkPlan>> {
    let mut plans = Vec::new();
    for (i, s) in scenarios.iter().enumerate() {
        let h = RolloutConfig::new(cfg.horizon, s.dt()).steps()?;
        if s.trajectories.len < h + 2 {
            log::warn!("scenario {}: {} samples cannot cover a {} s horizon, skipped", s.id, s.trajectories.len, cfg.horizon);
            continue;
        }
        let start = s.trajectories.len - 1 - h;
        let candidates: Vec<VehicleId> = s
            .trajectories
            .series
            .iter()
            .filter(|v| v.start < start && v.covers(start, start + h))
            .map(|v| v.id)
            .collect();
        let targets = select_targets(&candidates, &cfg.targets, seed::scenario_seed(root, &s.id));
        if targets.is_empty() {
            log::warn!("scenario {}: no vehicle qualifies as a target, skipped", s.id);
            continue;
        }
        plans.push(BenchmarkPlan {
            scenario: i,
            start,
            horizon_steps: h,
            targets,
        });
    }
    Ok(plans)
}

pub fn estimation_jobs_for(plans: &[BenchmarkPlan], scenarios: &[Scenario], window: f64) -> Result<Vec<EstimateJob>> {
    let mut jobs = Vec::new();
    for plan in plans {
        let dt = scenarios[plan.scenario].dt();
        let e = RolloutConfig::new(window, dt).steps()?;
        let from = plan.start.saturating_sub(e);
        for &vehicle in &plan.targets {
            jobs.push(EstimateJob {
                scenario: plan.scenario,
                vehicle,
                from,
                steps: plan.start - from,
            });
        }
    }
    Ok(jobs)
}

/// Driver model a benchmark model assigns to one target.
pub fn model_spec(
    model: ModelName,
    estimate: Option<&VehicleEstimate>,
    base: IdmParams,
    constant_acceleration: f64,
) -> Result<ModelSpec> {
    Ok(match model {
        ModelName::Default => ModelSpec::Idm {
            params: Preset::Default.params(),
        },
        ModelName::NonlinearFit => ModelSpec::Idm {
            params: Preset::NonlinearFit.params(),
        },
        ModelName::ConstVel => ModelSpec::ConstantVelocity,
        ModelName::ConstAcc => ModelSpec::ConstantAcceleration {
            accel: constant_acceleration,
        },
        ModelName::Estimated => match estimate.and_then(|e| e.mean) {
            Some(mean) => ModelSpec::StochasticIdm {
                params: StochasticParams::new(base.with_v_des(mean.v_des)?, mean.sigma_idm)?,
            },
            // no usable posterior: fall back to the filter's base parameters
            None => ModelSpec::Idm { params: base },
        },
    })
}

/// Outcome of one model on one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub scenario_id: String,
    pub model: ModelName,
    pub targets: Vec<VehicleId>,
    pub prediction: TrajectorySet,
    pub first_frame: i64,
    pub rmse: RmseSeries,
    pub events: EventCounts,
}

impl ScenarioResult {
    pub fn score(&self) -> ScenarioScore {
        ScenarioScore {
            scenario_id: self.scenario_id.clone(),
            model: self.model.to_string(),
            position_rmse: self.rmse.final_position(),
            velocity_rmse: self.rmse.final_velocity(),
            collisions: self.events.collisions,
            hard_brakes: self.events.hard_brakes,
        }
    }
}

/// Roll out every (scenario, model) pair in parallel.
pub fn run_benchmark(
    scenarios: &[Scenario],
    plans: &[BenchmarkPlan],
    estimates: &[VehicleEstimate],
    cfg: &BenchmarkConfig,
    filter: &FilterConfig,
    root: u64,
) -> Result<Vec<ScenarioResult>> {
    let base = filter.idm;
    let pairs: Vec<(&BenchmarkPlan, ModelName)> = plans
        .iter()
        .flat_map(|p| cfg.models.iter().map(move |&m| (p, m)))
        .collect();
    pairs
        .par_iter()
        .map(|&(plan, model)| {
            let s = &scenarios[plan.scenario];
            let mut rc = RolloutConfig::new(cfg.horizon, s.dt());
            rc.non_targets = cfg.non_targets;
            rc.background = Preset::Default.params();
            rc.mean_only = !cfg.stochastic;
            rc.seed = seed::scenario_seed(root, &format!("{}/{}", s.id, model));
            for &id in &plan.targets {
                let est = estimates.iter().find(|e| e.scenario_id == s.id && e.vehicle_id == id);
                if model == ModelName::Estimated && est.is_none_or(|e| e.mean.is_none()) {
                    log::warn!("scenario {} vehicle {id}: no estimate, using base parameters", s.id);
                }
                rc.targets.insert(id, model_spec(model, est, base, cfg.constant_acceleration)?);
            }
            let prediction = rollout(&s.scenes[plan.start], Some(&s.trajectories), &rc)?;
            let truth = s.trajectories.window(plan.start, plan.horizon_steps);
            let rmse = rmse_series(&prediction, &truth, &plan.targets)?;
            let events = count_events(&prediction, Some(&plan.targets), cfg.brake_threshold);
            Ok(ScenarioResult {
                scenario_id: s.id.clone(),
                model,
                targets: plan.targets.clone(),
                prediction,
                first_frame: s.first_frame + plan.start as i64,
                rmse,
                events,
            })
        })
        .collect()
}
