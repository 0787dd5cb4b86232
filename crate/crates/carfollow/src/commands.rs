//! Subcommands: each reads its inputs, runs the pipeline and writes one
//! output directory with a manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use carfollow_core::metrics::{aggregate, EvalReport, MeanStd};
use carfollow_core::synth::{generate_batch, generate_synthetic, GroundTruth, SynthSpec};
use carfollow_core::trace::{CanonicalTrace, Scenario};
use serde::Serialize;

use crate::canonical::{load_canonical, read_json, write_canonical, write_canonical_with_source, write_json};
use crate::config::{ModelName, RunConfig, TargetSelection};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::pipeline::{self, EstimateStatus, ScenarioResult, VehicleEstimate};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(path, e.into()))
}

fn write_records<I, R>(path: &Path, header: &[&str], records: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let io = |e: csv::Error| CliError::io(path, e.into());
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(io)?;
    for r in records {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthRun {
    pub spec: SynthSpec,
    pub scenarios: usize,
}

/// Command-line values that replace fields of the spec file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthOverrides {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub scenarios: Option<usize>,
}

/// Generate a synthetic trace (or `scenarios` of them) from a spec.
pub fn synth(spec_path: &Path, overrides: &SynthOverrides, out: &Path) -> Result<CanonicalTrace> {
    let started = Instant::now();
    let mut spec: SynthSpec = read_json(spec_path)?;
    spec.seed = overrides.seed.unwrap_or(spec.seed);
    spec.dt = overrides.dt.unwrap_or(spec.dt);
    spec.horizon = overrides.horizon.unwrap_or(spec.horizon);
    let run = SynthRun {
        spec,
        scenarios: overrides.scenarios.unwrap_or(1),
    };
    if run.scenarios == 0 {
        return Err(CliError::usage("scenario count must be at least 1"));
    }
    let (trace, truth): (CanonicalTrace, Vec<(String, Vec<GroundTruth>)>) = if run.scenarios == 1 {
        let one = generate_synthetic(&run.spec)?;
        (one.trace, vec![(run.spec.scenario_id.clone(), one.truth)])
    } else {
        let batch = generate_batch(&run.spec, run.scenarios)?;
        (batch.trace, batch.truth)
    };

    create_dir(out)?;
    write_canonical_with_source(&out.join("trace.csv"), &trace, Some("synthetic"))?;
    write_records(
        &out.join("truth_params.csv"),
        &["scenario_id", "vehicle_id", "v_des", "sigma_idm"],
        truth.iter().flat_map(|(id, rows)| {
            rows.iter().map(move |t| {
                [
                    id.clone(),
                    t.vehicle_id.to_string(),
                    t.v_des.to_string(),
                    t.sigma_idm.to_string(),
                ]
            })
        }),
    )?;
    let mut manifest = RunManifest::new("synth", &run, run.spec.seed)?;
    manifest.add_input(spec_path)?;
    manifest.finish(started.elapsed(), out)?;
    Ok(trace)
}

/// Per-vehicle results of `estimate`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOutput {
    pub estimates: Vec<VehicleEstimate>,
    pub seconds: f64,
}

impl EstimateOutput {
    pub fn warnings(&self) -> usize {
        self.estimates.iter().filter(|e| e.status != EstimateStatus::Ok).count()
    }
}

fn write_estimates(out: &Path, estimates: &[VehicleEstimate]) -> Result<()> {
    create_dir(out)?;
    write_records(
        &out.join("mean_particles.csv"),
        &["scenario_id", "vehicle_id", "v_des", "sigma_idm"],
        estimates.iter().filter_map(|e| {
            e.mean.map(|m| {
                [
                    e.scenario_id.clone(),
                    e.vehicle_id.to_string(),
                    m.v_des.to_string(),
                    m.sigma_idm.to_string(),
                ]
            })
        }),
    )?;
    write_records(
        &out.join("posteriors.csv"),
        &[
            "scenario_id",
            "vehicle_id",
            "status",
            "steps",
            "v_des",
            "sigma_idm",
            "initial_spread",
            "final_spread",
            "message",
        ],
        estimates.iter().map(|e| {
            let status = serde_json::to_value(e.status).ok().and_then(|v| v.as_str().map(str::to_owned));
            [
                e.scenario_id.clone(),
                e.vehicle_id.to_string(),
                status.unwrap_or_default(),
                e.steps.to_string(),
                opt(e.mean.map(|m| m.v_des)),
                opt(e.mean.map(|m| m.sigma_idm)),
                opt(e.convergence.first().copied()),
                opt(e.convergence.last().copied()),
                e.message.clone().unwrap_or_default(),
            ]
        }),
    )?;
    write_records(
        &out.join("convergence.csv"),
        &["scenario_id", "vehicle_id", "step", "spread"],
        estimates.iter().flat_map(|e| {
            e.convergence.iter().enumerate().map(move |(k, v)| {
                [e.scenario_id.clone(), e.vehicle_id.to_string(), k.to_string(), v.to_string()]
            })
        }),
    )?;
    write_json(&out.join("posteriors.json"), &estimates)
}

fn load_scenarios(trace: &Path, selection: &TargetSelection, dt: Option<f64>) -> Result<Vec<Scenario>> {
    let scenarios = load_canonical(trace)?;
    if let (Some(dt), Some(s)) = (dt, scenarios.first()) {
        if (s.dt() - dt).abs() > 1e-9 * dt {
            return Err(CliError::usage(format!("--dt {dt} differs from the trace's declared dt {}", s.dt())));
        }
    }
    pipeline::check_requested_ids(&scenarios, selection)?;
    Ok(scenarios)
}

/// Estimate every selected vehicle and write the posterior files.
pub fn estimate(trace: &Path, cfg: &RunConfig, dt: Option<f64>, config_path: Option<&Path>, out: &Path) -> Result<EstimateOutput> {
    let started = Instant::now();
    let scenarios = load_scenarios(trace, &cfg.estimate.targets, dt)?;
    let jobs = pipeline::estimate_jobs(&scenarios, &cfg.estimate.targets, cfg.estimate.from, cfg.estimate.steps, cfg.seed);
    let estimates = pipeline::estimate(&scenarios, &jobs, &cfg.filter, cfg.seed)?;
    let seconds = started.elapsed().as_secs_f64();
    write_estimates(out, &estimates)?;

    let mut manifest = RunManifest::new("estimate", cfg, cfg.seed)?;
    manifest.add_input(trace)?;
    if let Some(p) = config_path {
        manifest.add_input(p)?;
    }
    manifest.finish(started.elapsed(), out)?;
    Ok(EstimateOutput { estimates, seconds })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub horizon: f64,
    pub brake_threshold: f64,
    pub reports: Vec<EvalReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutput {
    pub results: Vec<ScenarioResult>,
    pub report: BenchmarkReport,
    pub estimates: Vec<VehicleEstimate>,
}

/// Estimate (when requested), roll out every model and score it.
pub fn benchmark(trace: &Path, cfg: &RunConfig, dt: Option<f64>, config_path: Option<&Path>, out: &Path) -> Result<BenchmarkOutput> {
    let started = Instant::now();
    let b = &cfg.benchmark;
    if b.models.is_empty() {
        return Err(CliError::usage("no models to benchmark"));
    }
    let scenarios = load_scenarios(trace, &b.targets, dt)?;
    let plans = pipeline::plan_benchmark(&scenarios, b, cfg.seed)?;
    if plans.is_empty() {
        return Err(CliError::usage("no scenario is long enough for the benchmark horizon"));
    }
    create_dir(out)?;

    let mut estimates = Vec::new();
    if b.models.contains(&ModelName::Estimated) {
        let est_started = Instant::now();
        let jobs = pipeline::estimation_jobs_for(&plans, &scenarios, b.estimation_window)?;
        estimates = pipeline::estimate(&scenarios, &jobs, &cfg.filter, cfg.seed)?;
        let est_dir = out.join("estimate");
        write_estimates(&est_dir, &estimates)?;
        let mut manifest = RunManifest::new("estimate", cfg, cfg.seed)?;
        manifest.add_input(trace)?;
        manifest.finish(est_started.elapsed(), &est_dir)?;
    }

    let results = pipeline::run_benchmark(&scenarios, &plans, &estimates, b, &cfg.filter, cfg.seed)?;
    let mut reports = Vec::new();
    for &model in &b.models {
        let scores = results.iter().filter(|r| r.model == model).map(ScenarioResult::score).collect();
        reports.push(aggregate(model.as_str(), scores)?);
    }
    let report = BenchmarkReport {
        horizon: b.horizon,
        brake_threshold: b.brake_threshold,
        reports,
    };
    write_benchmark(out, &scenarios, &results, &report, &b.models)?;

    let mut manifest = RunManifest::new("benchmark", cfg, cfg.seed)?;
    manifest.add_input(trace)?;
    if let Some(p) = config_path {
        manifest.add_input(p)?;
    }
    manifest.finish(started.elapsed(), out)?;
    Ok(BenchmarkOutput {
        results,
        report,
        estimates,
    })
}

fn write_benchmark(
    out: &Path,
    scenarios: &[Scenario],
    results: &[ScenarioResult],
    report: &BenchmarkReport,
    models: &[ModelName],
) -> Result<()> {
    let dt = scenarios[0].dt();

    // per-timestep series averaged over scenarios
    let mut rmse_rows = Vec::new();
    let mut event_rows = Vec::new();
    for &model in models {
        let runs: Vec<&ScenarioResult> = results.iter().filter(|r| r.model == model).collect();
        let len = runs.iter().map(|r| r.rmse.len()).min().unwrap_or(0);
        for k in 0..len {
            let t = (k as f64 * dt).to_string();
            let mean = |f: &dyn Fn(&ScenarioResult) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / runs.len() as f64;
            rmse_rows.push([t.clone(), "position_rmse".into(), mean(&|r| r.rmse.position[k]).to_string(), model.to_string()]);
            rmse_rows.push([t.clone(), "velocity_rmse".into(), mean(&|r| r.rmse.velocity[k]).to_string(), model.to_string()]);
            let total = |f: &dyn Fn(&ScenarioResult) -> usize| runs.iter().map(|r| f(r)).sum::<usize>();
            event_rows.push([t.clone(), "collisions".into(), total(&|r| r.events.collisions_cumulative[k]).to_string(), model.to_string()]);
            event_rows.push([t, "hard_brakes".into(), total(&|r| r.events.hard_brakes_cumulative[k]).to_string(), model.to_string()]);
        }
    }
    let header = ["t", "metric", "value", "model"];
    write_records(&out.join("rmse_series.csv"), &header, rmse_rows)?;
    write_records(&out.join("event_series.csv"), &header, event_rows)?;

    write_records(
        &out.join("rmse_by_scenario.csv"),
        &["scenario_id", "t", "metric", "value", "model"],
        results.iter().flat_map(|r| {
            (0..r.rmse.len()).flat_map(move |k| {
                let t = (k as f64 * r.rmse.dt).to_string();
                [
                    [r.scenario_id.clone(), t.clone(), "position_rmse".into(), r.rmse.position[k].to_string(), r.model.to_string()],
                    [r.scenario_id.clone(), t, "velocity_rmse".into(), r.rmse.velocity[k].to_string(), r.model.to_string()],
                ]
            })
        }),
    )?;

    let mut table = Vec::new();
    for rep in &report.reports {
        for s in &rep.scenarios {
            table.push([
                rep.model.clone(),
                s.scenario_id.clone(),
                s.position_rmse.to_string(),
                s.velocity_rmse.to_string(),
                s.collisions.to_string(),
                s.hard_brakes.to_string(),
            ]);
        }
        for (label, pick) in [("mean", (|m: MeanStd| m.mean) as fn(MeanStd) -> f64), ("std", |m: MeanStd| m.std)] {
            table.push([
                rep.model.clone(),
                label.into(),
                pick(rep.position_rmse).to_string(),
                pick(rep.velocity_rmse).to_string(),
                pick(rep.collisions).to_string(),
                pick(rep.hard_brakes).to_string(),
            ]);
        }
    }
    write_records(
        &out.join("scores.csv"),
        &["model", "scenario_id", "position_rmse", "velocity_rmse", "collisions", "hard_brakes"],
        table,
    )?;
    write_json(&out.join("report.json"), report)?;

    for &model in models {
        let rows = results
            .iter()
            .filter(|r| r.model == model)
            .flat_map(|r| r.prediction.to_rows(&r.scenario_id, r.first_frame))
            .collect();
        let path: PathBuf = out.join(format!("rollouts_{model}.csv"));
        write_canonical(&path, &CanonicalTrace { dt, rows })?;
    }
    Ok(())
}
