//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Run with `cargo test --test acceptance`.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use carfollow::commands::{self, SynthOverrides};
use carfollow::config::{ModelName, RunConfig, TargetSelection};
use carfollow::pipeline;
use carfollow_core::filter::{
    systematic_indices, FilterConfig, FilterObservation, ParticleFilter, ParticleSet,
};
use carfollow_core::ids::{LaneId, VehicleId};
use carfollow_core::metrics::{count_events, rmse_series};
use carfollow_core::models::{
    desired_gap, idm_acceleration, log_gaussian_density, position_likelihood, EgoObservation, IdmParams, ModelSpec,
    PositionVariance, Preset, StochasticParams, VehicleState,
};
use carfollow_core::seed::StreamRng;
use carfollow_core::sim::{rollout, NonTargetMode, RolloutConfig, Scene};
use carfollow_core::synth::{generate_synthetic, LeaderProfile, SynthSpec, LEAD_VEHICLE};
use carfollow_core::trace::{CanonicalTrace, TraceRow};
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// Independent scalar IDM evaluation, written out term by term.
fn oracle_gap(v: f64, r: f64, d_min: f64, tau: f64, a_max: f64, b: f64) -> f64 {
    let dynamic = d_min + tau * v - v * r / (2.0 * (a_max * b).sqrt());
    if dynamic > d_min {
        dynamic
    } else {
        d_min
    }
}

fn oracle_accel(v: f64, r: f64, d: f64, v_des: f64, d_min: f64, tau: f64, a_max: f64, b: f64) -> f64 {
    let s = v / v_des;
    let g = oracle_gap(v, r, d_min, tau, a_max, b) / d;
    a_max * (1.0 - s * s * s * s - g * g)
}

fn rel_err(x: f64, y: f64) -> f64 {
    if y == 0.0 {
        x.abs()
    } else {
        ((x - y) / y).abs()
    }
}

fn idm_closed_form() -> Outcome {
    let started = Instant::now();
    let mut rng = StreamRng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let v: f64 = rng.random_range(0.0..40.0);
        let r: f64 = rng.random_range(-15.0..15.0);
        let d: f64 = rng.random_range(0.5..150.0);
        let (v_des, d_min, tau, a_max, b) = (
            rng.random_range(10.0..40.0),
            rng.random_range(0.5..6.0),
            rng.random_range(0.5..2.5),
            rng.random_range(0.5..4.0),
            rng.random_range(1.0..4.0),
        );
        let p = IdmParams::new(v_des, d_min, tau, a_max, b).unwrap();
        let ego = EgoObservation::following(v, r, d).unwrap();
        worst = worst
            .max(rel_err(desired_gap(v, r, &p), oracle_gap(v, r, d_min, tau, a_max, b)))
            .max(rel_err(idm_acceleration(&ego, &p).unwrap(), oracle_accel(v, r, d, v_des, d_min, tau, a_max, b)));
    }
    let example = idm_acceleration(&EgoObservation::following(10.0, -2.0, 20.0).unwrap(), &Preset::Default.params()).unwrap();
    let elapsed = started.elapsed();
    outcome(
        worst <= 1e-12 && (example - 1.0231).abs() < 5e-4 && elapsed < Duration::from_secs(1),
        format!("max relative error {worst:.2e} over 1000 points, worked example a = {example:.4}, {:.3} s", secs(elapsed)),
    )
}

fn congested_spec(seed: u64, dt: f64) -> SynthSpec {
    SynthSpec {
        scenario_id: format!("congested-{seed}"),
        vehicle_count: 20,
        spacing: [2.0, 15.0],
        initial_speed_ratio: [0.2, 0.7],
        leader: LeaderProfile::StopAndGo {
            high: 15.0,
            low: 0.0,
            half_period: 1.5,
            accel_limit: 6.0,
        },
        horizon: 5.0,
        dt,
        seed,
        ..SynthSpec::default()
    }
}

fn collision_free() -> Outcome {
    let started = Instant::now();
    let filter = FilterConfig::default();
    let grid = ParticleFilter::new(filter.clone()).unwrap().grid().to_owned();
    let mut rollouts = 0;
    let mut collisions = 0;
    for seed in 0..100u64 {
        for dt in [0.04, 0.1] {
            let scenario = generate_synthetic(&congested_spec(seed, dt))
                .unwrap()
                .trace
                .scenarios()
                .unwrap()
                .remove(0);
            let followers: Vec<VehicleId> = scenario.trajectories.ids().filter(|&id| id != LEAD_VEHICLE).collect();
            let mut rng = StreamRng::seed_from_u64(seed);
            // a per-vehicle draw from the estimator's grid stands in for estimated parameters
            let drawn: Vec<(f64, f64)> = followers
                .iter()
                .map(|_| {
                    let p = grid.particle(carfollow_core::filter::GridPoint {
                        v_des: rng.random_range(0..grid.v_des.len()) as u32,
                        sigma: rng.random_range(0..grid.sigma.len()) as u32,
                    });
                    (p.v_des, p.sigma_idm)
                })
                .collect();
            let variants: Vec<Box<dyn Fn(usize) -> ModelSpec>> = vec![
                Box::new(|_| ModelSpec::Idm { params: Preset::Default.params() }),
                Box::new(|_| ModelSpec::Idm { params: Preset::NonlinearFit.params() }),
                Box::new(|_| ModelSpec::StochasticIdm {
                    params: StochasticParams::new(Preset::Default.params(), 1.0).unwrap(),
                }),
                Box::new(|_| ModelSpec::StochasticIdm {
                    params: StochasticParams::new(Preset::NonlinearFit.params(), 1.0).unwrap(),
                }),
                Box::new(|i| ModelSpec::Idm {
                    params: filter.idm.with_v_des(drawn[i].0).unwrap(),
                }),
                Box::new(|i| ModelSpec::StochasticIdm {
                    params: StochasticParams::new(filter.idm.with_v_des(drawn[i].0).unwrap(), drawn[i].1).unwrap(),
                }),
            ];
            for (k, variant) in variants.iter().enumerate() {
                let mut cfg = RolloutConfig::new(5.0, dt);
                cfg.seed = seed * 100 + k as u64;
                cfg.non_targets = NonTargetMode::Replay;
                for (i, &id) in followers.iter().enumerate() {
                    cfg.targets.insert(id, variant(i));
                }
                let traj = rollout(&scenario.scenes[0], Some(&scenario.trajectories), &cfg).unwrap();
                collisions += count_events(&traj, None, 3.0).collisions;
                rollouts += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    outcome(
        collisions == 0 && elapsed < Duration::from_secs(30),
        format!("{collisions} collisions in {rollouts} rollouts (100 scenes x 2 dt x 6 models), {:.2} s", secs(elapsed)),
    )
}

fn parameter_recovery() -> Outcome {
    let cfg = FilterConfig::default();
    let (mut total, mut hits, mut shrinking) = (0, 0, 0);
    let mut slowest: f64 = 0.0;
    for root in 0..10u64 {
        let spec = SynthSpec {
            scenario_id: format!("recovery-{root}"),
            vehicle_count: 20,
            v_des_range: [15.0, 35.0],
            sigma_range: [0.1, 1.0],
            horizon: 125.0 * 0.04,
            dt: 0.04,
            seed: 10_000 + root,
            ..SynthSpec::default()
        };
        let synthetic = generate_synthetic(&spec).unwrap();
        let scenarios = synthetic.trace.scenarios().unwrap();
        let started = Instant::now();
        let jobs = pipeline::estimate_jobs(&scenarios, &TargetSelection::All, 0, Some(125), root);
        let estimates = pipeline::estimate(&scenarios, &jobs, &cfg, root).unwrap();
        slowest = slowest.max(secs(started.elapsed()));
        for truth in &synthetic.truth {
            let est = estimates.iter().find(|e| e.vehicle_id == truth.vehicle_id).unwrap();
            total += 1;
            assert_eq!(est.steps, 125);
            if let Some(mean) = est.mean {
                if (mean.v_des - truth.v_des).abs() <= 1.0 {
                    hits += 1;
                }
            }
            if est.convergence.last() < est.convergence.first() {
                shrinking += 1;
            }
        }
    }
    let share = |n: usize| n as f64 / total as f64;
    outcome(
        share(hits) >= 0.9 && share(shrinking) >= 0.9 && slowest <= 60.0,
        format!(
            "v_des within 1 m/s for {hits}/{total}, shrinking trace for {shrinking}/{total}, slowest 20-vehicle batch {slowest:.2} s"
        ),
    )
}

fn benchmark_ordering(dir: &Path) -> Outcome {
    let spec = dir.join("spec.json");
    fs::write(&spec, r#"{"scenario_id": "bench", "vehicle_count": 20, "horizon": 10.0, "seed": 2024}"#).unwrap();
    let synth_dir = dir.join("synth");
    commands::synth(
        &spec,
        &SynthOverrides {
            scenarios: Some(15),
            ..SynthOverrides::default()
        },
        &synth_dir,
    )
    .unwrap();
    let mut cfg = RunConfig::default();
    cfg.seed = 11;
    cfg.benchmark.models = vec![ModelName::Estimated, ModelName::Default];
    cfg.benchmark.targets = TargetSelection::Count(20);
    let out = commands::benchmark(&synth_dir.join("trace.csv"), &cfg, None, None, &dir.join("bench")).unwrap();
    let by = |m: ModelName| -> Vec<(String, f64)> {
        out.results
            .iter()
            .filter(|r| r.model == m)
            .map(|r| (r.scenario_id.clone(), r.rmse.final_position()))
            .collect()
    };
    let (est, def) = (by(ModelName::Estimated), by(ModelName::Default));
    let wins = est.iter().zip(&def).filter(|(e, d)| e.0 == d.0 && e.1 < d.1).count();
    let targets: usize = out.results.iter().filter(|r| r.model == ModelName::Default).map(|r| r.targets.len()).sum();
    let mean = |v: &[(String, f64)]| v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64;
    outcome(
        est.len() == 15 && wins >= 14 && targets == 300,
        format!(
            "estimated beats default in {wins}/{} scenarios ({targets} targets), mean final position RMSE {:.2} vs {:.2} m",
            est.len(),
            mean(&est),
            mean(&def)
        ),
    )
}

fn constant_speed_trace(dt: f64, steps: usize) -> CanonicalTrace {
    let mut rows = Vec::new();
    let cars = [(1u64, 0, 120.0, 31.3), (2, 1, 80.0, 22.7), (3, 2, 40.0, 17.05), (4, 3, 0.0, 0.0)];
    for k in 0..=steps {
        for &(id, lane, x0, v) in &cars {
            rows.push(TraceRow {
                scenario_id: "cruise".into(),
                frame: k as i64,
                time: k as f64 * dt,
                vehicle_id: VehicleId(id),
                lane: LaneId(lane),
                position: x0 + v * k as f64 * dt,
                velocity: Some(v),
                length: 4.5,
            });
        }
    }
    CanonicalTrace { dt, rows }
}

fn baseline_exactness(dir: &Path) -> Outcome {
    let trace_path = dir.join("cruise.csv");
    carfollow::canonical::write_canonical(&trace_path, &constant_speed_trace(0.1, 100)).unwrap();
    let mut cfg = RunConfig::default();
    cfg.benchmark.models = vec![ModelName::ConstVel];
    cfg.benchmark.targets = TargetSelection::All;
    let out = commands::benchmark(&trace_path, &cfg, None, None, &dir.join("cruise")).unwrap();
    let worst = out
        .results
        .iter()
        .flat_map(|r| r.rmse.position.iter().chain(&r.rmse.velocity))
        .fold(0.0f64, |m, &x| m.max(x));

    // a constant-acceleration follower 20 m behind a slower leader
    let scene = Scene::new(
        0.0,
        vec![
            VehicleState::new(VehicleId(1), 50.0, 10.0, 5.0, LaneId(0)).unwrap(),
            VehicleState::new(VehicleId(2), 25.0, 20.0, 5.0, LaneId(0)).unwrap(),
        ],
    )
    .unwrap();
    let mut rc = RolloutConfig::new(5.0, 0.1);
    rc.targets.insert(VehicleId(1), ModelSpec::ConstantVelocity);
    rc.targets.insert(VehicleId(2), ModelSpec::ConstantAcceleration { accel: 1.0 });
    let traj = rollout(&scene, None, &rc).unwrap();
    let crashes = count_events(&traj, None, 3.0).collisions;
    let zero = rmse_series(&traj, &traj, &[VehicleId(1), VehicleId(2)]).unwrap();
    outcome(
        worst <= 1e-9 && crashes >= 1 && zero.final_position() == 0.0,
        format!("const_vel worst RMSE {worst:.1e} over {} samples, const_acc collisions {crashes}", out.results[0].rmse.len()),
    )
}

fn filter_mechanics(dir: &Path) -> Outcome {
    let mut failures = Vec::new();

    // resampling multiplicity against count * w_i
    let weights = [0.05, 0.13, 0.22, 0.27, 0.33];
    let n = 7;
    let trials = 10_000;
    let mut rng = StreamRng::seed_from_u64(99);
    let mut sums = [0.0f64; 5];
    let mut squares = [0.0f64; 5];
    for _ in 0..trials {
        let mut counts = [0.0f64; 5];
        for i in systematic_indices(&weights, n, &mut rng).unwrap() {
            counts[i] += 1.0;
        }
        for i in 0..5 {
            sums[i] += counts[i];
            squares[i] += counts[i] * counts[i];
        }
    }
    for i in 0..5 {
        let mean = sums[i] / trials as f64;
        let var = (squares[i] / trials as f64 - mean * mean).max(0.0);
        let se = (var / trials as f64).sqrt();
        let expected = n as f64 * weights[i];
        if (mean - expected).abs() > 3.0 * se + 1e-12 {
            failures.push(format!("index {i} multiplicity {mean:.4} vs {expected:.4} (se {se:.4})"));
        }
    }

    // grid membership, dither count and weight normalization over a full run
    let spec = SynthSpec {
        vehicle_count: 3,
        horizon: 2.0,
        seed: 5,
        ..SynthSpec::default()
    };
    let scenario = generate_synthetic(&spec).unwrap().trace.scenarios().unwrap().remove(0);
    let mut checked = 0usize;
    for particle_count in [1usize, 7, 33, 500] {
        let filter = ParticleFilter::new(FilterConfig {
            particle_count,
            ..FilterConfig::default()
        })
        .unwrap();
        let expected_dither = (0.2 * particle_count as f64).ceil() as usize;
        let mut rng = StreamRng::seed_from_u64(particle_count as u64);
        let on_grid = |set: &ParticleSet| {
            set.particles().all(|p| {
                filter.grid().locate(p).is_some_and(|g| filter.grid().particle(g) == p)
                    && (filter.grid().v_des.index_of(p.v_des).is_some())
                    && (filter.grid().sigma.index_of(p.sigma_idm).is_some())
            })
        };
        let mut set = filter.init(0, &mut rng);
        checked += set.len();
        if !on_grid(&set) {
            failures.push(format!("I={particle_count}: initial particle off grid"));
        }
        let obs: Vec<FilterObservation> = scenario.filter_observations(VehicleId(2), 0, 50).unwrap();
        for o in &obs {
            let step = filter.step(&set, o, &mut rng).unwrap();
            let sum: f64 = step.weights.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                failures.push(format!("I={particle_count}: weights sum to {sum}"));
            }
            if step.dithered.len() != expected_dither {
                failures.push(format!("I={particle_count}: {} dithered, expected {expected_dither}", step.dithered.len()));
            }
            if !on_grid(&step.set) {
                failures.push(format!("I={particle_count}: particle off grid after a step"));
            }
            checked += step.set.len();
            set = step.set;
        }
    }

    // two full reruns of synth, estimate and benchmark
    let run = |tag: &str| {
        let base = dir.join(tag);
        let spec = dir.join("rerun_spec.json");
        fs::write(&spec, r#"{"vehicle_count": 6, "horizon": 8.0, "seed": 17}"#).unwrap();
        commands::synth(
            &spec,
            &SynthOverrides {
                scenarios: Some(2),
                ..SynthOverrides::default()
            },
            &base.join("synth"),
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.seed = 3;
        cfg.benchmark.models = ModelName::ALL.to_vec();
        let trace = base.join("synth").join("trace.csv");
        commands::estimate(&trace, &cfg, None, None, &base.join("estimate")).unwrap();
        commands::benchmark(&trace, &cfg, None, None, &base.join("benchmark")).unwrap();
        base
    };
    let (a, b) = (run("rerun_a"), run("rerun_b"));
    let mut compared = 0;
    for entry in walk(&a) {
        let rel = entry.strip_prefix(&a).unwrap();
        if rel.file_name().is_some_and(|n| n == "manifest.json") {
            continue;
        }
        compared += 1;
        if fs::read(&entry).ok() != fs::read(b.join(rel)).ok() {
            failures.push(format!("{} differs between reruns", rel.display()));
        }
    }

    outcome(
        failures.is_empty() && compared > 10,
        if failures.is_empty() {
            format!("resampling unbiased over {trials} trials, {checked} particles on grid, {compared} output files bitwise identical")
        } else {
            failures.join("; ")
        },
    )
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn likelihood() -> Outcome {
    let mut rng = StreamRng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mean: f64 = rng.random_range(-50.0..50.0);
        let sigma: f64 = rng.random_range(0.1..2.0);
        let dt: f64 = [0.04, 0.1][rng.random_range(0..2)];
        let sd = (sigma * dt * dt).sqrt();
        let x = mean + rng.random_range(-4.0..4.0) * sd;
        let closed = (-(x - mean).powi(2) / (2.0 * sigma * dt * dt)).exp() / (2.0 * std::f64::consts::PI * sigma * dt * dt).sqrt();
        worst = worst.max(rel_err(position_likelihood(x, mean, sigma, dt).unwrap(), closed));
        // the filter's weighting density in log space
        let var = PositionVariance::AccelerationPropagated.variance(sigma, dt);
        let closed_log = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var);
        worst = worst.max(rel_err(log_gaussian_density(x, mean, var).exp(), closed_log.exp()));
    }
    let (mean, sigma, dt): (f64, f64, f64) = (3.0, 0.7, 0.1);
    let sd = (sigma * dt * dt).sqrt();
    let steps = 20_000;
    let (lo, hi) = (mean - 12.0 * sd, mean + 12.0 * sd);
    let h = (hi - lo) / steps as f64;
    let f = |x: f64| position_likelihood(x, mean, sigma, dt).unwrap();
    let integral = h * ((f(lo) + f(hi)) / 2.0 + (1..steps).map(|i| f(lo + i as f64 * h)).sum::<f64>());
    outcome(
        worst <= 1e-12 && (integral - 1.0).abs() <= 1e-6,
        format!("max relative error {worst:.2e} over 1000 points, integral {integral:.9}"),
    )
}

fn dataset_replication(dir: &Path) -> Option<Outcome> {
    let maps = Path::new(env!("CARGO_MANIFEST_DIR")).join("column_maps");
    let runs: Vec<(String, Vec<std::path::PathBuf>)> = [("ngsim", "CARFOLLOW_NGSIM"), ("highd", "CARFOLLOW_HIGHD")]
        .into_iter()
        .filter_map(|(name, var)| {
            std::env::var(var)
                .ok()
                .map(|v| (name.to_owned(), v.split(',').map(std::path::PathBuf::from).collect()))
        })
        .collect();
    if runs.is_empty() {
        return None;
    }
    let mut details = Vec::new();
    for (name, files) in runs {
        let map = carfollow::adapters::ColumnMap::load(&maps.join(format!("{name}.json"))).unwrap();
        let paths: Vec<&Path> = files.iter().map(|p| p.as_path()).collect();
        let trace = match name.as_str() {
            "ngsim" => carfollow::adapters::adapt_ngsim(paths[0], &map),
            _ => carfollow::adapters::adapt_highd(&paths, &map),
        };
        let trace = match trace {
            Ok(t) => t,
            Err(e) => return Some(outcome(false, format!("{name}: {e}"))),
        };
        let path = dir.join(format!("{name}.csv"));
        carfollow::canonical::write_canonical(&path, &trace).unwrap();
        let mut cfg = RunConfig::default();
        cfg.benchmark.models = ModelName::ALL.to_vec();
        match commands::benchmark(&path, &cfg, None, None, &dir.join(name.clone())) {
            Ok(out) => {
                for rep in &out.report.reports {
                    details.push(format!(
                        "{name}/{}: {:.2} +- {:.2} m, {:.1} collisions",
                        rep.model, rep.position_rmse.mean, rep.position_rmse.std, rep.collisions.mean
                    ));
                }
            }
            Err(e) => return Some(outcome(false, format!("{name}: {e}"))),
        }
    }
    Some(outcome(true, details.join("; ")))
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored
    let dir = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Option<Outcome>>)> = vec![
        ("idm closed form", Box::new(|| Some(idm_closed_form()))),
        ("collision free", Box::new(|| Some(collision_free()))),
        ("parameter recovery", Box::new(|| Some(parameter_recovery()))),
        ("benchmark ordering", Box::new(|| Some(benchmark_ordering(&ensure(dir.path().join("c4")))))),
        ("baseline exactness", Box::new(|| Some(baseline_exactness(&ensure(dir.path().join("c5")))))),
        ("filter mechanics", Box::new(|| Some(filter_mechanics(&ensure(dir.path().join("c6")))))),
        ("likelihood", Box::new(|| Some(likelihood()))),
        ("dataset replication", Box::new(|| dataset_replication(&ensure(dir.path().join("c8"))))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check));
        let line = match result {
            Ok(Some(o)) if o.pass => format!("PASS {}. {name}: {}", i + 1, o.detail),
            Ok(Some(o)) => {
                failed += 1;
                format!("FAIL {}. {name}: {}", i + 1, o.detail)
            }
            Ok(None) => format!("SKIP {}. {name}: set CARFOLLOW_NGSIM or CARFOLLOW_HIGHD to a dataset export", i + 1),
            Err(_) => {
                failed += 1;
                format!("FAIL {}. {name}: panicked", i + 1)
            }
        };
        println!("{line}");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(p: std::path::PathBuf) -> std::path::PathBuf {
    fs::create_dir_all(&p).unwrap();
    p
}
