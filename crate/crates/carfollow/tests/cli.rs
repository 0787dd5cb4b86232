use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn carfollow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carfollow"))
        .args(args)
        .current_dir(cwd)
        .env("CARFOLLOW_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path, spec: &str, extra: &[&str]) {
    fs::write(dir.join("spec.json"), spec).unwrap();
    let mut args = vec!["synth", "spec.json", "--out", "syn"];
    args.extend_from_slice(extra);
    ok(&carfollow(&args, dir));
}

#[test]
fn synth_writes_trace_truth_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"vehicle_count": 4, "horizon": 1.0}"#, &["--seed", "9"]);
    for f in ["trace.csv", "trace.meta.json", "truth_params.csv", "manifest.json"] {
        assert!(dir.path().join("syn").join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("syn/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "synth");
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    let truth = fs::read_to_string(dir.path().join("syn/truth_params.csv")).unwrap();
    assert_eq!(truth.lines().count(), 5);
}

#[test]
fn synth_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"vehicle_count": 5, "horizon": 2.0, "seed": 3}"#, &[]);
    let first = fs::read(dir.path().join("syn/trace.csv")).unwrap();
    synth(dir.path(), r#"{"vehicle_count": 5, "horizon": 2.0, "seed": 3}"#, &[]);
    assert_eq!(first, fs::read(dir.path().join("syn/trace.csv")).unwrap());
    synth(dir.path(), r#"{"vehicle_count": 5, "horizon": 2.0, "seed": 3}"#, &["--seed", "4"]);
    assert_ne!(first, fs::read(dir.path().join("syn/trace.csv")).unwrap());
}

#[test]
fn synth_missing_or_invalid_spec_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(carfollow(&["synth", "nope.json"], dir.path()).status.code(), Some(2));
    fs::write(dir.path().join("bad.json"), r#"{"vehicle_count": 0}"#).unwrap();
    assert_eq!(carfollow(&["synth", "bad.json"], dir.path()).status.code(), Some(2));
    fs::write(dir.path().join("typo.json"), r#"{"vehicle_cnt": 3}"#).unwrap();
    assert_eq!(carfollow(&["synth", "typo.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn estimate_reports_every_vehicle_and_a_runtime() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"vehicle_count": 20, "horizon": 1.0, "seed": 1}"#, &[]);
    let stdout = ok(&carfollow(
        &["estimate", "syn/trace.csv", "--particles", "100", "--seed", "5", "--out", "est"],
        dir.path(),
    ));
    assert!(stdout.contains("estimated 20 vehicles in"), "{stdout}");
    let posteriors = fs::read_to_string(dir.path().join("est/posteriors.csv")).unwrap();
    assert_eq!(posteriors.lines().count(), 21);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("est/posteriors.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 20);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("est/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["filter"]["particle_count"], 100);

    let first = fs::read(dir.path().join("est/mean_particles.csv")).unwrap();
    ok(&carfollow(
        &["estimate", "syn/trace.csv", "--particles", "100", "--seed", "5", "--out", "est"],
        dir.path(),
    ));
    assert_eq!(first, fs::read(dir.path().join("est/mean_particles.csv")).unwrap());
}

#[test]
fn single_frame_vehicle_is_flagged_and_others_processed() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("scenario_id,frame,time,vehicle_id,lane,position,velocity,length\n");
    for k in 0..10 {
        text.push_str(&format!("s,{k},{},1,0,{},20,4.5\n", k as f64 * 0.1, 100.0 + 2.0 * k as f64));
    }
    text.push_str("s,3,0.30000000000000004,2,1,50,15,4.5\n");
    fs::write(dir.path().join("t.csv"), text).unwrap();
    fs::write(dir.path().join("t.meta.json"), r#"{"dt": 0.1}"#).unwrap();
    let stdout = ok(&carfollow(&["estimate", "t.csv", "--out", "est"], dir.path()));
    assert!(stdout.contains("1 warnings"), "{stdout}");
    let posteriors = fs::read_to_string(dir.path().join("est/posteriors.csv")).unwrap();
    assert!(posteriors.lines().any(|l| l.starts_with("s,1,ok,9,")), "{posteriors}");
    assert!(posteriors.lines().any(|l| l.starts_with("s,2,skipped,0,")), "{posteriors}");
}

#[test]
fn unreadable_trace_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(carfollow(&["estimate", "missing.csv"], dir.path()).status.code(), Some(2));
    fs::write(dir.path().join("bad.csv"), "scenario_id,frame\ns,x\n").unwrap();
    let out = carfollow(&["estimate", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn benchmark_rejects_unknown_models() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"vehicle_count": 3, "horizon": 7.0}"#, &[]);
    let out = carfollow(&["benchmark", "syn/trace.csv", "--models", "default,magic"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn benchmark_writes_series_scores_and_nested_estimate() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"vehicle_count": 6, "horizon": 8.0, "seed": 2}"#, &["--scenarios", "2"]);
    ok(&carfollow(
        &[
            "benchmark",
            "syn/trace.csv",
            "--models",
            "estimated,default,nonlinear_fit,const_vel,const_acc",
            "--horizon",
            "3",
            "--particles",
            "200",
            "--targets",
            "4",
            "--out",
            "bench",
        ],
        dir.path(),
    ));
    let b = dir.path().join("bench");
    for f in [
        "rmse_series.csv",
        "event_series.csv",
        "scores.csv",
        "rmse_by_scenario.csv",
        "report.json",
        "manifest.json",
        "rollouts_estimated.csv",
        "rollouts_const_acc.csv",
        "estimate/manifest.json",
        "estimate/mean_particles.csv",
    ] {
        assert!(b.join(f).exists(), "{f}");
    }
    let series = fs::read_to_string(b.join("rmse_series.csv")).unwrap();
    assert!(series.starts_with("t,metric,value,model\n"));
    // 5 models x 2 metrics x 76 samples
    assert_eq!(series.lines().count(), 1 + 5 * 2 * 76);
    let table = fs::read_to_string(b.join("scores.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5 * (2 + 2));
    for r in &rows {
        if ["estimated", "default", "nonlinear_fit"].contains(&r[0]) {
            assert_eq!(r[4], "0", "IDM-family collisions: {r:?}");
        }
    }
    let mean_particles = fs::read_to_string(b.join("estimate/mean_particles.csv")).unwrap();
    assert_eq!(mean_particles.lines().count(), 1 + 2 * 4);
}

#[test]
fn const_vel_on_constant_speed_trace_has_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("scenario_id,frame,time,vehicle_id,lane,position,velocity,length\n");
    for k in 0..=60 {
        let t = k as f64 * 0.1;
        text.push_str(&format!("c,{k},{t},1,0,{},25,4.5\n", 200.0 + 25.0 * t));
        text.push_str(&format!("c,{k},{t},2,0,{},25,4.5\n", 150.0 + 25.0 * t));
    }
    fs::write(dir.path().join("c.csv"), text).unwrap();
    fs::write(dir.path().join("c.meta.json"), r#"{"dt": 0.1}"#).unwrap();
    ok(&carfollow(
        &["benchmark", "c.csv", "--models", "const_vel", "--targets", "all", "--out", "b"],
        dir.path(),
    ));
    let series = fs::read_to_string(dir.path().join("b/rmse_series.csv")).unwrap();
    for line in series.lines().skip(1) {
        let value: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(value <= 1e-9, "{line}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), r#"{"vehicle_count": 2, "horizon": 0.4}"#, &[]);
    fs::write(
        dir.path().join("run.json"),
        r#"{"seed": 77, "filter": {"particle_count": 50, "proposal": "sweep"}}"#,
    )
    .unwrap();
    ok(&carfollow(
        &["estimate", "syn/trace.csv", "--config", "run.json", "--particles", "30", "--out", "est"],
        dir.path(),
    ));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("est/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 77);
    assert_eq!(manifest["config"]["filter"]["particle_count"], 30);
    assert_eq!(manifest["config"]["filter"]["proposal"], "sweep");
    assert_eq!(manifest["config"]["threads"], 2);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(carfollow(&["estimate", "x.csv", "--proposal", "greedy"], dir.path()).status.code(), Some(2));
    assert_eq!(carfollow(&["estimate", "x.csv", "--targets", "most"], dir.path()).status.code(), Some(2));
    assert_eq!(carfollow(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn adapt_converts_an_ngsim_export() {
    let dir = tempfile::tempdir().unwrap();
    let map = Path::new(env!("CARGO_MANIFEST_DIR")).join("column_maps/ngsim.json");
    fs::write(
        dir.path().join("us101.csv"),
        "Vehicle_ID,Frame_ID,Lane_ID,Local_Y,v_Length,v_Vel\n\
         1,100,2,100.0,15.0,30.0\n1,101,2,103.0,15.0,30.0\n\
         2,100,2,50.0,14.0,29.0\n2,101,2,52.9,14.0,29.0\n",
    )
    .unwrap();
    ok(&carfollow(&["adapt", "--map", map.to_str().unwrap(), "us101.csv", "--out", "ad"], dir.path()));
    let trace = fs::read_to_string(dir.path().join("ad/trace.csv")).unwrap();
    assert!(trace.lines().any(|l| l == "us101,100,0,1,2,30.48,9.144,4.572"), "{trace}");
    let meta = fs::read_to_string(dir.path().join("ad/trace.meta.json")).unwrap();
    assert!(meta.contains("\"dt\": 0.1"), "{meta}");
}
