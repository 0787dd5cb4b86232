//! Canonical trajectory CSV plus its `<stem>.meta.json` sidecar.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use carfollow_core::trace::{CanonicalTrace, Scenario, TraceRow, CANONICAL_COLUMNS};
use carfollow_core::{LaneId, VehicleId};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Contents of the sidecar next to a canonical CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

pub fn meta_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    csv.with_file_name(format!("{stem}.meta.json"))
}

/// Write `trace` as canonical CSV and its sidecar.
pub fn write_canonical(path: &Path, trace: &CanonicalTrace) -> Result<()> {
    write_canonical_with_source(path, trace, None)
}

pub fn write_canonical_with_source(path: &Path, trace: &CanonicalTrace, source: Option<&str>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_rows(file, &trace.rows).map_err(|e| CliError::io(path, e))?;
    let meta = TraceMeta {
        dt: trace.dt,
        source: source.map(str::to_owned),
    };
    write_json(&meta_path(path), &meta)
}

fn write_rows<W: Write>(out: W, rows: &[TraceRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CANONICAL_COLUMNS)?;
    for r in rows {
        // `{}` on f64 prints the shortest string that parses back to the same bits
        w.write_record([
            r.scenario_id.clone(),
            r.frame.to_string(),
            r.time.to_string(),
            r.vehicle_id.0.to_string(),
            r.lane.0.to_string(),
            r.position.to_string(),
            r.velocity.map(|v| v.to_string()).unwrap_or_default(),
            r.length.to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.into(),
        row: e.line() as u64,
        message: e.to_string(),
    })
}

/// Read a canonical CSV. Columns are matched by header name; `velocity` may
/// be absent or empty. `dt` comes from the sidecar, or is inferred from the
/// time column with a warning when there is none.
pub fn read_canonical(path: &Path) -> Result<CanonicalTrace> {
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| CliError::io(path, e))?;
    let rows = parse_rows(path, text.as_bytes())?;

    let sidecar = meta_path(path);
    let dt = if sidecar.exists() {
        read_json::<TraceMeta>(&sidecar)?.dt
    } else if rows.is_empty() {
        0.0
    } else {
        let dt = infer_dt(&rows).ok_or_else(|| {
            CliError::usage(format!(
                "{}: no {} sidecar and dt cannot be inferred",
                path.display(),
                sidecar.display()
            ))
        })?;
        log::warn!("{}: no sidecar, inferred dt = {dt} s", path.display());
        dt
    };
    if rows.is_empty() {
        log::warn!("{}: trace is empty", path.display());
    }
    Ok(CanonicalTrace { dt, rows })
}

/// Load a canonical CSV and assemble its scenarios.
pub fn load_canonical(path: &Path) -> Result<Vec<Scenario>> {
    let trace = read_canonical(path)?;
    if trace.rows.is_empty() {
        return Ok(Vec::new());
    }
    Ok(trace.scenarios()?)
}

fn infer_dt(rows: &[TraceRow]) -> Option<f64> {
    let mut by_vehicle: HashMap<(&str, VehicleId), Vec<(i64, f64)>> = HashMap::new();
    for r in rows {
        by_vehicle.entry((&r.scenario_id, r.vehicle_id)).or_default().push((r.frame, r.time));
    }
    by_vehicle.into_values().find_map(|mut v| {
        v.sort_by_key(|p| p.0);
        v.windows(2)
            .find(|w| w[1].0 > w[0].0)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0) as f64)
    })
}

const REQUIRED: [&str; 7] = ["scenario_id", "frame", "time", "vehicle_id", "lane", "position", "length"];

fn parse_rows<R: Read>(path: &Path, input: R) -> Result<Vec<TraceRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => {
            return Err(CliError::Parse {
                path: path.into(),
                row: 1,
                message: e.to_string(),
            })
        }
    };
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let column = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(REQUIRED) {
        *slot = column(name).ok_or_else(|| CliError::Parse {
            path: path.into(),
            row: 1,
            message: format!("missing column {name:?}"),
        })?;
    }
    let velocity = column("velocity");

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is row 1
        let row = i as u64 + 2;
        let fail = |message: String| CliError::Parse {
            path: path.into(),
            row,
            message,
        };
        let record = record.map_err(|e| fail(e.to_string()))?;
        let field = |k: usize| record.get(idx[k]).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            field(k)
                .parse::<f64>()
                .map_err(|_| fail(format!("{} {:?} is not a number", REQUIRED[k], field(k))))
        };
        let int = |k: usize| -> Result<i64> {
            field(k)
                .parse::<i64>()
                .map_err(|_| fail(format!("{} {:?} is not an integer", REQUIRED[k], field(k))))
        };
        let vehicle = field(3)
            .parse::<u64>()
            .map_err(|_| fail(format!("vehicle_id {:?} is not a non-negative integer", field(3))))?;
        let lane = i32::try_from(int(4)?).map_err(|_| fail("lane out of range".into()))?;
        let velocity = match velocity.and_then(|c| record.get(c)).filter(|s| !s.is_empty()) {
            Some(s) => Some(s.parse::<f64>().map_err(|_| fail(format!("velocity {s:?} is not a number")))?),
            None => None,
        };
        rows.push(TraceRow {
            scenario_id: field(0).to_owned(),
            frame: int(1)?,
            time: num(2)?,
            vehicle_id: VehicleId(vehicle),
            lane: LaneId(lane),
            position: num(5)?,
            velocity,
            length: num(6)?,
        });
    }
    Ok(rows)
}
