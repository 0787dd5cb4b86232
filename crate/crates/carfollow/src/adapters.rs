//! Conversion of NGSIM-style and HighD-style exports to the canonical trace.
//!
//! A column map names the source columns and the unit scales; the adapter
//! owns every conversion so that canonical traces are always in meters,
//! seconds and m/s.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use carfollow_core::trace::{CanonicalTrace, TraceRow};
use carfollow_core::{LaneId, VehicleId};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FEET_TO_METERS: f64 = 0.3048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Ngsim,
    Highd,
}

/// Source column names. `position` is the longitudinal coordinate: the
/// front-bumper coordinate for NGSIM, the bounding-box left edge for HighD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Columns {
    pub vehicle_id: Option<String>,
    pub frame: Option<String>,
    pub lane: Option<String>,
    pub position: Option<String>,
    pub length: Option<String>,
    #[serde(default)]
    pub velocity: Option<String>,
    /// Optional grouping column; the file stem is used otherwise.
    #[serde(default)]
    pub scenario: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub format: SourceFormat,
    pub columns: Columns,
    /// Source frames per second.
    pub frame_rate: f64,
    /// Multiplier taking source distances to meters.
    #[serde(default = "one")]
    pub distance_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl ColumnMap {
    pub fn load(path: &Path) -> Result<ColumnMap> {
        let map: ColumnMap = crate::canonical::read_json(path)?;
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.columns;
        for (name, col) in [
            ("vehicle_id", &c.vehicle_id),
            ("frame", &c.frame),
            ("lane", &c.lane),
            ("position", &c.position),
            ("length", &c.length),
        ] {
            if col.as_deref().is_none_or(str::is_empty) {
                return Err(carfollow_core::Error::Config(format!("column map leaves required column {name} unmapped")).into());
            }
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(carfollow_core::Error::Config(format!("frame_rate {} must be positive", self.frame_rate)).into());
        }
        if !(self.distance_scale.is_finite() && self.distance_scale > 0.0) {
            return Err(carfollow_core::Error::Config(format!(
                "distance_scale {} must be positive",
                self.distance_scale
            ))
            .into());
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }
}

struct SourceRow {
    scenario: String,
    vehicle: u64,
    frame: i64,
    lane: i32,
    position: f64,
    length: f64,
    velocity: Option<f64>,
}

fn read_source(path: &Path, map: &ColumnMap) -> Result<Vec<SourceRow>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| CliError::Parse {
            path: path.into(),
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() {
        log::warn!("{}: empty file", path.display());
        return Ok(Vec::new());
    }
    let find = |col: &Option<String>| -> Result<Option<usize>> {
        match col {
            None => Ok(None),
            Some(name) => headers.iter().position(|h| h == name).map(Some).ok_or_else(|| {
                carfollow_core::Error::Config(format!("{}: mapped column {name:?} not found", path.display())).into()
            }),
        }
    };
    let c = &map.columns;
    let need = |col| find(col).map(|i| i.expect("validated map"));
    let (vid, frame, lane, pos, len) = (
        need(&c.vehicle_id)?,
        need(&c.frame)?,
        need(&c.lane)?,
        need(&c.position)?,
        need(&c.length)?,
    );
    // optional columns may be mapped but absent from a particular export
    let optional = |col: &Option<String>| {
        let found = find(col).ok().flatten();
        if col.is_some() && found.is_none() {
            log::warn!("{}: optional column {:?} not found, ignoring it", path.display(), col.as_deref().unwrap_or(""));
        }
        found
    };
    let vel = optional(&c.velocity);
    let scen = optional(&c.scenario);
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i as u64 + 2;
        let fail = |message: String| CliError::Parse {
            path: path.into(),
            row,
            message,
        };
        let record = record.map_err(|e| fail(e.to_string()))?;
        let get = |k: usize| record.get(k).unwrap_or("");
        let num = |k: usize| get(k).parse::<f64>().map_err(|_| fail(format!("{:?} is not a number", get(k))));
        // ids and frames are sometimes exported as floats ("12.0")
        let int = |k: usize| -> Result<i64> {
            let x = num(k)?;
            if x.fract() != 0.0 || x.abs() > 9.0e15 {
                return Err(fail(format!("{:?} is not an integer", get(k))));
            }
            Ok(x as i64)
        };
        let vehicle = u64::try_from(int(vid)?).map_err(|_| fail("negative vehicle id".into()))?;
        let lane = i32::try_from(int(lane)?).map_err(|_| fail("lane out of range".into()))?;
        rows.push(SourceRow {
            scenario: scen.map_or_else(|| stem.clone(), |k| get(k).to_owned()),
            vehicle,
            frame: int(frame)?,
            lane,
            position: num(pos)? * map.distance_scale,
            length: num(len)? * map.distance_scale,
            velocity: match vel {
                Some(k) if !get(k).is_empty() => Some(num(k)? * map.distance_scale),
                _ => None,
            },
        });
    }
    Ok(rows)
}

/// Keep each vehicle's longest run of consecutive frames. Returns the
/// number of rows dropped.
fn trim_to_contiguous(rows: Vec<SourceRow>) -> (Vec<SourceRow>, usize) {
    let total = rows.len();
    let mut groups: BTreeMap<(String, u64), Vec<SourceRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.scenario.clone(), r.vehicle)).or_default().push(r);
    }
    let mut kept = Vec::with_capacity(total);
    for (_, mut g) in groups {
        g.sort_by_key(|r| r.frame);
        g.dedup_by_key(|r| r.frame);
        let (mut best, mut start) = ((0, 0), 0);
        for i in 1..=g.len() {
            if i == g.len() || g[i].frame != g[i - 1].frame + 1 {
                if i - start > best.1 - best.0 {
                    best = (start, i);
                }
                start = i;
            }
        }
        kept.extend(g.drain(best.0..best.1));
    }
    let dropped = total - kept.len();
    (kept, dropped)
}

fn to_trace(rows: Vec<SourceRow>, map: &ColumnMap, label: &str) -> CanonicalTrace {
    let (mut rows, dropped) = trim_to_contiguous(rows);
    if dropped > 0 {
        log::warn!("{label}: dropped {dropped} rows outside each vehicle's longest contiguous window");
    }
    let dt = map.dt();
    // scenario order of first appearance is lost by grouping; restore a
    // stable frame-major order
    let first: HashMap<String, i64> = rows.iter().fold(HashMap::new(), |mut m, r| {
        let e = m.entry(r.scenario.clone()).or_insert(r.frame);
        *e = (*e).min(r.frame);
        m
    });
    rows.sort_by(|a, b| (&a.scenario, a.frame, a.vehicle).cmp(&(&b.scenario, b.frame, b.vehicle)));
    let rows = rows
        .into_iter()
        .map(|r| TraceRow {
            time: (r.frame - first[&r.scenario]) as f64 * dt,
            scenario_id: r.scenario,
            frame: r.frame,
            vehicle_id: VehicleId(r.vehicle),
            lane: LaneId(r.lane),
            position: r.position,
            velocity: r.velocity,
            length: r.length,
        })
        .collect();
    CanonicalTrace { dt, rows }
}

/// NGSIM-style export: `position` is already the front bumper along the
/// road axis.
pub fn adapt_ngsim(path: &Path, map: &ColumnMap) -> Result<CanonicalTrace> {
    map.validate()?;
    let rows = read_source(path, map)?;
    Ok(to_trace(rows, map, &path.display().to_string()))
}

/// HighD-style track files. Each vehicle's travel direction comes from the
/// sign of its mean velocity: rightward vehicles use `x + length` as the
/// front bumper, leftward ones use `-x` so that positions always increase
/// in the direction of travel. Velocities are made non-negative likewise.
pub fn adapt_highd(paths: &[&Path], map: &ColumnMap) -> Result<CanonicalTrace> {
    map.validate()?;
    let mut rows = Vec::new();
    for path in paths {
        let mut file_rows = read_source(path, map)?;
        let mut heading: HashMap<u64, f64> = HashMap::new();
        for pair in file_rows.windows(2) {
            if pair[0].vehicle == pair[1].vehicle {
                *heading.entry(pair[0].vehicle).or_default() += pair[1].position - pair[0].position;
            }
        }
        for r in &file_rows {
            if let Some(v) = r.velocity {
                *heading.entry(r.vehicle).or_default() += v;
            }
        }
        for r in &mut file_rows {
            if heading.get(&r.vehicle).copied().unwrap_or(0.0) >= 0.0 {
                r.position += r.length;
            } else {
                r.position = -r.position;
                r.velocity = r.velocity.map(|v| -v);
            }
        }
        rows.extend(file_rows);
    }
    let label = paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ");
    Ok(to_trace(rows, map, &label))
}
