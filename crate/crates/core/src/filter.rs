//! Online estimation of `(v_des, sigma_idm)` for one vehicle with a particle
//! filter.
//!
//! Particles live on a discrete grid and are stored as grid indices, so every
//! operation (initialization, resampling, dithering) preserves grid membership
//! exactly. Each step:
//!
//! 1. picks a particle for every slot (uniformly at random from the current
//!    set, or each particle once in sweep mode),
//! 2. samples the next position from the stochastic IDM with that particle,
//! 3. weights the slot by the density of the observed next position,
//! 4. resamples systematically and dithers the best-ranked survivors.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    idm_acceleration, log_gaussian_density, EgoObservation, IdmParams, Kinematics,
    PositionVariance, Preset,
};
use crate::seed::StreamRng;

const GRID_TOLERANCE: f64 = 1e-9;

/// Smallest admissible lower bound of the `sigma_idm` support.
pub const MIN_SIGMA_IDM: f64 = 0.1;

/// One evenly spaced parameter axis `lo, lo + res, ..., hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    lo: f64,
    hi: f64,
    resolution: f64,
    cells: usize,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, resolution: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && resolution.is_finite()) {
            return Err(Error::Config("grid bounds must be finite".into()));
        }
        if resolution <= 0.0 {
            return Err(Error::Config(alloc::format!(
                "grid resolution must be positive, got {resolution}"
            )));
        }
        if hi < lo {
            return Err(Error::Config(alloc::format!(
                "empty grid range [{lo}, {hi}]"
            )));
        }
        let steps = (hi - lo) / resolution;
        let rounded = libm::round(steps);
        if (steps - rounded).abs() > GRID_TOLERANCE * rounded.max(1.0) {
            return Err(Error::Config(alloc::format!(
                "resolution {resolution} does not divide range [{lo}, {hi}]"
            )));
        }
        Ok(GridAxis {
            lo,
            hi,
            resolution,
            cells: rounded as usize + 1,
        })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.cells
    }

    pub fn is_empty(&self) -> bool {
        self.cells == 0
    }

    /// Value of cell `index`. Endpoints are reproduced exactly.
    pub fn value(&self, index: usize) -> f64 {
        if index + 1 >= self.cells {
            return self.hi;
        }
        self.lo + (self.hi - self.lo) * index as f64 / (self.cells - 1) as f64
    }

    /// Cell index of `value`, if it lies on the grid.
    pub fn index_of(&self, value: f64) -> Option<usize> {
        let pos = (value - self.lo) / self.resolution;
        let rounded = libm::round(pos);
        if rounded < 0.0 || rounded as usize >= self.cells {
            return None;
        }
        ((pos - rounded).abs() <= 1e-6).then_some(rounded as usize)
    }

    /// Width of the support; 1 for a single-cell axis.
    fn span(&self) -> f64 {
        if self.hi > self.lo {
            self.hi - self.lo
        } else {
            1.0
        }
    }

    fn shift(&self, index: usize, steps: i64) -> usize {
        let max = self.cells as i64 - 1;
        (index as i64 + steps).clamp(0, max) as usize
    }
}

/// The `v_des x sigma_idm` parameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleGrid {
    pub v_des: GridAxis,
    pub sigma: GridAxis,
}

impl ParticleGrid {
    pub fn cells(&self) -> usize {
        self.v_des.len() * self.sigma.len()
    }

    pub fn particle(&self, point: GridPoint) -> Particle {
        Particle {
            v_des: self.v_des.value(point.v_des as usize),
            sigma_idm: self.sigma.value(point.sigma as usize),
        }
    }

    /// Grid point of `particle`, if it lies on the grid.
    pub fn locate(&self, particle: Particle) -> Option<GridPoint> {
        Some(GridPoint {
            v_des: self.v_des.index_of(particle.v_des)? as u32,
            sigma: self.sigma.index_of(particle.sigma_idm)? as u32,
        })
    }
}

/// One hypothesis `(v_des, sigma_idm)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub v_des: f64,
    pub sigma_idm: f64,
}

/// Cell indices of a particle on a [`ParticleGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPoint {
    pub v_des: u32,
    pub sigma: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalMode {
    /// Every slot draws a particle uniformly at random, with replacement.
    #[default]
    Literal,
    /// Every particle is visited exactly once.
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub particle_count: usize,
    pub v_des_range: [f64; 2],
    pub v_des_resolution: f64,
    pub sigma_range: [f64; 2],
    pub sigma_resolution: f64,
    /// Share of the population that gets dithered after resampling.
    pub dither_fraction: f64,
    pub dither_v_des: Vec<f64>,
    pub dither_sigma: Vec<f64>,
    pub proposal: ProposalMode,
    /// Source of `d_min`, `tau`, `a_max` and `b_pref`; its `v_des` is unused.
    pub idm: IdmParams,
    pub kinematics: Kinematics,
    pub variance: PositionVariance,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            particle_count: 500,
            v_des_range: [10.0, 40.0],
            v_des_resolution: 0.5,
            sigma_range: [0.1, 2.0],
            sigma_resolution: 0.1,
            dither_fraction: 0.2,
            dither_v_des: vec![-0.5, 0.0, 0.5],
            dither_sigma: vec![-0.1, 0.0, 0.1],
            proposal: ProposalMode::Literal,
            idm: Preset::Default.params(),
            kinematics: Kinematics::Full,
            variance: PositionVariance::AccelerationPropagated,
        }
    }
}

fn offsets_as_steps(offsets: &[f64], axis: &GridAxis, name: &str) -> Result<Vec<i64>> {
    if offsets.is_empty() {
        return Err(Error::Config(alloc::format!("{name} dither support is empty")));
    }
    offsets
        .iter()
        .map(|&offset| {
            let steps = offset / axis.resolution();
            let rounded = libm::round(steps);
            if !steps.is_finite() || (steps - rounded).abs() > 1e-6 {
                return Err(Error::Config(alloc::format!(
                    "{name} dither offset {offset} is not a multiple of the grid resolution {}",
                    axis.resolution()
                )));
            }
            Ok(rounded as i64)
        })
        .collect()
}

/// Validated filter configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleFilter {
    config: FilterConfig,
    grid: ParticleGrid,
    dither_v_des: Vec<i64>,
    dither_sigma: Vec<i64>,
}

impl ParticleFilter {
    pub fn new(config: FilterConfig) -> Result<Self> {
        if config.particle_count == 0 {
            return Err(Error::Config("particle_count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&config.dither_fraction) {
            return Err(Error::Config(alloc::format!(
                "dither_fraction {} outside [0, 1]",
                config.dither_fraction
            )));
        }
        let [v_lo, v_hi] = config.v_des_range;
        let [s_lo, s_hi] = config.sigma_range;
        if v_lo <= 0.0 {
            return Err(Error::Config(alloc::format!(
                "v_des support must be positive, got lower bound {v_lo}"
            )));
        }
        if s_lo < MIN_SIGMA_IDM - GRID_TOLERANCE {
            return Err(Error::Config(alloc::format!(
                "sigma support must start at or above {MIN_SIGMA_IDM}, got {s_lo}"
            )));
        }
        let grid = ParticleGrid {
            v_des: GridAxis::new(v_lo, v_hi, config.v_des_resolution)?,
            sigma: GridAxis::new(s_lo, s_hi, config.sigma_resolution)?,
        };
        let dither_v_des = offsets_as_steps(&config.dither_v_des, &grid.v_des, "v_des")?;
        let dither_sigma = offsets_as_steps(&config.dither_sigma, &grid.sigma, "sigma")?;
        Ok(ParticleFilter {
            config,
            grid,
            dither_v_des,
            dither_sigma,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn grid(&self) -> &ParticleGrid {
        &self.grid
    }

    /// Number of particles dithered per step, `ceil(fraction * I)`.
    pub fn dither_count(&self) -> usize {
        let raw = self.config.dither_fraction * self.config.particle_count as f64;
        (libm::ceil(raw - 1e-9) as usize).min(self.config.particle_count)
    }

    /// Uniform draw with replacement from the grid, equal weights.
    pub fn init<R: Rng + ?Sized>(&self, seed: u64, rng: &mut R) -> ParticleSet {
        let n = self.config.particle_count;
        let points = (0..n)
            .map(|_| GridPoint {
                v_des: rng.random_range(0..self.grid.v_des.len()) as u32,
                sigma: rng.random_range(0..self.grid.sigma.len()) as u32,
            })
            .collect();
        ParticleSet::uniform(self.grid, points, seed)
    }

    /// One propose / weight / resample / dither cycle.
    pub fn step<R: Rng + ?Sized>(
        &self,
        set: &ParticleSet,
        obs: &FilterObservation,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        obs.validate()?;
        let n = self.config.particle_count;
        if set.is_empty() {
            return Err(Error::Input("empty particle set".into()));
        }
        let mut proposed = Vec::with_capacity(n);
        let mut log_weights = Vec::with_capacity(n);
        for slot in 0..n {
            let source = match self.config.proposal {
                ProposalMode::Literal => rng.random_range(0..set.len()),
                ProposalMode::Sweep => slot % set.len(),
            };
            let point = set.points[source];
            let particle = self.grid.particle(point);
            let params = self.config.idm.with_v_des(particle.v_des)?;
            let accel = idm_acceleration(&obs.ego, &params)?;
            let mean =
                self.config
                    .kinematics
                    .next_position(obs.position, obs.velocity, accel, obs.dt)?;
            let variance = self.config.variance.variance(particle.sigma_idm, obs.dt);
            let z: f64 = rng.sample(StandardNormal);
            let sampled = mean + libm::sqrt(variance) * z;
            proposed.push(point);
            log_weights.push(log_gaussian_density(obs.next_position, sampled, variance));
        }

        let weights = normalize_log_weights(&log_weights, obs.next_position)?;
        let sources = systematic_indices(&weights, n, rng)?;
        let survivors: Vec<GridPoint> = sources.iter().map(|&i| proposed[i]).collect();
        let ranking: Vec<f64> = sources.iter().map(|&i| weights[i]).collect();
        let resampled = ParticleSet::uniform(self.grid, survivors, set.seed);
        let (set, dithered) = dither(&resampled, self, &ranking, rng);
        Ok(StepOutcome {
            set,
            weights,
            sources,
            dithered,
        })
    }
}

/// Shift by the maximum log weight, exponentiate and normalize to sum 1.
fn normalize_log_weights(log_weights: &[f64], observation: f64) -> Result<Vec<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = log_weights.iter().copied().fold(f64::INFINITY, f64::min);
    let degenerate = || Error::Degenerate {
        observation,
        min_log_weight: min,
        max_log_weight: max,
    };
    if !max.is_finite() || log_weights.iter().any(|w| w.is_nan()) {
        return Err(degenerate());
    }
    let mut weights: Vec<f64> = log_weights.iter().map(|w| libm::exp(w - max)).collect();
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(degenerate());
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// The weighted population for one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    grid: ParticleGrid,
    points: Vec<GridPoint>,
    weights: Vec<f64>,
    seed: u64,
}

impl ParticleSet {
    pub fn uniform(grid: ParticleGrid, points: Vec<GridPoint>, seed: u64) -> Self {
        let w = 1.0 / points.len().max(1) as f64;
        ParticleSet {
            grid,
            weights: vec![w; points.len()],
            points,
            seed,
        }
    }

    /// Build from explicit particle values; every value must lie on `grid`.
    pub fn from_particles(grid: ParticleGrid, particles: &[Particle], seed: u64) -> Result<Self> {
        let points = particles
            .iter()
            .map(|&p| {
                grid.locate(p).ok_or_else(|| {
                    Error::Config(alloc::format!(
                        "particle ({}, {}) is not on the grid",
                        p.v_des,
                        p.sigma_idm
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParticleSet::uniform(grid, points, seed))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn grid(&self) -> &ParticleGrid {
        &self.grid
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn particle(&self, i: usize) -> Particle {
        self.grid.particle(self.points[i])
    }

    pub fn particles(&self) -> impl Iterator<Item = Particle> + '_ {
        self.points.iter().map(|&p| self.grid.particle(p))
    }
}

/// One transition of the observed vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterObservation {
    pub ego: EgoObservation,
    pub position: f64,
    pub velocity: f64,
    pub next_position: f64,
    pub dt: f64,
}

impl FilterObservation {
    fn validate(&self) -> Result<()> {
        if !self.next_position.is_finite() {
            return Err(Error::Domain {
                quantity: "observed next position",
                value: self.next_position,
            });
        }
        if !self.position.is_finite() {
            return Err(Error::Domain {
                quantity: "observed position",
                value: self.position,
            });
        }
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::Domain {
                quantity: "dt",
                value: self.dt,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Resampled and dithered population, equal weights.
    pub set: ParticleSet,
    /// Normalized slot weights before resampling.
    pub weights: Vec<f64>,
    /// Slot each survivor was copied from.
    pub sources: Vec<usize>,
    /// Survivors that received a dither offset.
    pub dithered: Vec<usize>,
}

/// Systematic (low-variance) resampling. Returns `count` indices into
/// `weights`; index `i` appears `count * w_i / sum(w)` times in expectation.
pub fn systematic_indices<R: Rng + ?Sized>(
    weights: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Input(
            "resampling weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let last_positive = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    let stride = total / count as f64;
    let offset = rng.random::<f64>() * stride;
    let mut out = Vec::with_capacity(count);
    let mut i = 0;
    let mut cumulative = weights[0];
    for j in 0..count {
        let target = offset + j as f64 * stride;
        while cumulative <= target && i < last_positive {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
    Ok(out)
}

/// Systematic resampling of arbitrary items.
pub fn resample<T: Clone, R: Rng + ?Sized>(
    items: &[T],
    weights: &[f64],
    rng: &mut R,
) -> Result<Vec<T>> {
    if items.len() != weights.len() {
        return Err(Error::Input(alloc::format!(
            "{} items but {} weights",
            items.len(),
            weights.len()
        )));
    }
    Ok(systematic_indices(weights, items.len(), rng)?
        .into_iter()
        .map(|i| items[i].clone())
        .collect())
}

/// Perturb the `ceil(fraction * I)` best-ranked particles by offsets drawn
/// uniformly from the dither supports, clamped to the grid.
///
/// `ranking` holds, per particle, the weight of the slot it was resampled
/// from; ties go to the lower index. Returns the new set and the indices
/// that received an offset (an offset may be zero).
pub fn dither<R: Rng + ?Sized>(
    set: &ParticleSet,
    filter: &ParticleFilter,
    ranking: &[f64],
    rng: &mut R,
) -> (ParticleSet, Vec<usize>) {
    let k = filter.dither_count().min(set.len());
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| {
        let wa = ranking.get(a).copied().unwrap_or(0.0);
        let wb = ranking.get(b).copied().unwrap_or(0.0);
        wb.total_cmp(&wa).then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = order.into_iter().take(k).collect();
    chosen.sort_unstable();

    let grid = set.grid;
    let mut points = set.points.clone();
    for &i in &chosen {
        let dv = filter.dither_v_des[rng.random_range(0..filter.dither_v_des.len())];
        let ds = filter.dither_sigma[rng.random_range(0..filter.dither_sigma.len())];
        let p = points[i];
        points[i] = GridPoint {
            v_des: grid.v_des.shift(p.v_des as usize, dv) as u32,
            sigma: grid.sigma.shift(p.sigma as usize, ds) as u32,
        };
    }
    (
        ParticleSet {
            grid,
            points,
            weights: set.weights.clone(),
            seed: set.seed,
        },
        chosen,
    )
}

/// Fresh population for `config`, reproducible from `seed`.
pub fn init_particles(config: &FilterConfig, seed: u64) -> Result<ParticleSet> {
    let filter = ParticleFilter::new(config.clone())?;
    let mut rng = StreamRng::seed_from_u64(seed);
    Ok(filter.init(seed, &mut rng))
}

/// Unweighted mean of the population; generally off-grid.
pub fn mean_particle(set: &ParticleSet) -> Particle {
    let n = set.len().max(1) as f64;
    let (v, s) = set
        .particles()
        .fold((0.0, 0.0), |(v, s), p| (v + p.v_des, s + p.sigma_idm));
    Particle {
        v_des: v / n,
        sigma_idm: s / n,
    }
}

/// RMS distance of a population from `center`, with both axes scaled to
/// their support width.
pub fn normalized_rms_distance(set: &ParticleSet, center: Particle) -> f64 {
    let grid = set.grid;
    let (sv, ss) = (grid.v_des.span(), grid.sigma.span());
    let n = set.len().max(1) as f64;
    let sum: f64 = set
        .particles()
        .map(|p| {
            let dv = (p.v_des - center.v_des) / sv;
            let ds = (p.sigma_idm - center.sigma_idm) / ss;
            dv * dv + ds * ds
        })
        .sum();
    libm::sqrt(sum / n)
}

/// Spread of the population about the final mean, one entry for the
/// initial set and one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConvergenceTrace(pub Vec<f64>);

impl ConvergenceTrace {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn first(&self) -> Option<f64> {
        self.0.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.0.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub set: ParticleSet,
    pub mean: Particle,
    pub trace: ConvergenceTrace,
}

/// Filter a whole observation sequence starting from a fresh population.
pub fn run_filter(
    observations: &[FilterObservation],
    config: &FilterConfig,
    seed: u64,
) -> Result<FilterRun> {
    let filter = ParticleFilter::new(config.clone())?;
    let mut rng = StreamRng::seed_from_u64(seed);
    let initial = filter.init(seed, &mut rng);
    run_from(&filter, initial, observations, &mut rng)
}

/// Filter starting from an explicit population.
pub fn run_from<R: Rng + ?Sized>(
    filter: &ParticleFilter,
    initial: ParticleSet,
    observations: &[FilterObservation],
    rng: &mut R,
) -> Result<FilterRun> {
    if observations.is_empty() {
        return Err(Error::Input(
            "at least one observed transition (two frames) is required".into(),
        ));
    }
    let mut history = Vec::with_capacity(observations.len() + 1);
    history.push(initial);
    for obs in observations {
        let outcome = filter.step(history.last().expect("history is never empty"), obs, rng)?;
        history.push(outcome.set);
    }
    let set = history.pop().expect("history is never empty");
    let mean = mean_particle(&set);
    let mut trace: Vec<f64> = history
        .iter()
        .map(|s| normalized_rms_distance(s, mean))
        .collect();
    trace.push(normalized_rms_distance(&set, mean));
    Ok(FilterRun {
        set,
        mean,
        trace: ConvergenceTrace(trace),
    })
}
