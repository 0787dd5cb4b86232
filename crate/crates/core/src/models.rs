//! Car-following models and single-step vehicle kinematics.
//!
//! Everything here is a pure function of its arguments plus, for the
//! stochastic pieces, an explicitly passed random stream.

use core::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{LaneId, VehicleId};

/// Acceleration used by the constant-acceleration baseline, m/s².
pub const DEFAULT_CONSTANT_ACCELERATION: f64 = 1.0;

/// Parameters of the Intelligent Driver Model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIdmParams", into = "RawIdmParams")]
pub struct IdmParams {
    v_des: f64,
    d_min: f64,
    tau: f64,
    a_max: f64,
    b_pref: f64,
}

#[derive(Serialize, Deserialize)]
struct RawIdmParams {
    v_des: f64,
    d_min: f64,
    tau: f64,
    a_max: f64,
    b_pref: f64,
}

impl TryFrom<RawIdmParams> for IdmParams {
    type Error = Error;

    fn try_from(raw: RawIdmParams) -> Result<Self> {
        IdmParams::new(raw.v_des, raw.d_min, raw.tau, raw.a_max, raw.b_pref)
    }
}

impl From<IdmParams> for RawIdmParams {
    fn from(p: IdmParams) -> Self {
        RawIdmParams {
            v_des: p.v_des,
            d_min: p.d_min,
            tau: p.tau,
            a_max: p.a_max,
            b_pref: p.b_pref,
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::invalid(name, value, "must be finite"));
    }
    if value <= 0.0 {
        return Err(Error::invalid(name, value, "must be strictly positive"));
    }
    Ok(value)
}

impl IdmParams {
    /// Desired speed (m/s), minimum gap (m), time headway (s), maximum
    /// acceleration (m/s²) and comfortable deceleration (m/s²).
    pub fn new(v_des: f64, d_min: f64, tau: f64, a_max: f64, b_pref: f64) -> Result<Self> {
        Ok(IdmParams {
            v_des: positive("v_des", v_des)?,
            d_min: positive("d_min", d_min)?,
            tau: positive("tau", tau)?,
            a_max: positive("a_max", a_max)?,
            b_pref: positive("b_pref", b_pref)?,
        })
    }

    pub fn v_des(&self) -> f64 {
        self.v_des
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn b_pref(&self) -> f64 {
        self.b_pref
    }

    /// Same parameters with a different desired speed.
    pub fn with_v_des(&self, v_des: f64) -> Result<Self> {
        Ok(IdmParams {
            v_des: positive("v_des", v_des)?,
            ..*self
        })
    }
}

/// Named parameter sets shipped with the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Motorway defaults: v_des 30, tau 1.0, d_min 2, a_max 3, b_pref 2.
    Default,
    /// Offline least-squares fit: v_des 17.837, tau 0.918, d_min 5.249,
    /// a_max 0.758, b_pref 3.811.
    NonlinearFit,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::Default, Preset::NonlinearFit];

    pub fn params(self) -> IdmParams {
        let (v_des, d_min, tau, a_max, b_pref) = match self {
            Preset::Default => (30.0, 2.0, 1.0, 3.0, 2.0),
            Preset::NonlinearFit => (17.837, 5.249, 0.918, 0.758, 3.811),
        };
        IdmParams {
            v_des,
            d_min,
            tau,
            a_max,
            b_pref,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Default => "default",
            Preset::NonlinearFit => "nonlinear_fit",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Preset::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl Default for IdmParams {
    fn default() -> Self {
        Preset::Default.params()
    }
}

/// IDM parameters plus the variance of the Gaussian acceleration noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticParams {
    pub idm: IdmParams,
    sigma_idm: f64,
}

impl StochasticParams {
    /// `sigma_idm` is a variance in (m/s²)²; zero gives the deterministic IDM.
    pub fn new(idm: IdmParams, sigma_idm: f64) -> Result<Self> {
        if !sigma_idm.is_finite() || sigma_idm < 0.0 {
            return Err(Error::invalid(
                "sigma_idm",
                sigma_idm,
                "must be finite and non-negative",
            ));
        }
        Ok(StochasticParams { idm, sigma_idm })
    }

    pub fn sigma_idm(&self) -> f64 {
        self.sigma_idm
    }
}

/// Kinematic state of one vehicle. `position` is the front bumper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub position: f64,
    pub velocity: f64,
    pub length: f64,
    pub lane: LaneId,
}

impl VehicleState {
    pub fn new(
        id: VehicleId,
        position: f64,
        velocity: f64,
        length: f64,
        lane: LaneId,
    ) -> Result<Self> {
        if !position.is_finite() {
            return Err(Error::domain("position", position));
        }
        if !velocity.is_finite() || velocity < 0.0 {
            return Err(Error::invalid(
                "velocity",
                velocity,
                "must be finite and non-negative",
            ));
        }
        positive("length", length)?;
        Ok(VehicleState {
            id,
            position,
            velocity,
            length,
            lane,
        })
    }

    /// Position of the rear bumper.
    pub fn rear(&self) -> f64 {
        self.position - self.length
    }
}

/// Relation of the ego vehicle to the vehicle directly ahead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderGap {
    /// Leader speed minus ego speed, m/s.
    pub relative_speed: f64,
    /// Leader rear bumper minus ego front bumper, m. Always positive.
    pub gap: f64,
}

/// What a driver model sees at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoObservation {
    speed: f64,
    leader: Option<LeaderGap>,
}

fn check_speed(speed: f64) -> Result<f64> {
    if !speed.is_finite() || speed < 0.0 {
        return Err(Error::invalid(
            "speed",
            speed,
            "must be finite and non-negative",
        ));
    }
    Ok(speed)
}

impl EgoObservation {
    /// Ego on a free road.
    pub fn free(speed: f64) -> Result<Self> {
        Ok(EgoObservation {
            speed: check_speed(speed)?,
            leader: None,
        })
    }

    /// Ego behind a leader. A non-positive gap is a collision and rejected.
    pub fn following(speed: f64, relative_speed: f64, gap: f64) -> Result<Self> {
        let speed = check_speed(speed)?;
        if !relative_speed.is_finite() {
            return Err(Error::domain("relative speed", relative_speed));
        }
        if !gap.is_finite() || gap <= 0.0 {
            return Err(Error::domain("distance headway", gap));
        }
        Ok(EgoObservation {
            speed,
            leader: Some(LeaderGap {
                relative_speed,
                gap,
            }),
        })
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn leader(&self) -> Option<LeaderGap> {
        self.leader
    }
}

fn pow4(x: f64) -> f64 {
    let sq = x * x;
    sq * sq
}

/// Desired gap `d_min + tau*v - v*r / (2*sqrt(a_max*b_pref))`, never below `d_min`.
///
/// `r` is leader speed minus ego speed, so a closing ego (`r < 0`) asks for
/// more room.
pub fn desired_gap(speed: f64, relative_speed: f64, p: &IdmParams) -> f64 {
    let braking = 2.0 * libm::sqrt(p.a_max * p.b_pref);
    let gap = p.d_min + p.tau * speed - speed * relative_speed / braking;
    gap.max(p.d_min)
}

/// IDM acceleration. Without a leader the interaction term is dropped.
pub fn idm_acceleration(ego: &EgoObservation, p: &IdmParams) -> Result<f64> {
    let free = 1.0 - pow4(ego.speed / p.v_des);
    let interaction = match ego.leader {
        Some(leader) => {
            let ratio = desired_gap(ego.speed, leader.relative_speed, p) / leader.gap;
            if !ratio.is_finite() {
                return Err(Error::domain("desired gap / distance headway", ratio));
            }
            ratio * ratio
        }
        None => 0.0,
    };
    let accel = p.a_max * (free - interaction);
    if !accel.is_finite() {
        return Err(Error::domain("idm acceleration", accel));
    }
    Ok(accel)
}

/// Draw from `N(a_idm, sigma_idm)`; `sigma_idm` is a variance.
pub fn sample_acceleration<R: Rng + ?Sized>(a_idm: f64, sigma_idm: f64, rng: &mut R) -> f64 {
    if sigma_idm == 0.0 {
        return a_idm;
    }
    let z: f64 = rng.sample(StandardNormal);
    a_idm + libm::sqrt(sigma_idm) * z
}

fn check_step(accel: f64, dt: f64) -> Result<()> {
    if !accel.is_finite() {
        return Err(Error::domain("acceleration", accel));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::domain("dt", dt));
    }
    Ok(())
}

/// Displacement over one step with velocity clamped at zero.
fn displacement(velocity: f64, accel: f64, dt: f64) -> f64 {
    (velocity * dt + 0.5 * accel * dt * dt).max(0.0)
}

/// Advance one vehicle by `dt` under constant acceleration. Vehicles never
/// reverse: velocity and displacement are clamped at zero.
pub fn propagate(s: &VehicleState, accel: f64, dt: f64) -> Result<VehicleState> {
    check_step(accel, dt)?;
    Ok(VehicleState {
        position: s.position + displacement(s.velocity, accel, dt),
        velocity: (s.velocity + accel * dt).max(0.0),
        ..*s
    })
}

/// Which position update the filter uses for its predictive mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kinematics {
    /// `x + max(0, v*dt + a*dt²/2)`, identical to [`propagate`].
    #[default]
    Full,
    /// `x + a*dt²/2`, the update without the velocity term.
    AccelerationOnly,
}

impl Kinematics {
    pub fn next_position(self, position: f64, velocity: f64, accel: f64, dt: f64) -> Result<f64> {
        check_step(accel, dt)?;
        Ok(match self {
            Kinematics::Full => position + displacement(velocity, accel, dt),
            Kinematics::AccelerationOnly => position + 0.5 * accel * dt * dt,
        })
    }
}

/// Variance of the next-position distribution used for weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionVariance {
    /// `sigma_idm * dt²`.
    DtSquared,
    /// `sigma_idm * dt⁴ / 4`: the acceleration variance carried through
    /// the `a*dt²/2` position term.
    #[default]
    AccelerationPropagated,
}

impl PositionVariance {
    pub fn variance(self, sigma_idm: f64, dt: f64) -> f64 {
        let dt2 = dt * dt;
        match self {
            PositionVariance::DtSquared => sigma_idm * dt2,
            PositionVariance::AccelerationPropagated => sigma_idm * dt2 * dt2 / 4.0,
        }
    }
}

/// Natural log of the Gaussian density `N(x | mean, variance)`.
pub fn log_gaussian_density(x: f64, mean: f64, variance: f64) -> f64 {
    let dev = x - mean;
    -0.5 * libm::log(2.0 * PI * variance) - dev * dev / (2.0 * variance)
}

/// Density of the observed next position under `N(mean, sigma_idm * dt²)`.
pub fn position_likelihood(x_true: f64, x_pred_mean: f64, sigma_idm: f64, dt: f64) -> Result<f64> {
    if !sigma_idm.is_finite() || sigma_idm <= 0.0 {
        return Err(Error::domain("sigma_idm", sigma_idm));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::domain("dt", dt));
    }
    let variance = PositionVariance::DtSquared.variance(sigma_idm, dt);
    let dev = x_true - x_pred_mean;
    Ok(libm::exp(-dev * dev / (2.0 * variance)) / libm::sqrt(2.0 * PI * variance))
}

/// Anything that turns an observation into an acceleration command.
pub trait DriverModel {
    fn act(&self, ego: &EgoObservation, rng: &mut dyn RngCore) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Idm(pub IdmParams);

impl DriverModel for Idm {
    fn act(&self, ego: &EgoObservation, _rng: &mut dyn RngCore) -> Result<f64> {
        idm_acceleration(ego, &self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticIdm(pub StochasticParams);

impl DriverModel for StochasticIdm {
    fn act(&self, ego: &EgoObservation, rng: &mut dyn RngCore) -> Result<f64> {
        let mean = idm_acceleration(ego, &self.0.idm)?;
        Ok(sample_acceleration(mean, self.0.sigma_idm, rng))
    }
}

/// Keeps the initial speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConstantVelocity;

impl DriverModel for ConstantVelocity {
    fn act(&self, _ego: &EgoObservation, _rng: &mut dyn RngCore) -> Result<f64> {
        Ok(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantAcceleration(pub f64);

impl Default for ConstantAcceleration {
    fn default() -> Self {
        ConstantAcceleration(DEFAULT_CONSTANT_ACCELERATION)
    }
}

impl DriverModel for ConstantAcceleration {
    fn act(&self, _ego: &EgoObservation, _rng: &mut dyn RngCore) -> Result<f64> {
        Ok(self.0)
    }
}

/// Serializable choice of driver model for one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Idm { params: IdmParams },
    StochasticIdm { params: StochasticParams },
    ConstantVelocity,
    ConstantAcceleration { accel: f64 },
}

impl ModelSpec {
    /// Drop the acceleration noise of a stochastic IDM.
    pub fn mean_only(self) -> ModelSpec {
        match self {
            ModelSpec::StochasticIdm { params } => ModelSpec::Idm { params: params.idm },
            other => other,
        }
    }
}

impl DriverModel for ModelSpec {
    fn act(&self, ego: &EgoObservation, rng: &mut dyn RngCore) -> Result<f64> {
        match *self {
            ModelSpec::Idm { params } => Idm(params).act(ego, rng),
            ModelSpec::StochasticIdm { params } => StochasticIdm(params).act(ego, rng),
            ModelSpec::ConstantVelocity => ConstantVelocity.act(ego, rng),
            ModelSpec::ConstantAcceleration { accel } => ConstantAcceleration(accel).act(ego, rng),
        }
    }
}
