//! Point-mass fixed-wing model standing in for the airframe plus its
//! rate/thrust inner loops.
//!
//! The body x-axis is kept aligned with the velocity vector (zero sideslip by
//! construction, angle of attack only reconstructed for envelope checks). Body
//! rates follow their commands through first-order lags, yaw rate comes from
//! the coordinated-turn closure, and lift is whatever the pitch rate demands,
//! capped at `max_load_factor * m * g`.

use std::f64::consts::PI;

use nalgebra::{SVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{rot_inertial_to_body, wrap_angle, EulerAngles, GRAVITY};

/// Attitude limit beyond which the simulation aborts.
pub const ATTITUDE_LIMIT: f64 = 45.0 * PI / 180.0;
/// Angle-of-attack envelope (flagged, not fatal).
pub const ALPHA_LIMIT: f64 = 15.0 * PI / 180.0;
/// Largest accepted integration step.
pub const MAX_DT: f64 = 0.05;
/// Default integration step.
pub const DEFAULT_DT: f64 = 0.005;

/// Targets used to derive the default airframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningTargets {
    pub mass: f64,
    pub ref_area: f64,
    pub air_density: f64,
    /// Cruise airspeed at which `trim_thrust` should hold level flight, m/s.
    pub trim_speed: f64,
    /// Normalized thrust needed for level flight at `trim_speed`.
    pub trim_thrust: f64,
    /// Desired `-rho S C_D / (2 m)`, 1/m.
    pub drag_slope: f64,
}

impl Default for TuningTargets {
    fn default() -> Self {
        Self {
            // empty weight + battery
            mass: 11.3,
            ref_area: 0.75,
            air_density: 1.225,
            trim_speed: 20.0,
            trim_thrust: 0.4,
            drag_slope: -0.0032,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// m^2
    pub ref_area: f64,
    /// kg/m^3
    pub air_density: f64,
    pub drag_coeff: f64,
    /// Thrust force at `T_c = 1`, N.
    pub max_thrust: f64,
    /// Body-rate tracking lag, s.
    pub rate_time_constant: f64,
    /// Propulsion lag, s.
    pub thrust_time_constant: f64,
    /// m/s
    pub stall_speed: f64,
    /// Lift-curve slope used to reconstruct angle of attack, 1/rad.
    pub lift_slope: f64,
    /// Lift cap in g.
    pub max_load_factor: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self::tuned(&TuningTargets::default())
    }
}

impl VehicleParams {
    /// Derives drag coefficient and maximum thrust from cruise targets:
    /// `C_D = -2 m k / (rho S)` and `T_max = D(V_trim) / T_trim`.
    pub fn tuned(t: &TuningTargets) -> Self {
        let drag_coeff = -2.0 * t.mass * t.drag_slope / (t.air_density * t.ref_area);
        let trim_drag = -t.drag_slope * t.mass * t.trim_speed * t.trim_speed;
        Self {
            mass: t.mass,
            ref_area: t.ref_area,
            air_density: t.air_density,
            drag_coeff,
            max_thrust: trim_drag / t.trim_thrust,
            rate_time_constant: 0.1,
            thrust_time_constant: 0.1,
            stall_speed: 12.0,
            lift_slope: 5.0,
            max_load_factor: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("ref_area", self.ref_area),
            ("air_density", self.air_density),
            ("drag_coeff", self.drag_coeff),
            ("max_thrust", self.max_thrust),
            ("rate_time_constant", self.rate_time_constant),
            ("thrust_time_constant", self.thrust_time_constant),
            ("stall_speed", self.stall_speed),
            ("lift_slope", self.lift_slope),
            ("max_load_factor", self.max_load_factor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.drag_coeff >= 1.0 {
            return Err(Error::InvalidInput("drag_coeff must lie in (0, 1)".into()));
        }
        for (name, tau) in [
            ("rate_time_constant", self.rate_time_constant),
            ("thrust_time_constant", self.thrust_time_constant),
        ] {
            if !(0.01..=1.0).contains(&tau) || tau == 0.01 || tau == 1.0 {
                return Err(Error::InvalidInput(format!(
                    "{name} must lie in (0.01, 1.0)"
                )));
            }
        }
        if self.max_load_factor <= 1.0 {
            return Err(Error::InvalidInput("max_load_factor must exceed 1".into()));
        }
        Ok(())
    }

    pub fn weight(&self) -> f64 {
        self.mass * GRAVITY
    }

    pub fn dynamic_pressure(&self, airspeed: f64) -> f64 {
        0.5 * self.air_density * airspeed * airspeed
    }

    /// `D = rho S C_D V_a^2 / 2`.
    pub fn drag(&self, airspeed: f64) -> f64 {
        self.dynamic_pressure(airspeed) * self.ref_area * self.drag_coeff
    }

    /// Ground-truth `k^V = -rho S C_D / (2 m)`.
    pub fn drag_slope(&self) -> f64 {
        -self.air_density * self.ref_area * self.drag_coeff / (2.0 * self.mass)
    }

    /// Ground-truth `k^T = T_max / m`.
    pub fn thrust_slope(&self) -> f64 {
        self.max_thrust / self.mass
    }

    /// Steady-state energy acceleration `(T - D) / m` for a held thrust command.
    pub fn energy_accel(&self, thrust_cmd: f64, airspeed: f64) -> f64 {
        (thrust_cmd * self.max_thrust - self.drag(airspeed)) / self.mass
    }

    /// Thrust command for steady flight at `speed` along flight-path angle `gamma`.
    pub fn trim_thrust_command(&self, speed: f64, gamma: f64) -> f64 {
        (self.drag(speed) + self.weight() * gamma.sin()) / self.max_thrust
    }

    /// Reconstructed angle of attack for a given lift force.
    pub fn angle_of_attack(&self, lift: f64, airspeed: f64) -> f64 {
        lift / (self.dynamic_pressure(airspeed) * self.ref_area * self.lift_slope)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyRates {
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// NED position, m.
    pub position: Vector3<f64>,
    /// NED ground velocity, m/s.
    pub velocity: Vector3<f64>,
    pub attitude: EulerAngles,
    pub rates: BodyRates,
    /// m/s; equal to the ground speed with no wind.
    pub airspeed: f64,
    /// Current thrust force, N.
    pub thrust: f64,
}

/// Unit vector of the body x-axis in NED for given pitch and yaw.
pub fn nose_direction(pitch: f64, yaw: f64) -> Vector3<f64> {
    let (st, ct) = pitch.sin_cos();
    let (sp, cp) = yaw.sin_cos();
    Vector3::new(ct * cp, ct * sp, -st)
}

impl VehicleState {
    /// Straight flight along the body x-axis at `speed`, with thrust set for a
    /// steady climb or descent at the pitch angle.
    pub fn in_flight(
        params: &VehicleParams,
        position: Vector3<f64>,
        speed: f64,
        attitude: EulerAngles,
    ) -> Result<Self> {
        attitude.validate()?;
        if !(speed.is_finite() && speed > 0.0) {
            return Err(Error::InvalidInput(format!(
                "speed must be positive, got {speed}"
            )));
        }
        let thrust_cmd = params
            .trim_thrust_command(speed, attitude.pitch)
            .clamp(0.0, 1.0);
        Ok(Self {
            position,
            velocity: nose_direction(attitude.pitch, attitude.yaw) * speed,
            attitude,
            rates: BodyRates {
                p: 0.0,
                q: 0.0,
                r: coordinated_yaw_rate(attitude.roll, attitude.pitch, speed),
            },
            airspeed: speed,
            thrust: thrust_cmd * params.max_thrust,
        })
    }

    /// Trimmed level flight (lift = weight, thrust = drag).
    pub fn trimmed_level(
        params: &VehicleParams,
        speed: f64,
        heading: f64,
        altitude: f64,
    ) -> Result<Self> {
        let attitude = EulerAngles::new(0.0, 0.0, wrap_angle(heading))?;
        Self::in_flight(params, Vector3::new(0.0, 0.0, -altitude), speed, attitude)
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    pub fn altitude(&self) -> f64 {
        -self.position.z
    }

    /// Down-positive vertical velocity `V_z^i`.
    pub fn vertical_velocity(&self) -> f64 {
        self.velocity.z
    }

    /// Specific mechanical energy `g h + V^2 / 2`, J/kg.
    pub fn specific_energy(&self) -> f64 {
        GRAVITY * self.altitude() + 0.5 * self.velocity.norm_squared()
    }
}

/// Autopilot-facing command: body-rate setpoints and normalized thrust.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RateThrustCommand {
    /// rad/s
    pub roll_rate: f64,
    /// rad/s
    pub pitch_rate: f64,
    /// rad/s; accepted but ignored by the simulator (coordinated closure).
    pub yaw_rate: f64,
    pub thrust: f64,
}

impl RateThrustCommand {
    pub fn is_finite(&self) -> bool {
        self.roll_rate.is_finite()
            && self.pitch_rate.is_finite()
            && self.yaw_rate.is_finite()
            && self.thrust.is_finite()
    }
}

/// Coordinated-turn yaw rate giving zero side force: `r = g sin(phi) cos(theta) / V`.
pub fn coordinated_yaw_rate(roll: f64, pitch: f64, speed: f64) -> f64 {
    GRAVITY * roll.sin() * pitch.cos() / speed
}

/// Pitch-rate interval the lift cap can support at the given attitude and speed.
pub fn pitch_rate_limits(params: &VehicleParams, roll: f64, pitch: f64, speed: f64) -> (f64, f64) {
    let g_normal = GRAVITY * roll.cos() * pitch.cos();
    let n = params.max_load_factor * GRAVITY;
    ((-n - g_normal) / speed, (n - g_normal) / speed)
}

/// Lift force realizing the current pitch rate.
pub fn lift(params: &VehicleParams, state: &VehicleState) -> f64 {
    let v = state.speed();
    let att = state.attitude;
    params.mass * (v * state.rates.q + GRAVITY * att.roll.cos() * att.pitch.cos())
}

/// Body-frame specific force (what an ideal accelerometer reads).
pub fn specific_force(params: &VehicleParams, state: &VehicleState) -> Vector3<f64> {
    Vector3::new(
        (state.thrust - params.drag(state.airspeed)) / params.mass,
        0.0,
        -lift(params, state) / params.mass,
    )
}

/// Inertial acceleration of the vehicle.
pub fn acceleration(params: &VehicleParams, state: &VehicleState) -> Vector3<f64> {
    let r_ib = rot_inertial_to_body(&state.attitude);
    r_ib.transpose().apply(&specific_force(params, state)) + Vector3::new(0.0, 0.0, GRAVITY)
}

/// Non-fatal envelope conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EnvelopeFlags {
    pub alpha_exceeded: bool,
    pub lift_capped: bool,
}

pub fn envelope_flags(
    params: &VehicleParams,
    state: &VehicleState,
    cmd: &RateThrustCommand,
) -> EnvelopeFlags {
    let alpha = params.angle_of_attack(lift(params, state), state.airspeed);
    let (q_lo, q_hi) = pitch_rate_limits(
        params,
        state.attitude.roll,
        state.attitude.pitch,
        state.speed(),
    );
    EnvelopeFlags {
        alpha_exceeded: alpha.abs() > ALPHA_LIMIT,
        lift_capped: cmd.pitch_rate < q_lo || cmd.pitch_rate > q_hi,
    }
}

// [north, east, down, V, phi, theta, psi, p, q, T]
type Kin = SVector<f64, 10>;

fn pack(s: &VehicleState) -> Kin {
    let mut x = Kin::zeros();
    x[0] = s.position.x;
    x[1] = s.position.y;
    x[2] = s.position.z;
    x[3] = s.speed();
    x[4] = s.attitude.roll;
    x[5] = s.attitude.pitch;
    x[6] = s.attitude.yaw;
    x[7] = s.rates.p;
    x[8] = s.rates.q;
    x[9] = s.thrust;
    x
}

fn unpack(params: &VehicleParams, x: &Kin) -> VehicleState {
    let (speed, roll, pitch, yaw) = (x[3], x[4], x[5], wrap_angle(x[6]));
    let (q_lo, q_hi) = pitch_rate_limits(params, roll, pitch, speed);
    VehicleState {
        position: Vector3::new(x[0], x[1], x[2]),
        velocity: nose_direction(pitch, yaw) * speed,
        attitude: EulerAngles { roll, pitch, yaw },
        rates: BodyRates {
            p: x[7],
            q: x[8].clamp(q_lo, q_hi),
            r: coordinated_yaw_rate(roll, pitch, speed),
        },
        airspeed: speed,
        thrust: x[9],
    }
}

fn derivative(params: &VehicleParams, x: &Kin, cmd: &RateThrustCommand) -> Kin {
    let (speed, roll, pitch, yaw) = (x[3], x[4], x[5], x[6]);
    let (p, q_state, thrust) = (x[7], x[8], x[9]);
    let (q_lo, q_hi) = pitch_rate_limits(params, roll, pitch, speed);
    let q = q_state.clamp(q_lo, q_hi);
    let r = coordinated_yaw_rate(roll, pitch, speed);

    let (sphi, cphi) = roll.sin_cos();
    let (stheta, ctheta) = pitch.sin_cos();
    let vel = nose_direction(pitch, yaw) * speed;

    let mut dx = Kin::zeros();
    dx[0] = vel.x;
    dx[1] = vel.y;
    dx[2] = vel.z;
    dx[3] = (thrust - params.drag(speed)) / params.mass - GRAVITY * stheta;
    dx[4] = p + (q * sphi + r * cphi) * stheta / ctheta;
    dx[5] = q * cphi - r * sphi;
    dx[6] = (q * sphi + r * cphi) / ctheta;
    dx[7] = (cmd.roll_rate - p) / params.rate_time_constant;
    dx[8] = (cmd.pitch_rate - q) / params.rate_time_constant;
    dx[9] = (cmd.thrust.clamp(0.0, 1.0) * params.max_thrust - thrust) / params.thrust_time_constant;
    dx
}

/// Time derivative of `g h + V^2 / 2` implied by the state, J/kg/s.
pub fn specific_energy_rate(params: &VehicleParams, state: &VehicleState) -> f64 {
    let v = state.speed();
    (state.thrust - params.drag(state.airspeed)) * v / params.mass
}

/// Inertial speed derivative implied by the state.
pub fn speed_rate(params: &VehicleParams, state: &VehicleState) -> f64 {
    (state.thrust - params.drag(state.airspeed)) / params.mass
        - GRAVITY * state.attitude.pitch.sin()
}

fn check_envelope(params: &VehicleParams, state: &VehicleState) -> Result<()> {
    let att = state.attitude;
    let reason = if !(state.position.iter().all(|v| v.is_finite()) && state.airspeed.is_finite()) {
        Some("non-finite state".to_string())
    } else if att.roll.abs() > ATTITUDE_LIMIT {
        Some(format!(
            "roll {:.1} deg beyond limit",
            att.roll.to_degrees()
        ))
    } else if att.pitch.abs() > ATTITUDE_LIMIT {
        Some(format!(
            "pitch {:.1} deg beyond limit",
            att.pitch.to_degrees()
        ))
    } else if state.airspeed < params.stall_speed {
        Some(format!(
            "airspeed {:.2} m/s below stall speed {:.2} m/s",
            state.airspeed, params.stall_speed
        ))
    } else {
        None
    };
    match reason {
        Some(reason) => Err(Error::Envelope {
            reason,
            state: Box::new(*state),
        }),
        None => Ok(()),
    }
}

/// Advances the vehicle by one RK4 step of length `dt`.
pub fn step(
    params: &VehicleParams,
    state: &VehicleState,
    cmd: &RateThrustCommand,
    dt: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(Error::InvalidInput(format!(
            "dt must lie in (0, {MAX_DT}], got {dt}"
        )));
    }
    if !cmd.is_finite() {
        return Err(Error::InvalidInput("non-finite command".into()));
    }
    check_envelope(params, state)?;
    let speed = state.speed();
    let nose = nose_direction(state.attitude.pitch, state.attitude.yaw);
    if (state.velocity - nose * speed).norm() > 1e-6 * speed.max(1.0) {
        return Err(Error::InvalidInput(
            "velocity must be aligned with the body x-axis".into(),
        ));
    }

    let x = pack(state);
    let k1 = derivative(params, &x, cmd);
    let k2 = derivative(params, &(x + k1 * (dt / 2.0)), cmd);
    let k3 = derivative(params, &(x + k2 * (dt / 2.0)), cmd);
    let k4 = derivative(params, &(x + k3 * dt), cmd);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);

    let next = unpack(params, &next);
    check_envelope(params, &next)?;
    Ok(next)
}

/// Single-owner simulator instance.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub params: VehicleParams,
    state: VehicleState,
    time: f64,
}

impl Simulator {
    pub fn new(params: VehicleParams, initial: VehicleState) -> Result<Self> {
        params.validate()?;
        check_envelope(&params, &initial)?;
        Ok(Self {
            params,
            state: initial,
            time: 0.0,
        })
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step(&mut self, cmd: &RateThrustCommand, dt: f64) -> Result<&VehicleState> {
        self.state = step(&self.params, &self.state, cmd, dt)?;
        self.time += dt;
        Ok(&self.state)
    }
}

/// Per-sensor standard deviations of additive zero-mean Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSettings {
    /// rad
    pub attitude: f64,
    /// rad/s
    pub rates: f64,
    /// m/s, per NED component
    pub velocity: f64,
    /// m/s
    pub airspeed: f64,
    /// m/s^2, per body axis
    pub accel: f64,
    /// m, per NED component
    pub position: f64,
}

impl NoiseSettings {
    pub fn is_enabled(&self) -> bool {
        self.sigmas().iter().any(|s| *s > 0.0)
    }

    fn sigmas(&self) -> [f64; 6] {
        [
            self.attitude,
            self.rates,
            self.velocity,
            self.airspeed,
            self.accel,
            self.position,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas().iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidInput(
                "noise sigmas must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSnapshot {
    pub attitude: EulerAngles,
    pub rates: BodyRates,
    /// NED ground velocity, m/s.
    pub velocity: Vector3<f64>,
    pub airspeed: f64,
    /// Body-frame specific force, m/s^2.
    pub specific_force: Vector3<f64>,
    pub altitude: f64,
    /// NED position, m.
    pub position: Vector3<f64>,
}

impl SensorSnapshot {
    /// The snapshot viewed as a state estimate; thrust is not observed.
    pub fn to_state(&self) -> VehicleState {
        VehicleState {
            position: self.position,
            velocity: self.velocity,
            attitude: self.attitude,
            rates: self.rates,
            airspeed: self.airspeed,
            thrust: 0.0,
        }
    }

    /// Inertial kinematic acceleration reconstructed from the IMU.
    pub fn acceleration(&self) -> Vector3<f64> {
        rot_inertial_to_body(&self.attitude)
            .transpose()
            .apply(&self.specific_force)
            + Vector3::new(0.0, 0.0, GRAVITY)
    }
}

/// Noise-free measurement.
pub fn measure(params: &VehicleParams, state: &VehicleState) -> SensorSnapshot {
    SensorSnapshot {
        attitude: state.attitude,
        rates: state.rates,
        velocity: state.velocity,
        airspeed: state.airspeed,
        specific_force: specific_force(params, state),
        altitude: state.altitude(),
        position: state.position,
    }
}

/// Sensor suite with one independent random stream per sensor.
#[derive(Debug, Clone)]
pub struct SensorModel {
    noise: NoiseSettings,
    streams: [ChaCha8Rng; 6],
}

impl SensorModel {
    pub fn new(noise: NoiseSettings, seed: u64) -> Self {
        let streams = std::array::from_fn(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            rng
        });
        Self { noise, streams }
    }

    pub fn noiseless() -> Self {
        Self::new(NoiseSettings::default(), 0)
    }

    pub fn noise(&self) -> &NoiseSettings {
        &self.noise
    }

    pub fn measure(&mut self, params: &VehicleParams, state: &VehicleState) -> SensorSnapshot {
        let mut snap = measure(params, state);
        let n = self.noise;
        let [att, rates, vel, airspeed, accel, pos] = &mut self.streams;

        if n.attitude > 0.0 {
            snap.attitude.roll += n.attitude * gauss(att);
            snap.attitude.pitch += n.attitude * gauss(att);
            snap.attitude.yaw = wrap_angle(snap.attitude.yaw + n.attitude * gauss(att));
        }
        if n.rates > 0.0 {
            snap.rates.p += n.rates * gauss(rates);
            snap.rates.q += n.rates * gauss(rates);
            snap.rates.r += n.rates * gauss(rates);
        }
        if n.velocity > 0.0 {
            snap.velocity += Vector3::from_fn(|_, _| n.velocity * gauss(vel));
        }
        if n.airspeed > 0.0 {
            snap.airspeed += n.airspeed * gauss(airspeed);
        }
        if n.accel > 0.0 {
            snap.specific_force += Vector3::from_fn(|_, _| n.accel * gauss(accel));
        }
        if n.position > 0.0 {
            snap.position += Vector3::from_fn(|_, _| n.position * gauss(pos));
            snap.altitude = -snap.position.z;
        }
        snap
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}
