//! Calibration sweeps over discrete thrust levels and the fits that turn them
//! into an [`EnergyModel`].
//!
//! At each level the aircraft holds wings level at a fixed pitch while
//! `a_TE` and `V_a^2` are sampled; a per-level line `a_TE = k V_a^2 + b` is
//! fitted, and the family of lines is collapsed into the inverse model
//! `a_TE = k^T T_c + b^T` at a query airspeed.

use std::path::Path;

use biquad::{Biquad, Coefficients, DirectForm2Transposed, ToHertz, Type, Q_BUTTERWORTH_F64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frames::GRAVITY;
use crate::outer_loop::{EnergyModel, LevelCoefficients, OuterLoopGains};
use crate::regression::{huber, ols, LineFit};
use crate::vehicle::{
    RateThrustCommand, SensorModel, SensorSnapshot, Simulator, VehicleParams, VehicleState,
};

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const MIN_LEVEL_SAMPLES: usize = 10;
/// Minimum `V_a^2` span a level needs for its slope to be meaningful, m^2/s^2.
pub const MIN_SPEED_SQ_SPREAD: f64 = 20.0;
pub const MIN_ESTIMATOR_SPEED: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelOrder {
    /// Lowest, highest, second lowest, second highest, ...
    #[default]
    Alternating,
    Increasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationPlan {
    pub levels: Vec<f64>,
    /// s
    pub dwell: f64,
    pub order: LevelOrder,
    /// Samples this long after each switch are discarded, s.
    pub transient_trim: f64,
    /// Pitch hold magnitude, rad. A level climbs when the airspeed at its
    /// start is at or above the initial airspeed and descends otherwise.
    /// Longer dwells need a smaller hold to stay above stall.
    pub pitch_bias: f64,
    /// Hz
    pub sample_rate: f64,
}

impl Default for CalibrationPlan {
    fn default() -> Self {
        Self {
            levels: (1..=8).map(|i| i as f64 / 10.0).collect(),
            dwell: 2.0,
            order: LevelOrder::Alternating,
            transient_trim: 0.5,
            pitch_bias: 20f64.to_radians(),
            sample_rate: 50.0,
        }
    }
}

impl CalibrationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::InvalidInput(
                "thrust levels must lie in [0, 1]".into(),
            ));
        }
        let mut sorted = self.levels.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() < 2 {
            return Err(Error::InvalidInput(
                "need at least two distinct thrust levels".into(),
            ));
        }
        if !(self.transient_trim >= 0.0 && self.dwell > self.transient_trim) {
            return Err(Error::InvalidInput(format!(
                "dwell {} s must exceed transient trim {} s",
                self.dwell, self.transient_trim
            )));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if !(self.pitch_bias.abs() < 30f64.to_radians()) {
            return Err(Error::InvalidInput(
                "pitch bias must be below 30 deg".into(),
            ));
        }
        Ok(())
    }

    /// Levels in flight order.
    pub fn schedule(&self) -> Vec<f64> {
        let mut sorted = self.levels.clone();
        sorted.sort_by(f64::total_cmp);
        match self.order {
            LevelOrder::Increasing => sorted,
            LevelOrder::Alternating => {
                let (mut lo, mut hi) = (0, sorted.len());
                let mut out = Vec::with_capacity(sorted.len());
                while lo < hi {
                    out.push(sorted[lo]);
                    lo += 1;
                    if lo < hi {
                        hi -= 1;
                        out.push(sorted[hi]);
                    }
                }
                out
            }
        }
    }

    /// Pitch hold for a level entered at `airspeed`.
    pub fn pitch_hold(&self, airspeed: f64, reference: f64) -> f64 {
        if airspeed >= reference {
            self.pitch_bias
        } else {
            -self.pitch_bias
        }
    }

    pub fn duration(&self) -> f64 {
        self.dwell * self.levels.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    /// s
    pub time: f64,
    pub level: f64,
    pub level_index: usize,
    /// m^2/s^2
    pub airspeed_sq: f64,
    /// m/s^2
    pub energy_accel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelFit {
    pub thrust: f64,
    /// 1/m
    pub slope: f64,
    /// m/s^2
    pub intercept: f64,
    pub samples: usize,
    /// m/s^2
    pub residual_rms: f64,
    /// Airspeed span of the samples, m/s.
    pub airspeed_min: f64,
    pub airspeed_max: f64,
    /// Set when the slope is not negative as drag would make it.
    pub unexpected_sign: bool,
}

impl LevelFit {
    pub fn coefficients(&self) -> LevelCoefficients {
        LevelCoefficients {
            thrust: self.thrust,
            slope: self.slope,
            intercept: self.intercept,
        }
    }
}

/// Wings-level attitude hold about `(0, theta_0)`.
pub fn stabilization_command(
    state: &VehicleState,
    pitch_hold: f64,
    gains: &OuterLoopGains,
) -> (f64, f64) {
    (
        -gains.roll * state.attitude.roll,
        -gains.pitch * (state.attitude.pitch - pitch_hold),
    )
}

/// `a_TE = V_dot - g V_z / V`.
pub fn compute_a_te(speed_rate: f64, vertical_velocity: f64, speed: f64) -> Result<f64> {
    if !(speed >= MIN_ESTIMATOR_SPEED) {
        return Err(Error::LowSpeed {
            speed,
            min: MIN_ESTIMATOR_SPEED,
        });
    }
    Ok(speed_rate - GRAVITY * vertical_velocity / speed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyAccelSource {
    /// Differencing of measured airspeed plus the climb term.
    #[default]
    SpeedDifference,
    /// Longitudinal specific force from the accelerometer.
    Accelerometer,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FitMethod {
    #[default]
    Ols,
    Huber {
        delta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub source: EnergyAccelSource,
    /// Low-pass cutoff, Hz.
    pub cutoff: f64,
    pub fit: FitMethod,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            source: EnergyAccelSource::SpeedDifference,
            cutoff: 2.0,
            fit: FitMethod::Ols,
        }
    }
}

/// Second-order Butterworth low-pass started at its first input.
#[derive(Debug, Clone)]
pub struct LowPass {
    filter: DirectForm2Transposed<f64>,
    offset: Option<f64>,
}

impl LowPass {
    pub fn new(cutoff: f64, sample_rate: f64) -> Result<Self> {
        let coeffs = Coefficients::<f64>::from_params(
            Type::LowPass,
            sample_rate.hz(),
            cutoff.hz(),
            Q_BUTTERWORTH_F64,
        )
        .map_err(|e| {
            Error::InvalidInput(format!("low-pass {cutoff} Hz at {sample_rate} Hz: {e:?}"))
        })?;
        Ok(Self {
            filter: DirectForm2Transposed::<f64>::new(coeffs),
            offset: None,
        })
    }

    pub fn run(&mut self, x: f64) -> f64 {
        let x0 = *self.offset.get_or_insert(x);
        x0 + self.filter.run(x - x0)
    }
}

/// Causal `a_TE` and `V_a^2` estimates with matched filtering.
#[derive(Debug, Clone)]
pub struct EnergyAccelEstimator {
    source: EnergyAccelSource,
    dt: f64,
    speed: LowPass,
    climb: LowPass,
    speed_sq: LowPass,
    accel: LowPass,
    prev: Option<(f64, f64, f64)>,
}

/// One estimator output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyAccelEstimate {
    pub energy_accel: f64,
    pub airspeed_sq: f64,
}

impl EnergyAccelEstimator {
    pub fn new(settings: &EstimatorSettings, sample_rate: f64) -> Result<Self> {
        let lp = || LowPass::new(settings.cutoff, sample_rate);
        Ok(Self {
            source: settings.source,
            dt: 1.0 / sample_rate,
            speed: lp()?,
            climb: lp()?,
            speed_sq: lp()?,
            accel: lp()?,
            prev: None,
        })
    }

    /// Feeds one measurement; `None` until a difference is available.
    pub fn update(&mut self, meas: &SensorSnapshot) -> Result<Option<EnergyAccelEstimate>> {
        let v = meas.airspeed;
        let climb = GRAVITY * meas.velocity.z / v.max(MIN_ESTIMATOR_SPEED);
        compute_a_te(0.0, meas.velocity.z, v)?;
        let vf = self.speed.run(v);
        let cf = self.climb.run(climb);
        let sqf = self.speed_sq.run(v * v);
        let af = self.accel.run(meas.specific_force.x);
        let prev = self.prev.replace((vf, cf, sqf));
        Ok(match self.source {
            EnergyAccelSource::Accelerometer => Some(EnergyAccelEstimate {
                energy_accel: af,
                airspeed_sq: sqf,
            }),
            EnergyAccelSource::SpeedDifference => prev.map(|(v0, c0, s0)| EnergyAccelEstimate {
                // evaluated at the midpoint of the difference
                energy_accel: (vf - v0) / self.dt - 0.5 * (cf + c0),
                airspeed_sq: 0.5 * (sqf + s0),
            }),
        })
    }
}

/// Line fit of one level's samples.
pub fn fit_level(samples: &[CalibrationSample], method: FitMethod) -> Result<LevelFit> {
    let Some(first) = samples.first() else {
        return Err(Error::Identification("no samples".into()));
    };
    if samples.iter().any(|s| s.level != first.level) {
        return Err(Error::Identification(
            "samples from more than one level".into(),
        ));
    }
    if samples.len() < MIN_LEVEL_SAMPLES {
        return Err(Error::Identification(format!(
            "level {}: {} samples, need {MIN_LEVEL_SAMPLES}",
            first.level,
            samples.len()
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .map(|s| (s.airspeed_sq, s.energy_accel))
        .unzip();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo >= MIN_SPEED_SQ_SPREAD) {
        return Err(Error::Identification(format!(
            "level {}: V_a^2 spread {:.2} m^2/s^2 below {MIN_SPEED_SQ_SPREAD}",
            first.level,
            hi - lo
        )));
    }
    let fit: LineFit = match method {
        FitMethod::Ols => ols(&xs, &ys)?,
        FitMethod::Huber { delta } => huber(&xs, &ys, delta)?,
    };
    Ok(LevelFit {
        thrust: first.level,
        slope: fit.slope,
        intercept: fit.intercept,
        samples: fit.samples,
        residual_rms: fit.residual_rms,
        airspeed_min: lo.max(0.0).sqrt(),
        airspeed_max: hi.max(0.0).sqrt(),
        unexpected_sign: !(fit.slope < 0.0),
    })
}

/// Inverse model at `airspeed` from per-level fits.
pub fn build_energy_model(fits: &[LevelFit], airspeed: f64) -> Result<EnergyModel> {
    if fits.len() < 2 {
        return Err(Error::Identification(format!(
            "inverse model needs at least two level fits, got {}",
            fits.len()
        )));
    }
    let lo = fits
        .iter()
        .map(|f| f.airspeed_min)
        .fold(f64::INFINITY, f64::min);
    let hi = fits
        .iter()
        .map(|f| f.airspeed_max)
        .fold(f64::NEG_INFINITY, f64::max);
    EnergyModel::from_levels(
        fits.iter().map(LevelFit::coefficients).collect(),
        airspeed,
        Some((lo, hi)),
    )
}

#[derive(Debug, Clone)]
pub struct CalibrationSetup {
    pub params: VehicleParams,
    pub initial: VehicleState,
    pub gains: OuterLoopGains,
    pub estimator: EstimatorSettings,
    /// Integration step, s.
    pub sim_dt: f64,
}

/// What happened at one control tick of a calibration run.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationTick<'a> {
    pub time: f64,
    pub level_index: usize,
    pub level: f64,
    pub pitch_hold: f64,
    pub state: &'a VehicleState,
    pub measurement: &'a SensorSnapshot,
    pub command: &'a RateThrustCommand,
    pub estimate: Option<EnergyAccelEstimate>,
    /// Whether the estimate was kept for fitting.
    pub kept: bool,
}

/// A level left out of the inverse model.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedLevel {
    pub thrust: f64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub fits: Vec<LevelFit>,
    pub skipped: Vec<SkippedLevel>,
    pub samples: Vec<CalibrationSample>,
    pub final_state: VehicleState,
}

fn tag_level(err: Error, level: f64) -> Error {
    match err {
        Error::Envelope { reason, state } => Error::Envelope {
            reason: format!("{reason} (calibration level T_c = {level})"),
            state,
        },
        other => other,
    }
}

/// Samples over the plan without fitting.
pub fn collect_samples(
    plan: &CalibrationPlan,
    setup: &CalibrationSetup,
    sensors: &mut SensorModel,
    mut observer: impl FnMut(&CalibrationTick<'_>),
) -> Result<(Vec<CalibrationSample>, VehicleState)> {
    plan.validate()?;
    setup.gains.validate()?;
    let control_dt = 1.0 / plan.sample_rate;
    let substeps = (control_dt / setup.sim_dt).round().max(1.0) as usize;
    let sim_dt = control_dt / substeps as f64;
    let mut sim = Simulator::new(setup.params, setup.initial)?;
    let mut estimator = EnergyAccelEstimator::new(&setup.estimator, plan.sample_rate)?;
    let per_level = (plan.dwell * plan.sample_rate).round() as usize;
    let mut samples = Vec::new();

    let reference = setup.initial.airspeed;
    let mut hold = 0.0;
    for (index, level) in plan.schedule().into_iter().enumerate() {
        for k in 0..per_level {
            let time = (index * per_level + k) as f64 * control_dt;
            let since_switch = k as f64 * control_dt;
            let meas = sensors.measure(&setup.params, sim.state());
            if k == 0 {
                hold = plan.pitch_hold(meas.airspeed, reference);
            }
            let estimate = estimator.update(&meas)?;
            let kept = estimate.is_some() && since_switch + 1e-9 >= plan.transient_trim;
            if let (true, Some(e)) = (kept, estimate) {
                samples.push(CalibrationSample {
                    time,
                    level,
                    level_index: index,
                    airspeed_sq: e.airspeed_sq,
                    energy_accel: e.energy_accel,
                });
            }
            let (p, q) = stabilization_command(&meas.to_state(), hold, &setup.gains);
            let cmd = RateThrustCommand {
                roll_rate: p,
                pitch_rate: q,
                yaw_rate: 0.0,
                thrust: level,
            };
            observer(&CalibrationTick {
                time,
                level_index: index,
                level,
                pitch_hold: hold,
                state: sim.state(),
                measurement: &meas,
                command: &cmd,
                estimate,
                kept,
            });
            for _ in 0..substeps {
                sim.step(&cmd, sim_dt).map_err(|e| tag_level(e, level))?;
            }
        }
    }
    Ok((samples, *sim.state()))
}

/// Groups samples by level (in increasing thrust) and fits each. Levels
/// without enough samples or airspeed spread are returned as skipped.
pub fn fit_levels(
    samples: &[CalibrationSample],
    method: FitMethod,
) -> Result<(Vec<LevelFit>, Vec<SkippedLevel>)> {
    let mut levels: Vec<f64> = samples.iter().map(|s| s.level).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let (mut fits, mut skipped) = (Vec::new(), Vec::new());
    for level in levels {
        let group: Vec<CalibrationSample> = samples
            .iter()
            .filter(|s| s.level == level)
            .copied()
            .collect();
        match fit_level(&group, method) {
            Ok(f) => fits.push(f),
            Err(Error::Identification(reason)) => skipped.push(SkippedLevel {
                thrust: level,
                reason,
            }),
            Err(e) => return Err(e),
        }
    }
    if fits.len() < 2 {
        return Err(Error::Identification(format!(
            "only {} level(s) had usable data; the inverse model needs two",
            fits.len()
        )));
    }
    Ok((fits, skipped))
}

/// Flies the plan under attitude hold and fits every level.
pub fn run_calibration(
    plan: &CalibrationPlan,
    setup: &CalibrationSetup,
    sensors: &mut SensorModel,
    observer: impl FnMut(&CalibrationTick<'_>),
) -> Result<CalibrationRun> {
    let (samples, final_state) = collect_samples(plan, setup, sensors, observer)?;
    let (fits, skipped) = fit_levels(&samples, setup.estimator.fit)?;
    Ok(CalibrationRun {
        fits,
        skipped,
        samples,
        final_state,
    })
}

/// Inverse fit stored in a model file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseFit {
    /// m/s^2
    pub slope: f64,
    /// m/s^2
    pub intercept: f64,
    /// m/s
    pub airspeed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationMetadata {
    pub plan: CalibrationPlan,
    pub estimator: EstimatorSettings,
    pub seed: u64,
    pub noise_enabled: bool,
}

/// On-disk model: inverse fit, per-level fits, calibration metadata and a
/// SHA-256 of the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub provenance: String,
    pub inverse: InverseFit,
    pub calibration: CalibrationMetadata,
    pub levels: Vec<LevelFit>,
}

pub fn provenance_hash(config_text: &[u8]) -> String {
    Sha256::digest(config_text)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl ModelFile {
    pub fn new(
        fits: &[LevelFit],
        airspeed: f64,
        calibration: CalibrationMetadata,
        config_text: &[u8],
    ) -> Result<Self> {
        let model = build_energy_model(fits, airspeed)?;
        Ok(Self {
            schema_version: MODEL_SCHEMA_VERSION,
            provenance: provenance_hash(config_text),
            inverse: InverseFit {
                slope: model.slope,
                intercept: model.intercept,
                airspeed,
            },
            calibration,
            levels: fits.to_vec(),
        })
    }

    pub fn energy_model(&self) -> Result<EnergyModel> {
        if self.levels.len() >= 2 {
            build_energy_model(&self.levels, self.inverse.airspeed)
        } else {
            EnergyModel::fixed(
                self.inverse.slope,
                self.inverse.intercept,
                self.inverse.airspeed,
            )
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::ModelFile(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: Option<u32>,
        }
        let version: Version = toml::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))?;
        match version.schema_version {
            Some(MODEL_SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(Error::ModelFile(format!(
                    "unsupported schema_version {v} (expected {MODEL_SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::ModelFile("missing schema_version".into())),
        }
        let file: Self = toml::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))?;
        file.energy_model()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)
            .map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}
