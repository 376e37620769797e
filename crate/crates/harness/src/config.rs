//! Scenario configuration (TOML). Angles are in degrees here and converted to
//! radians on the way into the core types.

use std::path::{Path, PathBuf};

use fwaccel_core::frames::{wrap_angle, EulerAngles};
use fwaccel_core::guidance::{LosRateMode, PnParams, TargetSpec};
use fwaccel_core::identification::{CalibrationPlan, EstimatorSettings, LevelOrder};
use fwaccel_core::outer_loop::{
    IntegralGains, LiftSign, OuterLoopConfig, OuterLoopGains, PitchBoundSign, PriorityMode,
    DEFAULT_MIN_SPEED,
};
use fwaccel_core::vehicle::{NoiseSettings, VehicleParams, VehicleState, DEFAULT_DT};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config schema: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    /// Mandatory when any noise channel is enabled.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub outer_loop: OuterLoopSection,
    #[serde(default)]
    pub noise: NoiseSettings,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub output: OutputSection,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialState {
    /// NED, m
    pub position: [f64; 3],
    /// m/s
    pub speed: f64,
    pub roll_deg: f64,
    pub pitch_deg: f64,
    pub heading_deg: f64,
}

impl Default for InitialState {
    fn default() -> Self {
        Self {
            position: [0.0, 0.0, -100.0],
            speed: 20.0,
            roll_deg: 0.0,
            pitch_deg: 0.0,
            heading_deg: 0.0,
        }
    }
}

impl InitialState {
    pub fn to_state(&self, params: &VehicleParams) -> fwaccel_core::Result<VehicleState> {
        let attitude = EulerAngles::new(
            self.roll_deg.to_radians(),
            self.pitch_deg.to_radians(),
            wrap_angle(self.heading_deg.to_radians()),
        )?;
        VehicleState::in_flight(params, Vector3::from(self.position), self.speed, attitude)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterLoopSection {
    pub gains: OuterLoopGains,
    pub priority: PriorityMode,
    pub min_speed: f64,
    pub bank_limit_deg: f64,
    pub pitch_limit_deg: f64,
    pub lift_sign: LiftSign,
    pub pitch_bound_sign: PitchBoundSign,
    pub integral: Option<IntegralGains>,
    pub track_airspeed: bool,
}

impl Default for OuterLoopSection {
    fn default() -> Self {
        let d = OuterLoopConfig::default();
        Self {
            gains: d.gains,
            priority: d.mode,
            min_speed: DEFAULT_MIN_SPEED,
            bank_limit_deg: d.bank_limit.to_degrees(),
            pitch_limit_deg: d.pitch_limit.to_degrees(),
            lift_sign: d.lift_sign,
            pitch_bound_sign: d.pitch_bound_sign,
            integral: d.integral,
            track_airspeed: d.track_airspeed,
        }
    }
}

impl OuterLoopSection {
    pub fn to_config(&self) -> OuterLoopConfig {
        OuterLoopConfig {
            gains: self.gains,
            mode: self.priority,
            min_speed: self.min_speed,
            bank_limit: self.bank_limit_deg.to_radians(),
            pitch_limit: self.pitch_limit_deg.to_radians(),
            lift_sign: self.lift_sign,
            pitch_bound_sign: self.pitch_bound_sign,
            integral: self.integral,
            track_airspeed: self.track_airspeed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timing {
    /// Integration step, s.
    pub sim_dt: f64,
    /// Outer-loop, sensor and log rate, Hz.
    pub control_rate: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            sim_dt: DEFAULT_DT,
            control_rate: 50.0,
        }
    }
}

impl Timing {
    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_rate
    }

    /// Integration substeps per control tick and the matching step.
    pub fn substeps(&self) -> (usize, f64) {
        let n = (self.control_dt() / self.sim_dt).round().max(1.0) as usize;
        (n, self.control_dt() / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; the CLI `--out` flag overrides it.
    pub dir: Option<PathBuf>,
    pub log: String,
    pub summary: String,
    pub model: String,
    pub plot: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            log: "log.csv".into(),
            summary: "summary.txt".into(),
            model: "model.toml".into(),
            plot: "plot.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    Calibration(CalibrationScenario),
    AccelSteps(StepScenario),
    PnIntercept(InterceptScenario),
}

impl Scenario {
    pub fn kind(&self) -> ScenarioKind {
        match self {
            Scenario::Calibration(_) => ScenarioKind::Calibration,
            Scenario::AccelSteps(_) => ScenarioKind::AccelSteps,
            Scenario::PnIntercept(_) => ScenarioKind::PnIntercept,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Calibration,
    AccelSteps,
    PnIntercept,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Calibration => "calibration",
            ScenarioKind::AccelSteps => "accel_steps",
            ScenarioKind::PnIntercept => "pn_intercept",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "calibration" => Some(ScenarioKind::Calibration),
            "accel_steps" => Some(ScenarioKind::AccelSteps),
            "pn_intercept" => Some(ScenarioKind::PnIntercept),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub levels: Vec<f64>,
    pub dwell: f64,
    pub order: LevelOrder,
    pub transient_trim: f64,
    pub pitch_bias_deg: f64,
}

impl Default for PlanSection {
    fn default() -> Self {
        let p = CalibrationPlan::default();
        Self {
            levels: p.levels,
            dwell: p.dwell,
            order: p.order,
            transient_trim: p.transient_trim,
            pitch_bias_deg: p.pitch_bias.to_degrees(),
        }
    }
}

impl PlanSection {
    pub fn to_plan(&self, timing: &Timing) -> CalibrationPlan {
        CalibrationPlan {
            levels: self.levels.clone(),
            dwell: self.dwell,
            order: self.order,
            transient_trim: self.transient_trim,
            pitch_bias: self.pitch_bias_deg.to_radians(),
            sample_rate: timing.control_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationScenario {
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    /// Airspeed the inverse model is evaluated at, m/s.
    #[serde(default = "default_query_airspeed")]
    pub query_airspeed: f64,
}

fn default_query_airspeed() -> f64 {
    20.0
}

/// Where the tracking scenarios get their thrust model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ModelSource {
    /// Ground truth of the configured airframe.
    Analytic {
        #[serde(default = "default_query_airspeed")]
        airspeed: f64,
    },
    /// Model file; relative paths resolve against the config file.
    File { path: PathBuf },
    /// Fly a calibration first with the same sensors.
    Calibrate(CalibrationScenario),
}

impl Default for ModelSource {
    fn default() -> Self {
        ModelSource::Analytic {
            airspeed: default_query_airspeed(),
        }
    }
}

/// One normal-acceleration step. `accel` is given in the path frame
/// (x along the velocity, y right, z down in the vertical plane through
/// the velocity); its x component is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSegment {
    /// s
    pub start: f64,
    /// s
    pub duration: f64,
    /// m/s^2
    pub accel: [f64; 3],
    /// Speed setpoint during the segment, m/s.
    pub speed: f64,
}

impl StepSegment {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepScenario {
    /// s
    pub duration: f64,
    /// Speed setpoint outside segments, m/s.
    #[serde(default = "default_query_airspeed")]
    pub speed: f64,
    /// 1/s
    #[serde(default = "default_speed_gain")]
    pub speed_gain: f64,
    #[serde(default)]
    pub energy_model: ModelSource,
    pub steps: Vec<StepSegment>,
}

fn default_speed_gain() -> f64 {
    0.5
}

impl StepScenario {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.duration > 0.0) {
            return Err(ConfigError::Schema(
                "accel_steps.duration must be positive".into(),
            ));
        }
        let mut last_end = f64::NEG_INFINITY;
        for (i, s) in self.steps.iter().enumerate() {
            if !(s.start >= 0.0 && s.duration > 0.0 && s.speed > 0.0)
                || s.accel.iter().any(|a| !a.is_finite())
            {
                return Err(ConfigError::Schema(format!("step {i}: invalid segment")));
            }
            if s.start < last_end {
                return Err(ConfigError::Schema(format!(
                    "step {i} starts at {} s, before the previous one ends at {last_end} s",
                    s.start
                )));
            }
            last_end = s.end();
        }
        Ok(())
    }

    /// Active segment index at `t`.
    pub fn segment_at(&self, t: f64) -> Option<usize> {
        self.steps
            .iter()
            .position(|s| t >= s.start - 1e-9 && t < s.end() - 1e-9)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterceptScenario {
    /// NED, m
    pub target: [f64; 3],
    #[serde(default)]
    pub pn: PnParams,
    #[serde(default)]
    pub los_rate: LosRateMode,
    #[serde(default)]
    pub energy_model: ModelSource,
    /// s
    #[serde(default = "default_max_duration")]
    pub max_duration: f64,
}

fn default_max_duration() -> f64 {
    120.0
}

impl InterceptScenario {
    pub fn target_spec(&self) -> TargetSpec {
        TargetSpec {
            position: Vector3::from(self.target),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: Option<u32>,
        }
        let v: Version = toml::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        match v.schema_version {
            Some(SCHEMA_VERSION) => {}
            Some(other) => {
                return Err(ConfigError::Schema(format!(
                    "unsupported schema_version {other} (expected {SCHEMA_VERSION})"
                )))
            }
            None => return Err(ConfigError::Schema("missing schema_version".into())),
        }
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok((Self::from_toml(&text)?, text))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let schema = |e: fwaccel_core::Error| ConfigError::Schema(e.to_string());
        self.vehicle.validate().map_err(schema)?;
        self.noise.validate().map_err(schema)?;
        self.outer_loop.to_config().validate().map_err(schema)?;
        self.initial.to_state(&self.vehicle).map_err(schema)?;
        if self.noise.is_enabled() && self.seed.is_none() {
            return Err(ConfigError::Schema(
                "seed is mandatory when noise is enabled".into(),
            ));
        }
        if !(self.timing.sim_dt > 0.0 && self.timing.sim_dt <= fwaccel_core::vehicle::MAX_DT) {
            return Err(ConfigError::Schema("timing.sim_dt out of range".into()));
        }
        if !(self.timing.control_rate > 0.0 && self.timing.control_dt() >= self.timing.sim_dt) {
            return Err(ConfigError::Schema(
                "timing.control_rate must not exceed 1 / sim_dt".into(),
            ));
        }
        let plan_check =
            |c: &CalibrationScenario| c.plan.to_plan(&self.timing).validate().map_err(schema);
        match &self.scenario {
            Scenario::Calibration(c) => plan_check(c)?,
            Scenario::AccelSteps(s) => {
                s.validate()?;
                if let ModelSource::Calibrate(c) = &s.energy_model {
                    plan_check(c)?;
                }
            }
            Scenario::PnIntercept(p) => {
                p.pn.validate().map_err(schema)?;
                p.target_spec()
                    .validate(&Vector3::from(self.initial.position))
                    .map_err(schema)?;
                if let ModelSource::Calibrate(c) = &p.energy_model {
                    plan_check(c)?;
                }
                if !(p.max_duration > 0.0) {
                    return Err(ConfigError::Schema("max_duration must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

/// Annotated template printed by the CLI on usage errors.
pub const SCHEMA_HELP: &str = r#"schema_version = 1            # required
name = "flight2"
seed = 7                      # required when any [noise] sigma > 0

[initial]                     # position NED m, speed m/s, angles deg
position = [0.0, 0.0, -100.0]
speed = 20.0
heading_deg = 0.0

[outer_loop]
priority = "normal_priority"  # or "tangential_priority"
gains = { roll = 2.0, pitch = 1.5, speed = 0.5 }

[noise]                       # per-sensor sigmas (0 = off)
accel = 0.2
airspeed = 0.3

[scenario]
kind = "accel_steps"          # calibration | accel_steps | pn_intercept
duration = 30.0
energy_model = { source = "analytic" }   # analytic | file | calibrate

[[scenario.steps]]            # accel in the path frame (y right, z down)
start = 2.0
duration = 6.0
accel = [0.0, 4.0, 0.0]
speed = 20.0
"#;
