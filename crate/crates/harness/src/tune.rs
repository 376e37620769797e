//! Tuning fixtures: derived airframe constants and small gain sweeps on the
//! reference scenarios.

use std::fmt::Write as _;
use std::path::Path;

use fwaccel_core::vehicle::{TuningTargets, VehicleParams};

use crate::config::ScenarioConfig;
use crate::runner::{run_batch, BatchJob, RunError};

pub const ROLL_GAINS: [f64; 4] = [1.0, 1.5, 2.0, 3.0];
pub const PITCH_GAINS: [f64; 3] = [1.0, 1.5, 2.0];
pub const NAV_CONSTANTS: [f64; 4] = [2.0, 3.0, 4.0, 5.0];

fn step_config(roll: f64) -> String {
    format!(
        r#"schema_version = 1
name = "tune-steps"
[outer_loop]
gains = {{ roll = {roll:?}, pitch = 1.5, speed = 0.5 }}
[scenario]
kind = "accel_steps"
duration = 20.0
[[scenario.steps]]
start = 2.0
duration = 6.0
accel = [0.0, 4.0, 0.0]
speed = 20.0
[[scenario.steps]]
start = 10.0
duration = 6.0
accel = [0.0, -4.0, 0.0]
speed = 20.0
"#
    )
}

fn descent_config(pitch: f64) -> String {
    format!(
        r#"schema_version = 1
name = "tune-descent"
[initial]
position = [0.0, 0.0, -300.0]
speed = 28.0
pitch_deg = -20.0
[outer_loop]
priority = "tangential_priority"
gains = {{ roll = 2.0, pitch = {pitch:?}, speed = 0.5 }}
[scenario]
kind = "accel_steps"
duration = 20.0
steps = []
"#
    )
}

fn intercept_config(n: f64) -> String {
    format!(
        r#"schema_version = 1
name = "tune-pn"
[initial]
heading_deg = 30.0
[scenario]
kind = "pn_intercept"
target = [600.0, 0.0, -130.0]
pn = {{ navigation_constant = {n:?} }}
"#
    )
}

fn job(text: String) -> Result<BatchJob, RunError> {
    Ok(BatchJob {
        config: ScenarioConfig::from_toml(&text)?,
        config_text: text,
        base_dir: Path::new(".").to_path_buf(),
        out_dir: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollGainResult {
    pub gain: f64,
    /// Worst step, s.
    pub settling_time: f64,
    /// Worst step, fraction.
    pub overshoot: f64,
}

/// Roll gain against the lateral +-4 m/s^2 steps.
pub fn roll_gain_sweep() -> Result<Vec<RollGainResult>, RunError> {
    let jobs = ROLL_GAINS
        .iter()
        .map(|&g| job(step_config(g)))
        .collect::<Result<Vec<_>, _>>()?;
    ROLL_GAINS
        .iter()
        .zip(run_batch(&jobs))
        .map(|(&gain, res)| {
            let res = res?;
            let worst = |key: &str| {
                if !res.succeeded() {
                    return f64::INFINITY;
                }
                (0..2)
                    .map(|k| {
                        res.summary
                            .get_f64(&format!("step.{k}.{key}"))
                            .unwrap_or(f64::INFINITY)
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            Ok(RollGainResult {
                gain,
                settling_time: worst("settling_time"),
                overshoot: worst("overshoot"),
            })
        })
        .collect()
}

/// Pitch gain against the steep descent: time until the airspeed is within
/// 1 m/s of the setpoint (infinite if never or aborted).
pub fn pitch_gain_sweep() -> Result<Vec<(f64, f64)>, RunError> {
    let jobs = PITCH_GAINS
        .iter()
        .map(|&g| job(descent_config(g)))
        .collect::<Result<Vec<_>, _>>()?;
    PITCH_GAINS
        .iter()
        .zip(run_batch(&jobs))
        .map(|(&gain, res)| {
            let res = res?;
            let settled = res
                .rows
                .iter()
                .rposition(|r| (r.airspeed - r.speed_cmd.unwrap_or(f64::NAN)).abs() >= 1.0)
                .and_then(|i| res.rows.get(i + 1))
                .map(|r| r.time)
                .filter(|_| res.succeeded());
            Ok((gain, settled.unwrap_or(f64::INFINITY)))
        })
        .collect()
}

/// Miss distance per navigation constant; infinite when the run aborted.
pub fn nav_constant_sweep() -> Result<Vec<(f64, f64)>, RunError> {
    let jobs = NAV_CONSTANTS
        .iter()
        .map(|&n| job(intercept_config(n)))
        .collect::<Result<Vec<_>, _>>()?;
    NAV_CONSTANTS
        .iter()
        .zip(run_batch(&jobs))
        .map(|(&n, res)| {
            let res = res?;
            let miss = res
                .summary
                .get_f64("intercept.miss_distance")
                .filter(|_| res.succeeded());
            Ok((n, miss.unwrap_or(f64::INFINITY)))
        })
        .collect()
}

pub fn airframe_report(targets: &TuningTargets) -> String {
    let p = VehicleParams::tuned(targets);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "mass = {} kg, S = {} m^2, rho = {} kg/m^3",
        p.mass, p.ref_area, p.air_density
    );
    let _ = writeln!(s, "drag_coeff = {:.5}", p.drag_coeff);
    let _ = writeln!(s, "max_thrust = {:.3} N", p.max_thrust);
    let _ = writeln!(s, "k_V = {:.5} 1/m", p.drag_slope());
    let _ = writeln!(s, "k_T = {:.4} m/s^2", p.thrust_slope());
    let _ = writeln!(
        s,
        "level trim at {} m/s: T_c = {:.4}",
        targets.trim_speed,
        p.trim_thrust_command(targets.trim_speed, 0.0)
    );
    s
}

/// Full report as printed by `fwaccel tune`.
pub fn report() -> Result<String, RunError> {
    let mut s = airframe_report(&TuningTargets::default());
    let _ = writeln!(s, "\nk_roll settling_s overshoot");
    for g in roll_gain_sweep()? {
        let _ = writeln!(
            s,
            "{:6} {:10.3} {:9.3}",
            g.gain, g.settling_time, g.overshoot
        );
    }
    let _ = writeln!(s, "\nk_pitch descent_settled_s");
    for (g, t) in pitch_gain_sweep()? {
        let _ = writeln!(s, "{g:7} {t:8.2}");
    }
    let _ = writeln!(s, "\nN miss_m");
    for (n, miss) in nav_constant_sweep()? {
        let _ = writeln!(s, "{n} {miss:.3}");
    }
    Ok(s)
}
