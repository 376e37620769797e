//! Scenario execution: one simulator and sensor suite per run, logged at the
//! control rate.

use std::path::{Path, PathBuf};
use std::time::Instant;

use fwaccel_core::frames::{
    rot_inertial_to_body, rot_inertial_to_v2, EulerAngles, FrameVector, GRAVITY,
};
use fwaccel_core::guidance::{pn_accel, speed_loop_accel, LosTracker};
use fwaccel_core::identification::{
    collect_samples, fit_levels, CalibrationMetadata, CalibrationSetup, CalibrationTick, ModelFile,
};
use fwaccel_core::outer_loop::{
    AccelCommand, EnergyModel, OuterLoop, OuterLoopConfig, PriorityMode,
};
use fwaccel_core::vehicle::{
    envelope_flags, SensorModel, SensorSnapshot, Simulator, VehicleParams, VehicleState,
};
use nalgebra::Vector3;

use crate::config::{
    CalibrationScenario, ConfigError, InterceptScenario, ModelSource, Scenario, ScenarioConfig,
    ScenarioKind, StepScenario,
};
use crate::log::{write_log, LogError, LogRow, LoggedMode};
use crate::metrics::{
    compute_metrics, MetricSettings, Summary, PHASE_CALIBRATION, PHASE_INTERCEPT, PHASE_TRACKING,
};
use crate::plot::emit_plot_data;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] fwaccel_core::Error),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    /// Machine-readable category printed by the CLI.
    pub fn category(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Core(e) => e.category(),
            RunError::Log(LogError::Schema(_)) => "log-schema",
            RunError::Log(_) | RunError::Io { .. } => "io",
        }
    }
}

/// Simulation error that ended a run early.
#[derive(Debug, Clone)]
pub struct Abort {
    pub category: &'static str,
    pub message: String,
    pub state: Option<Box<VehicleState>>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub kind: ScenarioKind,
    pub rows: Vec<LogRow>,
    pub summary: Summary,
    pub model: Option<ModelFile>,
    pub abort: Option<Abort>,
}

impl RunOutput {
    pub fn succeeded(&self) -> bool {
        self.abort.is_none()
    }
}

fn measured_body_accel(meas: &SensorSnapshot) -> Vector3<f64> {
    meas.specific_force
        + rot_inertial_to_body(&meas.attitude).apply(&Vector3::new(0.0, 0.0, GRAVITY))
}

fn base_row(phase: &str, time: f64, state: &VehicleState, meas: &SensorSnapshot) -> LogRow {
    let a = measured_body_accel(meas);
    LogRow {
        time,
        phase: phase.to_owned(),
        pos_n: state.position.x,
        pos_e: state.position.y,
        pos_d: state.position.z,
        vel_n: state.velocity.x,
        vel_e: state.velocity.y,
        vel_d: state.velocity.z,
        roll: state.attitude.roll,
        pitch: state.attitude.pitch,
        yaw: state.attitude.yaw,
        p: state.rates.p,
        q: state.rates.q,
        r: state.rates.r,
        airspeed: state.airspeed,
        thrust: state.thrust,
        ameas_bx: a.x,
        ameas_by: a.y,
        ameas_bz: a.z,
        ate_meas: meas.specific_force.x,
        speed_meas: meas.velocity.norm(),
        ..LogRow::blank()
    }
}

fn abort_from(err: fwaccel_core::Error, fallback: Option<VehicleState>) -> Abort {
    let state = match &err {
        fwaccel_core::Error::Envelope { state, .. } => Some(state.clone()),
        _ => fallback.map(Box::new),
    };
    Abort {
        category: err.category(),
        message: err.to_string(),
        state,
    }
}

struct Calibrated {
    model_file: ModelFile,
}

fn calibrate(
    cfg: &ScenarioConfig,
    cal: &CalibrationScenario,
    sensors: &mut SensorModel,
    config_text: &str,
    rows: &mut Vec<LogRow>,
) -> Result<Calibrated, Abort> {
    let plan = cal.plan.to_plan(&cfg.timing);
    let setup = CalibrationSetup {
        params: cfg.vehicle,
        initial: cfg
            .initial
            .to_state(&cfg.vehicle)
            .map_err(|e| abort_from(e, None))?,
        gains: cfg.outer_loop.gains,
        estimator: cal.estimator,
        sim_dt: cfg.timing.sim_dt,
    };
    let params = cfg.vehicle;
    let mut last_state = None;
    let result = collect_samples(&plan, &setup, sensors, |tick: &CalibrationTick<'_>| {
        let mut row = base_row(PHASE_CALIBRATION, tick.time, tick.state, tick.measurement);
        let flags = envelope_flags(&params, tick.state, tick.command);
        row.segment = Some(tick.level_index);
        row.level = Some(tick.level);
        row.p_cmd_raw = tick.command.roll_rate;
        row.q_cmd_raw = tick.command.pitch_rate;
        row.t_cmd_raw = tick.command.thrust;
        row.p_cmd = tick.command.roll_rate;
        row.q_cmd = tick.command.pitch_rate;
        row.r_cmd = tick.command.yaw_rate;
        row.t_cmd = tick.command.thrust;
        row.ate_est = tick.estimate.map(|e| e.energy_accel);
        row.v2_est = tick.estimate.map(|e| e.airspeed_sq);
        row.sample_kept = tick.kept;
        row.lift_capped = flags.lift_capped;
        row.alpha_exceeded = flags.alpha_exceeded;
        rows.push(row);
        last_state = Some(*tick.state);
    });
    let (samples, _) = result.map_err(|e| abort_from(e, last_state))?;
    let (fits, _) =
        fit_levels(&samples, cal.estimator.fit).map_err(|e| abort_from(e, last_state))?;
    let meta = CalibrationMetadata {
        plan,
        estimator: cal.estimator,
        seed: cfg.seed(),
        noise_enabled: cfg.noise.is_enabled(),
    };
    let model_file = ModelFile::new(&fits, cal.query_airspeed, meta, config_text.as_bytes())
        .map_err(|e| abort_from(e, last_state))?;
    Ok(Calibrated { model_file })
}

/// Normal and tangential command for one tick plus what to log about it.
struct GuidanceOutput {
    normal: FrameVector,
    tangential: f64,
    speed_cmd: f64,
    segment: Option<usize>,
    /// Target position; the log records it relative to the true position.
    target: Option<Vector3<f64>>,
    closing_speed: Option<f64>,
}

/// Path frame of the measured velocity: x along it, y horizontal right.
fn path_to_inertial(
    velocity: &Vector3<f64>,
    accel: &[f64; 3],
) -> fwaccel_core::Result<Vector3<f64>> {
    let course = velocity.y.atan2(velocity.x);
    let gamma = (-velocity.z).atan2(velocity.x.hypot(velocity.y));
    let path = EulerAngles::new(0.0, gamma, course)?;
    Ok(rot_inertial_to_v2(&path)
        .transpose()
        .apply(&Vector3::from(*accel)))
}

struct Flight<'a> {
    params: VehicleParams,
    initial: VehicleState,
    outer: OuterLoopConfig,
    model: &'a EnergyModel,
    control_dt: f64,
    substeps: (usize, f64),
    phase: &'static str,
}

fn fly(
    flight: &Flight<'_>,
    sensors: &mut SensorModel,
    duration: f64,
    rows: &mut Vec<LogRow>,
    mut guidance: impl FnMut(f64, &SensorSnapshot) -> fwaccel_core::Result<GuidanceOutput>,
    mut done: impl FnMut(&VehicleState, &GuidanceOutput) -> bool,
) -> Result<(), Abort> {
    let mut sim = Simulator::new(flight.params, flight.initial).map_err(|e| abort_from(e, None))?;
    let mut outer = OuterLoop::new(flight.outer).map_err(|e| abort_from(e, None))?;
    let ticks = (duration / flight.control_dt).round() as usize;
    let mode = match flight.outer.mode {
        PriorityMode::NormalPriority => LoggedMode::NormalPriority,
        PriorityMode::TangentialPriority => LoggedMode::TangentialPriority,
    };
    for k in 0..=ticks {
        let time = k as f64 * flight.control_dt;
        let state = *sim.state();
        let fail = |e| abort_from(e, Some(state));
        let meas = sensors.measure(&flight.params, &state);
        let g = guidance(time, &meas).map_err(fail)?;
        let cmd = AccelCommand::new(g.normal, g.tangential, &meas.velocity).map_err(fail)?;
        let out = outer
            .update(&cmd, &meas, flight.model, flight.control_dt)
            .map_err(fail)?;

        let mut row = base_row(flight.phase, time, &state, &meas);
        let normal_body = rot_inertial_to_body(&meas.attitude).apply(cmd.normal().components());
        let flags = envelope_flags(&flight.params, &state, &out.command);
        row.segment = g.segment;
        row.p_cmd_raw = out.unsaturated.roll_rate;
        row.q_cmd_raw = out.unsaturated.pitch_rate;
        row.t_cmd_raw = out.unsaturated.thrust;
        row.p_cmd = out.command.roll_rate;
        row.q_cmd = out.command.pitch_rate;
        row.r_cmd = out.command.yaw_rate;
        row.t_cmd = out.command.thrust;
        row.q_min = out.bounds.map(|b| b.q_min);
        row.q_max = out.bounds.map(|b| b.q_max);
        row.acmd_bx = Some(cmd.tangential());
        row.acmd_by = Some(normal_body.y);
        row.acmd_bz = Some(normal_body.z);
        row.ate_cmd = Some(out.energy_accel_cmd);
        row.speed_cmd = Some(g.speed_cmd);
        row.mode = mode;
        let relative = g.target.map(|t| t - state.position);
        row.rel_n = relative.map(|r| r.x);
        row.rel_e = relative.map(|r| r.y);
        row.rel_d = relative.map(|r| r.z);
        row.closing_speed = g.closing_speed;
        row.thrust_saturated = !(0.0..=1.0).contains(&out.unsaturated.thrust);
        row.pitch_limited =
            out.command.pitch_rate.to_bits() != out.unsaturated.pitch_rate.to_bits();
        row.degenerate_lift = out.degenerate_lift;
        row.lift_capped = flags.lift_capped;
        row.alpha_exceeded = flags.alpha_exceeded;
        row.model_extrapolated = out.model_extrapolated;
        rows.push(row);

        if done(&state, &g) || k == ticks {
            break;
        }
        let (n, dt) = flight.substeps;
        for _ in 0..n {
            let before = *sim.state();
            sim.step(&out.command, dt)
                .map_err(|e| abort_from(e, Some(before)))?;
        }
    }
    Ok(())
}

fn steps_guidance(
    s: &StepScenario,
) -> impl FnMut(f64, &SensorSnapshot) -> fwaccel_core::Result<GuidanceOutput> + '_ {
    move |t, meas| {
        let segment = s.segment_at(t);
        let (accel, speed_cmd) = match segment {
            Some(i) => (s.steps[i].accel, s.steps[i].speed),
            None => ([0.0; 3], s.speed),
        };
        let normal = path_to_inertial(&meas.velocity, &accel)?;
        let speed = meas.velocity.norm();
        Ok(GuidanceOutput {
            normal: FrameVector::new(fwaccel_core::frames::Frame::Inertial, normal),
            tangential: s.speed_gain * (speed_cmd - speed),
            speed_cmd,
            segment,
            target: None,
            closing_speed: None,
        })
    }
}

fn load_model(
    cfg: &ScenarioConfig,
    source: &ModelSource,
    base_dir: &Path,
    sensors: &mut SensorModel,
    config_text: &str,
    rows: &mut Vec<LogRow>,
) -> Result<Result<(EnergyModel, Option<ModelFile>), Abort>, RunError> {
    Ok(match source {
        ModelSource::Analytic { airspeed } => {
            let levels = crate::config::PlanSection::default().levels;
            Ok((
                EnergyModel::analytic(&cfg.vehicle, &levels, *airspeed)?,
                None,
            ))
        }
        ModelSource::File { path } => {
            let file = ModelFile::load(&base_dir.join(path))?;
            Ok((file.energy_model()?, Some(file)))
        }
        ModelSource::Calibrate(cal) => match calibrate(cfg, cal, sensors, config_text, rows) {
            Ok(c) => match c.model_file.energy_model() {
                Ok(m) => Ok((m, Some(c.model_file))),
                Err(e) => Err(abort_from(e, None)),
            },
            Err(a) => Err(a),
        },
    })
}

fn metric_settings(cfg: &ScenarioConfig) -> MetricSettings {
    let cal = match &cfg.scenario {
        Scenario::Calibration(c) => Some(c),
        Scenario::AccelSteps(StepScenario {
            energy_model: ModelSource::Calibrate(c),
            ..
        })
        | Scenario::PnIntercept(InterceptScenario {
            energy_model: ModelSource::Calibrate(c),
            ..
        }) => Some(c),
        _ => None,
    };
    MetricSettings {
        fit: cal.map(|c| c.estimator.fit).unwrap_or_default(),
        query_airspeed: cal.map_or(20.0, |c| c.query_airspeed),
    }
}

/// Runs a validated scenario. Simulation failures end the run early and are
/// reported through [`RunOutput::abort`] with the rows logged so far.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    config_text: &str,
    base_dir: &Path,
) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let started = Instant::now();
    let mut sensors = SensorModel::new(cfg.noise, cfg.seed());
    let mut rows = Vec::new();
    let mut model_file = None;

    let result: Result<(), Abort> = match &cfg.scenario {
        Scenario::Calibration(cal) => calibrate(cfg, cal, &mut sensors, config_text, &mut rows)
            .map(|c| {
                model_file = Some(c.model_file);
            }),
        Scenario::AccelSteps(s) => {
            match load_model(
                cfg,
                &s.energy_model,
                base_dir,
                &mut sensors,
                config_text,
                &mut rows,
            )? {
                Ok((model, file)) => {
                    model_file =
                        file.filter(|_| matches!(s.energy_model, ModelSource::Calibrate(_)));
                    let f = Flight {
                        params: cfg.vehicle,
                        initial: cfg.initial.to_state(&cfg.vehicle)?,
                        outer: cfg.outer_loop.to_config(),
                        model: &model,
                        control_dt: cfg.timing.control_dt(),
                        substeps: cfg.timing.substeps(),
                        phase: PHASE_TRACKING,
                    };
                    fly(
                        &f,
                        &mut sensors,
                        s.duration,
                        &mut rows,
                        steps_guidance(s),
                        |_, _| false,
                    )
                }
                Err(a) => Err(a),
            }
        }
        Scenario::PnIntercept(p) => {
            match load_model(
                cfg,
                &p.energy_model,
                base_dir,
                &mut sensors,
                config_text,
                &mut rows,
            )? {
                Ok((model, file)) => {
                    model_file =
                        file.filter(|_| matches!(p.energy_model, ModelSource::Calibrate(_)));
                    let f = Flight {
                        params: cfg.vehicle,
                        initial: cfg.initial.to_state(&cfg.vehicle)?,
                        outer: cfg.outer_loop.to_config(),
                        model: &model,
                        control_dt: cfg.timing.control_dt(),
                        substeps: cfg.timing.substeps(),
                        phase: PHASE_INTERCEPT,
                    };
                    let target = p.target_spec();
                    let mut tracker = LosTracker::new(p.los_rate);
                    let dt = f.control_dt;
                    let pn = p.pn;
                    let guidance = move |_t: f64, meas: &SensorSnapshot| {
                        let los = tracker.update(&meas.position, &meas.velocity, &target, dt)?;
                        Ok(GuidanceOutput {
                            normal: pn_accel(&los, &pn),
                            tangential: speed_loop_accel(meas.velocity.norm(), &pn),
                            speed_cmd: pn.speed_setpoint,
                            segment: None,
                            target: Some(target.position),
                            closing_speed: Some(los.closing_speed),
                        })
                    };
                    // stop once the true range starts to open
                    let mut prev_range = f64::INFINITY;
                    let done = move |state: &VehicleState, _: &GuidanceOutput| {
                        let range = (target.position - state.position).norm();
                        let opening = range > prev_range;
                        prev_range = range;
                        opening
                    };
                    fly(&f, &mut sensors, p.max_duration, &mut rows, guidance, done)
                }
                Err(a) => Err(a),
            }
        }
    };

    let abort = result.err();
    let settings = metric_settings(cfg);
    let mut summary = Summary::default();
    summary.push("kind", cfg.scenario.kind().as_str());
    summary.push("name", &cfg.name);
    summary.push("seed", cfg.seed());
    summary.push("noise_enabled", cfg.noise.is_enabled());
    settings.write(&mut summary);
    summary.push("rows", rows.len());
    if abort.is_none() {
        summary.extend(compute_metrics(cfg.scenario.kind(), &rows, &settings)?);
    }
    match &abort {
        None => summary.push("status", "ok"),
        Some(a) => {
            summary.push("status", "aborted");
            summary.push("abort.category", a.category);
            summary.push("abort.message", &a.message);
            if let Some(s) = &a.state {
                summary.push(
                    "abort.state.position",
                    format!("{:?}", s.position.as_slice()),
                );
                summary.push(
                    "abort.state.velocity",
                    format!("{:?}", s.velocity.as_slice()),
                );
                summary.push(
                    "abort.state.attitude",
                    format!(
                        "[{}, {}, {}]",
                        s.attitude.roll, s.attitude.pitch, s.attitude.yaw
                    ),
                );
                summary.push("abort.state.airspeed", s.airspeed);
                summary.push("abort.state.thrust", s.thrust);
            }
        }
    }
    summary.push("wall_clock_s", started.elapsed().as_secs_f64());
    Ok(RunOutput {
        kind: cfg.scenario.kind(),
        rows,
        summary,
        model: model_file,
        abort,
    })
}

/// Keys that describe the run rather than its metrics.
pub fn is_metric_key(key: &str) -> bool {
    const META: [&str; 7] = [
        "kind",
        "name",
        "seed",
        "noise_enabled",
        "rows",
        "status",
        "wall_clock_s",
    ];
    !(META.contains(&key) || key.starts_with("setting.") || key.starts_with("abort."))
}

/// Writes log, summary, plot data and (when produced) the model file.
pub fn write_outputs(out: &RunOutput, cfg: &ScenarioConfig, dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let o = &cfg.output;
    let log = dir.join(&o.log);
    write_log(&log, &out.rows)?;
    emit_plot_data(&log, &dir.join(&o.plot))?;
    let summary = dir.join(&o.summary);
    std::fs::write(&summary, out.summary.to_text()).map_err(|source| RunError::Io {
        path: summary,
        source,
    })?;
    if let Some(m) = &out.model {
        m.save(&dir.join(&o.model))?;
    }
    Ok(())
}

/// One entry of a batch.
#[derive(Debug, Clone)]
pub struct BatchJob {
    pub config: ScenarioConfig,
    pub config_text: String,
    pub base_dir: PathBuf,
    pub out_dir: Option<PathBuf>,
}

/// Independent runs in parallel, one thread per job; results keep job order.
pub fn run_batch(jobs: &[BatchJob]) -> Vec<Result<RunOutput, RunError>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|job| {
                scope.spawn(move || {
                    let out = run_scenario(&job.config, &job.config_text, &job.base_dir)?;
                    if let Some(dir) = &job.out_dir {
                        write_outputs(&out, &job.config, dir)?;
                    }
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario thread panicked"))
            .collect()
    })
}
