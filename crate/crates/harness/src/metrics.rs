//! Summary metrics, computed from log rows only so that `replay` can audit
//! them against a CSV.

use std::fmt::Display;

use fwaccel_core::identification::{
    build_energy_model, fit_levels, CalibrationSample, FitMethod, LevelFit,
};
use nalgebra::{Vector2, Vector3};

use crate::config::ScenarioKind;
use crate::log::{LogRow, LoggedMode};
use crate::plot::{moving_average, WINDOW};

/// Settling band as a fraction of the commanded magnitude.
pub const SETTLE_BAND: f64 = 0.1;
/// Speed-error increases smaller than this are treated as flat, m/s.
pub const MONOTONE_TOL: f64 = 1e-6;

pub const PHASE_CALIBRATION: &str = "calibration";
pub const PHASE_TRACKING: &str = "tracking";
pub const PHASE_INTERCEPT: &str = "intercept";

/// Ordered `key = value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    entries: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn extend(&mut self, other: Summary) {
        self.entries.extend(other.entries);
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    /// Entries whose key starts with `prefix`.
    pub fn with_prefix<'a>(
        &'a self,
        prefix: &'a str,
    ) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries
            .iter()
            .filter(move |(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
            .collect();
        Self { entries }
    }
}

/// Settings metrics depend on that are not in the CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSettings {
    pub fit: FitMethod,
    pub query_airspeed: f64,
}

impl MetricSettings {
    pub fn write(&self, s: &mut Summary) {
        match self.fit {
            FitMethod::Ols => s.push("setting.fit", "ols"),
            FitMethod::Huber { delta } => {
                s.push("setting.fit", "huber");
                s.push("setting.huber_delta", delta);
            }
        }
        s.push("setting.query_airspeed", self.query_airspeed);
    }

    pub fn read(s: &Summary) -> Option<Self> {
        let fit = match s.get("setting.fit")? {
            "ols" => FitMethod::Ols,
            "huber" => FitMethod::Huber {
                delta: s.get_f64("setting.huber_delta")?,
            },
            _ => return None,
        };
        Some(Self {
            fit,
            query_airspeed: s.get_f64("setting.query_airspeed")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub index: usize,
    pub start: f64,
    /// Mean commanded normal magnitude, m/s^2.
    pub command: f64,
    /// Time from the step until the error stays inside the band; infinite if never.
    pub settling_time: f64,
    /// Peak excess of the response along the command, fraction of command.
    pub overshoot: f64,
    /// Mean error over the last second of the segment, fraction of command.
    pub steady_error: f64,
}

fn phase<'a>(rows: &'a [LogRow], name: &str) -> Vec<&'a LogRow> {
    rows.iter().filter(|r| r.phase == name).collect()
}

/// Normal-channel step metrics in the body y-z plane, optionally on the
/// 10-sample moving average of the measured acceleration.
pub fn step_metrics(rows: &[&LogRow], smoothed: bool) -> Vec<StepMetrics> {
    let by: Vec<f64> = rows.iter().map(|r| r.ameas_by).collect();
    let bz: Vec<f64> = rows.iter().map(|r| r.ameas_bz).collect();
    let (by, bz) = if smoothed {
        (moving_average(&by, WINDOW), moving_average(&bz, WINDOW))
    } else {
        (by, bz)
    };
    let mut segments: Vec<usize> = rows.iter().filter_map(|r| r.segment).collect();
    segments.dedup();
    segments.sort_unstable();
    segments.dedup();

    let mut out = Vec::new();
    for index in segments {
        let idx: Vec<usize> = (0..rows.len())
            .filter(|&i| rows[i].segment == Some(index))
            .collect();
        let cmds: Vec<Vector2<f64>> = idx
            .iter()
            .map(|&i| {
                Vector2::new(
                    rows[i].acmd_by.unwrap_or(0.0),
                    rows[i].acmd_bz.unwrap_or(0.0),
                )
            })
            .collect();
        let command = cmds.iter().map(|c| c.norm()).sum::<f64>() / cmds.len().max(1) as f64;
        if idx.is_empty() || command < 1e-9 {
            continue;
        }
        let start = rows[idx[0]].time;
        let errors: Vec<f64> = idx
            .iter()
            .zip(&cmds)
            .map(|(&i, c)| (Vector2::new(by[i], bz[i]) - c).norm() / c.norm().max(1e-9))
            .collect();
        let settling_time = match errors.iter().rposition(|&e| e > SETTLE_BAND) {
            None => 0.0,
            Some(k) if k + 1 < idx.len() => rows[idx[k + 1]].time - start,
            Some(_) => f64::INFINITY,
        };
        let overshoot = idx
            .iter()
            .zip(&cmds)
            .map(|(&i, c)| {
                let n = c.norm().max(1e-9);
                (Vector2::new(by[i], bz[i]).dot(c) / n - n) / n
            })
            .fold(0.0, f64::max);
        let end = rows[*idx.last().unwrap_or(&0)].time;
        let tail: Vec<f64> = idx
            .iter()
            .zip(&errors)
            .filter(|(&i, _)| rows[i].time > end - 1.0)
            .map(|(_, &e)| e)
            .collect();
        out.push(StepMetrics {
            index,
            start,
            command,
            settling_time,
            overshoot,
            steady_error: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationEvent {
    pub start: f64,
    pub end: f64,
}

pub fn saturation_events(rows: &[&LogRow]) -> Vec<SaturationEvent> {
    let mut out: Vec<SaturationEvent> = Vec::new();
    let mut open: Option<f64> = None;
    for r in rows {
        match (r.thrust_saturated, open) {
            (true, None) => open = Some(r.time),
            (false, Some(s)) => {
                out.push(SaturationEvent {
                    start: s,
                    end: r.time,
                });
                open = None;
            }
            _ => {}
        }
    }
    if let (Some(s), Some(last)) = (open, rows.last()) {
        out.push(SaturationEvent {
            start: s,
            end: last.time,
        });
    }
    out
}

/// Closest approach between consecutive samples of the target-relative
/// position: `(distance, time)`.
pub fn miss_distance(rows: &[&LogRow]) -> Option<(f64, f64)> {
    let rel: Vec<(f64, Vector3<f64>)> = rows
        .iter()
        .filter_map(|r| Some((r.time, Vector3::new(r.rel_n?, r.rel_e?, r.rel_d?))))
        .collect();
    let mut best = rel.first().map(|(t, r)| (r.norm(), *t))?;
    for w in rel.windows(2) {
        let ((t0, r0), (t1, r1)) = (w[0], w[1]);
        let d = r1 - r0;
        let s = if d.norm_squared() > 0.0 {
            (-r0.dot(&d) / d.norm_squared()).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let dist = (r0 + d * s).norm();
        if dist < best.0 {
            best = (dist, t0 + s * (t1 - t0));
        }
    }
    Some(best)
}

pub fn calibration_samples(rows: &[LogRow]) -> Vec<CalibrationSample> {
    rows.iter()
        .filter(|r| r.phase == PHASE_CALIBRATION && r.sample_kept)
        .filter_map(|r| {
            Some(CalibrationSample {
                time: r.time,
                level: r.level?,
                level_index: r.segment?,
                airspeed_sq: r.v2_est?,
                energy_accel: r.ate_est?,
            })
        })
        .collect()
}

fn calibration_metrics(
    rows: &[LogRow],
    settings: &MetricSettings,
    s: &mut Summary,
) -> fwaccel_core::Result<Vec<LevelFit>> {
    let samples = calibration_samples(rows);
    let (fits, skipped) = fit_levels(&samples, settings.fit)?;
    for (i, f) in fits.iter().enumerate() {
        s.push(format!("level.{i}.thrust"), f.thrust);
        s.push(format!("level.{i}.slope"), f.slope);
        s.push(format!("level.{i}.intercept"), f.intercept);
        s.push(format!("level.{i}.samples"), f.samples);
        s.push(format!("level.{i}.residual_rms"), f.residual_rms);
        s.push(format!("level.{i}.unexpected_sign"), f.unexpected_sign);
    }
    s.push("levels.fitted", fits.len());
    s.push("levels.skipped", skipped.len());
    for (i, k) in skipped.iter().enumerate() {
        s.push(format!("skipped.{i}.thrust"), k.thrust);
    }
    let model = build_energy_model(&fits, settings.query_airspeed)?;
    s.push("inverse.slope", model.slope);
    s.push("inverse.intercept", model.intercept);
    s.push("inverse.airspeed", model.airspeed);
    s.push("inverse.extrapolated", model.extrapolated);
    Ok(fits)
}

fn count(rows: &[&LogRow], pred: impl Fn(&LogRow) -> bool) -> usize {
    rows.iter().filter(|r| pred(r)).count()
}

fn tracking_metrics(rows: &[&LogRow], s: &mut Summary) {
    for smoothed in [false, true] {
        let suffix = if smoothed { "_ma10" } else { "" };
        for m in step_metrics(rows, smoothed) {
            let k = m.index;
            if !smoothed {
                s.push(format!("step.{k}.start"), m.start);
                s.push(format!("step.{k}.command"), m.command);
            }
            s.push(format!("step.{k}.settling_time{suffix}"), m.settling_time);
            s.push(format!("step.{k}.overshoot{suffix}"), m.overshoot);
            s.push(format!("step.{k}.steady_error{suffix}"), m.steady_error);
        }
    }

    let events = saturation_events(rows);
    s.push("thrust_saturation.count", events.len());
    s.push(
        "thrust_saturation.first_time",
        events.first().map_or(f64::NAN, |e| e.start),
    );
    s.push(
        "thrust_saturation.total_time",
        events.iter().map(|e| e.end - e.start).sum::<f64>(),
    );
    let max_speed_err = rows
        .iter()
        .filter(|r| r.thrust_saturated)
        .filter_map(|r| Some((r.speed_meas - r.speed_cmd?).abs()))
        .fold(0.0, f64::max);
    s.push("thrust_saturation.max_speed_error", max_speed_err);
    s.push(
        "priority.rate_mismatch",
        count(rows, |r| {
            r.mode == LoggedMode::NormalPriority
                && (r.p_cmd.to_bits() != r.p_cmd_raw.to_bits()
                    || r.q_cmd.to_bits() != r.q_cmd_raw.to_bits())
        }),
    );
    s.push(
        "priority.q_bound_violations",
        count(rows, |r| match (r.q_min, r.q_max) {
            (Some(lo), Some(hi)) => !(r.q_cmd >= lo && r.q_cmd <= hi),
            _ => false,
        }),
    );
    s.push("priority.pitch_limited", count(rows, |r| r.pitch_limited));
    s.push(
        "thrust.out_of_range",
        count(rows, |r| !(0.0..=1.0).contains(&r.t_cmd)),
    );

    let speed_err: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.time, (r.airspeed - r.speed_cmd?).abs())))
        .collect();
    if let Some(peak) =
        (0..speed_err.len()).max_by(|&a, &b| speed_err[a].1.total_cmp(&speed_err[b].1))
    {
        let increases = speed_err[peak..]
            .windows(2)
            .filter(|w| w[1].1 > w[0].1 + MONOTONE_TOL)
            .count();
        s.push("speed_error.peak", speed_err[peak].1);
        s.push("speed_error.peak_time", speed_err[peak].0);
        s.push("speed_error.increases_after_peak", increases);
        s.push(
            "speed_error.final",
            speed_err.last().map_or(f64::NAN, |e| e.1),
        );
    }
    s.push("envelope.lift_capped", count(rows, |r| r.lift_capped));
    s.push("envelope.alpha_exceeded", count(rows, |r| r.alpha_exceeded));
    s.push(
        "envelope.degenerate_lift",
        count(rows, |r| r.degenerate_lift),
    );
    s.push("model.extrapolated", count(rows, |r| r.model_extrapolated));
}

/// All metrics for a run, in a fixed order.
pub fn compute_metrics(
    kind: ScenarioKind,
    rows: &[LogRow],
    settings: &MetricSettings,
) -> fwaccel_core::Result<Summary> {
    let mut s = Summary::default();
    let calibrated = rows.iter().any(|r| r.phase == PHASE_CALIBRATION);
    if calibrated {
        calibration_metrics(rows, settings, &mut s)?;
    }
    match kind {
        ScenarioKind::Calibration => {}
        ScenarioKind::AccelSteps => tracking_metrics(&phase(rows, PHASE_TRACKING), &mut s),
        ScenarioKind::PnIntercept => {
            let rows = phase(rows, PHASE_INTERCEPT);
            tracking_metrics(&rows, &mut s);
            if let Some((miss, t)) = miss_distance(&rows) {
                s.push("intercept.miss_distance", miss);
                s.push("intercept.closest_approach_time", t);
            }
            let max_cmd = rows
                .iter()
                .filter_map(|r| Some(Vector2::new(r.acmd_by?, r.acmd_bz?).norm()))
                .fold(0.0, f64::max);
            s.push("intercept.max_normal_command", max_cmd);
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64) -> LogRow {
        LogRow {
            time: t,
            phase: PHASE_TRACKING.into(),
            ..LogRow::blank()
        }
    }

    #[test]
    fn first_order_step_settles_where_expected() {
        let tau = 0.5;
        let rows: Vec<LogRow> = (0..300)
            .map(|k| {
                let t = k as f64 * 0.02;
                let mut r = row(t);
                if t >= 1.0 {
                    r.segment = Some(0);
                    r.acmd_by = Some(4.0);
                    r.acmd_bz = Some(0.0);
                    r.ameas_by = 4.0 * (1.0 - (-(t - 1.0 + 0.02) / tau).exp());
                }
                r
            })
            .collect();
        let refs: Vec<&LogRow> = rows.iter().collect();
        let m = step_metrics(&refs, false);
        assert_eq!(m.len(), 1);
        // first-order lag crosses 90 % at tau ln 10
        assert!(
            (m[0].settling_time - tau * 10f64.ln()).abs() < 0.03,
            "{}",
            m[0].settling_time
        );
        assert!(m[0].overshoot.abs() < 1e-12);
    }

    #[test]
    fn overshoot_measured_along_command() {
        let rows: Vec<LogRow> = (0..100)
            .map(|k| {
                let mut r = row(k as f64 * 0.02);
                r.segment = Some(3);
                r.acmd_by = Some(0.0);
                r.acmd_bz = Some(-2.0);
                r.ameas_bz = if k == 40 { -2.5 } else { -2.0 };
                r
            })
            .collect();
        let refs: Vec<&LogRow> = rows.iter().collect();
        let m = step_metrics(&refs, false);
        assert!((m[0].overshoot - 0.25).abs() < 1e-12);
        assert_eq!(m[0].index, 3);
    }

    #[test]
    fn miss_distance_between_samples() {
        // straight pass 0.5 m abeam, closest point halfway between two samples
        let rows: Vec<LogRow> = (0..11)
            .map(|k| {
                let mut r = row(k as f64);
                r.rel_n = Some(5.5 - k as f64);
                r.rel_e = Some(0.5);
                r.rel_d = Some(0.0);
                r
            })
            .collect();
        let refs: Vec<&LogRow> = rows.iter().collect();
        let (d, t) = miss_distance(&refs).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        assert!((t - 5.5).abs() < 1e-12);
    }

    #[test]
    fn saturation_intervals() {
        let rows: Vec<LogRow> = (0..10)
            .map(|k| {
                let mut r = row(k as f64);
                r.thrust_saturated = (3..6).contains(&k) || k == 9;
                r
            })
            .collect();
        let refs: Vec<&LogRow> = rows.iter().collect();
        let ev = saturation_events(&refs);
        assert_eq!(
            ev,
            vec![
                SaturationEvent {
                    start: 3.0,
                    end: 6.0
                },
                SaturationEvent {
                    start: 9.0,
                    end: 9.0
                }
            ]
        );
    }

    #[test]
    fn summary_text_round_trip() {
        let mut s = Summary::default();
        s.push("kind", "pn_intercept");
        s.push("intercept.miss_distance", 0.1 + 0.2);
        s.push("never", f64::INFINITY);
        let back = Summary::parse(&s.to_text());
        assert_eq!(back, s);
        assert_eq!(back.get_f64("intercept.miss_distance"), Some(0.1 + 0.2));
        assert_eq!(back.get_f64("never"), Some(f64::INFINITY));
    }
}
