//! Per-tick CSV telemetry. One fixed header for every scenario kind; columns a
//! kind does not use are left empty.

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("log schema: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoggedMode {
    Stabilize,
    NormalPriority,
    TangentialPriority,
}

/// Truth state, commands before and after priority handling, and what the
/// sensors saw. Angles in rad, rates in rad/s, accelerations in m/s^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub time: f64,
    pub phase: String,
    pub segment: Option<usize>,
    pub level: Option<f64>,
    pub pos_n: f64,
    pub pos_e: f64,
    pub pos_d: f64,
    pub vel_n: f64,
    pub vel_e: f64,
    pub vel_d: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub airspeed: f64,
    /// N
    pub thrust: f64,
    pub p_cmd_raw: f64,
    pub q_cmd_raw: f64,
    pub t_cmd_raw: f64,
    pub p_cmd: f64,
    pub q_cmd: f64,
    pub r_cmd: f64,
    pub t_cmd: f64,
    pub q_min: Option<f64>,
    pub q_max: Option<f64>,
    /// Commanded acceleration in the body frame: tangential on x, normal on y/z.
    pub acmd_bx: Option<f64>,
    pub acmd_by: Option<f64>,
    pub acmd_bz: Option<f64>,
    /// Measured kinematic acceleration in the body frame.
    pub ameas_bx: f64,
    pub ameas_by: f64,
    pub ameas_bz: f64,
    pub ate_cmd: Option<f64>,
    /// Longitudinal specific force from the accelerometer.
    pub ate_meas: f64,
    pub speed_cmd: Option<f64>,
    /// Measured ground speed, m/s.
    pub speed_meas: f64,
    pub mode: LoggedMode,
    /// Target minus vehicle position, NED, m.
    pub rel_n: Option<f64>,
    pub rel_e: Option<f64>,
    pub rel_d: Option<f64>,
    pub closing_speed: Option<f64>,
    /// Filtered identification sample.
    pub ate_est: Option<f64>,
    pub v2_est: Option<f64>,
    pub sample_kept: bool,
    pub thrust_saturated: bool,
    pub pitch_limited: bool,
    pub degenerate_lift: bool,
    pub lift_capped: bool,
    pub alpha_exceeded: bool,
    pub model_extrapolated: bool,
}

pub fn header() -> Vec<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(true)
        .from_writer(Vec::new());
    w.serialize(LogRow::blank()).expect("row serializes");
    let bytes = w.into_inner().expect("in-memory writer");
    let text = String::from_utf8(bytes).expect("utf-8");
    text.lines()
        .next()
        .unwrap_or_default()
        .split(',')
        .map(str::to_owned)
        .collect()
}

impl LogRow {
    pub fn blank() -> Self {
        Self {
            time: 0.0,
            phase: String::new(),
            segment: None,
            level: None,
            pos_n: 0.0,
            pos_e: 0.0,
            pos_d: 0.0,
            vel_n: 0.0,
            vel_e: 0.0,
            vel_d: 0.0,
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
            p: 0.0,
            q: 0.0,
            r: 0.0,
            airspeed: 0.0,
            thrust: 0.0,
            p_cmd_raw: 0.0,
            q_cmd_raw: 0.0,
            t_cmd_raw: 0.0,
            p_cmd: 0.0,
            q_cmd: 0.0,
            r_cmd: 0.0,
            t_cmd: 0.0,
            q_min: None,
            q_max: None,
            acmd_bx: None,
            acmd_by: None,
            acmd_bz: None,
            ameas_bx: 0.0,
            ameas_by: 0.0,
            ameas_bz: 0.0,
            ate_cmd: None,
            ate_meas: 0.0,
            speed_cmd: None,
            speed_meas: 0.0,
            mode: LoggedMode::Stabilize,
            rel_n: None,
            rel_e: None,
            rel_d: None,
            closing_speed: None,
            ate_est: None,
            v2_est: None,
            sample_kept: false,
            thrust_saturated: false,
            pitch_limited: false,
            degenerate_lift: false,
            lift_capped: false,
            alpha_exceeded: false,
            model_extrapolated: false,
        }
    }
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<(), LogError> {
    let wrap = |source| LogError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    for row in rows {
        w.serialize(row).map_err(wrap)?;
    }
    w.flush().map_err(|e| wrap(e.into()))?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>, LogError> {
    let wrap = |source| LogError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    let found: Vec<String> = r
        .headers()
        .map_err(wrap)?
        .iter()
        .map(str::to_owned)
        .collect();
    let missing: Vec<String> = header()
        .into_iter()
        .filter(|h| !found.contains(h))
        .collect();
    if !missing.is_empty() {
        return Err(LogError::Schema(format!(
            "missing columns: {}",
            missing.join(", ")
        )));
    }
    r.deserialize()
        .collect::<Result<Vec<LogRow>, _>>()
        .map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let mut row = LogRow::blank();
        row.time = 0.1 + 0.2;
        row.acmd_by = Some(1.0 / 3.0);
        row.mode = LoggedMode::TangentialPriority;
        row.thrust_saturated = true;
        write_log(&path, &[row.clone(), LogRow::blank()]).unwrap();
        let back = read_log(&path).unwrap();
        assert_eq!(back, vec![row, LogRow::blank()]);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "time,roll\n0,0\n").unwrap();
        assert!(matches!(read_log(&path), Err(LogError::Schema(_))));
    }

    #[test]
    fn header_is_stable() {
        let h = header();
        assert_eq!(h.first().map(String::as_str), Some("time"));
        assert!(h.iter().any(|c| c == "t_cmd_raw"));
        assert_eq!(h.len(), 51);
    }
}
