//! Proportional navigation toward a fixed point and the speed-hold loop.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{Frame, FrameVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// NED, m.
    pub position: Vector3<f64>,
}

impl TargetSpec {
    pub fn validate(&self, start: &Vector3<f64>) -> Result<()> {
        if self.position.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("target position must be finite".into()));
        }
        if (self.position - start).norm() <= f64::EPSILON {
            return Err(Error::InvalidInput(
                "target coincides with the start position".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PnParams {
    pub navigation_constant: f64,
    /// m/s
    pub speed_setpoint: f64,
    /// 1/s
    pub speed_gain: f64,
    /// m
    pub intercept_radius: f64,
}

impl Default for PnParams {
    fn default() -> Self {
        Self {
            navigation_constant: 3.0,
            speed_setpoint: 20.0,
            speed_gain: 0.5,
            intercept_radius: 1.0,
        }
    }
}

impl PnParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("navigation_constant", self.navigation_constant),
            ("speed_setpoint", self.speed_setpoint),
            ("speed_gain", self.speed_gain),
            ("intercept_radius", self.intercept_radius),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Line-of-sight geometry, all vectors in NED.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosState {
    pub unit: Vector3<f64>,
    /// Time derivative of `unit`, 1/s.
    pub rate: Vector3<f64>,
    /// Rotation rate of the line of sight, rad/s.
    pub omega: Vector3<f64>,
    /// `-d(range)/dt`, m/s.
    pub closing_speed: f64,
    /// m
    pub range: f64,
}

/// LOS quantities for a static target.
pub fn los_kinematics(
    position: &Vector3<f64>,
    velocity: &Vector3<f64>,
    target: &TargetSpec,
) -> Result<LosState> {
    let r = target.position - position;
    let range = r.norm();
    if !(range > 0.0) {
        return Err(Error::InvalidInput("zero range to target".into()));
    }
    let v = -velocity;
    let unit = r / range;
    let omega = r.cross(&v) / (range * range);
    Ok(LosState {
        unit,
        rate: omega.cross(&unit),
        omega,
        closing_speed: -r.dot(&v) / range,
        range,
    })
}

/// `N V_cl lambda_dot`, orthogonal to the line of sight.
pub fn pn_accel(los: &LosState, params: &PnParams) -> FrameVector {
    FrameVector::new(
        Frame::Inertial,
        los.rate * (params.navigation_constant * los.closing_speed),
    )
}

/// `k_V (V_c - V)`.
pub fn speed_loop_accel(speed: f64, params: &PnParams) -> f64 {
    params.speed_gain * (params.speed_setpoint - speed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LosRateMode {
    #[default]
    Analytic,
    /// Differenced LOS unit vector between guidance updates.
    FiniteDifference,
}

/// LOS source honoring [`LosRateMode`].
#[derive(Debug, Clone)]
pub struct LosTracker {
    mode: LosRateMode,
    prev_unit: Option<Vector3<f64>>,
}

impl LosTracker {
    pub fn new(mode: LosRateMode) -> Self {
        Self {
            mode,
            prev_unit: None,
        }
    }

    pub fn update(
        &mut self,
        position: &Vector3<f64>,
        velocity: &Vector3<f64>,
        target: &TargetSpec,
        dt: f64,
    ) -> Result<LosState> {
        let mut los = los_kinematics(position, velocity, target)?;
        if self.mode == LosRateMode::FiniteDifference {
            let rate = match self.prev_unit {
                Some(prev) if dt > 0.0 => {
                    let d = (los.unit - prev) / dt;
                    d - los.unit * d.dot(&los.unit)
                }
                _ => Vector3::zeros(),
            };
            los.omega = los.unit.cross(&rate);
            los.rate = rate;
        }
        self.prev_unit = Some(los.unit);
        Ok(los)
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::outer_loop::AccelCommand;

    fn target(x: f64, y: f64, z: f64) -> TargetSpec {
        TargetSpec {
            position: Vector3::new(x, y, z),
        }
    }

    #[test]
    fn collision_course() {
        let los = los_kinematics(
            &Vector3::zeros(),
            &Vector3::new(20.0, 0.0, 0.0),
            &target(600.0, 0.0, 0.0),
        )
        .unwrap();
        assert_eq!(los.rate, Vector3::zeros());
        assert_relative_eq!(los.closing_speed, 20.0);
        assert_eq!(
            *pn_accel(&los, &PnParams::default()).components(),
            Vector3::zeros()
        );
    }

    #[test]
    fn crossing_geometry() {
        let los = los_kinematics(
            &Vector3::zeros(),
            &Vector3::new(0.0, 20.0, 0.0),
            &target(400.0, 0.0, 0.0),
        )
        .unwrap();
        assert_relative_eq!(los.omega.norm(), 20.0 / 400.0, epsilon = 1e-15);
        assert_relative_eq!(los.closing_speed, 0.0);
    }

    #[test]
    fn pn_magnitude_example() {
        let los = LosState {
            unit: Vector3::x(),
            rate: Vector3::new(0.0, 0.05, 0.0),
            omega: Vector3::new(0.0, 0.0, 0.05),
            closing_speed: 20.0,
            range: 100.0,
        };
        assert_relative_eq!(
            pn_accel(&los, &PnParams::default()).norm(),
            3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn speed_loop_examples() {
        let p = PnParams::default();
        assert_eq!(speed_loop_accel(20.0, &p), 0.0);
        assert_relative_eq!(speed_loop_accel(18.0, &p), 1.0);
    }

    #[test]
    fn params_validation() {
        assert!(PnParams::default().validate().is_ok());
        assert!(PnParams {
            intercept_radius: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(target(0.0, 0.0, 0.0).validate(&Vector3::zeros()).is_err());
        assert!(los_kinematics(&Vector3::zeros(), &Vector3::x(), &target(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn finite_difference_matches_analytic_on_straight_flight() {
        let tgt = target(300.0, 80.0, -20.0);
        let vel = Vector3::new(20.0, 0.0, 0.0);
        let dt = 0.02;
        let mut fd = LosTracker::new(LosRateMode::FiniteDifference);
        let mut pos = Vector3::zeros();
        let mut last = None;
        for _ in 0..10 {
            last = Some(fd.update(&pos, &vel, &tgt, dt).unwrap());
            pos += vel * dt;
        }
        let fd_los = last.unwrap();
        let truth = los_kinematics(&(pos - vel * dt), &vel, &tgt).unwrap();
        // backward difference lags half a step
        assert_relative_eq!(fd_los.rate, truth.rate, max_relative = 0.01);
    }

    fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
        (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn los_invariants(p in vec3(500.0), v in vec3(30.0), t in vec3(800.0)) {
            prop_assume!((t - p).norm() > 1.0);
            let los = los_kinematics(&p, &v, &TargetSpec { position: t }).unwrap();
            prop_assert!((los.unit.norm() - 1.0).abs() <= 1e-12);
            prop_assert!(los.rate.dot(&los.unit).abs() <= 1e-9 * (1.0 + los.rate.norm()));
            // V_cl = -d(range)/dt by a small forward step
            let h = 1e-4;
            let ahead = los_kinematics(&(p + v * h), &v, &TargetSpec { position: t }).unwrap();
            let behind = los_kinematics(&(p - v * h), &v, &TargetSpec { position: t }).unwrap();
            let tol = 1e-6 * (1.0 + v.norm_squared() / los.range);
            prop_assert!((los.closing_speed + (ahead.range - behind.range) / (2.0 * h)).abs() <= tol);
        }

        #[test]
        fn pn_orthogonal_and_linear(p in vec3(500.0), v in vec3(30.0), t in vec3(800.0), n in 2.0f64..6.0) {
            prop_assume!((t - p).norm() > 1.0 && v.norm() > 1.0);
            let params = PnParams { navigation_constant: n, ..Default::default() };
            let los = los_kinematics(&p, &v, &TargetSpec { position: t }).unwrap();
            let a = pn_accel(&los, &params);
            prop_assert!(a.components().dot(&los.unit).abs() <= 1e-9 * (1.0 + a.norm()));
            let doubled = LosState { closing_speed: 2.0 * los.closing_speed, ..los };
            let a2 = pn_accel(&doubled, &params);
            prop_assert!((a2.components() - a.components() * 2.0).norm() <= 1e-12 * (1.0 + a.norm()));
            let cmd = AccelCommand::new(a, 0.0, &v).unwrap();
            prop_assert!(cmd.normal().components().dot(&v).abs() <= 1e-9 * (1.0 + a.norm()) * v.norm());
        }
    }
}
