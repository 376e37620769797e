use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::ols;
use crate::vehicle::VehicleParams;

/// One calibrated thrust level: `a_TE = slope * V_a^2 + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCoefficients {
    pub thrust: f64,
    /// 1/m
    pub slope: f64,
    /// m/s^2
    pub intercept: f64,
}

impl LevelCoefficients {
    pub fn energy_accel(&self, airspeed: f64) -> f64 {
        self.slope * airspeed * airspeed + self.intercept
    }
}

/// Thrust-to-energy-acceleration map `a_TE = slope * T_c + intercept`, valid at
/// `airspeed`, together with the per-level family it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    /// m/s^2 per unit thrust command
    pub slope: f64,
    /// m/s^2
    pub intercept: f64,
    /// Airspeed the inverse fit was evaluated at, m/s.
    pub airspeed: f64,
    pub levels: Vec<LevelCoefficients>,
    /// Airspeed span covered by calibration data, m/s.
    pub speed_range: Option<(f64, f64)>,
    /// Set when `airspeed` lies outside `speed_range`.
    pub extrapolated: bool,
}

impl EnergyModel {
    /// Inverse model with no per-level family (fixed in airspeed).
    pub fn fixed(slope: f64, intercept: f64, airspeed: f64) -> Result<Self> {
        let model = Self {
            slope,
            intercept,
            airspeed,
            levels: Vec::new(),
            speed_range: None,
            extrapolated: false,
        };
        model.validate()?;
        Ok(model)
    }

    /// Evaluates every level at `airspeed` and fits `a_TE` against `T_c`.
    pub fn from_levels(
        levels: Vec<LevelCoefficients>,
        airspeed: f64,
        speed_range: Option<(f64, f64)>,
    ) -> Result<Self> {
        if !(airspeed.is_finite() && airspeed > 0.0) {
            return Err(Error::InvalidModel(format!(
                "query airspeed {airspeed} must be positive"
            )));
        }
        let mut levels = levels;
        levels.sort_by(|a, b| a.thrust.total_cmp(&b.thrust));
        let distinct = levels
            .windows(2)
            .filter(|w| w[1].thrust > w[0].thrust)
            .count()
            + 1;
        if levels.is_empty() || distinct < 2 {
            return Err(Error::Identification(
                "inverse model needs at least two distinct thrust levels".into(),
            ));
        }
        let (ts, accs): (Vec<f64>, Vec<f64>) = levels
            .iter()
            .map(|l| (l.thrust, l.energy_accel(airspeed)))
            .unzip();
        let fit = ols(&ts, &accs)?;
        let extrapolated = speed_range.is_some_and(|(lo, hi)| airspeed < lo || airspeed > hi);
        let model = Self {
            slope: fit.slope,
            intercept: fit.intercept,
            airspeed,
            levels,
            speed_range,
            extrapolated,
        };
        model.validate()?;
        Ok(model)
    }

    /// Ground-truth model of the simulated airframe (affine thrust map).
    pub fn analytic(params: &VehicleParams, thrust_levels: &[f64], airspeed: f64) -> Result<Self> {
        let levels = thrust_levels
            .iter()
            .map(|&t| LevelCoefficients {
                thrust: t,
                slope: params.drag_slope(),
                intercept: t * params.thrust_slope(),
            })
            .collect();
        Self::from_levels(levels, airspeed, None)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slope.is_finite() && self.intercept.is_finite()) {
            return Err(Error::InvalidModel("non-finite coefficients".into()));
        }
        if self.slope <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "thrust slope {} must be positive",
                self.slope
            )));
        }
        Ok(())
    }

    /// The same family re-evaluated at another airspeed. Models without a
    /// per-level family are returned unchanged.
    pub fn at_airspeed(&self, airspeed: f64) -> Result<Self> {
        if self.levels.is_empty() {
            return Ok(self.clone());
        }
        Self::from_levels(self.levels.clone(), airspeed, self.speed_range)
    }

    /// `a_TE` predicted for a thrust command.
    pub fn predict(&self, thrust: f64) -> f64 {
        self.slope * thrust + self.intercept
    }

    /// Energy-acceleration range `(a_TE,min, a_TE,max)` for `T_c` in `[0, 1]`
    /// at `airspeed`, from the line through the lowest and highest calibrated
    /// levels.
    pub fn energy_bounds(&self, airspeed: f64) -> (f64, f64) {
        match (self.levels.first(), self.levels.last()) {
            (Some(lo), Some(hi)) if hi.thrust > lo.thrust => {
                let (a_lo, a_hi) = (lo.energy_accel(airspeed), hi.energy_accel(airspeed));
                let slope = (a_hi - a_lo) / (hi.thrust - lo.thrust);
                let at = |t: f64| a_lo + slope * (t - lo.thrust);
                (at(0.0), at(1.0))
            }
            _ => (self.predict(0.0), self.predict(1.0)),
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;

    #[test]
    fn analytic_model_matches_airframe() {
        let params = VehicleParams::default();
        let levels: Vec<f64> = (1..=8).map(|i| i as f64 / 10.0).collect();
        let m = EnergyModel::analytic(&params, &levels, 20.0).unwrap();
        assert_relative_eq!(m.slope, params.thrust_slope(), max_relative = 1e-12);
        assert_relative_eq!(
            m.predict(0.4),
            params.energy_accel(0.4, 20.0),
            epsilon = 1e-12
        );
        let (lo, hi) = m.energy_bounds(25.0);
        assert_relative_eq!(lo, params.energy_accel(0.0, 25.0), epsilon = 1e-12);
        assert_relative_eq!(hi, params.energy_accel(1.0, 25.0), epsilon = 1e-12);
        let moved = m.at_airspeed(25.0).unwrap();
        assert_relative_eq!(
            moved.predict(0.3),
            params.energy_accel(0.3, 25.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn needs_two_levels() {
        let one = vec![LevelCoefficients {
            thrust: 0.5,
            slope: -0.003,
            intercept: 2.0,
        }];
        assert!(matches!(
            EnergyModel::from_levels(one.clone(), 20.0, None),
            Err(Error::Identification(_))
        ));
        let dup = vec![one[0], one[0]];
        assert!(EnergyModel::from_levels(dup, 20.0, None).is_err());
    }

    #[test]
    fn extrapolation_flagged() {
        let params = VehicleParams::default();
        let mut m = EnergyModel::analytic(&params, &[0.2, 0.8], 20.0).unwrap();
        m.speed_range = Some((17.0, 23.0));
        assert!(!m.at_airspeed(20.0).unwrap().extrapolated);
        assert!(m.at_airspeed(26.0).unwrap().extrapolated);
    }

    #[test]
    fn non_positive_slope_rejected() {
        assert!(EnergyModel::fixed(0.0, 1.0, 20.0).is_err());
        assert!(EnergyModel::fixed(-1.0, 1.0, 20.0).is_err());
        let levels = vec![
            LevelCoefficients {
                thrust: 0.2,
                slope: -0.003,
                intercept: 3.0,
            },
            LevelCoefficients {
                thrust: 0.8,
                slope: -0.003,
                intercept: 1.0,
            },
        ];
        assert!(matches!(
            EnergyModel::from_levels(levels, 20.0, None),
            Err(Error::InvalidModel(_))
        ));
    }
}
