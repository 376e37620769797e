//! Straight-line least squares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    pub samples: usize,
}

impl LineFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

fn check_inputs(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Identification(format!(
            "regressor/response length mismatch ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Identification("need at least two samples".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Identification("non-finite sample".into()));
    }
    Ok(())
}

fn weighted(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<(f64, f64)> {
    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        let dx = x - mx;
        sxx += w * dx * dx;
        sxy += w * dx * (y - my);
    }
    // relative spread check so that large offsets with tiny spread are caught
    if sxx <= 1e-12 * sw * (1.0 + mx * mx) {
        return Err(Error::Identification("regressor has no spread".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

fn finish(xs: &[f64], ys: &[f64], slope: f64, intercept: f64) -> LineFit {
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    LineFit {
        slope,
        intercept,
        residual_rms: (sse / xs.len() as f64).sqrt(),
        samples: xs.len(),
    }
}

/// Ordinary least squares, computed on centered data.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    check_inputs(xs, ys)?;
    let ws = vec![1.0; xs.len()];
    let (slope, intercept) = weighted(xs, ys, &ws)?;
    Ok(finish(xs, ys, slope, intercept))
}

/// Huber-loss line fit by iteratively reweighted least squares.
///
/// `delta` is the residual magnitude where the loss turns linear.
pub fn huber(xs: &[f64], ys: &[f64], delta: f64) -> Result<LineFit> {
    check_inputs(xs, ys)?;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidInput("huber delta must be positive".into()));
    }
    let mut ws = vec![1.0; xs.len()];
    let (mut slope, mut intercept) = weighted(xs, ys, &ws)?;
    for _ in 0..50 {
        for ((x, y), w) in xs.iter().zip(ys).zip(ws.iter_mut()) {
            let r = (y - slope * x - intercept).abs();
            *w = if r <= delta { 1.0 } else { delta / r };
        }
        let (s, b) = weighted(xs, ys, &ws)?;
        let converged = (s - slope).abs() <= 1e-12 * (1.0 + s.abs())
            && (b - intercept).abs() <= 1e-12 * (1.0 + b.abs());
        slope = s;
        intercept = b;
        if converged {
            break;
        }
    }
    Ok(finish(xs, ys, slope, intercept))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    #[test]
    fn degenerate_inputs() {
        assert!(ols(&[1.0], &[2.0]).is_err());
        assert!(ols(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(ols(&[1.0, 2.0], &[1.0]).is_err());
        assert!(ols(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn huber_resists_outliers() {
        let xs: Vec<f64> = (0..50).map(|i| 380.0 + i as f64).collect();
        let mut ys: Vec<f64> = xs.iter().map(|x| -0.0032 * x + 3.59).collect();
        ys[10] += 5.0;
        ys[30] -= 4.0;
        let plain = ols(&xs, &ys).unwrap();
        let robust = huber(&xs, &ys, 0.05).unwrap();
        assert!((robust.slope + 0.0032).abs() < (plain.slope + 0.0032).abs());
        assert!((robust.slope + 0.0032).abs() < 1e-4);
    }

    #[test]
    fn slope_error_shrinks_with_samples() {
        // RMS slope error over seeds should fall roughly as 1/sqrt(n).
        let sigma = 0.2;
        let rms_err = |n: usize| {
            let mut acc = 0.0;
            for seed in 0..200u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let noise = Normal::new(0.0, sigma).unwrap();
                let xs: Vec<f64> = (0..n)
                    .map(|i| 300.0 + 200.0 * i as f64 / (n - 1) as f64)
                    .collect();
                let ys: Vec<f64> = xs
                    .iter()
                    .map(|x| -0.0032 * x + 3.6 + noise.sample(&mut rng))
                    .collect();
                acc += (ols(&xs, &ys).unwrap().slope + 0.0032).powi(2);
            }
            (acc / 200.0).sqrt()
        };
        let e25 = rms_err(25);
        let e400 = rms_err(400);
        let ratio = e25 / e400;
        // ideal ratio is 4; allow sampling slack
        assert!((3.0..5.3).contains(&ratio), "ratio {ratio}");
    }

    proptest! {
        #[test]
        fn exact_line_recovered(k in -1.0f64..1.0, b in -10.0f64..10.0, x0 in 0.0f64..500.0, span in 1.0f64..300.0, n in 10usize..200) {
            let xs: Vec<f64> = (0..n).map(|i| x0 + span * i as f64 / (n - 1) as f64).collect();
            let ys: Vec<f64> = xs.iter().map(|x| k * x + b).collect();
            let fit = ols(&xs, &ys).unwrap();
            prop_assert!((fit.slope - k).abs() <= 1e-9);
            prop_assert!((fit.intercept - b).abs() <= 1e-9 * (1.0 + x0 + span));
            prop_assert!(fit.residual_rms <= 1e-9);
        }
    }
}
