//! Plot-ready copy of a log: each numeric column next to its 10-sample
//! trailing moving average.

use std::path::Path;

use crate::log::{header, LogError};

pub const WINDOW: usize = 10;

/// Trailing mean over `window` samples; the first `window - 1` outputs
/// average what is available.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for (i, x) in xs.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= xs[i - window];
        }
        let n = (i + 1).min(window);
        // re-sum periodically so the running total does not drift
        if i % 1024 == 1023 {
            sum = xs[i + 1 - n..=i].iter().sum();
        }
        out.push(sum / n as f64);
    }
    out
}

/// Same as [`moving_average`] with missing samples skipped.
fn moving_average_sparse(xs: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let present: Vec<f64> = xs[lo..=i].iter().flatten().copied().collect();
            (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
        })
        .collect()
}

fn parse_cell(cell: &str) -> Option<Option<f64>> {
    match cell {
        "" => Some(None),
        "true" => Some(Some(1.0)),
        "false" => Some(Some(0.0)),
        other => other.parse::<f64>().ok().map(Some),
    }
}

/// Writes `out` with `col` and `col_ma10` for every numeric column of the log.
pub fn emit_plot_data(log: &Path, out: &Path) -> Result<(), LogError> {
    let wrap = |path: &Path| {
        let path = path.display().to_string();
        move |source| LogError::Csv {
            path: path.clone(),
            source,
        }
    };
    let mut reader = csv::Reader::from_path(log).map_err(wrap(log))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(wrap(log))?
        .iter()
        .map(str::to_owned)
        .collect();
    let missing: Vec<String> = header()
        .into_iter()
        .filter(|h| !headers.contains(h))
        .collect();
    if !missing.is_empty() {
        return Err(LogError::Schema(format!(
            "missing columns: {}",
            missing.join(", ")
        )));
    }

    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); headers.len()];
    let mut numeric = vec![true; headers.len()];
    for record in reader.records() {
        let record = record.map_err(wrap(log))?;
        for (i, cell) in record.iter().enumerate().take(headers.len()) {
            match parse_cell(cell) {
                Some(v) => columns[i].push(v),
                None => numeric[i] = false,
            }
        }
    }

    let kept: Vec<usize> = (0..headers.len()).filter(|&i| numeric[i]).collect();
    let averaged: Vec<Vec<Option<f64>>> = kept
        .iter()
        .map(|&i| moving_average_sparse(&columns[i], WINDOW))
        .collect();
    let mut writer = csv::Writer::from_path(out).map_err(wrap(out))?;
    let mut names = Vec::with_capacity(2 * kept.len());
    for &i in &kept {
        names.push(headers[i].clone());
        names.push(format!("{}_ma{WINDOW}", headers[i]));
    }
    writer.write_record(&names).map_err(wrap(out))?;
    let rows = columns.first().map_or(0, Vec::len);
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in 0..rows {
        let mut line = Vec::with_capacity(names.len());
        for (k, &i) in kept.iter().enumerate() {
            line.push(fmt(columns[i][r]));
            line.push(fmt(averaged[k][r]));
        }
        writer.write_record(&line).map_err(wrap(out))?;
    }
    writer.flush().map_err(|e| wrap(out)(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn constant_column() {
        assert!(moving_average(&[2.5; 30], WINDOW).iter().all(|&v| v == 2.5));
    }

    #[test]
    fn impulse_spreads_over_window() {
        let mut xs = vec![0.0; 40];
        xs[15] = 1.0;
        let ma = moving_average(&xs, WINDOW);
        for (i, v) in ma.iter().enumerate() {
            let expected = if (15..25).contains(&i) { 0.1 } else { 0.0 };
            assert!((v - expected).abs() < 1e-15, "{i}: {v}");
        }
    }

    #[test]
    fn step_reached_on_tenth_sample() {
        let xs: Vec<f64> = (0..40).map(|i| if i >= 12 { 1.0 } else { 0.0 }).collect();
        let ma = moving_average(&xs, WINDOW);
        assert!(ma[12 + WINDOW - 2] < 1.0);
        assert_eq!(ma[12 + WINDOW - 1], 1.0);
    }

    #[test]
    fn sparse_matches_dense_when_full() {
        let xs: Vec<f64> = (0..25).map(|i| (i as f64).sin()).collect();
        let dense = moving_average(&xs, WINDOW);
        let sparse =
            moving_average_sparse(&xs.iter().map(|&x| Some(x)).collect::<Vec<_>>(), WINDOW);
        for (a, b) in dense.iter().zip(sparse) {
            assert!((a - b.unwrap()).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn trailing_mean_definition(xs in prop::collection::vec(-100.0f64..100.0, 1..3000)) {
            let ma = moving_average(&xs, WINDOW);
            for i in (0..xs.len()).step_by(7) {
                let lo = (i + 1).saturating_sub(WINDOW);
                let mean = xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
                prop_assert!((ma[i] - mean).abs() <= 1e-9);
            }
        }
    }
}
