//! Empirical CDFs and summary statistics of per-trial samples.

use anyhow::bail;

/// Empirical CDF `F(x) = #{s ≤ x} / n` evaluated on `grid`.
pub fn compute_cdf(samples: &[f64], grid: &[f64]) -> anyhow::Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        bail!("CDF of an empty sample");
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(grid
        .iter()
        .map(|&x| {
            let count = sorted.partition_point(|&s| s <= x);
            (x, count as f64 / n)
        })
        .collect())
}

/// Grid of multiples of `step` covering `[min(samples), max(samples)]`.
pub fn db_grid(samples: &[f64], step: f64) -> Vec<f64> {
    let finite: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || !(step > 0.0) {
        return Vec::new();
    }
    let lo = (finite.iter().copied().fold(f64::INFINITY, f64::min) / step).floor() as i64;
    let hi = (finite.iter().copied().fold(f64::NEG_INFINITY, f64::max) / step).ceil() as i64;
    (lo..=hi).map(|i| i as f64 * step).collect()
}

pub fn median(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) })
}

pub fn mean(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        None
    } else {
        Some(samples.iter().sum::<f64>() / samples.len() as f64)
    }
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

/// `10 log10` of the mean of linear values given in dB.
pub fn mean_linear_db(samples_db: &[f64]) -> Option<f64> {
    let lin: Vec<f64> = samples_db.iter().map(|&v| from_db(v)).collect();
    mean(&lin).map(to_db)
}
