use crate::error::{Error, Result};
use crate::math::{mean, variance};

/// Keep feature `j` iff its population variance exceeds `tau`.
pub fn variance_filter(cols: &[Vec<f64>], tau: f64) -> Result<Vec<bool>> {
    if !(tau >= 0.0) {
        return Err(Error::invalid("tau must be non-negative"));
    }
    Ok(cols.iter().map(|c| variance(c) > tau).collect())
}

/// Column means and population standard deviations.
pub fn zscore_fit(cols: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mu: Vec<f64> = cols.iter().map(|c| mean(c)).collect();
    let sigma: Vec<f64> = cols.iter().map(|c| variance(c).sqrt()).collect();
    if let Some(j) = sigma.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::invalid(format!("column {j} has zero standard deviation")));
    }
    Ok((mu, sigma))
}

#[inline]
pub fn zscore(x: f64, mu: f64, sigma: f64) -> f64 {
    (x - mu) / sigma
}

pub fn zscore_apply(cols: &[Vec<f64>], mu: &[f64], sigma: &[f64]) -> Vec<Vec<f64>> {
    cols.iter()
        .zip(mu.iter().zip(sigma))
        .map(|(c, (&m, &s))| c.iter().map(|&x| zscore(x, m, s)).collect())
        .collect()
}

/// Fits on `train` and standardizes both matrices with the training
/// statistics.
pub fn zscore_fit_apply(
    train: &[Vec<f64>],
    other: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    let (mu, sigma) = zscore_fit(train)?;
    Ok((zscore_apply(train, &mu, &sigma), zscore_apply(other, &mu, &sigma), mu, sigma))
}

pub(crate) fn check_two_classes(y: &[usize]) -> Result<()> {
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Equal-width bin indices `0..bins` over `[min, max]`; a constant input
/// falls entirely in bin 0.
pub fn equal_width_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    x.iter()
        .map(|&v| {
            if range <= 0.0 {
                0
            } else {
                (((v - lo) / range * bins as f64).floor() as usize).min(bins - 1)
            }
        })
        .collect()
}

/// Plug-in mutual information (nats) between binned `x` and binary `y`.
pub fn mutual_information(x: &[f64], y: &[usize], bins: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("feature and labels differ in length"));
    }
    if x.len() < 4 {
        return Err(Error::invalid("at least four samples are required"));
    }
    if bins == 0 {
        return Err(Error::invalid("bins must be positive"));
    }
    check_two_classes(y)?;
    let b = equal_width_bins(x, bins);
    let n = x.len() as f64;
    let mut joint = vec![[0usize; 2]; bins];
    for (&bi, &yi) in b.iter().zip(y) {
        joint[bi][yi] += 1;
    }
    let py = [
        y.iter().filter(|&&v| v == 0).count() as f64 / n,
        y.iter().filter(|&&v| v == 1).count() as f64 / n,
    ];
    let mut mi = 0.0;
    for row in &joint {
        let pb = (row[0] + row[1]) as f64 / n;
        for c in 0..2 {
            if row[c] == 0 {
                continue;
            }
            let pj = row[c] as f64 / n;
            mi += pj * (pj / (pb * py[c])).ln();
        }
    }
    Ok(mi.max(0.0))
}
