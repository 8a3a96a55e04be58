use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::pearson;

use super::stats::mutual_information;

/// Greedy max-relevance min-redundancy ordering of `k` columns.
///
/// The first pick maximizes `I(x_j; y)`; later picks maximize
/// `I(x_j; y) − mean_{s∈S} |ρ(x_j, x_s)|`. Ties go to the lower index;
/// constant pairs count as `ρ = 0`.
pub fn mrmr_select(cols: &[Vec<f64>], y: &[usize], k: usize, bins: usize) -> Result<Vec<usize>> {
    let p = cols.len();
    if k > p {
        return Err(Error::invalid(format!("cannot select {k} of {p} features")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let relevance: Vec<f64> = cols
        .par_iter()
        .map(|c| mutual_information(c, y, bins))
        .collect::<Result<_>>()?;
    let mut selected = Vec::with_capacity(k);
    let mut taken = vec![false; p];
    let mut redundancy = vec![0.0; p];
    for step in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..p {
            if taken[j] {
                continue;
            }
            let phi = if step == 0 {
                relevance[j]
            } else {
                relevance[j] - redundancy[j] / step as f64
            };
            if best.is_none_or(|(_, b)| phi > b) {
                best = Some((j, phi));
            }
        }
        let (j, _) = best.expect("k <= p leaves a candidate");
        taken[j] = true;
        selected.push(j);
        if step + 1 < k {
            let last = &cols[j];
            let add: Vec<f64> = cols
                .par_iter()
                .enumerate()
                .map(|(i, c)| if taken[i] { 0.0 } else { pearson(c, last).map_or(0.0, f64::abs) })
                .collect();
            redundancy.iter_mut().zip(add).for_each(|(r, a)| *r += a);
        }
    }
    Ok(selected)
}
