use crate::error::{Error, Result};

use super::quantize::QuantizedImage;

pub const DEFAULT_OFFSETS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

pub const GLCM_NAMES: [&str; 23] = [
    "Autocorrelation",
    "JointAverage",
    "ClusterProminence",
    "ClusterShade",
    "ClusterTendency",
    "Contrast",
    "Correlation",
    "DifferenceAverage",
    "DifferenceEntropy",
    "DifferenceVariance",
    "JointEnergy",
    "JointEntropy",
    "Imc1",
    "Imc2",
    "Idm",
    "Idmn",
    "Id",
    "Idn",
    "InverseVariance",
    "MaximumProbability",
    "SumAverage",
    "SumEntropy",
    "SumSquares",
];

/// Symmetric co-occurrence matrix (`Ng × Ng`, row-major, levels shifted to
/// 0-based) normalized per offset and averaged over offsets with at least
/// one pair.
pub fn glcm_matrix(q: &QuantizedImage, offsets: &[(isize, isize)]) -> Result<Vec<f64>> {
    let ng = q.n_levels;
    let mut avg = vec![0.0; ng * ng];
    let mut used = 0usize;
    for &(dr, dc) in offsets {
        let mut m = vec![0.0; ng * ng];
        let mut pairs = 0usize;
        for r in 0..q.h {
            for c in 0..q.w {
                let i = q.at(r, c);
                if i == 0 {
                    continue;
                }
                let j = q.at_signed(r as isize + dr, c as isize + dc);
                if j == 0 {
                    continue;
                }
                m[(i - 1) * ng + (j - 1)] += 1.0;
                m[(j - 1) * ng + (i - 1)] += 1.0;
                pairs += 2;
            }
        }
        if pairs == 0 {
            continue;
        }
        used += 1;
        avg.iter_mut().zip(&m).for_each(|(a, v)| *a += v / pairs as f64);
    }
    if used == 0 {
        return Err(Error::NoValidPairs);
    }
    avg.iter_mut().for_each(|a| *a /= used as f64);
    Ok(avg)
}

fn entropy2(p: impl Iterator<Item = f64>) -> f64 {
    -p.filter(|&v| v > 0.0).map(|v| v * v.log2()).sum::<f64>()
}

/// Texture features of a normalized co-occurrence matrix, in
/// [`GLCM_NAMES`] order. Gray levels are indexed from 1.
pub fn glcm_from_matrix(p: &[f64], ng: usize) -> Vec<f64> {
    let at = |i: usize, j: usize| p[i * ng + j];
    let lv = |i: usize| (i + 1) as f64;
    let px: Vec<f64> = (0..ng).map(|i| (0..ng).map(|j| at(i, j)).sum()).collect();
    let py: Vec<f64> = (0..ng).map(|j| (0..ng).map(|i| at(i, j)).sum()).collect();
    let mux: f64 = (0..ng).map(|i| lv(i) * px[i]).sum();
    let muy: f64 = (0..ng).map(|j| lv(j) * py[j]).sum();
    let sx = (0..ng).map(|i| (lv(i) - mux).powi(2) * px[i]).sum::<f64>().sqrt();
    let sy = (0..ng).map(|j| (lv(j) - muy).powi(2) * py[j]).sum::<f64>().sqrt();

    let mut p_sum = vec![0.0; 2 * ng + 1];
    let mut p_diff = vec![0.0; ng];
    let (mut auto, mut prom, mut shade, mut tend, mut contrast) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut energy, mut idm, mut idmn, mut id, mut idn, mut inv_var) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut hxy1, mut hxy2, mut maxp, mut sum_sq) = (0.0, 0.0, 0.0f64, 0.0);
    let ngf = ng as f64;
    for i in 0..ng {
        for j in 0..ng {
            let v = at(i, j);
            let (a, b) = (lv(i), lv(j));
            let pxy = px[i] * py[j];
            if pxy > 0.0 {
                hxy2 -= pxy * pxy.log2();
            }
            if v == 0.0 {
                continue;
            }
            let d = (a - b).abs();
            p_sum[i + j + 2] += v;
            p_diff[i.abs_diff(j)] += v;
            auto += v * a * b;
            let t = a + b - mux - muy;
            prom += v * t.powi(4);
            shade += v * t.powi(3);
            tend += v * t * t;
            contrast += v * d * d;
            energy += v * v;
            idm += v / (1.0 + d * d);
            idmn += v / (1.0 + d * d / (ngf * ngf));
            id += v / (1.0 + d);
            idn += v / (1.0 + d / ngf);
            if i != j {
                inv_var += v / (d * d);
            }
            hxy1 -= v * pxy.log2();
            maxp = maxp.max(v);
            sum_sq += v * (a - mux).powi(2);
        }
    }
    let hxy = entropy2(p.iter().copied());
    let hx = entropy2(px.iter().copied());
    let hy = entropy2(py.iter().copied());
    let correlation = if sx * sy > 0.0 { (auto - mux * muy) / (sx * sy) } else { 1.0 };
    let diff_avg: f64 = p_diff.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
    let diff_var: f64 = p_diff.iter().enumerate().map(|(k, v)| (k as f64 - diff_avg).powi(2) * v).sum();
    let sum_avg: f64 = p_sum.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
    let hmax = hx.max(hy);
    let imc1 = if hmax > 0.0 { (hxy - hxy1) / hmax } else { 0.0 };
    let imc2 = (1.0 - (-2.0 * (hxy2 - hxy)).exp()).max(0.0).sqrt();

    vec![
        auto,
        mux,
        prom,
        shade,
        tend,
        contrast,
        correlation,
        diff_avg,
        entropy2(p_diff.iter().copied()),
        diff_var,
        energy,
        hxy,
        imc1,
        imc2,
        idm,
        idmn,
        id,
        idn,
        inv_var,
        maxp,
        sum_avg,
        entropy2(p_sum.iter().copied()),
        sum_sq,
    ]
}

pub fn glcm_features(q: &QuantizedImage, offsets: &[(isize, isize)]) -> Result<Vec<f64>> {
    Ok(glcm_from_matrix(&glcm_matrix(q, offsets)?, q.n_levels))
}
