use super::glcm::DEFAULT_OFFSETS;
use super::quantize::QuantizedImage;

pub const GLRLM_NAMES: [&str; 16] = [
    "ShortRunEmphasis",
    "LongRunEmphasis",
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "RunLengthNonUniformity",
    "RunLengthNonUniformityNormalized",
    "RunPercentage",
    "GrayLevelVariance",
    "RunVariance",
    "RunEntropy",
    "LowGrayLevelRunEmphasis",
    "HighGrayLevelRunEmphasis",
    "ShortRunLowGrayLevelEmphasis",
    "ShortRunHighGrayLevelEmphasis",
    "LongRunLowGrayLevelEmphasis",
    "LongRunHighGrayLevelEmphasis",
];

/// Runs of equal level along `(dr, dc)`; entry `(level, length)` counts runs.
/// Runs are broken by pixels outside the ROI.
pub fn run_lengths(q: &QuantizedImage, dir: (isize, isize)) -> Vec<(usize, usize)> {
    let (dr, dc) = dir;
    let mut runs = Vec::new();
    for r in 0..q.h as isize {
        for c in 0..q.w as isize {
            let l = q.at_signed(r, c);
            if l == 0 || q.at_signed(r - dr, c - dc) == l {
                continue;
            }
            let mut len = 1;
            while q.at_signed(r + dr * len as isize, c + dc * len as isize) == l {
                len += 1;
            }
            runs.push((l, len));
        }
    }
    runs
}

/// Features of one run-length (or size-zone) histogram given as
/// `(level, size)` items over `n_pixels` ROI pixels, in
/// [`GLRLM_NAMES`] order.
pub(crate) fn size_features(items: &[(usize, usize)], n_levels: usize, n_pixels: usize) -> Vec<f64> {
    let max_size = items.iter().map(|x| x.1).max().unwrap_or(1);
    let mut m = vec![0.0; (n_levels + 1) * (max_size + 1)];
    for &(l, s) in items {
        m[l * (max_size + 1) + s] += 1.0;
    }
    let nr = items.len() as f64;
    let mut gl = vec![0.0; n_levels + 1];
    let mut sz = vec![0.0; max_size + 1];
    let mut f = [0.0; 16];
    let (mut mu_i, mut mu_j, mut entropy) = (0.0, 0.0, 0.0);
    for i in 1..=n_levels {
        for j in 1..=max_size {
            let v = m[i * (max_size + 1) + j];
            if v == 0.0 {
                continue;
            }
            gl[i] += v;
            sz[j] += v;
            let p = v / nr;
            let (a, b) = ((i * i) as f64, (j * j) as f64);
            f[0] += p / b;
            f[1] += p * b;
            f[10] += p / a;
            f[11] += p * a;
            f[12] += p / (a * b);
            f[13] += p * a / b;
            f[14] += p * b / a;
            f[15] += p * a * b;
            mu_i += p * i as f64;
            mu_j += p * j as f64;
            entropy -= p * p.log2();
        }
    }
    let gln: f64 = gl.iter().map(|v| v * v).sum();
    let rln: f64 = sz.iter().map(|v| v * v).sum();
    f[2] = gln / nr;
    f[3] = gln / (nr * nr);
    f[4] = rln / nr;
    f[5] = rln / (nr * nr);
    f[6] = nr / n_pixels as f64;
    for i in 1..=n_levels {
        for j in 1..=max_size {
            let v = m[i * (max_size + 1) + j];
            if v == 0.0 {
                continue;
            }
            let p = v / nr;
            f[7] += p * (i as f64 - mu_i).powi(2);
            f[8] += p * (j as f64 - mu_j).powi(2);
        }
    }
    f[9] = entropy;
    f.to_vec()
}

/// Run-length features computed per direction and averaged, in
/// [`GLRLM_NAMES`] order.
pub fn glrlm_features_dirs(q: &QuantizedImage, dirs: &[(isize, isize)]) -> Vec<f64> {
    let np = q.roi_size();
    let mut acc = vec![0.0; GLRLM_NAMES.len()];
    for &d in dirs {
        let f = size_features(&run_lengths(q, d), q.n_levels, np);
        acc.iter_mut().zip(&f).for_each(|(a, v)| *a += v);
    }
    acc.iter_mut().for_each(|a| *a /= dirs.len() as f64);
    acc
}

pub fn glrlm_features(q: &QuantizedImage) -> Vec<f64> {
    glrlm_features_dirs(q, &DEFAULT_OFFSETS)
}
