//! Brute-force reference implementations shared by the integration and
//! acceptance tests. Each one follows the textbook definition directly and
//! shares no code with the library beyond plain data types.

#![allow(dead_code)]

use lesionkit::mcra::{CandidatePrediction, ConsReduction, FusionSpace, McraConfig};
use lesionkit::neural::{AsppFusion, AsppParams, Conv2dParams, SeParams};
use lesionkit::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------- aggregation

pub struct OracleAggregation {
    pub w_sal: Vec<f64>,
    pub w_sem: Vec<f64>,
    pub w_final: Vec<f64>,
    pub fused_mask: Vec<f64>,
    pub fused_logits: Vec<f64>,
    pub fused_embedding: Vec<f64>,
    pub high: Vec<usize>,
    pub low: Vec<usize>,
    pub teacher: Vec<f64>,
    pub loss: f64,
}

/// `w_j = 1 / Σ_k exp((s_k − s_j) / τ)`.
fn softmax_ratio(s: &[f64], tau: f64) -> Vec<f64> {
    s.iter()
        .map(|&sj| 1.0 / s.iter().map(|&sk| ((sk - sj) / tau).exp()).sum::<f64>())
        .collect()
}

pub fn aggregate_oracle(c: &[CandidatePrediction], f_text: &[f64], cfg: &McraConfig) -> OracleAggregation {
    let k = c.len();
    let s: Vec<f64> = c.iter().map(|p| p.saliency).collect();
    let w_sal = softmax_ratio(&s, cfg.tau_sal);

    let fnorm = f_text.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cos: Vec<f64> = c
        .iter()
        .map(|p| {
            let e = p.embedding.data();
            let en = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if en == 0.0 || fnorm == 0.0 {
                0.0
            } else {
                e.iter().zip(f_text).map(|(a, b)| a * b).sum::<f64>() / (en * fnorm)
            }
        })
        .collect();
    let w_sem = softmax_ratio(&cos, cfg.tau_sem);
    let w_final: Vec<f64> = (0..k).map(|j| (1.0 - cfg.alpha) * w_sal[j] + cfg.alpha * w_sem[j]).collect();

    let npx = c[0].mask_logits.len();
    let fused_mask: Vec<f64> = (0..npx)
        .map(|i| match cfg.fusion {
            FusionSpace::Logit => (0..k).map(|j| w_final[j] * c[j].mask_logits.data()[i]).sum(),
            FusionSpace::Probability => {
                let p: f64 = (0..k).map(|j| w_final[j] * sig(c[j].mask_logits.data()[i])).sum();
                let p = p.clamp(1e-12, 1.0 - 1e-12);
                (p / (1.0 - p)).ln()
            }
        })
        .collect();
    let lin = |get: &dyn Fn(&CandidatePrediction) -> &[f64]| -> Vec<f64> {
        let n = get(&c[0]).len();
        (0..n).map(|i| (0..k).map(|j| w_final[j] * get(&c[j])[i]).sum()).collect()
    };
    let fused_logits = lin(&|p| p.cls_logits.data());
    let fused_embedding = lin(&|p| p.embedding.data());

    let theta = cfg.theta.unwrap_or(1.0 / k as f64);
    let mut high: Vec<usize> = Vec::new();
    let mut low: Vec<usize> = Vec::new();
    for j in 0..k {
        if w_final[j] >= theta {
            high.push(j);
        } else {
            low.push(j);
        }
    }
    if high.is_empty() {
        let mut best = 0;
        for j in 0..k {
            if w_final[j] > w_final[best] {
                best = j;
            }
        }
        high.push(best);
        low.retain(|&j| j != best);
    }

    let wh: f64 = high.iter().map(|&j| w_final[j]).sum();
    let teacher: Vec<f64> = (0..npx)
        .map(|i| {
            let z: f64 = high
                .iter()
                .map(|&j| {
                    let wt = if wh > 0.0 { w_final[j] / wh } else { 1.0 / high.len() as f64 };
                    wt * c[j].mask_logits.data()[i]
                })
                .sum();
            sig(z)
        })
        .collect();

    let loss = cons_loss_oracle(c, &low, &w_final, &teacher, cfg.gamma, cfg.reduction);
    OracleAggregation {
        w_sal,
        w_sem,
        w_final,
        fused_mask,
        fused_logits,
        fused_embedding,
        high,
        low,
        teacher,
        loss,
    }
}

pub fn cons_loss_oracle(
    c: &[CandidatePrediction],
    low: &[usize],
    w: &[f64],
    teacher: &[f64],
    gamma: f64,
    reduction: ConsReduction,
) -> f64 {
    if low.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &j in low {
        let mut sq = 0.0;
        for (i, &t) in teacher.iter().enumerate() {
            let d = sig(c[j].mask_logits.data()[i]) - t;
            sq += d * d;
        }
        if reduction == ConsReduction::Mean {
            sq /= teacher.len() as f64;
        }
        total += (1.0 - w[j]).powf(gamma) * sq;
    }
    total / low.len() as f64
}

pub fn random_candidates(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize, d: usize) -> Vec<CandidatePrediction> {
    (0..k)
        .map(|_| CandidatePrediction {
            mask_logits: Tensor::new(vec![h, w], normals(rng, h * w).iter().map(|v| 3.0 * v).collect()).unwrap(),
            cls_logits: Tensor::vector(normals(rng, 2)).unwrap(),
            embedding: Tensor::vector(normals(rng, d)).unwrap(),
            saliency: rng.random_range(0.0..1.0),
        })
        .collect()
}

// ---------------------------------------------------------------- neural

pub fn conv2d_naive(x: &Tensor, p: &Conv2dParams) -> Vec<f64> {
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let s = p.weights.shape();
    let (cout, kh, kw) = (s[0], s[2], s[3]);
    let d = p.dilation as isize;
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        for r in 0..h as isize {
            for c in 0..w as isize {
                let mut acc = p.bias.data()[o];
                for i in 0..cin {
                    for a in 0..kh as isize {
                        for b in 0..kw as isize {
                            let rr = r + (a - (kh as isize - 1) / 2) * d;
                            let cc = c + (b - (kw as isize - 1) / 2) * d;
                            if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                continue;
                            }
                            let wv = p.weights.data()[((o * cin + i) * kh + a as usize) * kw + b as usize];
                            acc += wv * x.data()[(i * h + rr as usize) * w + cc as usize];
                        }
                    }
                }
                out[(o * h + r as usize) * w + c as usize] = acc;
            }
        }
    }
    out
}

pub fn se_naive(x: &Tensor, p: &SeParams) -> Vec<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let cr = p.w1.shape()[0];
    let mut gap = vec![0.0; c];
    for ch in 0..c {
        for r in 0..h {
            for col in 0..w {
                gap[ch] += x.data()[(ch * h + r) * w + col];
            }
        }
        gap[ch] /= (h * w) as f64;
    }
    let mut hidden = vec![0.0; cr];
    for i in 0..cr {
        for j in 0..c {
            hidden[i] += p.w1.data()[i * c + j] * gap[j];
        }
        if hidden[i] < 0.0 {
            hidden[i] = 0.0;
        }
    }
    let mut out = x.data().to_vec();
    for ch in 0..c {
        let mut z = 0.0;
        for j in 0..cr {
            z += p.w2.data()[ch * cr + j] * hidden[j];
        }
        let s = sig(z);
        for v in &mut out[ch * h * w..(ch + 1) * h * w] {
            *v *= s;
        }
    }
    out
}

pub fn aspp_naive(x: &Tensor, p: &AsppParams) -> Vec<f64> {
    let branch_outs: Vec<Vec<f64>> = p.branches.iter().map(|b| conv2d_naive(x, b)).collect();
    match p.fusion {
        AsppFusion::Sum => {
            let mut acc = vec![0.0; branch_outs[0].len()];
            for o in &branch_outs {
                for (a, v) in acc.iter_mut().zip(o) {
                    *a += v;
                }
            }
            acc
        }
        AsppFusion::Project => {
            let (h, w) = (x.shape()[1], x.shape()[2]);
            let cat: Vec<f64> = branch_outs.concat();
            let cin = cat.len() / (h * w);
            conv2d_naive(&Tensor::new(vec![cin, h, w], cat).unwrap(), p.projection.as_ref().unwrap())
        }
    }
}

pub fn gate_fuse_naive(x_tilde: &Tensor, f: &Tensor, gate: &Conv2dParams) -> Vec<f64> {
    let (c, h, w) = (x_tilde.shape()[0], x_tilde.shape()[1], x_tilde.shape()[2]);
    let cat = [x_tilde.data(), f.data()].concat();
    let g = conv2d_naive(&Tensor::new(vec![2 * c, h, w], cat).unwrap(), gate);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for i in 0..h * w {
            let gv = sig(g[i]);
            let a = x_tilde.data()[ch * h * w + i];
            let b = f.data()[ch * h * w + i];
            out[ch * h * w + i] = (1.0 - gv) * a + gv * b;
        }
    }
    out
}

// ---------------------------------------------------------------- radiomics

pub const OFFSETS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

/// Equal-width gray levels `1..=ng` over the ROI range; 0 outside.
pub fn levels_oracle(img: &[f64], roi: &[bool], ng: usize) -> Vec<usize> {
    let vals: Vec<f64> = img.iter().zip(roi).filter(|p| *p.1).map(|p| *p.0).collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    img.iter()
        .zip(roi)
        .map(|(&v, &m)| {
            if !m {
                0
            } else if hi == lo {
                1
            } else {
                let mut l = ((v - lo) / (hi - lo) * ng as f64).floor() as usize + 1;
                if l > ng {
                    l = ng;
                }
                l
            }
        })
        .collect()
}

fn interp_percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let t = pos - i as f64;
    sorted[i] * (1.0 - t) + sorted[i + 1] * t
}

pub fn first_order_oracle(img: &[f64], roi: &[bool], ng: usize) -> Vec<f64> {
    let mut x: Vec<f64> = img.iter().zip(roi).filter(|p| *p.1).map(|p| *p.0).collect();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = x.len() as f64;
    let lv = levels_oracle(img, roi, ng);
    let mut counts = std::collections::BTreeMap::new();
    for (&l, &m) in lv.iter().zip(roi) {
        if m {
            *counts.entry(l).or_insert(0.0) += 1.0;
        }
    }
    let entropy: f64 = counts.values().map(|&c: &f64| -(c / n) * (c / n).log2()).sum();
    let uniformity: f64 = counts.values().map(|&c: &f64| (c / n) * (c / n)).sum();
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let p10 = interp_percentile(&x, 10.0);
    let p90 = interp_percentile(&x, 90.0);
    let robust: Vec<f64> = x.iter().cloned().filter(|v| *v >= p10 && *v <= p90).collect();
    let rmad = if robust.is_empty() {
        0.0
    } else {
        let rm = robust.iter().sum::<f64>() / robust.len() as f64;
        robust.iter().map(|v| (v - rm).abs()).sum::<f64>() / robust.len() as f64
    };
    let energy: f64 = x.iter().map(|v| v * v).sum();
    vec![
        energy,
        entropy,
        x[0],
        p10,
        p90,
        x[x.len() - 1],
        mean,
        interp_percentile(&x, 50.0),
        interp_percentile(&x, 75.0) - interp_percentile(&x, 25.0),
        x[x.len() - 1] - x[0],
        x.iter().map(|v| (v - mean).abs()).sum::<f64>() / n,
        rmad,
        (energy / n).sqrt(),
        var.sqrt(),
        if var > 0.0 { m3 / var.powf(1.5) } else { 0.0 },
        if var > 0.0 { m4 / (var * var) } else { 0.0 },
        var,
        uniformity,
    ]
}

/// Normalized symmetric co-occurrence matrix from explicit pixel pairs;
/// `None` when no offset yields a pair.
pub fn glcm_matrix_oracle(lv: &[usize], h: usize, w: usize, ng: usize) -> Option<Vec<Vec<f64>>> {
    let roi: Vec<(usize, usize)> = (0..h * w).filter(|&i| lv[i] > 0).map(|i| (i / w, i % w)).collect();
    let mut avg = vec![vec![0.0; ng]; ng];
    let mut used = 0;
    for &(dr, dc) in &OFFSETS {
        let mut m = vec![vec![0.0; ng]; ng];
        let mut total = 0.0;
        for &(r1, c1) in &roi {
            for &(r2, c2) in &roi {
                let (er, ec) = (r2 as isize - r1 as isize, c2 as isize - c1 as isize);
                if (er, ec) == (dr, dc) || (er, ec) == (-dr, -dc) {
                    m[lv[r1 * w + c1] - 1][lv[r2 * w + c2] - 1] += 1.0;
                    total += 1.0;
                }
            }
        }
        if total == 0.0 {
            continue;
        }
        used += 1;
        for i in 0..ng {
            for j in 0..ng {
                avg[i][j] += m[i][j] / total;
            }
        }
    }
    if used == 0 {
        return None;
    }
    for row in &mut avg {
        for v in row.iter_mut() {
            *v /= used as f64;
        }
    }
    Some(avg)
}

fn h2(ps: impl IntoIterator<Item = f64>) -> f64 {
    ps.into_iter().filter(|&p| p > 0.0).map(|p| -p * p.log2()).sum()
}

pub fn glcm_features_oracle(p: &[Vec<f64>]) -> Vec<f64> {
    let ng = p.len();
    let g = |i: usize| (i + 1) as f64;
    let px: Vec<f64> = (0..ng).map(|i| p[i].iter().sum()).collect();
    let py: Vec<f64> = (0..ng).map(|j| (0..ng).map(|i| p[i][j]).sum()).collect();
    let all = || (0..ng).flat_map(move |i| (0..ng).map(move |j| (i, j)));
    let mu_x: f64 = all().map(|(i, j)| g(i) * p[i][j]).sum();
    let mu_y: f64 = all().map(|(i, j)| g(j) * p[i][j]).sum();
    let sd_x = all().map(|(i, j)| (g(i) - mu_x).powi(2) * p[i][j]).sum::<f64>().sqrt();
    let sd_y = all().map(|(i, j)| (g(j) - mu_y).powi(2) * p[i][j]).sum::<f64>().sqrt();
    let sum_pk: Vec<f64> = (0..=2 * ng)
        .map(|k| all().filter(|&(i, j)| i + j + 2 == k).map(|(i, j)| p[i][j]).sum())
        .collect();
    let diff_pk: Vec<f64> = (0..ng)
        .map(|k| all().filter(|&(i, j)| i.abs_diff(j) == k).map(|(i, j)| p[i][j]).sum())
        .collect();
    let sum_over = |f: &dyn Fn(usize, usize) -> f64| all().map(|(i, j)| f(i, j) * p[i][j]).sum::<f64>();
    let autocorr = sum_over(&|i, j| g(i) * g(j));
    let hxy = h2(all().map(|(i, j)| p[i][j]));
    let hx = h2(px.clone());
    let hy = h2(py.clone());
    let hxy1: f64 = all()
        .filter(|&(i, j)| p[i][j] > 0.0)
        .map(|(i, j)| -p[i][j] * (px[i] * py[j]).log2())
        .sum();
    let hxy2 = h2(all().map(|(i, j)| px[i] * py[j]));
    let diff_avg: f64 = (0..ng).map(|k| k as f64 * diff_pk[k]).sum();
    let nf = ng as f64;
    vec![
        autocorr,
        mu_x,
        sum_over(&|i, j| (g(i) + g(j) - mu_x - mu_y).powi(4)),
        sum_over(&|i, j| (g(i) + g(j) - mu_x - mu_y).powi(3)),
        sum_over(&|i, j| (g(i) + g(j) - mu_x - mu_y).powi(2)),
        sum_over(&|i, j| (g(i) - g(j)).powi(2)),
        if sd_x * sd_y > 0.0 { (autocorr - mu_x * mu_y) / (sd_x * sd_y) } else { 1.0 },
        diff_avg,
        h2(diff_pk.clone()),
        (0..ng).map(|k| (k as f64 - diff_avg).powi(2) * diff_pk[k]).sum(),
        all().map(|(i, j)| p[i][j] * p[i][j]).sum(),
        hxy,
        if hx.max(hy) > 0.0 { (hxy - hxy1) / hx.max(hy) } else { 0.0 },
        (1.0 - (-2.0 * (hxy2 - hxy)).exp()).max(0.0).sqrt(),
        sum_over(&|i, j| 1.0 / (1.0 + (g(i) - g(j)).powi(2))),
        sum_over(&|i, j| 1.0 / (1.0 + (g(i) - g(j)).powi(2) / (nf * nf))),
        sum_over(&|i, j| 1.0 / (1.0 + (g(i) - g(j)).abs())),
        sum_over(&|i, j| 1.0 / (1.0 + (g(i) - g(j)).abs() / nf)),
        all().filter(|&(i, j)| i != j).map(|(i, j)| p[i][j] / (g(i) - g(j)).powi(2)).sum(),
        all().map(|(i, j)| p[i][j]).fold(0.0, f64::max),
        (0..=2 * ng).map(|k| k as f64 * sum_pk[k]).sum(),
        h2(sum_pk.clone()),
        sum_over(&|i, _| (g(i) - mu_x).powi(2)),
    ]
}

/// Maximal equal-level runs along every grid line parallel to `dir`.
pub fn runs_oracle(lv: &[usize], h: usize, w: usize, dir: (isize, isize)) -> Vec<(usize, usize)> {
    let inside = |r: isize, c: isize| r >= 0 && c >= 0 && r < h as isize && c < w as isize;
    let mut runs = Vec::new();
    for r in 0..h as isize {
        for c in 0..w as isize {
            if inside(r - dir.0, c - dir.1) {
                continue;
            }
            let mut line = Vec::new();
            let (mut rr, mut cc) = (r, c);
            while inside(rr, cc) {
                line.push(lv[rr as usize * w + cc as usize]);
                rr += dir.0;
                cc += dir.1;
            }
            let mut i = 0;
            while i < line.len() {
                let mut j = i;
                while j < line.len() && line[j] == line[i] {
                    j += 1;
                }
                if line[i] > 0 {
                    runs.push((line[i], j - i));
                }
                i = j;
            }
        }
    }
    runs
}

/// Equal-level 8-connected zones by stack flood fill.
pub fn zones_oracle(lv: &[usize], h: usize, w: usize, eight: bool) -> Vec<(usize, usize)> {
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if lv[start] == 0 || seen[start] {
            continue;
        }
        let l = lv[start];
        let mut stack = vec![start];
        seen[start] = true;
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    if (dr, dc) == (0, 0) || (!eight && dr != 0 && dc != 0) {
                        continue;
                    }
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if !seen[j] && lv[j] == l {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push((l, size));
    }
    out
}

/// Emphasis / non-uniformity / variance / entropy family over
/// `(level, size)` counts.
pub fn size_family_oracle(items: &[(usize, usize)], np: usize) -> Vec<f64> {
    let n = items.len() as f64;
    let mut m = std::collections::BTreeMap::<(usize, usize), f64>::new();
    for &it in items {
        *m.entry(it).or_insert(0.0) += 1.0;
    }
    let e = |f: &dyn Fn(f64, f64) -> f64| m.iter().map(|(&(i, j), &c)| c / n * f(i as f64, j as f64)).sum::<f64>();
    let mut per_level = std::collections::BTreeMap::<usize, f64>::new();
    let mut per_size = std::collections::BTreeMap::<usize, f64>::new();
    for (&(i, j), &c) in &m {
        *per_level.entry(i).or_insert(0.0) += c;
        *per_size.entry(j).or_insert(0.0) += c;
    }
    let gln: f64 = per_level.values().map(|v| v * v).sum();
    let sn: f64 = per_size.values().map(|v| v * v).sum();
    let mu_i = e(&|i, _| i);
    let mu_j = e(&|_, j| j);
    vec![
        e(&|_, j| 1.0 / (j * j)),
        e(&|_, j| j * j),
        gln / n,
        gln / (n * n),
        sn / n,
        sn / (n * n),
        n / np as f64,
        e(&|i, _| (i - mu_i).powi(2)),
        e(&|_, j| (j - mu_j).powi(2)),
        m.values().map(|&c| -(c / n) * (c / n).log2()).sum(),
        e(&|i, _| 1.0 / (i * i)),
        e(&|i, _| i * i),
        e(&|i, j| 1.0 / (i * i * j * j)),
        e(&|i, j| i * i / (j * j)),
        e(&|i, j| j * j / (i * i)),
        e(&|i, j| i * i * j * j),
    ]
}

pub fn glrlm_oracle(lv: &[usize], h: usize, w: usize) -> Vec<f64> {
    let np = lv.iter().filter(|&&l| l > 0).count();
    let mut acc = vec![0.0; 16];
    for &d in &OFFSETS {
        let f = size_family_oracle(&runs_oracle(lv, h, w, d), np);
        for (a, v) in acc.iter_mut().zip(f) {
            *a += v / OFFSETS.len() as f64;
        }
    }
    acc
}

pub fn glszm_oracle(lv: &[usize], h: usize, w: usize) -> Vec<f64> {
    let np = lv.iter().filter(|&&l| l > 0).count();
    size_family_oracle(&zones_oracle(lv, h, w, true), np)
}

// ---------------------------------------------------------------- selection

fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

pub fn mi_oracle(x: &[f64], y: &[usize], bins: usize) -> f64 {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = x.len() as f64;
    let bin = |v: f64| {
        if hi == lo {
            0
        } else {
            (((v - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1)
        }
    };
    let mut mi = 0.0;
    for b in 0..bins {
        for c in 0..2 {
            let nbc = x.iter().zip(y).filter(|(v, l)| bin(**v) == b && **l == c).count() as f64;
            if nbc == 0.0 {
                continue;
            }
            let nb = x.iter().filter(|v| bin(**v) == b).count() as f64;
            let nc = y.iter().filter(|l| **l == c).count() as f64;
            mi += nbc / n * (nbc * n / (nb * nc)).ln();
        }
    }
    mi.max(0.0)
}

/// Greedy selection recomputing every criterion value from scratch.
pub fn mrmr_oracle(cols: &[Vec<f64>], y: &[usize], k: usize, bins: usize) -> Vec<usize> {
    let mut sel: Vec<usize> = Vec::new();
    while sel.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..cols.len() {
            if sel.contains(&j) {
                continue;
            }
            let rel = mi_oracle(&cols[j], y, bins);
            let phi = if sel.is_empty() {
                rel
            } else {
                rel - sel.iter().map(|&s| pearson_oracle(&cols[j], &cols[s]).abs()).sum::<f64>() / sel.len() as f64
            };
            if best.is_none() || phi > best.unwrap().1 {
                best = Some((j, phi));
            }
        }
        sel.push(best.unwrap().0);
    }
    sel
}

/// Standardized columns with population statistics.
pub fn standardize(cols: &mut [Vec<f64>]) {
    for c in cols.iter_mut() {
        let n = c.len() as f64;
        let m = c.iter().sum::<f64>() / n;
        let s = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        c.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
}

// ---------------------------------------------------------------- metrics

/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)` over all positive/negative pairs.
pub fn auc_pairwise(scores: &[f64], labels: &[usize]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut a = x.to_vec();
    let mut b = x.to_vec();
    a[i] += h;
    b[i] -= h;
    (f(&a) - f(&b)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs())).max(1e-8)
}
