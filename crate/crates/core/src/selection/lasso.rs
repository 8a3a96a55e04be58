//! L1-penalized logistic regression by monotone accelerated proximal
//! gradient, with a cross-validated regularization path.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};

use super::stats::check_two_classes;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub folds: usize,
    pub max_iter: usize,
    /// Stop once the largest KKT violation falls below this.
    pub kkt_tol: f64,
    pub seed: u64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            n_lambdas: 50,
            lambda_min_ratio: 1e-4,
            folds: 5,
            max_iter: 10_000,
            kkt_tol: 1e-9,
            seed: 42,
        }
    }
}

/// One penalized solution.
#[derive(Clone, Debug, PartialEq)]
pub struct LassoSolution {
    pub w: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub kkt_violation: f64,
    /// Objective after each accepted iteration (populated on request).
    pub objective_trace: Vec<f64>,
}

/// Column-major design: `x[j * n + i]` is feature `j` of sample `i`.
struct Problem {
    x: Vec<f64>,
    y: Vec<f64>,
    p: usize,
}

impl Problem {
    fn new(cols: &[Vec<f64>], y: &[usize], idx: Option<&[usize]>) -> Self {
        let rows: Vec<usize> = idx.map_or_else(|| (0..y.len()).collect(), <[usize]>::to_vec);
        let x = cols.iter().flat_map(|c| rows.iter().map(move |&i| c[i])).collect();
        let y = rows.iter().map(|&i| y[i] as f64).collect();
        Self { x, y, p: cols.len() }
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.x[j * n..(j + 1) * n]
    }

    fn margins(&self, w: &[f64], b: f64) -> Vec<f64> {
        let mut z = vec![b; self.n()];
        for (j, &wj) in w.iter().enumerate() {
            if wj != 0.0 {
                for (zi, &xi) in z.iter_mut().zip(self.col(j)) {
                    *zi += wj * xi;
                }
            }
        }
        z
    }

    fn smooth(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.y).map(|(&zi, &yi)| softplus(zi) - yi * zi).sum::<f64>() / self.n() as f64
    }

    /// Smooth loss and its gradient from one exponential per sample.
    fn smooth_grad(&self, z: &[f64]) -> (f64, Vec<f64>, f64) {
        let n = self.n() as f64;
        let mut f = 0.0;
        let r: Vec<f64> = z
            .iter()
            .zip(&self.y)
            .map(|(&zi, &yi)| {
                let e = (-zi.abs()).exp();
                f += zi.max(0.0) + e.ln_1p() - yi * zi;
                let s = if zi >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                s - yi
            })
            .collect();
        let gw = (0..self.p)
            .map(|j| self.col(j).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / n)
            .collect();
        (f / n, gw, r.iter().sum::<f64>() / n)
    }

    fn grad(&self, z: &[f64]) -> (Vec<f64>, f64) {
        let n = self.n() as f64;
        let r: Vec<f64> = z.iter().zip(&self.y).map(|(&zi, &yi)| sigmoid(zi) - yi).collect();
        let gw = (0..self.p)
            .map(|j| self.col(j).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / n)
            .collect();
        (gw, r.iter().sum::<f64>() / n)
    }
}

fn l1(w: &[f64]) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Largest violation of the optimality conditions at `(w, b)`.
fn kkt_of(gw: &[f64], gb: f64, w: &[f64], lambda: f64) -> f64 {
    let mut v = gb.abs();
    for (g, &wj) in gw.iter().zip(w) {
        let e = if wj == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g + lambda * wj.signum()).abs()
        };
        v = v.max(e);
    }
    v
}

/// Largest KKT violation of a candidate solution on the full data.
pub fn kkt_violation(cols: &[Vec<f64>], y: &[usize], w: &[f64], intercept: f64, lambda: f64) -> f64 {
    let pb = Problem::new(cols, y, None);
    let (gw, gb) = pb.grad(&pb.margins(w, intercept));
    kkt_of(&gw, gb, w, lambda)
}

/// Gradient of the mean logistic loss with respect to `w` and the intercept.
pub fn logistic_gradient(cols: &[Vec<f64>], y: &[usize], w: &[f64], intercept: f64) -> (Vec<f64>, f64) {
    let pb = Problem::new(cols, y, None);
    pb.grad(&pb.margins(w, intercept))
}

/// `(1/N) Σ −log P(y_i | x_i) + λ ‖w‖₁`.
pub fn lasso_objective(cols: &[Vec<f64>], y: &[usize], w: &[f64], intercept: f64, lambda: f64) -> f64 {
    let pb = Problem::new(cols, y, None);
    pb.smooth(&pb.margins(w, intercept)) + lambda * l1(w)
}

fn base_rate_logit(pb: &Problem) -> f64 {
    let m = pb.y.iter().sum::<f64>() / pb.n() as f64;
    (m / (1.0 - m)).ln()
}

/// Smallest λ with an all-zero solution: `max_j |∂/∂w_j|` at `w = 0` and
/// the optimal intercept.
pub fn lambda_max(cols: &[Vec<f64>], y: &[usize]) -> Result<f64> {
    check_two_classes(y)?;
    let pb = Problem::new(cols, y, None);
    Ok(lambda_max_of(&pb))
}

fn lambda_max_of(pb: &Problem) -> f64 {
    let b0 = base_rate_logit(pb);
    let (gw, _) = pb.grad(&vec![b0; pb.n()]);
    gw.iter().fold(0.0, |m: f64, g| m.max(g.abs()))
}

fn solve(pb: &Problem, lambda: f64, w0: &[f64], b0: f64, cfg: &LassoConfig, trace: bool) -> LassoSolution {
    let p = pb.p;
    let mut x = w0.to_vec();
    let mut xb = b0;
    let mut zx = pb.margins(&x, xb);
    let mut fx = pb.smooth(&zx) + lambda * l1(&x);
    let (mut x_prev, mut xb_prev, mut zx_prev) = (x.clone(), xb, zx.clone());
    let mut t = 1.0f64;
    let mut mom = 0.0f64;
    let mut lip = 0.25f64;
    let mut history = Vec::new();
    let mut kkt = f64::INFINITY;
    let mut it = 0;
    let mut yw = vec![0.0; p];
    let mut zy = vec![0.0; zx.len()];
    loop {
        if it % 5 == 0 || it == cfg.max_iter {
            let (gw, gb) = pb.grad(&zx);
            kkt = kkt_of(&gw, gb, &x, lambda);
            if kkt <= cfg.kkt_tol || it == cfg.max_iter {
                break;
            }
        }
        it += 1;
        // margins are linear in (w, b), so the extrapolated ones need no pass over X
        for j in 0..p {
            yw[j] = x[j] + mom * (x[j] - x_prev[j]);
        }
        let yb = xb + mom * (xb - xb_prev);
        for i in 0..zy.len() {
            zy[i] = zx[i] + mom * (zx[i] - zx_prev[i]);
        }
        let (fy, gw, gb) = pb.smooth_grad(&zy);
        lip = (lip * 0.8).max(1e-8);
        let (cw, cb, zc, fc_smooth) = loop {
            let cw: Vec<f64> = (0..p).map(|j| soft_threshold(yw[j] - gw[j] / lip, lambda / lip)).collect();
            let cb = yb - gb / lip;
            let zc = pb.margins(&cw, cb);
            let fc = pb.smooth(&zc);
            let mut lin = (cb - yb) * gb;
            let mut sq = (cb - yb).powi(2);
            for j in 0..p {
                let d = cw[j] - yw[j];
                lin += d * gw[j];
                sq += d * d;
            }
            if fc <= fy + lin + 0.5 * lip * sq + 1e-15 * fy.abs() || lip > 1e12 {
                break (cw, cb, zc, fc);
            }
            lip *= 2.0;
        };
        let fc = fc_smooth + lambda * l1(&cw);
        if fc <= fx {
            // gradient-based restart when the step opposes the momentum
            let mut dot_restart = (yb - cb) * (cb - xb);
            for j in 0..p {
                dot_restart += (yw[j] - cw[j]) * (cw[j] - x[j]);
            }
            x_prev = std::mem::replace(&mut x, cw);
            xb_prev = std::mem::replace(&mut xb, cb);
            zx_prev = std::mem::replace(&mut zx, zc);
            let decrease = fx - fc;
            fx = fc;
            if dot_restart > 0.0 {
                t = 1.0;
                mom = 0.0;
            } else {
                let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
                mom = (t - 1.0) / t_next;
                t = t_next;
            }
            if trace {
                history.push(fx);
            }
            if decrease == 0.0 && mom == 0.0 {
                break;
            }
        } else {
            if mom == 0.0 {
                // a plain prox step from x no longer decreases F at f64 resolution
                break;
            }
            t = 1.0;
            mom = 0.0;
            x_prev.clone_from(&x);
            xb_prev = xb;
            zx_prev.clone_from(&zx);
            if trace {
                history.push(fx);
            }
        }
    }
    if kkt > cfg.kkt_tol {
        let (gw, gb) = pb.grad(&zx);
        kkt = kkt_of(&gw, gb, &x, lambda);
    }
    LassoSolution {
        w: x,
        intercept: xb,
        iterations: it,
        kkt_violation: kkt,
        objective_trace: history,
    }
}

/// Solves at a single `lambda`, starting from `w = 0` and the base-rate
/// intercept.
pub fn lasso_solve(cols: &[Vec<f64>], y: &[usize], lambda: f64, cfg: &LassoConfig, trace: bool) -> Result<LassoSolution> {
    check_two_classes(y)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    if cols.iter().any(|c| c.len() != y.len()) {
        return Err(Error::shape("columns and labels differ in length"));
    }
    let pb = Problem::new(cols, y, None);
    let b0 = base_rate_logit(&pb);
    Ok(solve(&pb, lambda, &vec![0.0; cols.len()], b0, cfg, trace))
}

/// `n` log-spaced values from `lmax` down to `ratio · lmax`.
pub fn lambda_grid(lmax: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lmax];
    }
    let (hi, lo) = (lmax.ln(), (lmax * ratio).ln());
    (0..n).map(|k| (hi + (lo - hi) * k as f64 / (n - 1) as f64).exp()).collect()
}

/// Stratified fold assignment: each class is shuffled with a seeded
/// ChaCha8 stream and dealt round-robin.
pub fn stratified_folds(y: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0; y.len()];
    let mut next = 0;
    for class in 0..2 {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assign[i] = next % folds;
            next += 1;
        }
    }
    assign
}

fn path(pb: &Problem, grid: &[f64], cfg: &LassoConfig) -> Vec<LassoSolution> {
    let mut w = vec![0.0; pb.p];
    let mut b = base_rate_logit(pb);
    let mut out = Vec::with_capacity(grid.len());
    for &lam in grid {
        let s = solve(pb, lam, &w, b, cfg, false);
        w.clone_from(&s.w);
        b = s.intercept;
        out.push(s);
    }
    out
}

fn log_loss(cols: &[Vec<f64>], y: &[usize], idx: &[usize], w: &[f64], b: f64) -> f64 {
    let pb = Problem::new(cols, y, Some(idx));
    pb.smooth(&pb.margins(w, b))
}

/// Cross-validated fit.
#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    pub w: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub lambda_max: f64,
    pub grid: Vec<f64>,
    pub cv_loss: Vec<f64>,
    pub kkt_violation: f64,
}

/// Picks λ by mean held-out log-loss over stratified folds (ties go to the
/// larger λ) and refits on all rows along a warm-started path.
pub fn lasso_fit(cols: &[Vec<f64>], y: &[usize], cfg: &LassoConfig) -> Result<LassoFit> {
    check_two_classes(y)?;
    let n = y.len();
    if cols.iter().any(|c| c.len() != n) {
        return Err(Error::shape("columns and labels differ in length"));
    }
    for (j, c) in cols.iter().enumerate() {
        let m = c.iter().sum::<f64>() / n as f64;
        let s = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        if m.abs() > 1e-6 || (s - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("column {j} is not standardized (mean {m:.3e}, std {s:.6})")));
        }
    }
    if cfg.folds < 2 {
        return Err(Error::invalid("at least two folds are required"));
    }
    let full = Problem::new(cols, y, None);
    let lmax = lambda_max_of(&full);
    let grid = lambda_grid(lmax.max(f64::MIN_POSITIVE), cfg.n_lambdas, cfg.lambda_min_ratio);

    let assign = stratified_folds(y, cfg.folds, cfg.seed);
    let fold_losses: Vec<Vec<f64>> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| assign[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| assign[i] == f).collect();
            let ty: Vec<usize> = train.iter().map(|&i| y[i]).collect();
            check_two_classes(&ty)?;
            let pb = Problem::new(cols, y, Some(&train));
            Ok(path(&pb, &grid, cfg)
                .iter()
                .map(|s| log_loss(cols, y, &test, &s.w, s.intercept))
                .collect())
        })
        .collect::<Result<_>>()?;
    let cv_loss: Vec<f64> = (0..grid.len())
        .map(|k| fold_losses.iter().map(|f| f[k]).sum::<f64>() / cfg.folds as f64)
        .collect();
    let mut best = 0;
    for k in 1..grid.len() {
        if cv_loss[k] < cv_loss[best] {
            best = k;
        }
    }
    let sol = path(&full, &grid[..=best], cfg).pop().expect("grid is non-empty");
    Ok(LassoFit {
        w: sol.w,
        intercept: sol.intercept,
        lambda: grid[best],
        lambda_max: lmax,
        grid,
        cv_loss,
        kkt_violation: sol.kkt_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<usize>) {
        let x1 = vec![-1.2, -0.8, -0.1, 0.3, -0.4, 0.9, 1.3, 0.2, 1.1, -1.5];
        let x2 = vec![0.5, -0.3, 1.0, -1.1, 0.2, 0.4, -0.6, 1.2, -0.9, 0.1];
        let y = vec![0, 0, 1, 0, 0, 1, 1, 1, 1, 0];
        (vec![x1, x2], y)
    }

    #[test]
    fn lambda_max_kills_everything() {
        let (cols, y) = toy();
        let lm = lambda_max(&cols, &y).unwrap();
        let s = lasso_solve(&cols, &y, lm, &LassoConfig::default(), false).unwrap();
        assert!(s.w.iter().all(|&v| v == 0.0));
        let s = lasso_solve(&cols, &y, 2.0 * lm, &LassoConfig::default(), false).unwrap();
        assert!(s.w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kkt_and_monotone_objective() {
        let (cols, y) = toy();
        let lm = lambda_max(&cols, &y).unwrap();
        let s = lasso_solve(&cols, &y, 0.1 * lm, &LassoConfig::default(), true).unwrap();
        assert!(s.kkt_violation <= 1e-6);
        assert!(kkt_violation(&cols, &y, &s.w, s.intercept, 0.1 * lm) <= 1e-6);
        assert!(s.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn grid_and_folds() {
        let g = lambda_grid(1.0, 50, 1e-4);
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 1.0);
        assert!((g[49] - 1e-4).abs() < 1e-15);
        let y = vec![0, 1, 0, 1, 0, 1, 0, 1, 1, 0];
        let f = stratified_folds(&y, 5, 3);
        for k in 0..5 {
            assert_eq!(f.iter().filter(|&&v| v == k).count(), 2);
        }
        assert_eq!(f, stratified_folds(&y, 5, 3));
    }
}
