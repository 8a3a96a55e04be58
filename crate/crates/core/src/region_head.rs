//! Mask-guided pooling and the small diagnostic MLP trained on top of it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{focal_sample, FocalConfig};
use crate::tensor::Tensor;

pub const POOL_EPS: f64 = 1e-6;
pub const DEFAULT_HIDDEN: usize = 128;

/// Per-channel `Σ x·m / (Σ m + eps)`.
pub fn masked_pool(x: &Tensor, mask: &Tensor, eps: f64) -> Result<Vec<f64>> {
    let (c, h, w) = x.dims3()?;
    if mask.dims2()? != (h, w) {
        return Err(Error::shape(format!(
            "mask {:?} does not match feature map spatial size [{h}, {w}]",
            mask.shape()
        )));
    }
    let denom = mask.sum() + eps;
    Ok((0..c)
        .map(|ch| x.channel(ch).iter().zip(mask.data()).map(|(a, m)| a * m).sum::<f64>() / denom)
        .collect())
}

/// Per-channel global average and global maximum.
pub fn global_pools(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (c, h, w) = x.dims3()?;
    let n = (h * w) as f64;
    let gap = (0..c).map(|ch| x.channel(ch).iter().sum::<f64>() / n).collect();
    let gmp = (0..c)
        .map(|ch| x.channel(ch).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok((gap, gmp))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolVector {
    pub f_lesion: Vec<f64>,
    pub f_box: Vec<f64>,
    pub f_gap: Vec<f64>,
    pub f_gmp: Vec<f64>,
}

impl PoolVector {
    /// `[F_lesion; F_box; F_GAP; F_GMP]`.
    pub fn concatenated(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 * self.f_gap.len());
        v.extend_from_slice(&self.f_lesion);
        v.extend_from_slice(&self.f_box);
        v.extend_from_slice(&self.f_gap);
        v.extend_from_slice(&self.f_gmp);
        v
    }

    pub fn from_concatenated(v: &[f64]) -> Result<Self> {
        if v.is_empty() || v.len() % 4 != 0 {
            return Err(Error::shape(format!("pool vector length {} is not a multiple of 4", v.len())));
        }
        let c = v.len() / 4;
        Ok(Self {
            f_lesion: v[..c].to_vec(),
            f_box: v[c..2 * c].to_vec(),
            f_gap: v[2 * c..3 * c].to_vec(),
            f_gmp: v[3 * c..].to_vec(),
        })
    }
}

pub fn assemble_pool(x: &Tensor, lesion_mask: &Tensor, box_mask: &Tensor, eps: f64) -> Result<PoolVector> {
    let f_lesion = masked_pool(x, lesion_mask, eps)?;
    let f_box = masked_pool(x, box_mask, eps)?;
    let (f_gap, f_gmp) = global_pools(x)?;
    Ok(PoolVector {
        f_lesion,
        f_box,
        f_gap,
        f_gmp,
    })
}

/// Two-layer perceptron with ReLU hidden units and two output logits.
/// Inputs are standardized by `(x - input_shift) / input_scale` first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpHead {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `[hidden, input]`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `[2, hidden]`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
}

impl MlpHead {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; 2 * hidden_dim],
            b2: vec![0.0; 2],
            input_shift: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
        }
    }

    /// He-normal first layer, Xavier-normal second layer, zero biases.
    pub fn random(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, (2.0 / input_dim as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (1.0 / hidden_dim as f64).sqrt()).unwrap();
        let mut head = Self::zeros(input_dim, hidden_dim);
        head.w1.iter_mut().for_each(|v| *v = n1.sample(&mut rng));
        head.w2.iter_mut().for_each(|v| *v = n2.sample(&mut rng));
        head
    }

    /// Sets the input normalization to the column mean and population std
    /// of `xs` (std 0 maps to 1).
    pub fn fit_normalization(&mut self, xs: &[Vec<f64>]) {
        let n = xs.len().max(1) as f64;
        for j in 0..self.input_dim {
            let m = xs.iter().map(|x| x[j]).sum::<f64>() / n;
            let v = xs.iter().map(|x| (x[j] - m) * (x[j] - m)).sum::<f64>() / n;
            self.input_shift[j] = m;
            self.input_scale[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn validate(&self) -> Result<()> {
        let (i, h) = (self.input_dim, self.hidden_dim);
        if self.w1.len() != h * i
            || self.b1.len() != h
            || self.w2.len() != 2 * h
            || self.b2.len() != 2
            || self.input_shift.len() != i
            || self.input_scale.len() != i
        {
            return Err(Error::shape("inconsistent MLP head parameter sizes"));
        }
        Ok(())
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_shift)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn hidden_pre(&self, xn: &[f64]) -> Vec<f64> {
        (0..self.hidden_dim)
            .map(|k| {
                let row = &self.w1[k * self.input_dim..(k + 1) * self.input_dim];
                self.b1[k] + row.iter().zip(xn).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    fn output(&self, hidden: &[f64]) -> [f64; 2] {
        let mut out = [self.b2[0], self.b2[1]];
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.w2[c * self.hidden_dim..(c + 1) * self.hidden_dim];
            *o += row.iter().zip(hidden).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }
}

/// Logits of the head for one input vector.
pub fn mlp_forward(x: &[f64], head: &MlpHead) -> Result<[f64; 2]> {
    head.validate()?;
    if x.len() != head.input_dim {
        return Err(Error::shape(format!("head expects {} inputs, got {}", head.input_dim, x.len())));
    }
    let pre = head.hidden_pre(&head.normalize(x));
    let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
    Ok(head.output(&hidden))
}

/// Gradient of a head objective, laid out like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Weighted mean focal loss `Σ s_i ℓ_i / Σ s_i` and its parameter gradient.
pub fn head_loss_grad(
    head: &MlpHead,
    xs: &[Vec<f64>],
    labels: &[usize],
    sample_weights: &[f64],
    focal: &FocalConfig,
) -> Result<(f64, HeadGrad)> {
    head.validate()?;
    if xs.len() != labels.len() || xs.len() != sample_weights.len() || xs.is_empty() {
        return Err(Error::shape("inputs, labels and sample weights differ in length"));
    }
    let total_w: f64 = sample_weights.iter().sum();
    if !(total_w > 0.0) {
        return Err(Error::invalid("sample weights must have positive sum"));
    }
    let (i_dim, h_dim) = (head.input_dim, head.hidden_dim);
    let mut g = HeadGrad {
        w1: vec![0.0; head.w1.len()],
        b1: vec![0.0; h_dim],
        w2: vec![0.0; 2 * h_dim],
        b2: vec![0.0; 2],
    };
    let mut loss = 0.0;
    for ((x, &y), &sw) in xs.iter().zip(labels).zip(sample_weights) {
        if x.len() != i_dim {
            return Err(Error::shape("input vector length differs from head input size"));
        }
        if y > 1 {
            return Err(Error::invalid(format!("label {y} outside 0..2")));
        }
        let xn = head.normalize(x);
        let pre = head.hidden_pre(&xn);
        let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let z = head.output(&hidden);
        let (l, dz) = focal_sample(&z, y, focal);
        let s = sw / total_w;
        loss += s * l;
        for c in 0..2 {
            let d = s * dz[c];
            g.b2[c] += d;
            for k in 0..h_dim {
                g.w2[c * h_dim + k] += d * hidden[k];
            }
        }
        for k in 0..h_dim {
            if pre[k] <= 0.0 {
                continue;
            }
            let dh = s * (dz[0] * head.w2[k] + dz[1] * head.w2[h_dim + k]);
            g.b1[k] += dh;
            let row = &mut g.w1[k * i_dim..(k + 1) * i_dim];
            row.iter_mut().zip(&xn).for_each(|(gw, xv)| *gw += dh * xv);
        }
    }
    Ok((loss, g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub focal_gamma: f64,
    /// Use inverse-frequency class weights in the focal loss.
    pub balanced: bool,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.05,
            focal_gamma: 2.0,
            balanced: true,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

/// Full-batch gradient descent on the weighted focal loss. Returns the
/// trained head and the loss before each epoch's update.
pub fn train_head(
    head: &MlpHead,
    xs: &[Vec<f64>],
    labels: &[usize],
    sample_weights: Option<&[f64]>,
    cfg: &TrainConfig,
) -> Result<(MlpHead, Vec<f64>)> {
    let focal = if cfg.balanced {
        FocalConfig::balanced(labels, cfg.focal_gamma)?
    } else {
        if !labels.contains(&0) || !labels.contains(&1) {
            return Err(Error::SingleClass);
        }
        FocalConfig {
            gamma: cfg.focal_gamma,
            class_weights: [1.0, 1.0],
        }
    };
    let ones = vec![1.0; xs.len()];
    let sw = sample_weights.unwrap_or(&ones);
    let mut h = head.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (loss, g) = head_loss_grad(&h, xs, labels, sw, &focal)?;
        history.push(loss);
        if cfg.lr == 0.0 {
            continue;
        }
        let step = |p: &mut [f64], d: &[f64]| p.iter_mut().zip(d).for_each(|(a, b)| *a -= cfg.lr * b);
        step(&mut h.w1, &g.w1);
        step(&mut h.b1, &g.b1);
        step(&mut h.w2, &g.w2);
        step(&mut h.b2, &g.b2);
    }
    Ok((h, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::new(vec![c, h, w], (0..c * h * w).map(|i| ((i * 7) % 11) as f64 - 3.0).collect()).unwrap()
    }

    #[test]
    fn pooling_edge_cases() {
        let x = feat(3, 4, 5);
        let ones = Tensor::full(vec![4, 5], 1.0).unwrap();
        let (gap, gmp) = global_pools(&x).unwrap();
        let full = masked_pool(&x, &ones, POOL_EPS).unwrap();
        for c in 0..3 {
            assert!((full[c] - gap[c]).abs() <= POOL_EPS * gap[c].abs().max(1.0));
            assert!(gmp[c] >= gap[c]);
        }
        let zero = Tensor::zeros(vec![4, 5]).unwrap();
        assert!(masked_pool(&x, &zero, POOL_EPS).unwrap().iter().all(|&v| v == 0.0));
        assert!(masked_pool(&x, &Tensor::zeros(vec![4, 4]).unwrap(), POOL_EPS).is_err());
    }

    #[test]
    fn concatenation_order() {
        let p = PoolVector {
            f_lesion: vec![1.0],
            f_box: vec![2.0],
            f_gap: vec![3.0],
            f_gmp: vec![4.0],
        };
        assert_eq!(p.concatenated(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(PoolVector::from_concatenated(&p.concatenated()).unwrap(), p);
    }

    #[test]
    fn zero_head_returns_bias() {
        let mut h = MlpHead::zeros(4, 3);
        h.b2 = vec![0.25, -1.0];
        assert_eq!(mlp_forward(&[1.0, 2.0, 3.0, 4.0], &h).unwrap(), [0.25, -1.0]);
        assert!(mlp_forward(&[1.0], &h).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let h = MlpHead::random(2, 8, 1);
        let xs = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let cfg = TrainConfig {
            epochs: 5,
            lr: 0.0,
            ..Default::default()
        };
        let (out, hist) = train_head(&h, &xs, &[0, 1], None, &cfg).unwrap();
        assert_eq!(out, h);
        assert_eq!(hist.len(), 5);
        assert!(matches!(train_head(&h, &xs, &[1, 1], None, &cfg), Err(Error::SingleClass)));
    }
}
