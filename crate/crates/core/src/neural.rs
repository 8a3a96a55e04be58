//! Forward-only feature recalibration blocks: squeeze-excitation, a dilated
//! pyramid, and a spatial gate that blends the two.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::tensor::Tensor;

pub const DEFAULT_DILATIONS: [usize; 4] = [1, 6, 12, 18];

/// 2-D convolution parameters with "same" zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dParams {
    /// `[Cout, Cin, kh, kw]`, odd kernel sizes.
    pub weights: Tensor,
    /// `[Cout]`.
    pub bias: Tensor,
    pub dilation: usize,
}

impl Conv2dParams {
    pub fn new(weights: Tensor, bias: Tensor, dilation: usize) -> Result<Self> {
        let [cout, _, kh, kw] = weights.shape() else {
            return Err(Error::shape(format!("conv weights must be 4-D, got {:?}", weights.shape())));
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape("same padding needs odd kernel sizes"));
        }
        if bias.shape() != [*cout] {
            return Err(Error::shape(format!("bias shape {:?} for {cout} output channels", bias.shape())));
        }
        if dilation == 0 {
            return Err(Error::invalid("dilation must be positive"));
        }
        Ok(Self { weights, bias, dilation })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    /// 1×1 identity mapping over `c` channels.
    pub fn identity(c: usize) -> Self {
        let mut w = vec![0.0; c * c];
        for i in 0..c {
            w[i * c + i] = 1.0;
        }
        Self {
            weights: Tensor::new(vec![c, c, 1, 1], w).unwrap(),
            bias: Tensor::zeros(vec![c]).unwrap(),
            dilation: 1,
        }
    }

    /// He-style normal init, zero bias.
    pub fn random(cout: usize, cin: usize, k: usize, dilation: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let w = (0..cout * cin * k * k).map(|_| normal.sample(rng)).collect();
        Self {
            weights: Tensor::new(vec![cout, cin, k, k], w).unwrap(),
            bias: Tensor::zeros(vec![cout]).unwrap(),
            dilation,
        }
    }
}

/// Zero-padded "same" cross-correlation with dilation.
pub fn conv2d(x: &Tensor, p: &Conv2dParams) -> Result<Tensor> {
    let (cin, h, w) = x.dims3()?;
    let &[cout, pcin, kh, kw] = p.weights.shape() else {
        return Err(Error::shape("conv weights must be 4-D"));
    };
    if pcin != cin {
        return Err(Error::shape(format!("conv expects {pcin} input channels, got {cin}")));
    }
    let d = p.dilation;
    let (ph, pw) = ((kh - 1) / 2 * d, (kw - 1) / 2 * d);
    let wt = p.weights.data();
    let xd = x.data();
    let mut out = vec![0.0; cout * h * w];
    for (o, plane) in out.chunks_mut(h * w).enumerate() {
        plane.fill(p.bias.data()[o]);
        for i in 0..cin {
            let xin = &xd[i * h * w..(i + 1) * h * w];
            for a in 0..kh {
                for b in 0..kw {
                    let k = wt[((o * cin + i) * kh + a) * kw + b];
                    if k == 0.0 {
                        continue;
                    }
                    let dr = (a * d) as isize - ph as isize;
                    let dc = (b * d) as isize - pw as isize;
                    let r_lo = (-dr).max(0) as usize;
                    let r_hi = (h as isize - dr).min(h as isize);
                    let c_lo = (-dc).max(0) as usize;
                    let c_hi = (w as isize - dc).min(w as isize);
                    if r_hi <= r_lo as isize || c_hi <= c_lo as isize {
                        continue;
                    }
                    for r in r_lo..r_hi as usize {
                        let src = ((r as isize + dr) as usize) * w;
                        let dst = r * w;
                        for c in c_lo..c_hi as usize {
                            plane[dst + c] += k * xin[src + (c as isize + dc) as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![cout, h, w], out)
}

/// Squeeze-excitation parameters; no biases.
#[derive(Clone, Debug, PartialEq)]
pub struct SeParams {
    /// `[Cr, C]`.
    pub w1: Tensor,
    /// `[C, Cr]`.
    pub w2: Tensor,
}

impl SeParams {
    pub fn new(w1: Tensor, w2: Tensor) -> Result<Self> {
        let (cr, c) = w1.dims2()?;
        if w2.dims2()? != (c, cr) {
            return Err(Error::shape(format!("SE w2 must be [{c}, {cr}], got {:?}", w2.shape())));
        }
        Ok(Self { w1, w2 })
    }

    pub fn reduced_width(c: usize, reduction: usize) -> usize {
        (c / reduction.max(1)).max(1)
    }

    pub fn random(c: usize, reduction: usize, rng: &mut ChaCha8Rng) -> Self {
        let cr = Self::reduced_width(c, reduction);
        let n1 = Normal::new(0.0, (2.0 / c as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (1.0 / cr as f64).sqrt()).unwrap();
        let w1 = (0..cr * c).map(|_| n1.sample(rng)).collect();
        let w2 = (0..c * cr).map(|_| n2.sample(rng)).collect();
        Self {
            w1: Tensor::new(vec![cr, c], w1).unwrap(),
            w2: Tensor::new(vec![c, cr], w2).unwrap(),
        }
    }
}

/// Per-channel scale `sigmoid(W2 relu(W1 GAP(x)))`.
pub fn se_scale(x: &Tensor, p: &SeParams) -> Result<Vec<f64>> {
    let (c, h, w) = x.dims3()?;
    let (cr, pc) = p.w1.dims2()?;
    if pc != c {
        return Err(Error::shape(format!("SE expects {pc} channels, got {c}")));
    }
    let gap: Vec<f64> = (0..c).map(|ch| x.channel(ch).iter().sum::<f64>() / (h * w) as f64).collect();
    let hidden: Vec<f64> = (0..cr)
        .map(|i| (0..c).map(|j| p.w1.at2(i, j) * gap[j]).sum::<f64>().max(0.0))
        .collect();
    Ok((0..c)
        .map(|i| sigmoid((0..cr).map(|j| p.w2.at2(i, j) * hidden[j]).sum()))
        .collect())
}

pub fn se_recalibrate(x: &Tensor, p: &SeParams) -> Result<Tensor> {
    let s = se_scale(x, p)?;
    let plane = x.shape()[1] * x.shape()[2];
    let mut out = x.clone();
    for (ch, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        chunk.iter_mut().for_each(|v| *v *= s[ch]);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsppFusion {
    /// 1×1 projection over the channel concatenation of the branches.
    #[default]
    Project,
    /// Elementwise sum of branch outputs.
    Sum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsppParams {
    pub branches: Vec<Conv2dParams>,
    /// `[C, B·C_branch, 1, 1]`; required for [`AsppFusion::Project`].
    pub projection: Option<Conv2dParams>,
    pub fusion: AsppFusion,
}

impl AsppParams {
    pub fn random(c: usize, dilations: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let branches: Vec<Conv2dParams> = dilations
            .iter()
            .map(|&d| Conv2dParams::random(c, c, 3, d, rng))
            .collect();
        let projection = Conv2dParams::random(c, c * dilations.len(), 1, 1, rng);
        Self {
            branches,
            projection: Some(projection),
            fusion: AsppFusion::Project,
        }
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.dilation).collect()
    }
}

/// Dilated pyramid: every branch sees `x`, outputs are fused by projection or sum.
pub fn aspp_forward(x: &Tensor, p: &AsppParams) -> Result<Tensor> {
    if p.branches.is_empty() {
        return Err(Error::invalid("ASPP needs at least one branch"));
    }
    let outs: Vec<Tensor> = p
        .branches
        .par_iter()
        .map(|b| conv2d(x, b))
        .collect::<Result<Vec<_>>>()?;
    let cb = outs[0].shape()[0];
    if outs.iter().any(|o| o.shape()[0] != cb) {
        return Err(Error::shape("ASPP branches disagree in output channels"));
    }
    let (_, h, w) = x.dims3()?;
    match p.fusion {
        AsppFusion::Sum => {
            let mut acc = vec![0.0; cb * h * w];
            for o in &outs {
                acc.iter_mut().zip(o.data()).for_each(|(a, v)| *a += v);
            }
            Tensor::new(vec![cb, h, w], acc)
        }
        AsppFusion::Project => {
            let proj = p
                .projection
                .as_ref()
                .ok_or_else(|| Error::invalid("projection fusion without projection weights"))?;
            let mut cat = Vec::with_capacity(cb * outs.len() * h * w);
            for o in &outs {
                cat.extend_from_slice(o.data());
            }
            conv2d(&Tensor::new(vec![cb * outs.len(), h, w], cat)?, proj)
        }
    }
}

/// Spatial gate `G = sigmoid(conv([x̃; f]))`, one channel broadcast.
pub fn gate_map(x_tilde: &Tensor, f_aspp: &Tensor, gate: &Conv2dParams) -> Result<Tensor> {
    if x_tilde.shape() != f_aspp.shape() {
        return Err(Error::shape("gate inputs differ in shape"));
    }
    let (c, h, w) = x_tilde.dims3()?;
    if gate.out_channels() != 1 || gate.in_channels() != 2 * c {
        return Err(Error::shape(format!(
            "gate conv must map {} channels to 1, got {} -> {}",
            2 * c,
            gate.in_channels(),
            gate.out_channels()
        )));
    }
    let mut cat = x_tilde.data().to_vec();
    cat.extend_from_slice(f_aspp.data());
    let logits = conv2d(&Tensor::new(vec![2 * c, h, w], cat)?, gate)?;
    Ok(logits.map(sigmoid))
}

/// `x̃ + G ⊙ (f − x̃)`.
pub fn adaptive_gate_fuse(x_tilde: &Tensor, f_aspp: &Tensor, gate: &Conv2dParams) -> Result<Tensor> {
    let g = gate_map(x_tilde, f_aspp, gate)?;
    let plane = g.len();
    let mut out = x_tilde.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let gi = g.data()[i % plane];
        *v += gi * (f_aspp.data()[i] - *v);
    }
    Ok(out)
}

/// Weights of the full recalibration stack.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlocks {
    pub se: SeParams,
    pub aspp: AsppParams,
    pub gate: Conv2dParams,
}

impl FeatureBlocks {
    pub fn random(c: usize, reduction: usize, dilations: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let se = SeParams::random(c, reduction, &mut rng);
        let aspp = AsppParams::random(c, dilations, &mut rng);
        let gate = Conv2dParams::random(1, 2 * c, 1, 1, &mut rng);
        Self { se, aspp, gate }
    }

    /// SE, then the pyramid on the recalibrated map, then the gate.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x_tilde = se_recalibrate(x, &self.se)?;
        let f = aspp_forward(&x_tilde, &self.aspp)?;
        adaptive_gate_fuse(&x_tilde, &f, &self.gate)
    }

    /// Tensors under the `weights_*` naming scheme.
    pub fn to_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        m.insert("weights_se_w1".into(), self.se.w1.clone());
        m.insert("weights_se_w2".into(), self.se.w2.clone());
        for (i, b) in self.aspp.branches.iter().enumerate() {
            m.insert(format!("weights_aspp_b{i}_w"), b.weights.clone());
            m.insert(format!("weights_aspp_b{i}_b"), b.bias.clone());
        }
        if let Some(p) = &self.aspp.projection {
            m.insert("weights_aspp_proj_w".into(), p.weights.clone());
            m.insert("weights_aspp_proj_b".into(), p.bias.clone());
        }
        m.insert("weights_gate_w".into(), self.gate.weights.clone());
        m.insert("weights_gate_b".into(), self.gate.bias.clone());
        m
    }

    /// Inverse of [`Self::to_tensors`]; `dilations` gives one rate per branch.
    pub fn from_tensors(t: &BTreeMap<String, Tensor>, dilations: &[usize]) -> Result<Self> {
        let get = |name: &str| t.get(name).cloned().ok_or_else(|| Error::MissingTensor(name.to_string()));
        let se = SeParams::new(get("weights_se_w1")?, get("weights_se_w2")?)?;
        let mut branches = Vec::new();
        for (i, &d) in dilations.iter().enumerate() {
            branches.push(Conv2dParams::new(
                get(&format!("weights_aspp_b{i}_w"))?,
                get(&format!("weights_aspp_b{i}_b"))?,
                d,
            )?);
        }
        let (projection, fusion) = match (t.get("weights_aspp_proj_w"), t.get("weights_aspp_proj_b")) {
            (Some(w), Some(b)) => (Some(Conv2dParams::new(w.clone(), b.clone(), 1)?), AsppFusion::Project),
            _ => (None, AsppFusion::Sum),
        };
        let gate = Conv2dParams::new(get("weights_gate_w")?, get("weights_gate_b")?, 1)?;
        Ok(Self {
            se,
            aspp: AsppParams {
                branches,
                projection,
                fusion,
            },
            gate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::new(vec![c, h, w], (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn identity_and_constant_convs() {
        let x = ramp(3, 5, 4);
        assert_eq!(conv2d(&x, &Conv2dParams::identity(3)).unwrap(), x);
        let p = Conv2dParams::new(
            Tensor::zeros(vec![2, 3, 3, 3]).unwrap(),
            Tensor::vector(vec![1.5, -2.0]).unwrap(),
            2,
        )
        .unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert!(y.channel(0).iter().all(|&v| v == 1.5));
        assert!(y.channel(1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn rejects_even_kernels() {
        assert!(Conv2dParams::new(Tensor::zeros(vec![1, 1, 2, 2]).unwrap(), Tensor::zeros(vec![1]).unwrap(), 1).is_err());
    }

    #[test]
    fn se_zero_weights_halve() {
        let x = ramp(4, 3, 3);
        let p = SeParams::new(Tensor::zeros(vec![2, 4]).unwrap(), Tensor::zeros(vec![4, 2]).unwrap()).unwrap();
        let y = se_recalibrate(&x, &p).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 0.5 * b);
        }
        assert_eq!(SeParams::reduced_width(3, 16), 1);
    }

    #[test]
    fn aspp_zero_and_identity() {
        let x = ramp(2, 6, 6);
        let zero = AsppParams {
            branches: (0..4)
                .map(|i| Conv2dParams::new(Tensor::zeros(vec![2, 2, 3, 3]).unwrap(), Tensor::zeros(vec![2]).unwrap(), DEFAULT_DILATIONS[i]).unwrap())
                .collect(),
            projection: None,
            fusion: AsppFusion::Sum,
        };
        assert!(aspp_forward(&x, &zero).unwrap().data().iter().all(|&v| v == 0.0));
        let ident = AsppParams {
            branches: vec![Conv2dParams::identity(2)],
            projection: Some(Conv2dParams::identity(2)),
            fusion: AsppFusion::Project,
        };
        assert_eq!(aspp_forward(&x, &ident).unwrap(), x);
    }

    #[test]
    fn gate_limits() {
        let a = ramp(2, 4, 4);
        let b = a.map(|v| v * -3.0 + 1.0);
        let gate = |bias: f64| Conv2dParams::new(Tensor::zeros(vec![1, 4, 1, 1]).unwrap(), Tensor::vector(vec![bias]).unwrap(), 1).unwrap();
        let closed = adaptive_gate_fuse(&a, &b, &gate(-30.0)).unwrap();
        let open = adaptive_gate_fuse(&a, &b, &gate(30.0)).unwrap();
        let mid = adaptive_gate_fuse(&a, &b, &gate(0.0)).unwrap();
        for i in 0..a.len() {
            assert!((closed.data()[i] - a.data()[i]).abs() < 1e-9);
            assert!((open.data()[i] - b.data()[i]).abs() < 1e-9);
            assert!((mid.data()[i] - 0.5 * (a.data()[i] + b.data()[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_tensors_round_trip() {
        let blocks = FeatureBlocks::random(4, 2, &DEFAULT_DILATIONS, 9);
        let back = FeatureBlocks::from_tensors(&blocks.to_tensors(), &DEFAULT_DILATIONS).unwrap();
        assert_eq!(back, blocks);
        assert_eq!(blocks.aspp.dilations(), DEFAULT_DILATIONS.to_vec());
    }
}
