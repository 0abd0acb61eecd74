//! Layer graphs, the plaintext fixed-point oracle and secure inference.

pub mod im2col;
pub mod secure;

use alloc::format;
use alloc::vec::Vec;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lth::kernels::{BatchNormParams, Kernel, LayerNormParams, Op, PoolGeom};
use crate::ring::{matmul, Ring};
use im2col::{filter_transpose, im2col, output_to_chw, ConvGeom};

/// Per-sample activation shape, channel-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn flat(n: usize) -> Self {
        Shape { c: n, h: 1, w: 1 }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One layer. Weights, biases and normalisation parameters are ring
/// encodings at the ring's fractional bits. Parties that do not own the model
/// hold no weights (`None`) and an empty bias vector where a bias exists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Layer {
    /// `weights` is `inp x out` row-major.
    Fc { inp: usize, out: usize, weights: Option<Vec<u64>>, bias: Option<Vec<u64>> },
    /// `weights` is `cout x cin x kh x kw`; input size comes from the
    /// preceding shape.
    Conv { cin: usize, cout: usize, kw: usize, kh: usize, stride: usize, pad: usize, weights: Option<Vec<u64>>, bias: Option<Vec<u64>> },
    Relu,
    MaxPool { window: usize, stride: usize },
    /// Per-channel `gamma, beta, mean, var`.
    BatchNorm { gamma: Vec<u64>, beta: Vec<u64>, mean: Vec<u64>, var: Vec<u64> },
    /// Per-feature `gamma, beta` over the whole sample.
    LayerNorm { gamma: Vec<u64>, beta: Vec<u64> },
    Softmax,
}

impl Layer {
    pub fn is_linear(&self) -> bool {
        matches!(self, Layer::Fc { .. } | Layer::Conv { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Fc { .. } => "FC",
            Layer::Conv { .. } => "CONV",
            Layer::Relu => "RELU",
            Layer::MaxPool { .. } => "MAXPOOL",
            Layer::BatchNorm { .. } => "BATCHNORM",
            Layer::LayerNorm { .. } => "LAYERNORM",
            Layer::Softmax => "SOFTMAX",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    /// Shape after each layer, checking dimensions and parameter lengths.
    /// Weights are checked only where present.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut s = self.input;
        if s.is_empty() {
            return Err(Error::dim("empty input shape"));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |what: &str| Error::dim(format!("layer {i} ({}): {what}", layer.name()));
            s = match layer {
                Layer::Fc { inp, out, weights, bias } => {
                    if *inp != s.len() || *out == 0 {
                        return Err(bad(&format!("expects {inp} inputs, gets {}", s.len())));
                    }
                    if weights.as_ref().is_some_and(|w| w.len() != inp * out) || bias.as_ref().is_some_and(|b| !b.is_empty() && b.len() != *out) {
                        return Err(bad("parameter lengths"));
                    }
                    Shape::flat(*out)
                }
                Layer::Conv { .. } => {
                    let g = self.conv_geom(layer, s).map_err(|_| bad("geometry"))?;
                    let Layer::Conv { weights, bias, .. } = layer else { unreachable!() };
                    if weights.as_ref().is_some_and(|w| w.len() != g.n_weights()) || bias.as_ref().is_some_and(|b| !b.is_empty() && b.len() != g.cout) {
                        return Err(bad("parameter lengths"));
                    }
                    let (h, w) = g.out_hw()?;
                    Shape { c: g.cout, h, w }
                }
                Layer::Relu => s,
                Layer::MaxPool { window, stride } => {
                    let g = PoolGeom { batch: 1, channels: s.c, height: s.h, width: s.w, window: *window, stride: *stride };
                    let (h, w) = g.out_hw().map_err(|_| bad("geometry"))?;
                    Shape { c: s.c, h, w }
                }
                Layer::BatchNorm { gamma, beta, mean, var } => {
                    if [gamma, beta, mean, var].iter().any(|v| v.len() != s.c) {
                        return Err(bad(&format!("parameters for {} channels", s.c)));
                    }
                    s
                }
                Layer::LayerNorm { gamma, beta } => {
                    if gamma.len() != s.len() || beta.len() != s.len() {
                        return Err(bad(&format!("parameters for {} features", s.len())));
                    }
                    s
                }
                Layer::Softmax => s,
            };
            out.push(s);
        }
        Ok(out)
    }

    pub fn output(&self) -> Result<Shape> {
        Ok(self.shapes()?.last().copied().unwrap_or(self.input))
    }

    pub(crate) fn conv_geom(&self, layer: &Layer, s: Shape) -> Result<ConvGeom> {
        let Layer::Conv { cin, cout, kw, kh, stride, pad, .. } = *layer else {
            return Err(Error::State("not a convolution".into()));
        };
        if cin != s.c {
            return Err(Error::dim(format!("conv expects {cin} channels, gets {}", s.c)));
        }
        let g = ConvGeom { cin, cout, kh, kw, stride, pad, h: s.h, w: s.w };
        g.out_hw()?;
        Ok(g)
    }

    /// The same network with weight and bias values removed.
    pub fn architecture(&self) -> NetworkSpec {
        let hide = |b: &Option<Vec<u64>>| b.as_ref().map(|_| Vec::new());
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Fc { inp, out, bias, .. } => Layer::Fc { inp: *inp, out: *out, weights: None, bias: hide(bias) },
                Layer::Conv { cin, cout, kw, kh, stride, pad, bias, .. } => {
                    Layer::Conv { cin: *cin, cout: *cout, kw: *kw, kh: *kh, stride: *stride, pad: *pad, weights: None, bias: hide(bias) }
                }
                l => l.clone(),
            })
            .collect();
        NetworkSpec { input: self.input, layers }
    }

    /// Digest of everything the parties must agree on: shapes, layer order,
    /// whether biases exist, and public normalisation parameters.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let mut put = |v: usize| h.update((v as u64).to_le_bytes());
        put(self.input.c);
        put(self.input.h);
        put(self.input.w);
        put(self.layers.len());
        for l in &self.layers {
            match l {
                Layer::Fc { inp, out, bias, .. } => [0, *inp, *out, bias.is_some() as usize].into_iter().for_each(&mut put),
                Layer::Conv { cin, cout, kw, kh, stride, pad, bias, .. } => {
                    [1, *cin, *cout, *kw, *kh, *stride, *pad, bias.is_some() as usize].into_iter().for_each(&mut put)
                }
                Layer::Relu => put(2),
                Layer::MaxPool { window, stride } => [3, *window, *stride].into_iter().for_each(&mut put),
                Layer::BatchNorm { gamma, beta, mean, var } => {
                    put(4);
                    for v in [gamma, beta, mean, var] {
                        put(v.len());
                        v.iter().for_each(|&x| put(x as usize));
                    }
                }
                Layer::LayerNorm { gamma, beta } => {
                    put(5);
                    for v in [gamma, beta] {
                        put(v.len());
                        v.iter().for_each(|&x| put(x as usize));
                    }
                }
                Layer::Softmax => put(6),
            }
        }
        h.finalize().into()
    }
}

/// Non-linear work following a linear layer, or standing alone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tail {
    /// Truncation only.
    None,
    MaxPool { window: usize, stride: usize },
    /// Layer index of the normalisation.
    BatchNorm(usize),
}

/// One executed operation covering layers `first..=last`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    /// Matrix product, truncation, optional pooling or normalisation, optional ReLU.
    Linear { layer: usize, tail: Tail, relu: bool },
    Relu,
    MaxPool { window: usize, stride: usize, relu: bool },
    BatchNorm { layer: usize, relu: bool },
    LayerNorm { layer: usize, relu: bool },
    Softmax,
}

/// Mapping from layers to executed operations. Every linear layer is
/// followed by exactly one truncation, fused into its step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusionPlan {
    pub steps: Vec<(Step, core::ops::RangeInclusive<usize>)>,
}

impl FusionPlan {
    /// Fuses `linear [maxpool | batchnorm] [relu]` and `op relu`.
    pub fn fused(spec: &NetworkSpec) -> Self {
        let layers = &spec.layers;
        let mut steps = Vec::new();
        let mut i = 0;
        while i < layers.len() {
            let start = i;
            let relu_at = |j: usize| matches!(layers.get(j), Some(Layer::Relu));
            let step = match &layers[i] {
                l if l.is_linear() => {
                    let tail = match layers.get(i + 1) {
                        Some(Layer::MaxPool { window, stride }) => {
                            i += 1;
                            Tail::MaxPool { window: *window, stride: *stride }
                        }
                        Some(Layer::BatchNorm { .. }) => {
                            i += 1;
                            Tail::BatchNorm(i)
                        }
                        _ => Tail::None,
                    };
                    let relu = relu_at(i + 1);
                    i += relu as usize;
                    Step::Linear { layer: start, tail, relu }
                }
                Layer::Relu => Step::Relu,
                Layer::MaxPool { window, stride } => {
                    let relu = relu_at(i + 1);
                    i += relu as usize;
                    Step::MaxPool { window: *window, stride: *stride, relu }
                }
                Layer::BatchNorm { .. } => {
                    let relu = relu_at(i + 1);
                    i += relu as usize;
                    Step::BatchNorm { layer: start, relu }
                }
                Layer::LayerNorm { .. } => {
                    let relu = relu_at(i + 1);
                    i += relu as usize;
                    Step::LayerNorm { layer: start, relu }
                }
                Layer::Softmax => Step::Softmax,
                _ => unreachable!(),
            };
            steps.push((step, start..=i));
            i += 1;
        }
        FusionPlan { steps }
    }

    /// One step per layer; linear layers get a standalone truncation.
    pub fn unfused(spec: &NetworkSpec) -> Self {
        let steps = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let step = match l {
                    Layer::Fc { .. } | Layer::Conv { .. } => Step::Linear { layer: i, tail: Tail::None, relu: false },
                    Layer::Relu => Step::Relu,
                    Layer::MaxPool { window, stride } => Step::MaxPool { window: *window, stride: *stride, relu: false },
                    Layer::BatchNorm { .. } => Step::BatchNorm { layer: i, relu: false },
                    Layer::LayerNorm { .. } => Step::LayerNorm { layer: i, relu: false },
                    Layer::Softmax => Step::Softmax,
                };
                (step, i..=i)
            })
            .collect();
        FusionPlan { steps }
    }
}

pub(crate) fn bn_params(layer: &Layer, s: Shape) -> BatchNormParams {
    let Layer::BatchNorm { gamma, beta, mean, var } = layer else { unreachable!("batchnorm layer") };
    BatchNormParams { channels: s.c, inner: s.h * s.w, gamma: gamma.clone(), beta: beta.clone(), mean: mean.clone(), var: var.clone() }
}

pub(crate) fn ln_params(layer: &Layer, s: Shape) -> LayerNormParams {
    let Layer::LayerNorm { gamma, beta } = layer else { unreachable!("layernorm layer") };
    LayerNormParams { group: s.len(), gamma: gamma.clone(), beta: beta.clone() }
}

/// Evaluates `spec` on a batch of samples entirely in fixed point, with the
/// same truncation and kernel semantics as the secure path. Softmax is the
/// double-precision reference, floor-quantised.
pub fn plaintext_oracle(ring: Ring, spec: &NetworkSpec, input: &[u64]) -> Result<Vec<u64>> {
    let shapes = spec.shapes()?;
    let n0 = spec.input.len();
    if input.len() % n0 != 0 {
        return Err(Error::dim(format!("input of {} elements for samples of {n0}", input.len())));
    }
    let batch = input.len() / n0;
    let mut x: Vec<u64> = input.iter().map(|&v| ring.reduce(v)).collect();
    let mut s = spec.input;
    for (i, layer) in spec.layers.iter().enumerate() {
        let next = shapes[i];
        x = match layer {
            Layer::Fc { inp, out, weights, bias } => {
                let w = weights.as_ref().ok_or_else(|| Error::Config("oracle needs weights".into()))?;
                let mut y = matmul(ring, &x, w, batch, *inp, *out);
                if let Some(b) = bias {
                    for row in y.chunks_mut(*out) {
                        for (v, &bv) in row.iter_mut().zip(b) {
                            *v = ring.add(*v, ring.mul(bv, 1 << ring.frac()));
                        }
                    }
                }
                y.iter().map(|&v| ring.truncate(v)).collect()
            }
            Layer::Conv { weights, bias, .. } => {
                let g = spec.conv_geom(layer, s)?;
                let w = weights.as_ref().ok_or_else(|| Error::Config("oracle needs weights".into()))?;
                let m = im2col(&g)?;
                let wt: Vec<u64> = filter_transpose(&g).iter().map(|&j| w[j]).collect();
                let chw = output_to_chw(m.rows, g.cout);
                let mut y = Vec::with_capacity(batch * next.len());
                for sample in x.chunks(s.len()) {
                    let p: Vec<u64> = m.index.iter().map(|j| j.map_or(0, |j| sample[j])).collect();
                    let mut prod = matmul(ring, &p, &wt, m.rows, m.cols, g.cout);
                    if let Some(b) = bias {
                        for row in prod.chunks_mut(g.cout) {
                            for (v, &bv) in row.iter_mut().zip(b) {
                                *v = ring.add(*v, ring.mul(bv, 1 << ring.frac()));
                            }
                        }
                    }
                    y.extend(chw.iter().map(|&j| ring.truncate(prod[j])));
                }
                y
            }
            Layer::Relu => Kernel::relu().apply(ring, &x)?.0,
            Layer::MaxPool { window, stride } => {
                let g = PoolGeom { batch, channels: s.c, height: s.h, width: s.w, window: *window, stride: *stride };
                Kernel::op(Op::MaxPool(g)).apply(ring, &x)?.0
            }
            Layer::BatchNorm { .. } => Kernel::op(Op::BatchNorm(bn_params(layer, s))).apply(ring, &x)?.0,
            Layer::LayerNorm { .. } => Kernel::op(Op::LayerNorm(ln_params(layer, s))).apply(ring, &x)?.0,
            Layer::Softmax => softmax_reference(ring, &x, s.len()),
        };
        s = next;
    }
    Ok(x)
}

/// Double-precision softmax over groups of the signed fixed-point values,
/// floor-quantised.
pub fn softmax_reference(ring: Ring, x: &[u64], group: usize) -> Vec<u64> {
    let scale = libm::exp2(ring.frac() as f64);
    let mut out = Vec::with_capacity(x.len());
    for g in x.chunks(group) {
        let v: Vec<f64> = g.iter().map(|&e| ring.decode(e)).collect();
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|&t| libm::exp(t - max)).collect();
        let sum: f64 = e.iter().sum();
        out.extend(e.iter().map(|&t| libm::floor(t / sum * scale) as u64));
    }
    out
}

/// Largest absolute difference in ring units between two vectors, read as
/// signed values.
pub fn max_ulp(ring: Ring, a: &[u64], b: &[u64]) -> u64 {
    a.iter().zip(b).map(|(&x, &y)| ring.signed(ring.sub(x, y)).unsigned_abs()).max().unwrap_or(0)
}

/// Index of the largest signed value in each row.
pub fn argmax_rows(ring: Ring, x: &[u64], width: usize) -> Vec<usize> {
    x.chunks(width)
        .map(|r| {
            let mut best = 0;
            for (i, &v) in r.iter().enumerate() {
                if ring.signed(v) > ring.signed(r[best]) {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const R: Ring = Ring::DEFAULT;

    fn enc(v: f64) -> u64 {
        R.encode(v).unwrap()
    }

    fn mlp() -> NetworkSpec {
        NetworkSpec {
            input: Shape::flat(4),
            layers: alloc::vec![
                Layer::Fc { inp: 4, out: 3, weights: Some((0..12).map(|i| enc(i as f64 / 8.0 - 0.5)).collect()), bias: Some(alloc::vec![enc(0.25); 3]) },
                Layer::Relu,
                Layer::Fc { inp: 3, out: 2, weights: Some((0..6).map(|i| enc(1.0 - i as f64 / 4.0)).collect()), bias: None },
            ],
        }
    }

    #[test]
    fn identity_fc_passes_input_through() {
        let mut w = alloc::vec![0u64; 9];
        for i in 0..3 {
            w[i * 4] = enc(1.0);
        }
        let spec = NetworkSpec { input: Shape::flat(3), layers: alloc::vec![Layer::Fc { inp: 3, out: 3, weights: Some(w), bias: None }] };
        let x = alloc::vec![enc(1.5), enc(-2.25), enc(0.0)];
        assert_eq!(plaintext_oracle(R, &spec, &x).unwrap(), x);
    }

    #[test]
    fn shapes_and_mismatch() {
        assert_eq!(mlp().output().unwrap(), Shape::flat(2));
        let mut bad = mlp();
        bad.layers[2] = Layer::Fc { inp: 5, out: 2, weights: None, bias: None };
        assert!(bad.shapes().is_err());
    }

    #[test]
    fn hash_ignores_weight_values() {
        let a = mlp();
        assert_eq!(a.hash(), a.architecture().hash());
        let mut b = mlp();
        b.layers.push(Layer::Softmax);
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn fusion_plan_covers_layers_once() {
        let spec = NetworkSpec {
            input: Shape { c: 1, h: 6, w: 6 },
            layers: alloc::vec![
                Layer::Conv { cin: 1, cout: 2, kw: 3, kh: 3, stride: 1, pad: 1, weights: None, bias: None },
                Layer::MaxPool { window: 2, stride: 2 },
                Layer::Relu,
                Layer::BatchNorm { gamma: alloc::vec![0; 2], beta: alloc::vec![0; 2], mean: alloc::vec![0; 2], var: alloc::vec![0; 2] },
                Layer::Relu,
                Layer::Fc { inp: 18, out: 4, weights: None, bias: None },
                Layer::Softmax,
            ],
        };
        let plan = FusionPlan::fused(&spec);
        let kinds: Vec<&Step> = plan.steps.iter().map(|(s, _)| s).collect();
        assert_eq!(
            kinds,
            [
                &Step::Linear { layer: 0, tail: Tail::MaxPool { window: 2, stride: 2 }, relu: true },
                &Step::BatchNorm { layer: 3, relu: true },
                &Step::Linear { layer: 5, tail: Tail::None, relu: false },
                &Step::Softmax,
            ]
        );
        let covered: Vec<usize> = plan.steps.iter().flat_map(|(_, r)| r.clone()).collect();
        assert_eq!(covered, (0..7).collect::<Vec<_>>());
        assert_eq!(FusionPlan::unfused(&spec).steps.len(), 7);
    }

    #[test]
    fn reference_softmax_uniform() {
        let y = softmax_reference(R, &[0; 4], 4);
        assert_eq!(y, [2048; 4]);
        assert_eq!(argmax_rows(R, &[1, R.from_signed(-5), 7, 3], 2), [0, 0]);
        assert_eq!(max_ulp(R, &[R.from_signed(-1)], &[1]), 2);
    }
}
