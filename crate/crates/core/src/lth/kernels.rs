//! Plaintext kernels evaluated on unmasked data inside the trusted component.
//! The fixed-point oracle calls the same functions.

use alloc::format;
use alloc::vec::Vec;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::expsplit::{Scaled, SoftmaxConsts, MANT_MAX, MANT_MIN};
use crate::ring::Ring;

/// Variance offset of the normalisation kernels.
pub const NORM_EPS: f64 = 1e-5;

/// Geometry of a max-pool over `batch` images of `channels x height x width`,
/// no padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub stride: usize,
}

impl PoolGeom {
    pub fn out_hw(&self) -> Result<(usize, usize)> {
        if self.window == 0 || self.stride == 0 || self.window > self.height || self.window > self.width {
            return Err(Error::dim(format!(
                "pool window {} stride {} on {}x{}",
                self.window, self.stride, self.height, self.width
            )));
        }
        Ok((
            (self.height - self.window) / self.stride + 1,
            (self.width - self.window) / self.stride + 1,
        ))
    }

    pub fn n_in(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn n_out(&self) -> Result<usize> {
        let (oh, ow) = self.out_hw()?;
        Ok(self.batch * self.channels * oh * ow)
    }
}

/// Inference-mode batch normalisation; element `i` belongs to channel
/// `(i / inner) % channels`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchNormParams {
    pub channels: usize,
    pub inner: usize,
    pub gamma: Vec<u64>,
    pub beta: Vec<u64>,
    pub mean: Vec<u64>,
    pub var: Vec<u64>,
}

/// Layer normalisation over consecutive groups of `group` elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerNormParams {
    pub group: usize,
    pub gamma: Vec<u64>,
    pub beta: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Identity,
    MaxPool(PoolGeom),
    BatchNorm(BatchNormParams),
    LayerNorm(LayerNormParams),
    /// Softmax over consecutive groups; only valid on exponent-split input.
    Softmax { group: usize },
}

/// `[truncate] -> op -> [relu]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Kernel {
    pub truncate: bool,
    pub op: Op,
    pub relu: bool,
}

impl Kernel {
    pub fn relu() -> Self {
        Kernel { truncate: false, op: Op::Identity, relu: true }
    }

    pub fn trunc() -> Self {
        Kernel { truncate: true, op: Op::Identity, relu: false }
    }

    pub fn trunc_relu() -> Self {
        Kernel { truncate: true, op: Op::Identity, relu: true }
    }

    pub fn op(op: Op) -> Self {
        Kernel { truncate: false, op, relu: false }
    }

    pub fn softmax(group: usize) -> Self {
        Kernel::op(Op::Softmax { group })
    }

    pub fn is_softmax(&self) -> bool {
        matches!(self.op, Op::Softmax { .. })
    }

    /// Output length and number of mod-2 outputs for `n_in` inputs.
    pub fn shape(&self, n_in: usize) -> Result<(usize, usize)> {
        let n_out = match &self.op {
            Op::Identity => n_in,
            Op::MaxPool(g) => {
                if g.n_in() != n_in {
                    return Err(Error::dim(format!("pool expects {} inputs, got {n_in}", g.n_in())));
                }
                g.n_out()?
            }
            Op::BatchNorm(p) => {
                let c = p.channels;
                if c == 0
                    || p.inner == 0
                    || n_in % (c * p.inner) != 0
                    || [&p.gamma, &p.beta, &p.mean, &p.var].iter().any(|v| v.len() != c)
                {
                    return Err(Error::dim(format!("batchnorm over {c} channels on {n_in} inputs")));
                }
                n_in
            }
            Op::LayerNorm(p) => {
                if p.group == 0 || n_in % p.group != 0 || p.gamma.len() != p.group || p.beta.len() != p.group {
                    return Err(Error::dim(format!("layernorm group {} on {n_in} inputs", p.group)));
                }
                n_in
            }
            Op::Softmax { group } => {
                if *group == 0 || n_in % group != 0 || self.truncate || self.relu {
                    return Err(Error::dim(format!("softmax group {group} on {n_in} inputs")));
                }
                n_in
            }
        };
        let n_bits = if self.relu {
            n_out
        } else if matches!(self.op, Op::MaxPool(_)) {
            n_in
        } else {
            0
        };
        Ok((n_out, n_bits))
    }

    /// Evaluates a ring-valued kernel, returning the outputs and mod-2 outputs.
    pub fn apply(&self, ring: Ring, x: &[u64]) -> Result<(Vec<u64>, Vec<u8>)> {
        self.shape(x.len())?;
        let t: Vec<u64>;
        let x = if self.truncate {
            t = x.iter().map(|&v| ring.truncate(v)).collect();
            &t[..]
        } else {
            x
        };
        let (y, mut bits) = match &self.op {
            Op::Identity => (x.to_vec(), Vec::new()),
            Op::MaxPool(g) => maxpool(ring, g, x)?,
            Op::BatchNorm(p) => (batchnorm(ring, p, x)?, Vec::new()),
            Op::LayerNorm(p) => (layernorm(ring, p, x), Vec::new()),
            Op::Softmax { .. } => return Err(Error::State("softmax needs exponent-split input".into())),
        };
        if self.relu {
            let (z, b) = relu(ring, &y);
            return Ok((z, b));
        }
        if !matches!(self.op, Op::MaxPool(_)) {
            bits.clear();
        }
        Ok((y, bits))
    }

    pub fn write(&self, w: &mut Writer, ring: Ring) {
        w.u8(self.truncate as u8 | (self.relu as u8) << 1);
        match &self.op {
            Op::Identity => {
                w.u8(0);
            }
            Op::MaxPool(g) => {
                w.u8(1);
                for v in [g.batch, g.channels, g.height, g.width, g.window, g.stride] {
                    w.u32(v as u32);
                }
            }
            Op::BatchNorm(p) => {
                w.u8(2).u32(p.channels as u32).u32(p.inner as u32);
                for v in [&p.gamma, &p.beta, &p.mean, &p.var] {
                    w.elems(ring, v);
                }
            }
            Op::LayerNorm(p) => {
                w.u8(3).u32(p.group as u32).elems(ring, &p.gamma).elems(ring, &p.beta);
            }
            Op::Softmax { group } => {
                w.u8(4).u32(*group as u32);
            }
        }
    }

    pub fn read(r: &mut Reader, ring: Ring) -> Result<Self> {
        let flags = r.u8()?;
        if flags & !3 != 0 {
            return Err(Error::Frame(format!("kernel flags {flags:#x}")));
        }
        let op = match r.u8()? {
            0 => Op::Identity,
            1 => {
                let mut v = [0usize; 6];
                for x in &mut v {
                    *x = r.u32()? as usize;
                }
                Op::MaxPool(PoolGeom {
                    batch: v[0],
                    channels: v[1],
                    height: v[2],
                    width: v[3],
                    window: v[4],
                    stride: v[5],
                })
            }
            2 => Op::BatchNorm(BatchNormParams {
                channels: r.u32()? as usize,
                inner: r.u32()? as usize,
                gamma: r.elems(ring)?,
                beta: r.elems(ring)?,
                mean: r.elems(ring)?,
                var: r.elems(ring)?,
            }),
            3 => Op::LayerNorm(LayerNormParams {
                group: r.u32()? as usize,
                gamma: r.elems(ring)?,
                beta: r.elems(ring)?,
            }),
            4 => Op::Softmax { group: r.u32()? as usize },
            t => return Err(Error::Frame(format!("kernel op {t}"))),
        };
        Ok(Kernel {
            truncate: flags & 1 != 0,
            op,
            relu: flags & 2 != 0,
        })
    }
}

/// `floor(y * 2^fp)`, saturating at the ends of the representable range.
pub fn encode_saturating(ring: Ring, y: f64) -> u64 {
    if y.is_nan() {
        return 0;
    }
    let bound = ring.real_bound();
    let y = y.clamp(-bound, bound - ring.ulp());
    ring.encode(y).expect("clamped into range")
}

pub fn relu(ring: Ring, x: &[u64]) -> (Vec<u64>, Vec<u8>) {
    let mut z = Vec::with_capacity(x.len());
    let mut b = Vec::with_capacity(x.len());
    for &v in x {
        let pos = ring.signed(v) > 0;
        z.push(if pos { v } else { 0 });
        b.push(pos as u8);
    }
    (z, b)
}

/// Max over each window; the mod-2 output marks every input that is the
/// first maximum (row-major within the window) of some window.
pub fn maxpool(ring: Ring, g: &PoolGeom, x: &[u64]) -> Result<(Vec<u64>, Vec<u8>)> {
    let (oh, ow) = g.out_hw()?;
    let mut y = Vec::with_capacity(g.n_out()?);
    let mut bits = alloc::vec![0u8; x.len()];
    let plane = g.height * g.width;
    for img in 0..g.batch * g.channels {
        let base = img * plane;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = None::<(i64, usize)>;
                for dy in 0..g.window {
                    for dx in 0..g.window {
                        let idx = base + (oy * g.stride + dy) * g.width + ox * g.stride + dx;
                        let v = ring.signed(x[idx]);
                        if best.is_none_or(|(bv, _)| v > bv) {
                            best = Some((v, idx));
                        }
                    }
                }
                let (_, idx) = best.expect("window is non-empty");
                y.push(x[idx]);
                bits[idx] = 1;
            }
        }
    }
    Ok((y, bits))
}

pub fn batchnorm(ring: Ring, p: &BatchNormParams, x: &[u64]) -> Result<Vec<u64>> {
    let mut scale = Vec::with_capacity(p.channels);
    for c in 0..p.channels {
        let var = ring.decode(p.var[c]);
        if var < 0.0 {
            return Err(Error::State(format!("negative variance in channel {c}")));
        }
        scale.push(ring.decode(p.gamma[c]) / libm::sqrt(var + NORM_EPS));
    }
    Ok(x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = (i / p.inner) % p.channels;
            let y = (ring.decode(v) - ring.decode(p.mean[c])) * scale[c] + ring.decode(p.beta[c]);
            encode_saturating(ring, y)
        })
        .collect())
}

pub fn layernorm(ring: Ring, p: &LayerNormParams, x: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(x.len());
    for chunk in x.chunks(p.group) {
        let vals: Vec<f64> = chunk.iter().map(|&v| ring.decode(v)).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / libm::sqrt(var + NORM_EPS);
        for (d, v) in vals.iter().enumerate() {
            let y = (v - mean) * inv * ring.decode(p.gamma[d]) + ring.decode(p.beta[d]);
            out.push(encode_saturating(ring, y));
        }
    }
    out
}

/// Recovers `exp(x)` from a product of per-share exponentials whose raw
/// exponent sum is `q_raw`; returns the value and the wrap count removed.
pub fn exp_assemble(consts: &SoftmaxConsts, q_raw: i64, mants: &[u64]) -> Result<(Scaled, u32)> {
    let factors = mants.len() as u32;
    let limit = consts.exponent_limit(factors);
    if q_raw <= 0 || q_raw > limit {
        return Err(Error::ExponentRange { q: q_raw, limit });
    }
    let mut v = Scaled { mant: 1.0, exp: q_raw };
    for &m in mants {
        if !(MANT_MIN..=MANT_MAX).contains(&m) {
            return Err(Error::State(format!("mantissa {m:#x} out of range")));
        }
        v.mant *= m as f64 / (1u64 << 52) as f64;
        v = v.normalized();
    }
    let mut k = 0;
    while k < factors && v.gt(consts.wrap_threshold(k)) {
        k += 1;
    }
    let el = consts.exp_l();
    for _ in 0..k {
        v = v.div(el);
    }
    Ok((v, k))
}

/// Added before the final floor, in units of `2^-fp`. Reconstructed
/// exponentials carry relative error near `1e-15`, so an exact grid value
/// such as `1/4` must not drop a step; the guard is far below one unit.
pub const FLOOR_GUARD: f64 = 1e-6;

/// Floor-quantised softmax over consecutive groups of exponentials.
pub fn softmax_groups(ring: Ring, vals: &[Scaled], group: usize) -> Vec<u64> {
    let scale = libm::exp2(ring.frac() as f64);
    let mut out = Vec::with_capacity(vals.len());
    for chunk in vals.chunks(group) {
        let top = chunk.iter().map(|s| s.exp).max().unwrap_or(0);
        let e: Vec<f64> = chunk.iter().map(|s| s.to_f64_shifted(top)).collect();
        let sum: f64 = e.iter().sum();
        for v in e {
            out.push(ring.from_signed(libm::floor(v / sum * scale + FLOOR_GUARD) as i64));
        }
    }
    out
}
