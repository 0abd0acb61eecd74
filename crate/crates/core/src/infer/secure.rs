//! Secure inference over the protocol stack.

use alloc::format;
use alloc::vec::Vec;

use super::im2col::{filter_transpose, im2col, output_to_chw};
use super::{bn_params, ln_params, FusionPlan, Layer, NetworkSpec, Shape, Step, Tail};
use crate::error::{Error, Result};
use crate::lth::kernels::{Kernel, Op, PoolGeom};
use crate::net::{Network, PartyId};
use crate::offload::{MatMulKernel, Units};
use crate::party::Party;
use crate::rss::Share;

/// Shared weights and biases of one linear layer. Convolution filters are
/// stored transposed, `k x cout`.
#[derive(Clone, Debug, Default)]
pub struct SharedLinear {
    pub weights: Share,
    pub bias: Option<Share>,
}

/// A network whose linear parameters are secret-shared. The architecture and
/// normalisation parameters are public.
#[derive(Clone, Debug)]
pub struct SharedModel {
    pub spec: NetworkSpec,
    pub linear: Vec<Option<SharedLinear>>,
}

impl<N: Network> Party<N> {
    /// Shares every linear layer's parameters from `owner`, who must hold
    /// them in `spec`; other parties need only the architecture.
    pub fn share_model(&mut self, spec: &NetworkSpec, owner: PartyId) -> Result<SharedModel> {
        let shapes = spec.shapes()?;
        let is_owner = self.id() == owner;
        let mut linear = Vec::with_capacity(spec.layers.len());
        let mut s = spec.input;
        for (i, layer) in spec.layers.iter().enumerate() {
            let entry = match layer {
                Layer::Fc { inp, out, weights, bias } => {
                    let w = self.share_param(owner, is_owner, weights.as_deref(), inp * out, i)?;
                    let b = self.share_bias(owner, is_owner, bias.as_deref(), *out, i)?;
                    Some(SharedLinear { weights: w, bias: b })
                }
                Layer::Conv { weights, bias, .. } => {
                    let g = spec.conv_geom(layer, s)?;
                    let w = self.share_param(owner, is_owner, weights.as_deref(), g.n_weights(), i)?;
                    let b = self.share_bias(owner, is_owner, bias.as_deref(), g.cout, i)?;
                    Some(SharedLinear { weights: w.gather(&filter_transpose(&g)), bias: b })
                }
                _ => None,
            };
            linear.push(entry);
            s = shapes[i];
        }
        Ok(SharedModel { spec: spec.architecture(), linear })
    }

    fn share_param(&mut self, owner: PartyId, is_owner: bool, v: Option<&[u64]>, n: usize, layer: usize) -> Result<Share> {
        if is_owner && v.is_none() {
            return Err(Error::Config(format!("model owner lacks weights of layer {layer}")));
        }
        self.share_input(owner, if is_owner { v } else { None }, n)
    }

    fn share_bias(&mut self, owner: PartyId, is_owner: bool, v: Option<&[u64]>, n: usize, layer: usize) -> Result<Option<Share>> {
        match v {
            Some(b) => Ok(Some(self.share_param(owner, is_owner, Some(b).filter(|_| is_owner), n, layer)?)),
            None => Ok(None),
        }
    }

    /// Runs the network on `batch` samples shared in `x`, sample-major.
    pub fn secure_infer(&mut self, model: &SharedModel, plan: &FusionPlan, x: &Share, batch: usize) -> Result<Share> {
        let spec = &model.spec;
        let shapes = spec.shapes()?;
        if x.len() != batch * spec.input.len() {
            return Err(Error::dim(format!("{} input elements for {batch} samples of {}", x.len(), spec.input.len())));
        }
        let mut x = x.clone();
        let mut s = spec.input;
        for (step, layers) in &plan.steps {
            let out_shape = shapes[*layers.end()];
            x = match step {
                Step::Linear { layer, tail, relu } => self.linear_step(model, *layer, s, tail, *relu, &x, batch)?,
                Step::Relu => self.relu(&x)?.share,
                Step::MaxPool { window, stride, relu } => {
                    let g = PoolGeom { batch, channels: s.c, height: s.h, width: s.w, window: *window, stride: *stride };
                    self.maxpool(&x, &g, *relu)?.share
                }
                Step::BatchNorm { layer, relu } => self.batchnorm(&x, &bn_params(&spec.layers[*layer], s), *relu)?.share,
                Step::LayerNorm { layer, relu } => self.layernorm(&x, &ln_params(&spec.layers[*layer], s), *relu)?.share,
                Step::Softmax => self.softmax(&x, s.len())?,
            };
            s = out_shape;
        }
        Ok(x)
    }

    #[allow(clippy::too_many_arguments)]
    fn linear_step(&mut self, model: &SharedModel, layer: usize, s: Shape, tail: &Tail, relu: bool, x: &Share, batch: usize) -> Result<Share> {
        let spec = &model.spec;
        let params = model.linear[layer].as_ref().ok_or_else(|| Error::State(format!("layer {layer} has no shared parameters")))?;
        let bias = params.bias.as_ref();
        // Product rows, inner and output width; plus the CHW shape after the
        // linear layer and the permutation into it.
        let (lhs, dims, lin, perm) = match &spec.layers[layer] {
            Layer::Fc { inp, out, .. } => (x.clone(), (batch, *inp, *out), Shape::flat(*out), None),
            Layer::Conv { .. } => {
                let g = spec.conv_geom(&spec.layers[layer], s)?;
                let m = im2col(&g)?;
                let n_in = s.len();
                let idx: Vec<Option<usize>> =
                    (0..batch).flat_map(|b| m.index.iter().map(move |j| j.map(|j| b * n_in + j))).collect();
                let patches = gather_padded(x, &idx);
                let chw = output_to_chw(m.rows, g.cout);
                let per = m.rows * g.cout;
                let perm: Vec<usize> = (0..batch).flat_map(|b| chw.iter().map(move |&j| b * per + j)).collect();
                (patches, (batch * m.rows, m.cols, g.cout), Shape { c: g.cout, h: m.oh, w: m.ow }, Some(perm))
            }
            l => return Err(Error::State(format!("{} is not linear", l.name()))),
        };
        let plane = lin.h * lin.w;
        let out = match tail {
            Tail::None => {
                let units = Units { count: batch * lin.c, out: plane, bits: if relu { plane } else { 0 } };
                let kernel = Kernel { truncate: true, op: Op::Identity, relu };
                self.matmul_kernel(
                    MatMulKernel { x: &lhs, w: &params.weights, dims, bias, perm: perm.as_deref(), unit: plane, units },
                    |_| kernel.clone(),
                )?
            }
            Tail::MaxPool { window, stride } => {
                let g = PoolGeom { batch: 1, channels: 1, height: lin.h, width: lin.w, window: *window, stride: *stride };
                let (oh, ow) = g.out_hw()?;
                let units = Units { count: batch * lin.c, out: oh * ow, bits: if relu { oh * ow } else { plane } };
                self.matmul_kernel(
                    MatMulKernel { x: &lhs, w: &params.weights, dims, bias, perm: perm.as_deref(), unit: plane, units },
                    |n| Kernel { truncate: true, op: Op::MaxPool(PoolGeom { channels: n, ..g.clone() }), relu },
                )?
            }
            Tail::BatchNorm(bn) => {
                let p = bn_params(&spec.layers[*bn], lin);
                let units = Units { count: batch, out: lin.len(), bits: if relu { lin.len() } else { 0 } };
                self.matmul_kernel(
                    MatMulKernel { x: &lhs, w: &params.weights, dims, bias, perm: perm.as_deref(), unit: lin.len(), units },
                    |_| Kernel { truncate: true, op: Op::BatchNorm(p.clone()), relu },
                )?
            }
        };
        Ok(out.share)
    }
}

/// Gathers with zero shares for padding positions.
fn gather_padded(x: &Share, idx: &[Option<usize>]) -> Share {
    Share {
        a: idx.iter().map(|j| j.map_or(0, |j| x.a[j])).collect(),
        b: idx.iter().map(|j| j.map_or(0, |j| x.b[j])).collect(),
    }
}
