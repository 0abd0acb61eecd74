//! Non-linear layers evaluated by one party's trusted component on masked
//! data, batched so that every job of a call shares two communication rounds.
//!
//! Per job with evaluator `E`:
//! 1. The missing input component reaches `E`'s host masked by its component's
//!    PRF (`Rss`), or the other two 3-out-of-3 shares arrive masked by a zero
//!    sharing (`ThreeOfThree`). In malicious mode `E-1` receives the same for a
//!    mirrored evaluation and both evaluators compare redundant copies.
//! 2. `E` holds a fresh replicated sharing of the result; it forwards the
//!    components the others lack, and in malicious mode every host
//!    cross-checks the components it can derive twice.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::bits::{pack, packed_len, unpack};
use crate::error::{Abort, Error, Result};
use crate::expsplit::{split_exp, MANT_MASK};
use crate::lth::command::{Command, FinishData, Form, OutShares, Response, Values};
use crate::lth::kernels::{BatchNormParams, Kernel, LayerNormParams, Op, PoolGeom};
use crate::lth::{evaluator, role};
use crate::net::{malformed, proto, Network};
use crate::party::Party;
use crate::ring::{add_into, add_vec, matmul_acc};
use crate::rss::{check_matmul, BitShare, Share};

/// Input of one offloaded job.
#[derive(Clone, Debug)]
pub enum Input {
    Rss(Share),
    /// This party's additive share of a 3-out-of-3 sharing (semi-honest only).
    Additive(Vec<u64>),
}

impl Input {
    fn len(&self) -> usize {
        match self {
            Input::Rss(s) => s.len(),
            Input::Additive(v) => v.len(),
        }
    }

    /// Selects elements by index.
    pub fn gather(&self, idx: &[usize]) -> Input {
        match self {
            Input::Rss(s) => Input::Rss(s.gather(idx)),
            Input::Additive(v) => Input::Additive(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// A matrix product `x: a x b` by `w: b x c` plus `bias`, laid out for
/// offloading: the product, permuted by `perm` if given, is cut into
/// `units.count` units of `unit` elements.
pub struct MatMulKernel<'a> {
    pub x: &'a Share,
    pub w: &'a Share,
    pub dims: (usize, usize, usize),
    pub bias: Option<&'a Share>,
    pub perm: Option<&'a [usize]>,
    pub unit: usize,
    pub units: Units,
}

#[derive(Clone, Debug)]
pub struct Job {
    pub input: Input,
    pub kernel: Kernel,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Output {
    pub share: Share,
    pub bits: BitShare,
}

/// Per-job bookkeeping shared by the two rounds.
struct Slot {
    seq: u64,
    role: usize,
    form: Form,
    values: Values,
    n_in: usize,
    n_out: usize,
    n_bits: usize,
}

impl Slot {
    fn in_len(&self, w: usize) -> usize {
        match self.values {
            Values::Ring => self.n_in * w,
            Values::Exp => self.n_in * 12,
        }
    }

    fn out_len(&self, w: usize) -> usize {
        self.n_out * w + packed_len(self.n_bits)
    }
}

/// Frames being assembled for, or parsed from, the two neighbours.
#[derive(Default)]
struct Frames {
    next: Vec<u8>,
    prev: Vec<u8>,
    next_bits: usize,
    prev_bits: usize,
}

const ROLE_E: usize = 0;
const ROLE_NEXT: usize = 1;
const ROLE_PREV: usize = 2;

/// Round-robin partition of `n` units: part `j` holds the units `t` with
/// `t mod 3 = j`. Empty parts are omitted.
pub fn batch_split(n: usize) -> Vec<Vec<usize>> {
    (0..n.min(3)).map(|j| (j..n).step_by(3).collect()).collect()
}

impl<N: Network> Party<N> {
    /// Runs `jobs` through the trusted components in one batch.
    pub fn offload(&mut self, proto: u8, jobs: Vec<Job>) -> Result<Vec<Output>> {
        self.run(|p| p.offload_inner(proto, jobs))
    }

    fn offload_inner(&mut self, proto: u8, jobs: Vec<Job>) -> Result<Vec<Output>> {
        self.begin();
        let ring = self.ring();
        let w = ring.byte_len();
        let mal = self.is_malicious();
        let me = self.id();
        let (nx, pv) = (self.next(), self.prev());

        let mut slots = Vec::with_capacity(jobs.len());
        for job in &jobs {
            let n_in = job.input.len();
            let (n_out, n_bits) = job.kernel.shape(n_in)?;
            let form = match &job.input {
                Input::Rss(s) => {
                    if s.b.len() != n_in {
                        return Err(Error::dim("share components of different lengths"));
                    }
                    Form::Rss
                }
                Input::Additive(_) if mal => {
                    return Err(Error::Config("3-out-of-3 offload needs semi-honest mode".into()))
                }
                Input::Additive(_) if job.kernel.is_softmax() => {
                    return Err(Error::Config("softmax takes replicated input".into()))
                }
                Input::Additive(_) => Form::ThreeOfThree,
            };
            let values = if job.kernel.is_softmax() { Values::Exp } else { Values::Ring };
            let cmd = Command::Open { form, values, n_in: n_in as u32, n_out: n_out as u32, n_bits: n_bits as u32 };
            let Response::Opened { seq, evaluator: e } = self.lth(&cmd)? else {
                return Err(Error::State("open returned no session".into()));
            };
            debug_assert_eq!(e, evaluator(seq));
            slots.push(Slot { seq, role: role(me, e), form, values, n_in, n_out, n_bits });
        }

        // Round 1: masked inputs towards the evaluators.
        let mut out = Frames::default();
        for (job, s) in jobs.iter().zip(&slots) {
            let primary_sender = match s.form {
                Form::Rss => s.role == ROLE_PREV || (mal && s.role == ROLE_NEXT),
                Form::ThreeOfThree => s.role != ROLE_E,
            };
            if primary_sender {
                // E-1 and E+1 both hold s_{E-1}; 3-out-of-3 holders send their own.
                let masks = self.lth(&Command::Mask { seq: s.seq, mirror: false })?;
                let msg = match &job.input {
                    Input::Rss(sh) => {
                        let missing = if s.role == ROLE_PREV { &sh.a } else { &sh.b };
                        masked(self.ring(), s, missing, masks)?
                    }
                    Input::Additive(c) => masked(self.ring(), s, c, masks)?,
                };
                // E is the next party of E-1 and the previous of E+1.
                if s.role == ROLE_PREV { out.next.extend(msg) } else { out.prev.extend(msg) }
            }
            if mal && (s.role == ROLE_E || s.role == ROLE_NEXT) {
                let Input::Rss(sh) = &job.input else { unreachable!() };
                // s_{E+1} towards E-1, the previous of E and the next of E+1.
                let missing = if s.role == ROLE_E { &sh.b } else { &sh.a };
                let masks = self.lth(&Command::Mask { seq: s.seq, mirror: true })?;
                let msg = masked(self.ring(), s, missing, masks)?;
                if s.role == ROLE_E { out.prev.extend(msg) } else { out.next.extend(msg) }
            }
        }
        let (from_prev_len, from_next_len) = slots.iter().fold((0, 0), |(p, n), s| {
            let l = s.in_len(w);
            let from_prev = s.role == ROLE_E || (mal && s.role == ROLE_PREV);
            let from_next = (s.role == ROLE_E && (mal || s.form == Form::ThreeOfThree)) || (mal && s.role == ROLE_PREV);
            (p + if from_prev { l } else { 0 }, n + if from_next { l } else { 0 })
        });
        let got = self.exchange(proto, 1, out, from_prev_len, from_next_len)?;

        // Evaluate and collect output shares.
        let mut shares: Vec<OutShares> = Vec::with_capacity(slots.len());
        let (mut op, mut on) = (0, 0);
        for (job, s) in jobs.iter().zip(&slots) {
            let l = s.in_len(w);
            let evaluates = s.role == ROLE_E || (mal && s.role == ROLE_PREV);
            if !evaluates {
                let r = self.lth(&Command::ShareOut { seq: s.seq })?;
                shares.push(expect_shares(r)?);
                continue;
            }
            let a = &got.prev[op..op + l];
            op += l;
            let b = if mal || s.form == Form::ThreeOfThree {
                on += l;
                Some(&got.next[on - l..on])
            } else {
                None
            };
            if mal {
                if a != b.unwrap() {
                    return Err(Abort::new("masked input copies").on(pv, me).on(nx, me).into());
                }
            }
            let data = self.finish_data(s, &job.input, a, b).map_err(|e| match e {
                Error::Frame(what) => Abort::new(format!("frame check: {what}")).on(pv, me).on(nx, me).into(),
                e => e,
            })?;
            let mirror = s.role == ROLE_PREV;
            let cmd = Command::Finish { seq: s.seq, mirror, kernel: job.kernel.clone(), data };
            let r = self.lth(&cmd).map_err(|e| match e {
                // Out-of-range exponents only arise from inconsistent inputs.
                Error::ExponentRange { q, limit } => {
                    Abort::new(format!("softmax exponent {q} outside (0, {limit}]")).on(pv, me).on(nx, me).into()
                }
                e => e,
            })?;
            shares.push(expect_shares(r)?);
        }

        // Round 2: distribute and cross-check output components.
        let mut out = Frames::default();
        for (s, sh) in slots.iter().zip(&shares) {
            match s.role {
                ROLE_E => {
                    out.prev.extend(out_msg(self.ring(), s, &sh.first, &sh.first_bits));
                    out.next.extend(out_msg(self.ring(), s, &sh.second, &sh.second_bits));
                }
                // E-1 confirms y + m_E to E and m_{E-1} to E+1.
                ROLE_PREV if mal => {
                    out.next.extend(out_msg(self.ring(), s, &sh.second, &sh.second_bits));
                    out.prev.extend(out_msg(self.ring(), s, &sh.first, &sh.first_bits));
                }
                _ => continue,
            }
            out.next_bits += packed_len(s.n_bits);
            out.prev_bits += packed_len(s.n_bits);
        }
        let (from_prev_len, from_next_len) = slots.iter().fold((0, 0), |(p, n), s| {
            let l = s.out_len(w);
            let from_prev = s.role == ROLE_NEXT || (mal && s.role == ROLE_E);
            let from_next = s.role == ROLE_PREV || (mal && s.role == ROLE_NEXT);
            (p + if from_prev { l } else { 0 }, n + if from_next { l } else { 0 })
        });
        let got = self.exchange(proto, 2, out, from_prev_len, from_next_len)?;

        let (mut op, mut on) = (0, 0);
        let mut outputs = Vec::with_capacity(slots.len());
        for (s, mut sh) in slots.iter().zip(shares) {
            let l = s.out_len(w);
            let mut take = |from_prev: bool| {
                let (buf, off) = if from_prev { (&got.prev, &mut op) } else { (&got.next, &mut on) };
                *off += l;
                parse_out(self.ring(), s, &buf[*off - l..*off]).map_err(malformed(if from_prev { pv } else { nx }, me))
            };
            match (s.role, mal) {
                (ROLE_E, true) => {
                    if !same(take(true)?, &sh.first, &sh.first_bits) {
                        return Err(Abort::new("output share copies").on(pv, me).into());
                    }
                }
                (ROLE_NEXT, false) => (sh.first, sh.first_bits) = take(true)?,
                (ROLE_NEXT, true) => {
                    if !same(take(true)?, &sh.first, &sh.first_bits) {
                        return Err(Abort::new("output share copies").on(pv, me).into());
                    }
                    if !same(take(false)?, &sh.second, &sh.second_bits) {
                        return Err(Abort::new("output share copies").on(nx, me).into());
                    }
                }
                (ROLE_PREV, false) => (sh.second, sh.second_bits) = take(false)?,
                (ROLE_PREV, true) => {
                    if !same(take(false)?, &sh.second, &sh.second_bits) {
                        return Err(Abort::new("output share copies").on(nx, me).into());
                    }
                }
                _ => {}
            }
            outputs.push(Output {
                share: Share { a: sh.first, b: sh.second },
                bits: BitShare { a: sh.first_bits, b: sh.second_bits },
            });
        }
        Ok(outputs)
    }

    /// Sends both frames (if non-empty) and receives the expected lengths.
    fn exchange(&mut self, proto: u8, step: u8, out: Frames, from_prev: usize, from_next: usize) -> Result<Frames> {
        let (nx, pv) = (self.next(), self.prev());
        for (to, buf, bits) in [(nx, out.next, out.next_bits), (pv, out.prev, out.prev_bits)] {
            if !buf.is_empty() {
                self.send(to, proto, step, buf, bits)?;
            }
        }
        let mut got = Frames::default();
        if from_prev > 0 {
            got.prev = self.recv_exact(pv, proto, step, from_prev)?;
        }
        if from_next > 0 {
            got.next = self.recv_exact(nx, proto, step, from_next)?;
        }
        Ok(got)
    }

    fn finish_data(&self, s: &Slot, input: &Input, a: &[u8], b: Option<&[u8]>) -> Result<FinishData> {
        let ring = self.ring();
        let mal = self.is_malicious();
        match (s.values, input) {
            (Values::Ring, Input::Rss(sh)) => {
                let mut v = ring.decode_elems(a)?;
                add_into(ring, &mut v, &sh.a);
                add_into(ring, &mut v, &sh.b);
                Ok(FinishData::Ring(v))
            }
            (Values::Ring, Input::Additive(c)) => {
                let mut v = ring.decode_elems(a)?;
                add_into(ring, &mut v, &ring.decode_elems(b.expect("two 3-out-of-3 inputs"))?);
                add_into(ring, &mut v, c);
                Ok(FinishData::Ring(v))
            }
            (Values::Exp, Input::Rss(sh)) => {
                let (q_star, m_star) = parse_exp(a);
                if mal {
                    Ok(FinishData::ExpTriple { q_star, m_star, a: sh.a.clone(), b: sh.b.clone() })
                } else {
                    let mut q_sum = q_star;
                    let mut m_hat = Vec::with_capacity(s.n_in);
                    for i in 0..s.n_in {
                        let part = split_exp(ring.add(sh.a[i], sh.b[i]), ring.frac());
                        q_sum[i] = q_sum[i].wrapping_add(part.q as u32);
                        m_hat.push(part.m);
                    }
                    Ok(FinishData::ExpPair { q_sum, m_star, m_hat })
                }
            }
            (Values::Exp, Input::Additive(_)) => Err(Error::Config("softmax takes replicated input".into())),
        }
    }

    /// Elementwise ReLU; returns the result and its sign bits.
    pub fn relu(&mut self, x: &Share) -> Result<Output> {
        self.elementwise(proto::RELU, x, Kernel::relu())
    }

    /// Exact truncation by the fractional bits.
    pub fn truncate(&mut self, x: &Share) -> Result<Share> {
        Ok(self.elementwise(proto::TRUNC, x, Kernel::trunc())?.share)
    }

    /// One job per input vector; consecutive jobs rotate the evaluator.
    pub fn relu_batch(&mut self, xs: &[Share]) -> Result<Vec<Output>> {
        let jobs = xs.iter().map(|x| Job { input: Input::Rss(x.clone()), kernel: Kernel::relu() }).collect();
        self.offload(proto::RELU, jobs)
    }

    fn elementwise(&mut self, proto: u8, x: &Share, kernel: Kernel) -> Result<Output> {
        let units = Units { count: x.len(), out: 1, bits: if kernel.relu { 1 } else { 0 } };
        self.run(|p| {
            p.split_run(proto, units, |idx| Ok(Job { input: Input::Rss(x.gather(&idx)), kernel: kernel.clone() }))
        })
    }

    /// Splits `units` round-robin over three jobs, runs them in one batch and
    /// restores the original order.
    fn split_run(&mut self, proto: u8, units: Units, mut job: impl FnMut(Vec<usize>) -> Result<Job>) -> Result<Output> {
        let parts = batch_split(units.count);
        let jobs = parts.iter().map(|part| job(part.clone())).collect::<Result<Vec<_>>>()?;
        let outs = self.offload_inner(proto, jobs)?;
        let mut res = Output {
            share: Share { a: vec![0; units.count * units.out], b: vec![0; units.count * units.out] },
            bits: BitShare { a: vec![0; units.count * units.bits], b: vec![0; units.count * units.bits] },
        };
        for (part, o) in parts.iter().zip(outs) {
            if o.share.len() != part.len() * units.out || o.bits.a.len() != part.len() * units.bits {
                return Err(Error::dim("job output does not match its units"));
            }
            scatter(&mut res.share.a, &o.share.a, part, units.out);
            scatter(&mut res.share.b, &o.share.b, part, units.out);
            scatter(&mut res.bits.a, &o.bits.a, part, units.bits);
            scatter(&mut res.bits.b, &o.bits.b, part, units.bits);
        }
        Ok(res)
    }

    /// `relu(trunc(x * w + bias))` for `x: a x b`, `w: b x c` and a shared
    /// `bias` of length `c`. Without `relu` the result is only truncated.
    pub fn matmul_relu(
        &mut self,
        x: &Share,
        w: &Share,
        dims: (usize, usize, usize),
        bias: Option<&Share>,
        relu: bool,
    ) -> Result<Output> {
        let (a, _, c) = dims;
        let kernel = if relu { Kernel::trunc_relu() } else { Kernel::trunc() };
        let units = Units { count: a, out: c, bits: if relu { c } else { 0 } };
        self.matmul_kernel(MatMulKernel { x, w, dims, bias, perm: None, unit: c, units }, |_| kernel.clone())
    }

    /// Multiplies, optionally permutes the product, then offloads it in
    /// units with a kernel that must truncate first.
    pub fn matmul_kernel(&mut self, m: MatMulKernel<'_>, kernel: impl Fn(usize) -> Kernel) -> Result<Output> {
        let MatMulKernel { x, w, dims: (a, b, c), bias, perm, unit, units } = m;
        self.run(|p| {
            check_matmul(x, w, a, b, c)?;
            if a == 0 || c == 0 {
                return Err(Error::dim(format!("empty matmul {a}x{b} by {b}x{c}")));
            }
            if bias.is_some_and(|bias| bias.len() != c || bias.b.len() != c) {
                return Err(Error::dim(format!("bias for {c} outputs")));
            }
            if perm.is_some_and(|q| q.len() != a * c) || units.count * unit != a * c {
                return Err(Error::dim("product layout"));
            }
            let ring = p.ring();
            // The bias enters before truncation, at twice the fractional bits.
            let bias = bias.map(|b| b.scale(ring, 1 << ring.frac()));
            let input = if p.is_malicious() {
                let mut prod = p.matmul_inner(x, w, a, b, c)?;
                if let Some(bias) = &bias {
                    let mut rows = Share::default();
                    for _ in 0..a {
                        rows.extend(bias);
                    }
                    prod = prod.add(ring, &rows)?;
                }
                Input::Rss(prod)
            } else {
                let prod = move |u: &[u64], v: &[u64], out: &mut [u64]| matmul_acc(ring, out, u, v, a, b, c);
                let mut cp = p.local_product(x, w, &prod, a * c);
                // Component s_p of the bias completes the 3-out-of-3 sharing.
                if let Some(bias) = &bias {
                    for row in cp.chunks_mut(c) {
                        add_into(ring, row, &bias.a);
                    }
                }
                Input::Additive(cp)
            };
            let input = match perm {
                Some(q) => input.gather(q),
                None => input,
            };
            p.split_run(proto::MATMUL_RELU, units, |idx| {
                let n = idx.len();
                Ok(Job { input: input.gather(&expand(&idx, unit)), kernel: kernel(n) })
            })
        })
    }

    /// Max-pool with optional fused ReLU. The bits mark selected inputs, or
    /// positive outputs when fused.
    pub fn maxpool(&mut self, x: &Share, geom: &PoolGeom, relu: bool) -> Result<Output> {
        let plane = geom.height * geom.width;
        let (oh, ow) = geom.out_hw()?;
        let units = Units { count: geom.batch * geom.channels, out: oh * ow, bits: if relu { oh * ow } else { plane } };
        self.run(|p| {
            p.split_run(proto::MAXPOOL, units, |planes| {
                let g = PoolGeom { batch: 1, channels: planes.len(), ..geom.clone() };
                let kernel = Kernel { truncate: false, op: Op::MaxPool(g), relu };
                Ok(Job { input: Input::Rss(x.gather(&expand(&planes, plane))), kernel })
            })
        })
    }

    pub fn batchnorm(&mut self, x: &Share, params: &BatchNormParams, relu: bool) -> Result<Output> {
        let block = params.channels * params.inner;
        if block == 0 || x.len() % block != 0 {
            return Err(Error::dim(format!("batchnorm block of {block} on {} inputs", x.len())));
        }
        let units = Units { count: x.len() / block, out: block, bits: if relu { block } else { 0 } };
        let kernel = Kernel { truncate: false, op: Op::BatchNorm(params.clone()), relu };
        self.run(|p| {
            p.split_run(proto::BATCHNORM, units, |idx| {
                Ok(Job { input: Input::Rss(x.gather(&expand(&idx, block))), kernel: kernel.clone() })
            })
        })
    }

    pub fn layernorm(&mut self, x: &Share, params: &LayerNormParams, relu: bool) -> Result<Output> {
        let g = params.group;
        if g == 0 || x.len() % g != 0 {
            return Err(Error::dim(format!("layernorm group {g} on {} inputs", x.len())));
        }
        let units = Units { count: x.len() / g, out: g, bits: if relu { g } else { 0 } };
        let kernel = Kernel { truncate: false, op: Op::LayerNorm(params.clone()), relu };
        self.run(|p| {
            p.split_run(proto::LAYERNORM, units, |idx| {
                Ok(Job { input: Input::Rss(x.gather(&expand(&idx, g))), kernel: kernel.clone() })
            })
        })
    }

    /// Softmax over consecutive groups of `group` elements.
    pub fn softmax(&mut self, x: &Share, group: usize) -> Result<Share> {
        if group == 0 || x.len() % group != 0 {
            return Err(Error::dim(format!("softmax group {group} on {} inputs", x.len())));
        }
        let units = Units { count: x.len() / group, out: group, bits: 0 };
        let out = self.run(|p| {
            p.split_run(proto::SOFTMAX, units, |idx| {
                Ok(Job { input: Input::Rss(x.gather(&expand(&idx, group))), kernel: Kernel::softmax(group) })
            })
        })?;
        Ok(out.share)
    }

    /// One softmax job per vector.
    pub fn softmax_batch(&mut self, xs: &[Share]) -> Result<Vec<Share>> {
        let jobs = xs.iter().map(|x| Job { input: Input::Rss(x.clone()), kernel: Kernel::softmax(x.len()) }).collect();
        Ok(self.offload(proto::SOFTMAX, jobs)?.into_iter().map(|o| o.share).collect())
    }
}

/// Unit layout of a split call: number of units and elements per unit of
/// output and of bits.
#[derive(Clone, Copy, Debug)]
pub struct Units {
    pub count: usize,
    pub out: usize,
    pub bits: usize,
}

/// Copies unit `k` of `src` to unit `part[k]` of `dst`, `size` elements per unit.
fn scatter<T: Copy>(dst: &mut [T], src: &[T], part: &[usize], size: usize) {
    if size == 1 {
        for (&t, &v) in part.iter().zip(src) {
            dst[t] = v;
        }
        return;
    }
    for (&t, chunk) in part.iter().zip(src.chunks_exact(size.max(1))) {
        dst[t * size..(t + 1) * size].copy_from_slice(chunk);
    }
}

/// Element indices of units `idx` of `size` elements each.
fn expand(idx: &[usize], size: usize) -> Vec<usize> {
    idx.iter().flat_map(|&t| t * size..(t + 1) * size).collect()
}

fn same(got: (Vec<u64>, Vec<u8>), vals: &[u64], bits: &[u8]) -> bool {
    got.0 == vals && got.1 == bits
}

fn expect_shares(r: Response) -> Result<OutShares> {
    match r {
        Response::Shares(s) => Ok(s),
        _ => Err(Error::State("component returned no output shares".into())),
    }
}

/// Masks `v` for the evaluator: ring addition, or for exponent-split input
/// `(m + alpha) mod 2^52` and `q + beta mod 2^32`.
fn masked(ring: crate::Ring, s: &Slot, v: &[u64], masks: Response) -> Result<Vec<u8>> {
    match (s.values, masks) {
        (Values::Ring, Response::Masks(m)) if m.len() == v.len() => Ok(ring.encode_elems(&add_vec(ring, v, &m))),
        (Values::Exp, Response::ExpMasks(m)) if m.len() == v.len() => {
            let mut out = Vec::with_capacity(12 * v.len());
            for (&x, &(alpha, beta)) in v.iter().zip(&m) {
                let p = split_exp(x, ring.frac());
                out.extend_from_slice(&((p.m + alpha) & MANT_MASK).to_le_bytes());
                out.extend_from_slice(&(p.q as u32).wrapping_add(beta).to_le_bytes());
            }
            Ok(out)
        }
        _ => Err(Error::State("mask response does not match session".into())),
    }
}

fn parse_exp(bytes: &[u8]) -> (Vec<u32>, Vec<u64>) {
    bytes
        .chunks_exact(12)
        .map(|c| {
            let m = u64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let q = u32::from_le_bytes(c[8..].try_into().expect("4 bytes"));
            (q, m & MANT_MASK)
        })
        .unzip()
}

fn out_msg(ring: crate::Ring, s: &Slot, v: &[u64], bits: &[u8]) -> Vec<u8> {
    let mut m = Vec::with_capacity(s.out_len(ring.byte_len()));
    ring.write_elems(v, &mut m);
    m.extend(pack(bits));
    m
}

fn parse_out(ring: crate::Ring, s: &Slot, bytes: &[u8]) -> Result<(Vec<u64>, Vec<u8>)> {
    let k = s.n_out * ring.byte_len();
    Ok((ring.decode_elems(&bytes[..k])?, unpack(&bytes[k..], s.n_bits)?))
}
