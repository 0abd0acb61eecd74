//! Framed host-to-trusted-component commands and their responses.
//!
//! Command frame: opcode, mode flag, payload length (`u32` LE), payload.
//! Response frame: opcode, status, payload length (`u32` LE), payload.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::codec::{Reader, Writer};
use crate::error::{Abort, Error, Result};
use crate::lth::attest::Attestation;
use crate::lth::kernels::{Kernel, Op};
use crate::net::PartyId;
use crate::ring::Ring;
use crate::Mode;

pub const HEADER_LEN: usize = 6;

pub mod opcode {
    pub const QUOTE: u8 = 0x01;
    pub const ESTABLISH: u8 = 0x02;
    pub const RECOVER: u8 = 0x03;
    pub const OPEN: u8 = 0x10;
    pub const MASK: u8 = 0x11;
    pub const SHARE_OUT: u8 = 0x12;
    pub const RELU_FINISH: u8 = 0x20;
    pub const MATMUL_RELU_FINISH: u8 = 0x21;
    pub const MAXPOOL_FINISH: u8 = 0x22;
    pub const BATCHNORM_FINISH: u8 = 0x23;
    pub const LAYERNORM_FINISH: u8 = 0x24;
    pub const SOFTMAX_FINISH: u8 = 0x25;
    pub const TRUNC_FINISH: u8 = 0x26;

    pub fn name(op: u8) -> &'static str {
        match op {
            QUOTE => "Quote",
            ESTABLISH => "Establish",
            RECOVER => "Recover",
            OPEN => "Open",
            MASK => "Mask",
            SHARE_OUT => "GenMaskShareOut",
            RELU_FINISH => "ReluFinish",
            MATMUL_RELU_FINISH => "MatMulReluFinish",
            MAXPOOL_FINISH => "MaxPoolFinish",
            BATCHNORM_FINISH => "BatchNormFinish",
            LAYERNORM_FINISH => "LayerNormFinish",
            SOFTMAX_FINISH => "SoftmaxFinish",
            TRUNC_FINISH => "TruncFinish",
            _ => "unknown",
        }
    }
}

/// Finish opcode carrying a given kernel.
pub fn finish_opcode(k: &Kernel) -> Result<u8> {
    Ok(match (&k.op, k.truncate, k.relu) {
        (Op::Softmax { .. }, _, _) => opcode::SOFTMAX_FINISH,
        (Op::MaxPool(_), _, _) => opcode::MAXPOOL_FINISH,
        (Op::BatchNorm(_), _, _) => opcode::BATCHNORM_FINISH,
        (Op::LayerNorm(_), _, _) => opcode::LAYERNORM_FINISH,
        (Op::Identity, true, true) => opcode::MATMUL_RELU_FINISH,
        (Op::Identity, true, false) => opcode::TRUNC_FINISH,
        (Op::Identity, false, true) => opcode::RELU_FINISH,
        (Op::Identity, false, false) => return Err(Error::State("identity kernel has no effect".into())),
    })
}

/// How the evaluator's input is shared before unmasking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Form {
    /// 2-out-of-3 replicated shares; one share arrives masked.
    Rss,
    /// 3-out-of-3 additive shares masked with zero shares.
    ThreeOfThree,
}

/// Domain of the masked input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Values {
    Ring,
    /// Per-share exponentials split into exponent and mantissa.
    Exp,
}

/// Evaluator input of a Finish command.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FinishData {
    /// Unmasking input: `x' + a + b` or the sum of masked 3-of-3 shares.
    Ring(Vec<u64>),
    /// Masked exponent sum `q* + q^`, masked mantissa `m*`, own mantissa `m^`.
    ExpPair { q_sum: Vec<u32>, m_star: Vec<u64>, m_hat: Vec<u64> },
    /// Masked exponent and mantissa of the received share plus the two
    /// shares the evaluator holds.
    ExpTriple { q_star: Vec<u32>, m_star: Vec<u64>, a: Vec<u64>, b: Vec<u64> },
}

impl FinishData {
    pub fn len(&self) -> usize {
        match self {
            FinishData::Ring(v) => v.len(),
            FinishData::ExpPair { q_sum, .. } => q_sum.len(),
            FinishData::ExpTriple { q_star, .. } => q_star.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write(&self, w: &mut Writer, ring: Ring) {
        match self {
            FinishData::Ring(v) => {
                w.u8(0).elems(ring, v);
            }
            FinishData::ExpPair { q_sum, m_star, m_hat } => {
                w.u8(1).u32(q_sum.len() as u32);
                for i in 0..q_sum.len() {
                    w.u32(q_sum[i]).u64(m_star[i]).u64(m_hat[i]);
                }
            }
            FinishData::ExpTriple { q_star, m_star, a, b } => {
                w.u8(2).u32(q_star.len() as u32);
                for i in 0..q_star.len() {
                    w.u32(q_star[i]).u64(m_star[i]);
                }
                w.elems(ring, a).elems(ring, b);
            }
        }
    }

    fn read(r: &mut Reader, ring: Ring) -> Result<Self> {
        Ok(match r.u8()? {
            0 => FinishData::Ring(r.elems(ring)?),
            1 => {
                let n = r.u32()? as usize;
                let (mut q_sum, mut m_star, mut m_hat) = (Vec::new(), Vec::new(), Vec::new());
                for _ in 0..n {
                    q_sum.push(r.u32()?);
                    m_star.push(r.u64()?);
                    m_hat.push(r.u64()?);
                }
                FinishData::ExpPair { q_sum, m_star, m_hat }
            }
            2 => {
                let n = r.u32()? as usize;
                let (mut q_star, mut m_star) = (Vec::new(), Vec::new());
                for _ in 0..n {
                    q_star.push(r.u32()?);
                    m_star.push(r.u64()?);
                }
                FinishData::ExpTriple { q_star, m_star, a: r.elems(ring)?, b: r.elems(ring)? }
            }
            t => return Err(Error::Frame(format!("finish data tag {t}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    /// Fresh DH value signed by the device key.
    Quote { config: [u8; 32] },
    /// Verify neighbour attestations and derive the two adjacent keys.
    Establish { prev: Attestation, next: Attestation },
    /// Recover the third key from the value forwarded by the previous party.
    Recover { forward: u128 },
    /// Start a session over `n_in` inputs producing `n_out` outputs and
    /// `n_bits` mod-2 outputs; reserves counters.
    Open { form: Form, values: Values, n_in: u32, n_out: u32, n_bits: u32 },
    /// Masks this party applies before forwarding a share.
    Mask { seq: u64, mirror: bool },
    /// This party's output shares when it is not the evaluator.
    ShareOut { seq: u64 },
    /// Unmask, run the kernel and re-mask.
    Finish { seq: u64, mirror: bool, kernel: Kernel, data: FinishData },
}

impl Command {
    pub fn opcode(&self) -> Result<u8> {
        Ok(match self {
            Command::Quote { .. } => opcode::QUOTE,
            Command::Establish { .. } => opcode::ESTABLISH,
            Command::Recover { .. } => opcode::RECOVER,
            Command::Open { .. } => opcode::OPEN,
            Command::Mask { .. } => opcode::MASK,
            Command::ShareOut { .. } => opcode::SHARE_OUT,
            Command::Finish { kernel, .. } => finish_opcode(kernel)?,
        })
    }

    pub fn encode(&self, mode: Mode, ring: Ring) -> Result<Vec<u8>> {
        let mut w = Writer::new();
        match self {
            Command::Quote { config } => {
                w.raw(config);
            }
            Command::Establish { prev, next } => {
                prev.write(&mut w);
                next.write(&mut w);
            }
            Command::Recover { forward } => {
                w.u128(*forward);
            }
            Command::Open { form, values, n_in, n_out, n_bits } => {
                w.u8(*form as u8).u8(*values as u8).u32(*n_in).u32(*n_out).u32(*n_bits);
            }
            Command::Mask { seq, mirror } => {
                w.u64(*seq).u8(*mirror as u8);
            }
            Command::ShareOut { seq } => {
                w.u64(*seq);
            }
            Command::Finish { seq, mirror, kernel, data } => {
                w.u64(*seq).u8(*mirror as u8);
                kernel.write(&mut w, ring);
                data.write(&mut w, ring);
            }
        }
        Ok(frame(self.opcode()?, mode.is_malicious() as u8, &w.finish()))
    }

    pub fn decode(bytes: &[u8], ring: Ring) -> Result<(Mode, Command)> {
        let (op, flag, payload) = unframe(bytes)?;
        let mode = match flag {
            0 => Mode::SemiHonest,
            1 => Mode::Malicious,
            f => return Err(Error::Frame(format!("mode flag {f}"))),
        };
        let mut r = Reader::new(payload);
        let cmd = match op {
            opcode::QUOTE => Command::Quote { config: r.take(32)?.try_into().expect("32 bytes") },
            opcode::ESTABLISH => Command::Establish { prev: Attestation::read(&mut r)?, next: Attestation::read(&mut r)? },
            opcode::RECOVER => Command::Recover { forward: r.u128()? },
            opcode::OPEN => Command::Open {
                form: match r.u8()? {
                    0 => Form::Rss,
                    1 => Form::ThreeOfThree,
                    f => return Err(Error::Frame(format!("share form {f}"))),
                },
                values: match r.u8()? {
                    0 => Values::Ring,
                    1 => Values::Exp,
                    v => return Err(Error::Frame(format!("value domain {v}"))),
                },
                n_in: r.u32()?,
                n_out: r.u32()?,
                n_bits: r.u32()?,
            },
            opcode::MASK => Command::Mask { seq: r.u64()?, mirror: read_bool(&mut r)? },
            opcode::SHARE_OUT => Command::ShareOut { seq: r.u64()? },
            opcode::RELU_FINISH..=opcode::TRUNC_FINISH => {
                let seq = r.u64()?;
                let mirror = read_bool(&mut r)?;
                let kernel = Kernel::read(&mut r, ring)?;
                if finish_opcode(&kernel)? != op {
                    return Err(Error::Frame(format!("{} does not carry this kernel", opcode::name(op))));
                }
                Command::Finish { seq, mirror, kernel, data: FinishData::read(&mut r, ring)? }
            }
            _ => return Err(Error::Frame(format!("unknown opcode {op:#04x}"))),
        };
        r.end()?;
        Ok((mode, cmd))
    }
}

fn read_bool(r: &mut Reader) -> Result<bool> {
    match r.u8()? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::Frame(format!("flag byte {v}"))),
    }
}

fn frame(op: u8, flag: u8, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.push(op);
    out.push(flag);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

fn unframe(bytes: &[u8]) -> Result<(u8, u8, &[u8])> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Frame(format!("{}-byte command frame", bytes.len())));
    }
    let len = u32::from_le_bytes(bytes[2..6].try_into().unwrap()) as usize;
    if bytes.len() - HEADER_LEN != len {
        return Err(Error::Frame(format!("declared {len} payload bytes, got {}", bytes.len() - HEADER_LEN)));
    }
    Ok((bytes[0], bytes[1], &bytes[HEADER_LEN..]))
}

/// A party's two output share components with their mod-2 companions,
/// in the order the party stores them.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OutShares {
    pub first: Vec<u64>,
    pub second: Vec<u64>,
    pub first_bits: Vec<u8>,
    pub second_bits: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Response {
    Attestation(Attestation),
    Forward(u128),
    Done,
    Opened { seq: u64, evaluator: PartyId },
    Masks(Vec<u64>),
    /// Mantissa and exponent masks per element.
    ExpMasks(Vec<(u64, u32)>),
    Shares(OutShares),
}

const STATUS_OK: u8 = 0;
const STATUS_ERR: u8 = 1;

impl Response {
    pub fn encode(&self, op: u8, ring: Ring) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Response::Attestation(a) => {
                w.u8(0);
                a.write(&mut w);
            }
            Response::Forward(v) => {
                w.u8(1).u128(*v);
            }
            Response::Done => {
                w.u8(2);
            }
            Response::Opened { seq, evaluator } => {
                w.u8(3).u64(*seq).u8(*evaluator);
            }
            Response::Masks(m) => {
                w.u8(4).elems(ring, m);
            }
            Response::ExpMasks(m) => {
                w.u8(5).u32(m.len() as u32);
                for &(alpha, beta) in m {
                    w.u64(alpha).u32(beta);
                }
            }
            Response::Shares(s) => {
                w.u8(6).elems(ring, &s.first).elems(ring, &s.second);
                w.bits(&s.first_bits).bits(&s.second_bits);
            }
        }
        frame(op, STATUS_OK, &w.finish())
    }

    pub fn encode_error(op: u8, e: &Error) -> Vec<u8> {
        let mut w = Writer::new();
        match e {
            Error::Abort(a) => {
                w.u8(1).bytes(a.check.as_bytes());
            }
            Error::ExponentRange { q, limit } => {
                w.u8(2).u64(*q as u64).u64(*limit as u64);
            }
            Error::Dimension(m) => {
                w.u8(3).bytes(m.as_bytes());
            }
            Error::Frame(m) => {
                w.u8(4).bytes(m.as_bytes());
            }
            other => {
                w.u8(5).bytes(other.to_string().as_bytes());
            }
        }
        frame(op, STATUS_ERR, &w.finish())
    }

    /// Decodes a response to a command with opcode `op`; error responses
    /// become `Err`.
    pub fn decode(bytes: &[u8], op: u8, ring: Ring) -> Result<Response> {
        let (got, status, payload) = unframe(bytes)?;
        if got != op {
            return Err(Error::Frame(format!("response to {:#04x}, expected {op:#04x}", got)));
        }
        let mut r = Reader::new(payload);
        if status == STATUS_ERR {
            let kind = r.u8()?;
            let text = |r: &mut Reader| -> Result<String> { Ok(String::from_utf8_lossy(r.bytes()?).into_owned()) };
            let err = match kind {
                1 => Error::Abort(Abort::new(text(&mut r)?)),
                2 => Error::ExponentRange { q: r.u64()? as i64, limit: r.u64()? as i64 },
                3 => Error::Dimension(text(&mut r)?),
                4 => Error::Frame(text(&mut r)?),
                _ => Error::State(text(&mut r)?),
            };
            return Err(err);
        }
        if status != STATUS_OK {
            return Err(Error::Frame(format!("response status {status}")));
        }
        let resp = match r.u8()? {
            0 => Response::Attestation(Attestation::read(&mut r)?),
            1 => Response::Forward(r.u128()?),
            2 => Response::Done,
            3 => Response::Opened { seq: r.u64()?, evaluator: r.u8()? },
            4 => Response::Masks(r.elems(ring)?),
            5 => {
                let n = r.u32()? as usize;
                let mut m = Vec::with_capacity(n.min(1 << 20));
                for _ in 0..n {
                    m.push((r.u64()?, r.u32()?));
                }
                Response::ExpMasks(m)
            }
            6 => Response::Shares(OutShares {
                first: r.elems(ring)?,
                second: r.elems(ring)?,
                first_bits: r.bits()?,
                second_bits: r.bits()?,
            }),
            t => return Err(Error::Frame(format!("response tag {t}"))),
        };
        r.end()?;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lth::kernels::PoolGeom;

    const R: Ring = Ring::DEFAULT;

    fn roundtrip(c: Command, mode: Mode) {
        let bytes = c.encode(mode, R).unwrap();
        assert_eq!(bytes[0], c.opcode().unwrap());
        assert_eq!(bytes[1], mode.is_malicious() as u8);
        assert_eq!(u32::from_le_bytes(bytes[2..6].try_into().unwrap()) as usize, bytes.len() - HEADER_LEN);
        assert_eq!(Command::decode(&bytes, R).unwrap(), (mode, c));
    }

    #[test]
    fn commands_roundtrip() {
        roundtrip(Command::Quote { config: [7; 32] }, Mode::SemiHonest);
        roundtrip(Command::Recover { forward: u128::MAX - 3 }, Mode::Malicious);
        roundtrip(Command::Open { form: Form::ThreeOfThree, values: Values::Ring, n_in: 9, n_out: 9, n_bits: 0 }, Mode::SemiHonest);
        roundtrip(Command::Mask { seq: 4, mirror: true }, Mode::Malicious);
        roundtrip(Command::ShareOut { seq: 1 }, Mode::SemiHonest);
        roundtrip(
            Command::Finish { seq: 2, mirror: false, kernel: Kernel::relu(), data: FinishData::Ring(alloc::vec![1, 2, 3]) },
            Mode::SemiHonest,
        );
        roundtrip(
            Command::Finish {
                seq: 2,
                mirror: false,
                kernel: Kernel::softmax(2),
                data: FinishData::ExpPair { q_sum: alloc::vec![1, 2], m_star: alloc::vec![3, 4], m_hat: alloc::vec![5, 6] },
            },
            Mode::SemiHonest,
        );
        roundtrip(
            Command::Finish {
                seq: 3,
                mirror: true,
                kernel: Kernel::softmax(1),
                data: FinishData::ExpTriple {
                    q_star: alloc::vec![9],
                    m_star: alloc::vec![8],
                    a: alloc::vec![7],
                    b: alloc::vec![6],
                },
            },
            Mode::Malicious,
        );
    }

    #[test]
    fn finish_opcodes() {
        assert_eq!(finish_opcode(&Kernel::relu()).unwrap(), opcode::RELU_FINISH);
        assert_eq!(finish_opcode(&Kernel::trunc_relu()).unwrap(), opcode::MATMUL_RELU_FINISH);
        assert_eq!(finish_opcode(&Kernel::trunc()).unwrap(), opcode::TRUNC_FINISH);
        let pool = Kernel::op(Op::MaxPool(PoolGeom { batch: 1, channels: 1, height: 2, width: 2, window: 2, stride: 2 }));
        assert_eq!(finish_opcode(&pool).unwrap(), opcode::MAXPOOL_FINISH);
        assert!(finish_opcode(&Kernel::op(Op::Identity)).is_err());
    }

    #[test]
    fn mismatched_opcode_is_rejected() {
        let mut bytes = Command::Finish { seq: 0, mirror: false, kernel: Kernel::relu(), data: FinishData::Ring(alloc::vec![]) }
            .encode(Mode::SemiHonest, R)
            .unwrap();
        bytes[0] = opcode::TRUNC_FINISH;
        assert!(Command::decode(&bytes, R).is_err());
        bytes[0] = opcode::RELU_FINISH;
        bytes.push(0);
        assert!(Command::decode(&bytes, R).is_err());
    }

    #[test]
    fn responses_roundtrip() {
        let shares = OutShares { first: alloc::vec![1, 2], second: alloc::vec![3, 4], first_bits: alloc::vec![1, 0], second_bits: alloc::vec![0, 1] };
        for (op, resp) in [
            (opcode::OPEN, Response::Opened { seq: 5, evaluator: 0 }),
            (opcode::MASK, Response::Masks(alloc::vec![1, 2])),
            (opcode::MASK, Response::ExpMasks(alloc::vec![(1, 2), (3, 4)])),
            (opcode::RELU_FINISH, Response::Shares(shares)),
            (opcode::RECOVER, Response::Done),
            (opcode::ESTABLISH, Response::Forward(77)),
        ] {
            let b = resp.encode(op, R);
            assert_eq!(Response::decode(&b, op, R).unwrap(), resp);
        }
    }

    #[test]
    fn error_responses_keep_their_kind() {
        let e = Error::ExponentRange { q: -3, limit: 10 };
        let b = Response::encode_error(opcode::SOFTMAX_FINISH, &e);
        assert_eq!(Response::decode(&b, opcode::SOFTMAX_FINISH, R).unwrap_err(), e);
        let b = Response::encode_error(opcode::ESTABLISH, &Error::abort("attestation"));
        assert_eq!(Response::decode(&b, opcode::ESTABLISH, R).unwrap_err(), Error::abort("attestation"));
    }
}
