//! Framed, metered message passing between the three parties.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;
use alloc::sync::Arc;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Abort, Error, Result};

/// Zero-based party index.
pub type PartyId = u8;

pub const PARTIES: usize = 3;

#[inline]
pub fn next(p: PartyId) -> PartyId {
    (p + 1) % 3
}

#[inline]
pub fn prev(p: PartyId) -> PartyId {
    (p + 2) % 3
}

/// Protocol identifiers carried in the frame header.
pub mod proto {
    pub const INIT: u8 = 1;
    pub const CONTROL: u8 = 2;
    pub const INPUT: u8 = 3;
    pub const RECONSTRUCT: u8 = 4;
    pub const MUL: u8 = 5;
    pub const MUL_CHECK: u8 = 6;
    pub const RELU: u8 = 16;
    pub const MATMUL_RELU: u8 = 17;
    pub const MAXPOOL: u8 = 18;
    pub const BATCHNORM: u8 = 19;
    pub const LAYERNORM: u8 = 20;
    pub const SOFTMAX: u8 = 21;
    pub const TRUNC: u8 = 22;

    pub fn name(p: u8) -> &'static str {
        match p {
            INIT => "init",
            CONTROL => "control",
            INPUT => "input",
            RECONSTRUCT => "reconstruct",
            MUL => "mul",
            MUL_CHECK => "mul_check",
            RELU => "relu",
            MATMUL_RELU => "matmul_relu",
            MAXPOOL => "maxpool",
            BATCHNORM => "batchnorm",
            LAYERNORM => "layernorm",
            SOFTMAX => "softmax",
            TRUNC => "trunc",
            _ => "unknown",
        }
    }

    /// Traffic that belongs to a protocol run rather than setup or teardown.
    pub fn is_online(p: u8) -> bool {
        p != INIT && p != CONTROL
    }
}

pub const HEADER_LEN: usize = 8;

/// `proto, step, sender, receiver, len (u32 LE)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameHeader {
    pub proto: u8,
    pub step: u8,
    pub sender: PartyId,
    pub receiver: PartyId,
    pub len: u32,
}

impl FrameHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0] = self.proto;
        h[1] = self.step;
        h[2] = self.sender;
        h[3] = self.receiver;
        h[4..].copy_from_slice(&self.len.to_le_bytes());
        h
    }

    pub fn decode(frame: &[u8]) -> Result<Self> {
        if frame.len() < HEADER_LEN {
            return Err(Error::Frame(format!("short frame of {} bytes", frame.len())));
        }
        Ok(FrameHeader {
            proto: frame[0],
            step: frame[1],
            sender: frame[2],
            receiver: frame[3],
            len: u32::from_le_bytes([frame[4], frame[5], frame[6], frame[7]]),
        })
    }

    pub fn frame(&self, payload: &[u8]) -> Vec<u8> {
        let mut f = Vec::with_capacity(HEADER_LEN + payload.len());
        f.extend_from_slice(&self.encode());
        f.extend_from_slice(payload);
        f
    }
}

/// Point-to-point transport seen by one party. Delivery is FIFO per peer.
pub trait Network: Send {
    fn id(&self) -> PartyId;
    fn send(&mut self, to: PartyId, frame: Vec<u8>) -> Result<()>;
    fn recv(&mut self, from: PartyId) -> Result<Vec<u8>>;
}

impl<N: Network + ?Sized> Network for Box<N> {
    fn id(&self) -> PartyId {
        (**self).id()
    }
    fn send(&mut self, to: PartyId, frame: Vec<u8>) -> Result<()> {
        (**self).send(to, frame)
    }
    fn recv(&mut self, from: PartyId) -> Result<Vec<u8>> {
        (**self).recv(from)
    }
}

/// One metered send.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SendRecord {
    pub epoch: u64,
    pub proto: u8,
    pub step: u8,
    pub from: PartyId,
    pub to: PartyId,
    pub payload: usize,
    /// Part of `payload` that carries packed mod-2 shares.
    pub bit_payload: usize,
}

/// Per-party log of sends; rounds are distinct `(epoch, step)` pairs.
#[derive(Clone, Debug, Default)]
pub struct CommMeter {
    pub sends: Vec<SendRecord>,
}

impl CommMeter {
    pub fn record(&mut self, r: SendRecord) {
        self.sends.push(r);
    }

    pub fn clear(&mut self) {
        self.sends.clear();
    }

    pub fn merge<'a>(meters: impl IntoIterator<Item = &'a CommMeter>) -> CommMeter {
        let mut out = CommMeter::default();
        for m in meters {
            out.sends.extend_from_slice(&m.sends);
        }
        out
    }

    pub fn filter(&self, keep: impl Fn(&SendRecord) -> bool) -> CommMeter {
        CommMeter {
            sends: self.sends.iter().copied().filter(|r| keep(r)).collect(),
        }
    }

    pub fn online(&self) -> CommMeter {
        self.filter(|r| proto::is_online(r.proto))
    }

    pub fn rounds(&self) -> usize {
        self.sends.iter().map(|r| (r.epoch, r.step)).collect::<BTreeSet<_>>().len()
    }

    pub fn payload(&self) -> usize {
        self.sends.iter().map(|r| r.payload).sum()
    }

    pub fn bit_payload(&self) -> usize {
        self.sends.iter().map(|r| r.bit_payload).sum()
    }

    pub fn header_bytes(&self) -> usize {
        self.sends.len() * HEADER_LEN
    }

    pub fn messages(&self) -> usize {
        self.sends.len()
    }
}

/// Which frames a rule applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtoFilter {
    /// Every frame outside setup and teardown.
    Online,
    Exactly(u8),
    Any,
}

impl ProtoFilter {
    fn matches(self, p: u8) -> bool {
        match self {
            ProtoFilter::Online => proto::is_online(p),
            ProtoFilter::Exactly(x) => p == x,
            ProtoFilter::Any => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    /// XOR one byte of the frame (header included) with `mask`.
    Xor { offset: usize, mask: u8 },
    /// Add `delta` to the little-endian word of `width` bytes at a payload offset.
    Add { offset: usize, width: usize, delta: u64 },
    Drop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rule {
    pub proto: ProtoFilter,
    pub to: Option<PartyId>,
    /// Zero-based index among frames matching `proto` and `to`.
    pub index: usize,
    pub action: Action,
}

/// Tamper and drop rules attached to the single corrupted party.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdversaryHook {
    pub corrupted: PartyId,
    pub rules: Vec<Rule>,
}

impl AdversaryHook {
    pub fn flip(corrupted: PartyId, proto: ProtoFilter, to: Option<PartyId>, index: usize, offset: usize) -> Self {
        AdversaryHook {
            corrupted,
            rules: alloc::vec![Rule {
                proto,
                to,
                index,
                action: Action::Xor { offset, mask: 0xff },
            }],
        }
    }
}

/// Wraps the corrupted party's transport and applies hook rules to its sends.
pub struct Hooked<N> {
    inner: N,
    rules: Vec<(Rule, usize)>,
    fired: Arc<AtomicUsize>,
}

impl<N: Network> Hooked<N> {
    pub fn new(inner: N, hook: &AdversaryHook) -> Result<Self> {
        if inner.id() != hook.corrupted {
            return Err(Error::Config(format!(
                "hook for party {} attached to party {}",
                hook.corrupted,
                inner.id()
            )));
        }
        Ok(Hooked {
            inner,
            rules: hook.rules.iter().map(|r| (*r, 0)).collect(),
            fired: Arc::new(AtomicUsize::new(0)),
        })
    }

    /// Number of frames the rules have altered or dropped so far.
    pub fn fired(&self) -> usize {
        self.fired.load(Ordering::Relaxed)
    }

    /// Shared view of [`Hooked::fired`] that outlives the transport.
    pub fn fired_counter(&self) -> Arc<AtomicUsize> {
        self.fired.clone()
    }
}

impl<N: Network> Network for Hooked<N> {
    fn id(&self) -> PartyId {
        self.inner.id()
    }

    fn send(&mut self, to: PartyId, mut frame: Vec<u8>) -> Result<()> {
        let p = frame.first().copied().unwrap_or(0);
        let mut drop = false;
        for (rule, seen) in &mut self.rules {
            if !rule.proto.matches(p) || rule.to.is_some_and(|t| t != to) {
                continue;
            }
            let hit = *seen == rule.index;
            *seen += 1;
            if !hit {
                continue;
            }
            match rule.action {
                Action::Xor { offset, mask } => {
                    if let Some(b) = frame.get_mut(offset) {
                        *b ^= mask;
                        self.fired.fetch_add(1, Ordering::Relaxed);
                    }
                }
                Action::Add { offset, width, delta } => {
                    let at = HEADER_LEN + offset;
                    if width <= 8 && at + width <= frame.len() {
                        let mut buf = [0u8; 8];
                        buf[..width].copy_from_slice(&frame[at..at + width]);
                        let v = u64::from_le_bytes(buf).wrapping_add(delta);
                        frame[at..at + width].copy_from_slice(&v.to_le_bytes()[..width]);
                        self.fired.fetch_add(1, Ordering::Relaxed);
                    }
                }
                Action::Drop => {
                    drop = true;
                    self.fired.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        if drop {
            return Ok(());
        }
        self.inner.send(to, frame)
    }

    fn recv(&mut self, from: PartyId) -> Result<Vec<u8>> {
        self.inner.recv(from)
    }
}

/// Abort naming the channel a malformed or unexpected frame arrived on.
pub fn frame_abort(what: &str, from: PartyId, to: PartyId) -> Error {
    Error::Abort(Abort::new(format!("frame check: {what}")).on(from, to))
}

/// Turns a payload decoding failure on data from `from` into an abort.
pub fn malformed(from: PartyId, to: PartyId) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Frame(what) => frame_abort(&what, from, to),
        e => e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::VecDeque;

    struct Loop {
        id: PartyId,
        q: VecDeque<Vec<u8>>,
    }

    impl Network for Loop {
        fn id(&self) -> PartyId {
            self.id
        }
        fn send(&mut self, _to: PartyId, frame: Vec<u8>) -> Result<()> {
            self.q.push_back(frame);
            Ok(())
        }
        fn recv(&mut self, from: PartyId) -> Result<Vec<u8>> {
            self.q.pop_front().ok_or(Error::Disconnected(from))
        }
    }

    #[test]
    fn header_roundtrip() {
        let h = FrameHeader {
            proto: proto::RELU,
            step: 2,
            sender: 1,
            receiver: 2,
            len: 4096,
        };
        let f = h.frame(&[7; 3]);
        assert_eq!(f.len(), HEADER_LEN + 3);
        assert_eq!(FrameHeader::decode(&f).unwrap(), h);
        assert!(FrameHeader::decode(&f[..5]).is_err());
    }

    #[test]
    fn neighbours() {
        assert_eq!((next(0), next(1), next(2)), (1, 2, 0));
        assert_eq!((prev(0), prev(1), prev(2)), (2, 0, 1));
    }

    #[test]
    fn hook_flips_only_the_indexed_frame() {
        let hook = AdversaryHook::flip(0, ProtoFilter::Online, Some(1), 1, 9);
        let mut n = Hooked::new(Loop { id: 0, q: VecDeque::new() }, &hook).unwrap();
        let h = FrameHeader {
            proto: proto::RELU,
            step: 1,
            sender: 0,
            receiver: 1,
            len: 2,
        };
        let init = FrameHeader { proto: proto::INIT, ..h };
        n.send(1, init.frame(&[0, 0])).unwrap();
        n.send(2, h.frame(&[0, 0])).unwrap();
        n.send(1, h.frame(&[0, 0])).unwrap();
        n.send(1, h.frame(&[0, 0])).unwrap();
        let frames: Vec<_> = (0..4).map(|_| n.recv(1).unwrap()).collect();
        assert_eq!(frames[0][9], 0);
        assert_eq!(frames[1][9], 0);
        assert_eq!(frames[2][9], 0);
        assert_eq!(frames[3][9], 0xff);
        assert_eq!(n.fired(), 1);
    }

    #[test]
    fn hook_drop_and_add() {
        let hook = AdversaryHook {
            corrupted: 2,
            rules: alloc::vec![
                Rule { proto: ProtoFilter::Any, to: None, index: 0, action: Action::Drop },
                Rule {
                    proto: ProtoFilter::Any,
                    to: None,
                    index: 1,
                    action: Action::Add { offset: 0, width: 4, delta: 1 },
                },
            ],
        };
        let mut n = Hooked::new(Loop { id: 2, q: VecDeque::new() }, &hook).unwrap();
        let h = FrameHeader { proto: proto::MUL, step: 1, sender: 2, receiver: 1, len: 4 };
        n.send(1, h.frame(&[1, 0, 0, 0])).unwrap();
        n.send(1, h.frame(&[0xff, 0xff, 0xff, 0xff])).unwrap();
        let f = n.recv(1).unwrap();
        assert_eq!(&f[HEADER_LEN..], &[0, 0, 0, 0]);
        assert!(n.recv(1).is_err());
        assert!(Hooked::new(Loop { id: 1, q: VecDeque::new() }, &hook).is_err());
    }

    #[test]
    fn meter_counts_rounds_by_epoch_and_step() {
        let mut m = CommMeter::default();
        let r = SendRecord { epoch: 1, proto: proto::RELU, step: 1, from: 0, to: 1, payload: 10, bit_payload: 0 };
        m.record(r);
        m.record(SendRecord { from: 1, to: 2, ..r });
        m.record(SendRecord { step: 2, payload: 5, bit_payload: 1, ..r });
        m.record(SendRecord { epoch: 2, proto: proto::INIT, ..r });
        assert_eq!(m.rounds(), 3);
        assert_eq!(m.online().rounds(), 2);
        assert_eq!(m.online().payload(), 25);
        assert_eq!(m.bit_payload(), 1);
        assert_eq!(m.header_bytes(), 32);
    }
}
