//! Host-side party context: framed and metered messaging, the link to the
//! party's trusted component, host-level zero shares and abort poisoning.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lth::command::{Command, Response};
use crate::lth::link::Link;
use crate::lth::Lth;
use crate::net::{frame_abort, next, prev, proto, CommMeter, FrameHeader, Network, PartyId, SendRecord, HEADER_LEN};
use crate::prf::{bank, AuditLog, KeyLabel, Prf};
use crate::ring::Ring;
use crate::Mode;

/// Everything a party keeps between protocol calls. Cloning an initialised
/// state replays the same randomness, which tests use to rerun a protocol
/// from one setup.
#[derive(Clone, Debug)]
pub struct PartyState {
    pub id: PartyId,
    pub ring: Ring,
    pub mode: Mode,
    pub lth: Lth,
    pub link: Link,
    /// `hk_p` (shared with the next party) and `hk_{p-1}` (shared with the previous).
    host_keys: Option<[Prf; 2]>,
    host_ctr: u64,
    rot_ctr: u64,
    epoch: u64,
    poisoned: Option<Error>,
    pub meter: CommMeter,
    pub audit: AuditLog,
}

impl PartyState {
    pub fn new(id: PartyId, lth: Lth, link: Link) -> Self {
        PartyState {
            id,
            ring: lth.ring(),
            mode: lth.mode(),
            lth,
            link,
            host_keys: None,
            host_ctr: 0,
            rot_ctr: 0,
            epoch: 0,
            poisoned: None,
            meter: CommMeter::default(),
            audit: AuditLog::default(),
        }
    }

    pub(crate) fn set_host_keys(&mut self, own: Prf, from_prev: Prf) {
        self.host_keys = Some([own, from_prev]);
    }

    pub fn is_ready(&self) -> bool {
        self.host_keys.is_some() && self.lth.is_ready()
    }

    /// The error that poisoned this party, if any.
    pub fn poisoned(&self) -> Option<&Error> {
        self.poisoned.as_ref()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Host zero-share counters `(primary, rotated)`.
    pub fn host_counters(&self) -> (u64, u64) {
        (self.host_ctr, self.rot_ctr)
    }
}

/// A party's state bound to its transport for the duration of a run.
pub struct Party<N> {
    pub st: PartyState,
    pub net: N,
}

impl<N: Network> Party<N> {
    pub fn new(st: PartyState, net: N) -> Result<Self> {
        if st.id != net.id() {
            return Err(Error::Config(format!("state of party {} on transport of party {}", st.id, net.id())));
        }
        Ok(Party { st, net })
    }

    pub fn into_parts(self) -> (PartyState, N) {
        (self.st, self.net)
    }

    pub fn id(&self) -> PartyId {
        self.st.id
    }

    pub fn ring(&self) -> Ring {
        self.st.ring
    }

    pub fn mode(&self) -> Mode {
        self.st.mode
    }

    pub fn is_malicious(&self) -> bool {
        self.st.mode.is_malicious()
    }

    pub fn next(&self) -> PartyId {
        next(self.st.id)
    }

    pub fn prev(&self) -> PartyId {
        prev(self.st.id)
    }

    /// Runs a public protocol entry point: refuses to start once poisoned and
    /// poisons the party on any failure.
    pub(crate) fn run<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        if let Some(e) = &self.st.poisoned {
            return Err(e.clone());
        }
        let r = f(self);
        if let Err(e) = &r {
            self.st.poisoned.get_or_insert_with(|| e.clone());
        }
        r
    }

    /// Starts a new protocol invocation; rounds are counted per invocation.
    pub(crate) fn begin(&mut self) {
        self.st.epoch += 1;
    }

    pub(crate) fn send(&mut self, to: PartyId, proto: u8, step: u8, payload: Vec<u8>, bit_payload: usize) -> Result<()> {
        let h = FrameHeader { proto, step, sender: self.st.id, receiver: to, len: payload.len() as u32 };
        self.st.meter.record(SendRecord {
            epoch: self.st.epoch,
            proto,
            step,
            from: self.st.id,
            to,
            payload: payload.len(),
            bit_payload,
        });
        self.net.send(to, h.frame(&payload))
    }

    /// Receives the next frame from `from` and checks it is the expected one.
    pub(crate) fn recv(&mut self, from: PartyId, proto: u8, step: u8) -> Result<Vec<u8>> {
        let mut frame = self.net.recv(from)?;
        let me = self.st.id;
        let h = FrameHeader::decode(&frame).map_err(|_| frame_abort("short frame", from, me))?;
        if h.proto != proto || h.step != step {
            return Err(frame_abort(
                &format!("expected {} step {step}, got {} step {}", proto::name(proto), proto::name(h.proto), h.step),
                from,
                me,
            ));
        }
        if h.sender != from || h.receiver != me {
            return Err(frame_abort("endpoint fields", from, me));
        }
        if h.len as usize != frame.len() - HEADER_LEN {
            return Err(frame_abort("length field", from, me));
        }
        frame.drain(..HEADER_LEN);
        Ok(frame)
    }

    /// Receives a frame whose payload length is known in advance.
    pub(crate) fn recv_exact(&mut self, from: PartyId, proto: u8, step: u8, len: usize) -> Result<Vec<u8>> {
        let p = self.recv(from, proto, step)?;
        if p.len() != len {
            return Err(frame_abort(&format!("payload of {} bytes, expected {len}", p.len()), from, self.st.id));
        }
        Ok(p)
    }

    pub(crate) fn lth(&mut self, cmd: &Command) -> Result<Response> {
        let st = &mut self.st;
        st.link.call(&mut st.lth, cmd)
    }

    /// This party's component of a fresh sharing of zero:
    /// `F_{hk_p}(c) - F_{hk_{p-1}}(c)` on the primary or rotated bank.
    pub fn zero_share(&mut self, n: usize, rotated: bool) -> Result<Vec<u64>> {
        let st = &mut self.st;
        let keys = st.host_keys.as_ref().ok_or_else(|| Error::State("host keys not initialised".into()))?;
        let (bank, ctr) = if rotated { (bank::HOST_ROT, &mut st.rot_ctr) } else { (bank::HOST, &mut st.host_ctr) };
        let start = *ctr;
        *ctr += n as u64;
        let a = keys[0].blocks(start, n, bank);
        let b = keys[1].blocks(start, n, bank);
        let w = st.ring.bits() as u8;
        st.audit.record_range(st.id, KeyLabel::Host(st.id), bank, start, n, w);
        st.audit.record_range(st.id, KeyLabel::Host(prev(st.id)), bank, start, n, w);
        let ring = st.ring;
        Ok(a.iter().zip(&b).map(|(&x, &y)| ring.sub(x as u64 & ring.mask(), y as u64 & ring.mask())).collect())
    }

    /// Synchronisation point before and after outputs are opened in
    /// malicious mode: a party that has aborted never answers, so its peers
    /// fail too instead of releasing anything.
    pub(crate) fn barrier(&mut self, step: u8) -> Result<()> {
        let me = self.st.id;
        for to in [self.next(), self.prev()] {
            self.send(to, proto::CONTROL, step, alloc::vec![1], 0)?;
        }
        for from in [self.next(), self.prev()] {
            if self.recv_exact(from, proto::CONTROL, step, 1)? != [1] {
                return Err(frame_abort("release barrier", from, me));
            }
        }
        Ok(())
    }
}
