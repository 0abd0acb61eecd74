//! Emulated per-party trusted component.
//!
//! The component holds the three pairwise PRF keys and the counter banks,
//! unmasks evaluator input, runs a plaintext kernel and re-masks the result
//! with fresh shares of zero. The host reaches it only through [`Lth::execute`]
//! on framed bytes; neither keys nor counters ever appear in a response.
//!
//! Sessions: every party opens the same sequence of sessions in lockstep, so
//! session `seq` gets the same counter ranges and evaluator `E = (seq + 1) mod 3`
//! on every component. A party's role in a session is `(p - E) mod 3`:
//! 0 is the evaluator, 1 its successor, 2 its predecessor.

pub mod attest;
pub mod command;
pub mod kernels;
pub mod link;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use num_bigint::BigUint;
use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;

use crate::error::{Abort, Error, Result};
use crate::expsplit::{split_exp, SoftmaxConsts, MANT_MASK};
use crate::net::{next, prev, PartyId};
use crate::prf::{bank, AuditLog, CounterBank, KeyLabel, Prf, PrfKey};
use crate::ring::Ring;
use crate::Mode;
use attest::{derive_pair_key, Attestation, Device, Group};
use command::{Command, FinishData, Form, OutShares, Response, Values};
use kernels::{exp_assemble, softmax_groups, Kernel, Op};

const MASK_PRIMARY: u8 = 1;
const MASK_MIRROR: u8 = 2;
const FINISH: u8 = 4;
const SHARE_OUT: u8 = 8;

#[derive(Clone, Debug)]
struct Session {
    form: Form,
    values: Values,
    n_in: usize,
    n_out: usize,
    n_bits: usize,
    evaluator: usize,
    ctr: [u64; 4],
    dup: [u64; 4],
    used: u8,
}

#[derive(Clone, Debug, Default)]
struct Handshake {
    config: Option<[u8; 32]>,
    dh_secret: Option<BigUint>,
    established: bool,
}

/// Evaluator of session `seq`.
pub fn evaluator(seq: u64) -> PartyId {
    ((seq + 1) % 3) as PartyId
}

/// Role of `party` in a session evaluated by `e`.
pub fn role(party: PartyId, e: PartyId) -> usize {
    (party as usize + 3 - e as usize) % 3
}

#[derive(Clone, Debug)]
pub struct Lth {
    party: PartyId,
    ring: Ring,
    mode: Mode,
    group: Group,
    ca_key: BigUint,
    device: Device,
    rng: ChaCha20Rng,
    handshake: Handshake,
    keys: [Option<PrfKey>; 3],
    prfs: Option<[Prf; 3]>,
    bank: CounterBank,
    dup: CounterBank,
    consts: Option<SoftmaxConsts>,
    next_seq: u64,
    sessions: BTreeMap<u64, Session>,
    audit: AuditLog,
    branches: [u64; 4],
}

fn low(ring: Ring, b: u128) -> u64 {
    b as u64 & ring.mask()
}

fn bit(b: u128) -> u8 {
    (b >> 64) as u8 & 1
}

impl Lth {
    /// A freshly manufactured component; keys come from the initialisation
    /// commands. `seed` drives its Diffie-Hellman secret.
    pub fn new(
        party: PartyId,
        ring: Ring,
        mode: Mode,
        group: Group,
        ca_key: BigUint,
        device: Device,
        seed: [u8; 32],
    ) -> Result<Self> {
        if party as usize >= 3 {
            return Err(Error::Config(format!("party index {party}")));
        }
        let consts = match SoftmaxConsts::for_ring(ring) {
            Ok(c) if c.verify() => Some(c),
            Ok(_) => return Err(Error::State("exp(L) constants failed verification".into())),
            Err(_) => None,
        };
        Ok(Lth {
            party,
            ring,
            mode,
            group,
            ca_key,
            device,
            rng: ChaCha20Rng::from_seed(seed),
            handshake: Handshake::default(),
            keys: [None, None, None],
            prfs: None,
            bank: CounterBank::default(),
            dup: CounterBank::default(),
            consts,
            next_seq: 0,
            sessions: BTreeMap::new(),
            audit: AuditLog::default(),
            branches: [0; 4],
        })
    }

    pub fn party(&self) -> PartyId {
        self.party
    }

    pub fn ring(&self) -> Ring {
        self.ring
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// True once all three keys are installed.
    pub fn is_ready(&self) -> bool {
        self.prfs.is_some()
    }

    /// Softmax support for this ring.
    pub fn softmax_consts(&self) -> Option<SoftmaxConsts> {
        self.consts
    }

    /// Processes one framed command and returns the framed response.
    pub fn execute(&mut self, bytes: &[u8]) -> Vec<u8> {
        let op = bytes.first().copied().unwrap_or(0);
        let result = Command::decode(bytes, self.ring).and_then(|(mode, cmd)| {
            if mode != self.mode {
                return Err(Error::State(format!("command for {mode} on a {} component", self.mode)));
            }
            self.dispatch(cmd)
        });
        match result {
            Ok(r) => r.encode(op, self.ring),
            Err(e) => Response::encode_error(op, &e),
        }
    }

    fn dispatch(&mut self, cmd: Command) -> Result<Response> {
        match cmd {
            Command::Quote { config } => self.quote(config),
            Command::Establish { prev, next } => self.establish(prev, next),
            Command::Recover { forward } => self.recover(forward),
            Command::Open { form, values, n_in, n_out, n_bits } => {
                self.open(form, values, n_in as usize, n_out as usize, n_bits as usize)
            }
            Command::Mask { seq, mirror } => self.mask(seq, mirror),
            Command::ShareOut { seq } => self.share_out(seq),
            Command::Finish { seq, mirror, kernel, data } => self.finish(seq, mirror, &kernel, data),
        }
    }

    fn quote(&mut self, config: [u8; 32]) -> Result<Response> {
        if self.handshake.config.is_some() {
            return Err(Error::State("quote already issued".into()));
        }
        let secret = self.group.random_scalar(&mut self.rng);
        let dh_public = self.group.pow(&self.group.g, &secret);
        let sig = self
            .device
            .key
            .sign(&self.group, &Attestation::statement(self.party, &config, &dh_public));
        self.handshake.config = Some(config);
        self.handshake.dh_secret = Some(secret);
        Ok(Response::Attestation(Attestation {
            party: self.party,
            config,
            dh_public,
            cert: self.device.cert.clone(),
            sig,
        }))
    }

    fn establish(&mut self, prev_att: Attestation, next_att: Attestation) -> Result<Response> {
        let (Some(config), Some(secret)) = (self.handshake.config, self.handshake.dh_secret.clone()) else {
            return Err(Error::State("establish before quote".into()));
        };
        if self.handshake.established {
            return Err(Error::State("keys already established".into()));
        }
        let p = self.party;
        for (att, want) in [(&prev_att, prev(p)), (&next_att, next(p))] {
            if att.party != want || !att.verify(&self.group, &self.ca_key) {
                return Err(Abort::new(format!("attestation of party {want}")).on(want, p).into());
            }
            if att.config != config {
                return Err(Abort::new(format!("configuration digest of party {want}")).on(want, p).into());
            }
        }
        let with_next = self.group.pow(&next_att.dh_public, &secret);
        let with_prev = self.group.pow(&prev_att.dh_public, &secret);
        let k_own = derive_pair_key(p, next(p), &with_next);
        let k_prev = derive_pair_key(prev(p), p, &with_prev);
        let pad = Prf::new(&k_own).block(0, bank::INIT);
        let forward = k_prev.to_u128().wrapping_add(pad);
        self.keys[p as usize] = Some(k_own);
        self.keys[prev(p) as usize] = Some(k_prev);
        self.handshake.established = true;
        self.handshake.dh_secret = None;
        Ok(Response::Forward(forward))
    }

    fn recover(&mut self, forward: u128) -> Result<Response> {
        if !self.handshake.established || self.prfs.is_some() {
            return Err(Error::State("recover out of order".into()));
        }
        let p = self.party;
        let k_prev = self.keys[prev(p) as usize].as_ref().expect("established");
        let pad = Prf::new(k_prev).block(0, bank::INIT);
        self.keys[next(p) as usize] = Some(PrfKey::from_u128(forward.wrapping_sub(pad)));
        let k = |j: usize| Prf::new(self.keys[j].as_ref().expect("all keys set"));
        self.prfs = Some([k(0), k(1), k(2)]);
        Ok(Response::Done)
    }

    fn prfs(&self) -> Result<&[Prf; 3]> {
        self.prfs.as_ref().ok_or_else(|| Error::State("keys not initialised".into()))
    }

    fn open(&mut self, form: Form, values: Values, n_in: usize, n_out: usize, n_bits: usize) -> Result<Response> {
        self.prfs()?;
        if n_in == 0 {
            return Err(Error::dim("empty session"));
        }
        if n_out > n_in || n_bits > n_in {
            return Err(Error::dim(format!("{n_out} outputs and {n_bits} bits from {n_in} inputs")));
        }
        if form == Form::ThreeOfThree && (self.mode.is_malicious() || values == Values::Exp) {
            return Err(Error::State("3-out-of-3 sessions are ring-valued and semi-honest only".into()));
        }
        if values == Values::Exp && self.consts.is_none() {
            return Err(Error::Config(format!("softmax unsupported for ring {}", self.ring)));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let ctr = self.bank.reserve(n_in);
        let dup = if self.mode.is_malicious() { self.dup.reserve(n_in) } else { [0; 4] };
        let e = evaluator(seq);
        self.sessions.insert(
            seq,
            Session { form, values, n_in, n_out, n_bits, evaluator: e as usize, ctr, dup, used: 0 },
        );
        Ok(Response::Opened { seq, evaluator: e })
    }

    /// Claims command `flag` in session `seq` for a party in one of `roles`.
    fn claim(&mut self, seq: u64, flag: u8, roles: &[usize], what: &str) -> Result<Session> {
        let p = self.party;
        let s = self
            .sessions
            .get_mut(&seq)
            .ok_or_else(|| Error::State(format!("no open session {seq}")))?;
        let r = role(p, s.evaluator as PartyId);
        if !roles.contains(&r) {
            return Err(Error::State(format!("{what} not available to role {r} in session {seq}")));
        }
        if s.used & flag != 0 {
            return Err(Error::State(format!("{what} already issued in session {seq}")));
        }
        s.used |= flag;
        Ok(s.clone())
    }

    fn blocks(&mut self, key: usize, start: u64, n: usize, bank: u8, width: u8) -> Result<Vec<u128>> {
        self.audit.record_range(self.party, KeyLabel::Lth(key as u8), bank, start, n, width);
        Ok(self.prfs()?[key].blocks(start, n, bank))
    }

    /// Blocks masking the forwarded share: key `E-1` on the primary bank, or
    /// key `E+1` on the duplicate bank for the mirrored execution.
    fn input_blocks(&mut self, s: &Session, mirror: bool, width: u8) -> Result<Vec<u128>> {
        let e = s.evaluator;
        if mirror {
            let j = (e + 1) % 3;
            self.blocks(j, s.dup[j], s.n_in, bank::DUP + j as u8, width)
        } else {
            let j = (e + 2) % 3;
            self.blocks(j, s.ctr[j], s.n_in, bank::ctr(j), width)
        }
    }

    /// This party's 3-out-of-3 zero share `F_{k_p} - F_{k_{p+1}}`.
    fn zero_share(&mut self, s: &Session, p: usize) -> Result<Vec<u64>> {
        let j = (s.evaluator + 2) % 3;
        let w = self.ring.bits() as u8;
        let a = self.blocks(p, s.ctr[j], s.n_in, bank::ctr(j), w)?;
        let b = self.blocks((p + 1) % 3, s.ctr[j], s.n_in, bank::ctr(j), w)?;
        Ok(a.iter().zip(&b).map(|(&x, &y)| self.ring.sub(low(self.ring, x), low(self.ring, y))).collect())
    }

    /// Output share components `m_t = F_{k_t} - F_{k_{t+1}}` on the share
    /// counter, each with its mod-2 companion.
    fn out_components(&mut self, s: &Session, comps: &[usize]) -> Result<Vec<(Vec<u64>, Vec<u8>)>> {
        let n = s.n_out.max(s.n_bits);
        let c = s.ctr[CounterBank::S];
        let w = self.ring.bits() as u8;
        let mut blocks: [Option<Vec<u128>>; 3] = [None, None, None];
        for &t in comps {
            for k in [t, (t + 1) % 3] {
                if blocks[k].is_none() {
                    blocks[k] = Some(self.blocks(k, c, n, bank::S, w)?);
                }
            }
        }
        let ring = self.ring;
        Ok(comps
            .iter()
            .map(|&t| {
                let (a, b) = (blocks[t].as_ref().unwrap(), blocks[(t + 1) % 3].as_ref().unwrap());
                let m = (0..s.n_out).map(|i| ring.sub(low(ring, a[i]), low(ring, b[i]))).collect();
                let bits = (0..s.n_bits).map(|i| bit(a[i]) ^ bit(b[i])).collect();
                (m, bits)
            })
            .collect())
    }

    fn mask(&mut self, seq: u64, mirror: bool) -> Result<Response> {
        let mal = self.mode.is_malicious();
        let s = if mirror {
            if !mal {
                return Err(Error::State("mirrored masks need malicious mode".into()));
            }
            self.claim(seq, MASK_MIRROR, &[0, 1], "mirror mask")?
        } else {
            let roles: &[usize] = if mal { &[1, 2] } else { &[2] };
            let roles = match self.sessions.get(&seq).map(|s| s.form) {
                Some(Form::ThreeOfThree) => &[1, 2],
                _ => roles,
            };
            self.claim(seq, MASK_PRIMARY, roles, "mask")?
        };
        if s.form == Form::ThreeOfThree {
            return Ok(Response::Masks(self.zero_share(&s, self.party as usize)?));
        }
        match s.values {
            Values::Ring => {
                let b = self.input_blocks(&s, mirror, self.ring.bits() as u8)?;
                Ok(Response::Masks(b.into_iter().map(|x| low(self.ring, x)).collect()))
            }
            Values::Exp => {
                let b = self.input_blocks(&s, mirror, 96)?;
                Ok(Response::ExpMasks(b.into_iter().map(|x| (x as u64 & MANT_MASK, (x >> 64) as u32)).collect()))
            }
        }
    }

    fn share_out(&mut self, seq: u64) -> Result<Response> {
        let mal = self.mode.is_malicious();
        let s = self.claim(seq, SHARE_OUT, if mal { &[1] } else { &[1, 2] }, "share output")?;
        self.sessions.remove(&seq);
        let e = s.evaluator;
        let (em1, ep1) = ((e + 2) % 3, (e + 1) % 3);
        let mut out = OutShares::default();
        if mal {
            let mut c = self.out_components(&s, &[ep1, em1])?;
            (out.second, out.second_bits) = c.pop().unwrap();
            (out.first, out.first_bits) = c.pop().unwrap();
        } else {
            let (m, b) = self.out_components(&s, &[em1])?.pop().unwrap();
            if role(self.party, e as PartyId) == 1 {
                (out.second, out.second_bits) = (m, b);
            } else {
                (out.first, out.first_bits) = (m, b);
            }
        }
        Ok(Response::Shares(out))
    }

    fn finish(&mut self, seq: u64, mirror: bool, kernel: &Kernel, data: FinishData) -> Result<Response> {
        let s = if mirror {
            if !self.mode.is_malicious() {
                return Err(Error::State("mirrored finish needs malicious mode".into()));
            }
            self.claim(seq, FINISH, &[2], "mirror finish")?
        } else {
            self.claim(seq, FINISH, &[0], "finish")?
        };
        self.sessions.remove(&seq);
        if mirror && s.form != Form::Rss {
            return Err(Error::State("mirrored finish on a 3-out-of-3 session".into()));
        }
        if kernel.shape(s.n_in)? != (s.n_out, s.n_bits) {
            return Err(Error::dim(format!("kernel output shape differs from session {seq}")));
        }
        if data.len() != s.n_in {
            return Err(Error::dim(format!("{} finish inputs for a session of {}", data.len(), s.n_in)));
        }
        let (y, bits) = match (s.values, &kernel.op, data) {
            (Values::Ring, op, FinishData::Ring(v)) if !matches!(op, Op::Softmax { .. }) => {
                let x = self.unmask(&s, mirror, v)?;
                kernel.apply(self.ring, &x)?
            }
            (Values::Exp, Op::Softmax { group }, data) => (self.softmax(&s, mirror, *group, data)?, Vec::new()),
            _ => return Err(Error::State(format!("finish input does not match session {seq}"))),
        };
        let e = s.evaluator;
        let comps = if mirror { [(e + 2) % 3, e] } else { [e, (e + 1) % 3] };
        let mut c = self.out_components(&s, &comps)?;
        let (mut second, mut second_bits) = c.pop().unwrap();
        let (mut first, mut first_bits) = c.pop().unwrap();
        let (z, zb) = if mirror { (&mut second, &mut second_bits) } else { (&mut first, &mut first_bits) };
        crate::ring::add_into(self.ring, z, &y);
        crate::bits::xor_into(zb, &bits);
        Ok(Response::Shares(OutShares { first, second, first_bits, second_bits }))
    }

    fn unmask(&mut self, s: &Session, mirror: bool, mut v: Vec<u64>) -> Result<Vec<u64>> {
        match s.form {
            Form::Rss => {
                let b = self.input_blocks(s, mirror, self.ring.bits() as u8)?;
                for (x, m) in v.iter_mut().zip(b) {
                    *x = self.ring.sub(*x, low(self.ring, m));
                }
            }
            Form::ThreeOfThree => {
                let m = self.zero_share(s, s.evaluator)?;
                crate::ring::add_into(self.ring, &mut v, &m);
            }
        }
        Ok(v)
    }

    fn softmax(&mut self, s: &Session, mirror: bool, group: usize, data: FinishData) -> Result<Vec<u64>> {
        let consts = self.consts.ok_or_else(|| Error::Config("softmax unsupported".into()))?;
        let masks = self.input_blocks(s, mirror, 96)?;
        let frac = self.ring.frac();
        let mut vals = Vec::with_capacity(s.n_in);
        let unmask = |i: usize, q: u32, m: u64| {
            let b = masks[i];
            (q.wrapping_sub((b >> 64) as u32) as i32 as i64, m.wrapping_sub(b as u64) & MANT_MASK)
        };
        match data {
            FinishData::ExpPair { q_sum, m_star, m_hat } if !self.mode.is_malicious() => {
                for i in 0..s.n_in {
                    let (q, m) = unmask(i, q_sum[i], m_star[i]);
                    let (v, k) = exp_assemble(&consts, q, &[m, m_hat[i]])?;
                    self.branches[k as usize] += 1;
                    vals.push(v);
                }
            }
            FinishData::ExpTriple { q_star, m_star, a, b } if self.mode.is_malicious() => {
                if a.len() != s.n_in || b.len() != s.n_in {
                    return Err(Error::dim("share vectors of softmax input"));
                }
                for i in 0..s.n_in {
                    let (q, m) = unmask(i, q_star[i], m_star[i]);
                    let (pa, pb) = (split_exp(a[i], frac), split_exp(b[i], frac));
                    // Factors in share-index order so both evaluators round identically.
                    let mants = if mirror { [pa.m, pb.m, m] } else { [m, pa.m, pb.m] };
                    let (v, k) = exp_assemble(&consts, q + pa.q + pb.q, &mants)?;
                    self.branches[k as usize] += 1;
                    vals.push(v);
                }
            }
            _ => return Err(Error::State(format!("softmax input form does not match {} mode", self.mode))),
        }
        Ok(softmax_groups(self.ring, &vals, group))
    }
}

/// Introspection for tests; never reachable through the command interface.
#[cfg(any(test, feature = "debug-oracle"))]
impl Lth {
    /// A component with keys installed directly.
    pub fn with_keys(party: PartyId, ring: Ring, mode: Mode, keys: [PrfKey; 3]) -> Result<Self> {
        let group = Group::test_256();
        let mut rng = ChaCha20Rng::seed_from_u64(party as u64);
        let ca = attest::Ca::new(group.clone(), &mut rng);
        let device = ca.provision(party, &mut rng);
        let mut lth = Lth::new(party, ring, mode, group, ca.public().clone(), device, [0; 32])?;
        lth.prfs = Some([Prf::new(&keys[0]), Prf::new(&keys[1]), Prf::new(&keys[2])]);
        lth.keys = keys.map(Some);
        Ok(lth)
    }

    /// First 8 bytes of SHA-256 of each installed key.
    pub fn key_fingerprints(&self) -> [Option<[u8; 8]>; 3] {
        use sha2::{Digest, Sha256};
        self.keys.each_ref().map(|k| {
            k.as_ref().map(|k| Sha256::digest(k.as_bytes())[..8].try_into().expect("8 bytes"))
        })
    }

    /// Primary and duplicate counter banks.
    pub fn counters(&self) -> (CounterBank, CounterBank) {
        (self.bank, self.dup)
    }

    pub fn audit_mut(&mut self) -> &mut AuditLog {
        &mut self.audit
    }

    /// Softmax inputs seen per number of removed wraps.
    pub fn wrap_histogram(&self) -> [u64; 4] {
        self.branches
    }

    pub fn open_sessions(&self) -> usize {
        self.sessions.len()
    }
}

#[cfg(test)]
mod tests {
    use super::command::opcode;
    use super::link::Link;
    use super::*;
    use crate::expsplit::Scaled;
    use crate::lth::attest::Ca;

    const R: Ring = Ring::DEFAULT;

    fn keys() -> [PrfKey; 3] {
        [PrfKey::from_u128(11), PrfKey::from_u128(22), PrfKey::from_u128(33)]
    }

    fn trio(mode: Mode) -> Vec<Lth> {
        (0..3).map(|p| Lth::with_keys(p, R, mode, keys()).unwrap()).collect()
    }

    fn call(l: &mut Lth, c: Command) -> Result<Response> {
        Link::default().call(l, &c)
    }

    fn open_all(ls: &mut [Lth], values: Values, n: u32, n_out: u32, n_bits: u32) -> u64 {
        let mut seq = 0;
        for l in ls.iter_mut() {
            match call(l, Command::Open { form: Form::Rss, values, n_in: n, n_out, n_bits }).unwrap() {
                Response::Opened { seq: s, .. } => seq = s,
                r => panic!("{r:?}"),
            }
        }
        seq
    }

    fn shares(r: Response) -> OutShares {
        match r {
            Response::Shares(s) => s,
            r => panic!("{r:?}"),
        }
    }

    /// Semi-honest relu directly against the three components: the shares
    /// `s` of `x` are held as (s_p, s_{p+1}).
    #[test]
    fn relu_session_reconstructs() {
        let mut ls = trio(Mode::SemiHonest);
        let x: Vec<u64> = [-3.0, 0.0, 7.0].iter().map(|&v| R.encode(v).unwrap()).collect();
        let s0 = alloc::vec![5u64, 6, 7];
        let s1 = alloc::vec![100u64, 200, 300];
        let s2: Vec<u64> = (0..3).map(|i| R.sub(R.sub(x[i], s0[i]), s1[i])).collect();
        let sh = [s0, s1, s2];
        let seq = open_all(&mut ls, Values::Ring, 3, 3, 3);
        let e = evaluator(seq) as usize;
        let (em1, ep1) = ((e + 2) % 3, (e + 1) % 3);
        let Response::Masks(m) = call(&mut ls[em1], Command::Mask { seq, mirror: false }).unwrap() else { panic!() };
        let xp = crate::ring::add_vec(R, &sh[em1], &m);
        let v = crate::ring::add_vec(R, &crate::ring::add_vec(R, &xp, &sh[e]), &sh[ep1]);
        let fin = shares(
            call(&mut ls[e], Command::Finish { seq, mirror: false, kernel: Kernel::relu(), data: FinishData::Ring(v) })
                .unwrap(),
        );
        let o1 = shares(call(&mut ls[ep1], Command::ShareOut { seq }).unwrap());
        let o2 = shares(call(&mut ls[em1], Command::ShareOut { seq }).unwrap());
        assert_eq!(o1.second, o2.first);
        let z = crate::ring::add_vec(R, &crate::ring::add_vec(R, &fin.first, &fin.second), &o2.first);
        assert_eq!(z, alloc::vec![0, 0, 7 * 8192]);
        let b: Vec<u8> = (0..3).map(|i| fin.first_bits[i] ^ fin.second_bits[i] ^ o2.first_bits[i]).collect();
        assert_eq!(b, alloc::vec![0, 0, 1]);
        for l in &ls {
            assert_eq!(l.counters().0.ctr, [3; 4]);
            assert_eq!(l.open_sessions(), 0);
        }
    }

    #[test]
    fn zero_shares_cancel() {
        let mut ls = trio(Mode::SemiHonest);
        for l in ls.iter_mut() {
            call(l, Command::Open { form: Form::ThreeOfThree, values: Values::Ring, n_in: 64, n_out: 64, n_bits: 0 })
                .unwrap();
        }
        let e = evaluator(0) as usize;
        let mut sum = alloc::vec![0u64; 64];
        for p in [(e + 1) % 3, (e + 2) % 3] {
            let Response::Masks(m) = call(&mut ls[p], Command::Mask { seq: 0, mirror: false }).unwrap() else { panic!() };
            crate::ring::add_into(R, &mut sum, &m);
        }
        // The evaluator adds its own share; a product of 2^13 units truncates
        // back to the original value only if everything cancelled.
        let plain: Vec<u64> = (0..64).map(|i| R.from_signed((i as i64 - 32) << 13)).collect();
        crate::ring::add_into(R, &mut sum, &plain);
        let fin = shares(
            call(&mut ls[e], Command::Finish { seq: 0, mirror: false, kernel: Kernel::trunc(), data: FinishData::Ring(sum) })
                .unwrap(),
        );
        let mut out = Vec::new();
        for p in [(e + 1) % 3, (e + 2) % 3] {
            out.push(shares(call(&mut ls[p], Command::ShareOut { seq: 0 }).unwrap()));
        }
        let em1 = out[1].first.clone();
        let z = crate::ring::add_vec(R, &crate::ring::add_vec(R, &fin.first, &fin.second), &em1);
        let want: Vec<u64> = (0..64).map(|i| R.from_signed(i as i64 - 32)).collect();
        assert_eq!(z, want);
    }

    #[test]
    fn uniform_softmax_session() {
        let mut ls = trio(Mode::SemiHonest);
        let seq = open_all(&mut ls, Values::Exp, 4, 4, 0);
        let e = evaluator(seq) as usize;
        let em1 = (e + 2) % 3;
        // x = 0 with shares (s, -s, 0) for the evaluator's predecessor and the evaluator.
        let s_prev = alloc::vec![12345u64, 1, 1 << 31, (1 << 32) - 1];
        let own: Vec<u64> = s_prev.iter().map(|&v| R.neg(v)).collect();
        let Response::ExpMasks(m) = call(&mut ls[em1], Command::Mask { seq, mirror: false }).unwrap() else { panic!() };
        let mut q_sum = Vec::new();
        let mut m_star = Vec::new();
        let mut m_hat = Vec::new();
        for i in 0..4 {
            let pp = split_exp(s_prev[i], 13);
            let ph = split_exp(own[i], 13);
            q_sum.push((pp.q as u32).wrapping_add(m[i].1).wrapping_add(ph.q as u32));
            m_star.push((pp.m + m[i].0) & MANT_MASK);
            m_hat.push(ph.m);
        }
        let fin = shares(
            call(
                &mut ls[e],
                Command::Finish {
                    seq,
                    mirror: false,
                    kernel: Kernel::softmax(4),
                    data: FinishData::ExpPair { q_sum, m_star, m_hat },
                },
            )
            .unwrap(),
        );
        let o2 = shares(call(&mut ls[em1], Command::ShareOut { seq }).unwrap());
        let z = crate::ring::add_vec(R, &crate::ring::add_vec(R, &fin.first, &fin.second), &o2.first);
        assert_eq!(z, alloc::vec![2048; 4]);
        let h = ls[e].wrap_histogram();
        assert_eq!(h[0] + h[1] + h[2], 4);
        assert!(h[1] >= 3, "{h:?}");
    }

    #[test]
    fn command_policy() {
        let mut ls = trio(Mode::SemiHonest);
        let seq = open_all(&mut ls, Values::Ring, 2, 2, 0);
        let e = evaluator(seq) as usize;
        // Only the predecessor may ask for the primary mask, and only once.
        assert!(call(&mut ls[e], Command::Mask { seq, mirror: false }).is_err());
        assert!(call(&mut ls[(e + 1) % 3], Command::Mask { seq, mirror: false }).is_err());
        call(&mut ls[(e + 2) % 3], Command::Mask { seq, mirror: false }).unwrap();
        assert!(call(&mut ls[(e + 2) % 3], Command::Mask { seq, mirror: false }).is_err());
        assert!(call(&mut ls[(e + 1) % 3], Command::Finish {
            seq,
            mirror: false,
            kernel: Kernel::relu(),
            data: FinishData::Ring(alloc::vec![0, 0])
        })
        .is_err());
        assert!(call(&mut ls[e], Command::Mask { seq, mirror: true }).is_err());
        assert!(call(&mut ls[0], Command::Open { form: Form::Rss, values: Values::Ring, n_in: 0, n_out: 0, n_bits: 0 }).is_err());
        // Wrong mode flag.
        let bytes = Command::ShareOut { seq }.encode(Mode::Malicious, R).unwrap();
        let resp = ls[(e + 1) % 3].execute(&bytes);
        assert!(Response::decode(&resp, opcode::SHARE_OUT, R).is_err());
    }

    #[test]
    fn mirrored_finish_agrees_with_primary() {
        let mut ls = trio(Mode::Malicious);
        let x: Vec<u64> = [-2.0, 3.5].iter().map(|&v| R.encode(v).unwrap()).collect();
        let sh = [alloc::vec![9u64, 8], alloc::vec![4u64, 1 << 31], alloc::vec![0u64; 2]];
        let s2: Vec<u64> = (0..2).map(|i| R.sub(R.sub(x[i], sh[0][i]), sh[1][i])).collect();
        let sh = [sh[0].clone(), sh[1].clone(), s2];
        let seq = open_all(&mut ls, Values::Ring, 2, 2, 2);
        let e = evaluator(seq) as usize;
        let (em1, ep1) = ((e + 2) % 3, (e + 1) % 3);
        let Response::Masks(mp) = call(&mut ls[em1], Command::Mask { seq, mirror: false }).unwrap() else { panic!() };
        let Response::Masks(mm) = call(&mut ls[e], Command::Mask { seq, mirror: true }).unwrap() else { panic!() };
        let v = crate::ring::add_vec(R, &crate::ring::add_vec(R, &sh[em1], &mp), &crate::ring::add_vec(R, &sh[e], &sh[ep1]));
        let w = crate::ring::add_vec(R, &crate::ring::add_vec(R, &sh[ep1], &mm), &crate::ring::add_vec(R, &sh[em1], &sh[e]));
        let fp = shares(call(&mut ls[e], Command::Finish { seq, mirror: false, kernel: Kernel::relu(), data: FinishData::Ring(v) }).unwrap());
        let fm = shares(call(&mut ls[em1], Command::Finish { seq, mirror: true, kernel: Kernel::relu(), data: FinishData::Ring(w) }).unwrap());
        assert_eq!(fp.first, fm.second);
        assert_eq!(fp.first_bits, fm.second_bits);
        let Response::Masks(_) = call(&mut ls[ep1], Command::Mask { seq, mirror: false }).unwrap() else { panic!() };
        let Response::Masks(_) = call(&mut ls[ep1], Command::Mask { seq, mirror: true }).unwrap() else { panic!() };
        let o = shares(call(&mut ls[ep1], Command::ShareOut { seq }).unwrap());
        assert_eq!(o.first, fp.second);
        assert_eq!(o.second, fm.first);
        let z = crate::ring::add_vec(R, &crate::ring::add_vec(R, &fp.first, &fp.second), &fm.first);
        assert_eq!(z, alloc::vec![0, R.encode(3.5).unwrap()]);
        for l in &ls {
            assert_eq!(l.counters().1.ctr, [2; 4]);
        }
    }

    #[test]
    fn key_agreement_through_commands() {
        let group = Group::test_256();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let ca = Ca::new(group.clone(), &mut rng);
        let mut ls: Vec<Lth> = (0..3u8)
            .map(|p| {
                let dev = ca.provision(p, &mut rng);
                Lth::new(p, R, Mode::SemiHonest, group.clone(), ca.public().clone(), dev, [p; 32]).unwrap()
            })
            .collect();
        let atts: Vec<Attestation> = ls
            .iter_mut()
            .map(|l| match call(l, Command::Quote { config: [1; 32] }).unwrap() {
                Response::Attestation(a) => a,
                r => panic!("{r:?}"),
            })
            .collect();
        let fwd: Vec<u128> = (0..3)
            .map(|p| {
                let c = Command::Establish { prev: atts[(p + 2) % 3].clone(), next: atts[(p + 1) % 3].clone() };
                match call(&mut ls[p], c).unwrap() {
                    Response::Forward(f) => f,
                    r => panic!("{r:?}"),
                }
            })
            .collect();
        for p in 0..3 {
            call(&mut ls[p], Command::Recover { forward: fwd[(p + 2) % 3] }).unwrap();
        }
        let fp = ls[0].key_fingerprints();
        assert!(fp.iter().all(Option::is_some));
        assert!(ls.iter().all(|l| l.key_fingerprints() == fp));
        assert_ne!(fp[0], fp[1]);

        // A certificate for the wrong party aborts immediately.
        let mut bad = atts[1].clone();
        bad.party = 2;
        let mut l = Lth::new(0, R, Mode::SemiHonest, group.clone(), ca.public().clone(), ca.provision(0, &mut rng), [9; 32]).unwrap();
        call(&mut l, Command::Quote { config: [1; 32] }).unwrap();
        let err = call(&mut l, Command::Establish { prev: atts[2].clone(), next: bad }).unwrap_err();
        assert!(err.as_abort().is_some());
    }

    #[test]
    fn exp_assembly_matches_reference() {
        let c = SoftmaxConsts::for_ring(R).unwrap();
        let v = Scaled::from_parts(split_exp(8192, 13));
        assert!((v.to_f64_shifted(0) - core::f64::consts::E).abs() < 1e-12);
        assert!(c.exponent_limit(2) > 0);
    }
}
