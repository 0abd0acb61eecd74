//! Setup: configuration agreement, attested key exchange between the trusted
//! components, and host-level key exchange.

use alloc::format;
use num_bigint::BigUint;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::codec::Reader;
use crate::error::{Abort, Error, Result};
use crate::lth::attest::{Attestation, Device, Group};
use crate::lth::command::{Command, Response};
use crate::lth::link::{Link, LinkModel};
use crate::lth::Lth;
use crate::net::{frame_abort, proto, Network};
use crate::party::{Party, PartyState};
use crate::prf::{Prf, PrfKey};
use crate::ring::Ring;
use crate::Mode;

/// Parameters every party must agree on, plus local setup material.
#[derive(Clone, Debug)]
pub struct InitParams {
    pub ring: Ring,
    pub mode: Mode,
    /// Hash of the model description the parties will evaluate.
    pub network_hash: [u8; 32],
    pub group: Group,
    pub ca_key: BigUint,
    pub link: LinkModel,
}

impl InitParams {
    /// Digest over `(l, fp, mode, network hash)`.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"lthmpc-config");
        h.update(self.ring.bits().to_le_bytes());
        h.update(self.ring.frac().to_le_bytes());
        h.update([self.mode.is_malicious() as u8]);
        h.update(self.network_hash);
        h.finalize().into()
    }
}

const STEP_CONFIG: u8 = 1;
const STEP_QUOTE: u8 = 2;
const STEP_FORWARD: u8 = 3;
const STEP_HOST_KEY: u8 = 4;

/// Runs setup for one party; `seed` drives the component's and the host's
/// local randomness.
pub fn init<N: Network>(net: N, params: &InitParams, device: Device, seed: [u8; 32]) -> Result<Party<N>> {
    let id = net.id();
    let mut rng = ChaCha20Rng::from_seed(seed);
    let mut lth_seed = [0u8; 32];
    rng.fill_bytes(&mut lth_seed);
    let lth = Lth::new(id, params.ring, params.mode, params.group.clone(), params.ca_key.clone(), device, lth_seed)?;
    let mut party = Party::new(PartyState::new(id, lth, Link::new(params.link)), net)?;
    party.begin();
    let r = handshake(&mut party, params, &mut rng);
    party.run(|_| r)?;
    Ok(party)
}

fn handshake<N: Network>(p: &mut Party<N>, params: &InitParams, rng: &mut ChaCha20Rng) -> Result<()> {
    let me = p.id();
    let (nx, pv) = (p.next(), p.prev());
    let digest = params.digest();

    for to in [nx, pv] {
        p.send(to, proto::INIT, STEP_CONFIG, digest.to_vec(), 0)?;
    }
    for from in [nx, pv] {
        if p.recv(from, proto::INIT, STEP_CONFIG)? != digest {
            return Err(Abort::new("configuration digest").on(from, me).into());
        }
    }

    let Response::Attestation(att) = p.lth(&Command::Quote { config: digest })? else {
        return Err(Error::State("quote returned no attestation".into()));
    };
    let bytes = att.to_bytes();
    for to in [nx, pv] {
        p.send(to, proto::INIT, STEP_QUOTE, bytes.clone(), 0)?;
    }
    let mut atts = [None, None];
    for (slot, from) in [nx, pv].into_iter().enumerate() {
        let b = p.recv(from, proto::INIT, STEP_QUOTE)?;
        let a = Attestation::from_bytes(&b).map_err(|_| frame_abort("attestation encoding", from, me))?;
        if a.party != from || !a.verify(&params.group, &params.ca_key) {
            return Err(Abort::new(format!("certificate of party {from}")).on(from, me).into());
        }
        atts[slot] = Some(a);
    }
    let [Some(next_att), Some(prev_att)] = atts else { unreachable!() };

    let Response::Forward(fwd) = p.lth(&Command::Establish { prev: prev_att, next: next_att })? else {
        return Err(Error::State("establish returned no forward value".into()));
    };
    p.send(nx, proto::INIT, STEP_FORWARD, fwd.to_le_bytes().to_vec(), 0)?;
    let b = p.recv_exact(pv, proto::INIT, STEP_FORWARD, 16)?;
    let fwd_in = Reader::new(&b).u128()?;
    p.lth(&Command::Recover { forward: fwd_in })?;

    let mut hk = [0u8; 16];
    rng.fill_bytes(&mut hk);
    p.send(nx, proto::INIT, STEP_HOST_KEY, hk.to_vec(), 0)?;
    let b = p.recv_exact(pv, proto::INIT, STEP_HOST_KEY, 16)?;
    let from_prev = PrfKey::from_bytes(b.try_into().expect("16 bytes"));
    p.st.set_host_keys(Prf::new(&PrfKey::from_bytes(hk)), Prf::new(&from_prev));
    Ok(())
}
