//! Runs the three parties as threads over a chosen backend, with optional
//! tampering by one corrupted party.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use lthmpc_core::init::{init, InitParams};
use lthmpc_core::lth::attest::{Ca, Device, Group};
use lthmpc_core::lth::link::{LinkMeter, LinkModel};
use lthmpc_core::net::{AdversaryHook, CommMeter, Hooked, Network, PartyId, PARTIES};
use lthmpc_core::party::{Party, PartyState};
use lthmpc_core::bits::xor_into;
use lthmpc_core::rss::{combine, BitShare, Share};
use lthmpc_core::{Error, Mode, Result, Ring};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::inproc::{mesh, InProcConfig};
use crate::tcp::local_mesh;

pub type Net = Box<dyn Network>;

#[derive(Clone, Copy, Debug)]
pub enum Backend {
    InProc(InProcConfig),
    /// Loopback TCP; the duration is the receive watchdog.
    Tcp(Duration),
}

impl Default for Backend {
    fn default() -> Self {
        Backend::InProc(InProcConfig::default())
    }
}

impl Backend {
    pub fn connect(&self) -> Result<[Net; PARTIES]> {
        Ok(match *self {
            Backend::InProc(cfg) => mesh(cfg).map(|n| Box::new(n) as Net),
            Backend::Tcp(timeout) => local_mesh(timeout)?.map(|n| Box::new(n) as Net),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Backend::InProc(_) => "inproc",
            Backend::Tcp(_) => "tcp",
        }
    }
}

/// Setup choices of one party.
#[derive(Clone, Debug)]
pub struct Setup {
    pub ring: Ring,
    pub mode: Mode,
    pub network_hash: [u8; 32],
    pub link: LinkModel,
    pub group: Group,
    pub seed: u64,
}

impl Setup {
    pub fn new(ring: Ring, mode: Mode, seed: u64) -> Self {
        Setup { ring, mode, network_hash: [0; 32], link: LinkModel::UNMETERED, group: Group::test_256(), seed }
    }
}

/// Everything one party needs to run setup.
#[derive(Clone, Debug)]
pub struct Provisioned {
    pub params: InitParams,
    pub device: Device,
    pub seed: [u8; 32],
}

/// Derives the certificate authority and devices from the first party's
/// seed, and each party's randomness from its own seed. Separate processes
/// given the same seed derive the same material.
pub fn provision(setups: &[Setup; PARTIES]) -> [Provisioned; PARTIES] {
    let mut rng = ChaCha20Rng::seed_from_u64(setups[0].seed);
    let ca = Ca::new(setups[0].group.clone(), &mut rng);
    let devices: Vec<Device> = (0..PARTIES).map(|p| ca.provision(p as PartyId, &mut rng)).collect();
    [0, 1, 2].map(|p| {
        let s = &setups[p];
        let mut r = ChaCha20Rng::seed_from_u64(s.seed);
        r.next_u64();
        let mut seed = [0u8; 32];
        r.fill_bytes(&mut seed);
        seed[31] ^= p as u8;
        let params = InitParams {
            ring: s.ring,
            mode: s.mode,
            network_hash: s.network_hash,
            group: s.group.clone(),
            ca_key: ca.public().clone(),
            link: s.link,
        };
        Provisioned { params, device: devices[p].clone(), seed }
    })
}

/// Initialised party states, reusable across runs. Each run starts from a
/// clone, so runs from one cluster consume identical randomness.
#[derive(Clone, Debug)]
pub struct Cluster {
    pub states: [PartyState; PARTIES],
    pub backend: Backend,
}

/// Results of one run.
pub struct Run<T> {
    pub results: [Result<T>; PARTIES],
    pub states: [PartyState; PARTIES],
    /// Frames altered or dropped by the hook.
    pub fired: usize,
}

impl<T> Run<T> {
    /// All outputs, or the most informative error: an abort over a
    /// disconnect or timeout that it caused.
    pub fn outputs(self) -> Result<[T; PARTIES]> {
        if self.results.iter().all(Result::is_ok) {
            return Ok(self.results.map(|r| r.unwrap_or_else(|_| unreachable!())));
        }
        Err(first_error(self.results.into_iter().filter_map(Result::err)))
    }

    pub fn all_failed(&self) -> bool {
        self.results.iter().all(Result::is_err)
    }

    pub fn meter(&self) -> CommMeter {
        CommMeter::merge(self.states.iter().map(|s| &s.meter))
    }

    pub fn link(&self) -> LinkMeter {
        let mut m = LinkMeter::default();
        for s in &self.states {
            m.merge(&s.link.meter);
        }
        m
    }
}

pub fn first_error(errs: impl IntoIterator<Item = Error>) -> Error {
    let errs: Vec<Error> = errs.into_iter().collect();
    let rank = |e: &Error| match e {
        Error::Abort(_) => 0,
        Error::Disconnected(_) => 3,
        Error::Timeout(_) => 2,
        _ => 1,
    };
    errs.iter().min_by_key(|e| rank(e)).cloned().unwrap_or_else(|| Error::State("no error".into()))
}

/// Runs `f(party_id)` on three scoped threads.
fn on_threads<T: Send>(f: impl Fn(usize) -> T + Sync) -> [T; PARTIES] {
    thread::scope(|s| {
        let hs: Vec<_> = (0..PARTIES).map(|p| { let f = &f; s.spawn(move || f(p)) }).collect();
        let v: Vec<T> = hs.into_iter().map(|h| h.join().expect("party thread panicked")).collect();
        v.try_into().unwrap_or_else(|_| unreachable!())
    })
}

impl Cluster {
    /// Provisions devices and runs setup for all three parties.
    pub fn init(setup: &Setup, backend: Backend) -> Result<Self> {
        Self::init_each(&[setup.clone(), setup.clone(), setup.clone()], backend)
    }

    /// Setup where each party may be configured differently.
    pub fn init_each(setups: &[Setup; PARTIES], backend: Backend) -> Result<Self> {
        let prov = provision(setups);
        let nets = backend.connect()?;
        let nets: Vec<Mutex<Option<Net>>> = nets.into_iter().map(|n| Mutex::new(Some(n))).collect();
        let results = on_threads(|p| {
            let net = nets[p].lock().expect("unpoisoned").take().expect("one network per party");
            let Provisioned { params, device, seed } = prov[p].clone();
            init(net, &params, device, seed).map(|party| party.into_parts().0)
        });
        if results.iter().all(Result::is_ok) {
            Ok(Cluster { states: results.map(|r| r.unwrap_or_else(|_| unreachable!())), backend })
        } else {
            Err(first_error(results.into_iter().filter_map(Result::err)))
        }
    }

    /// Runs `program` at every party from a copy of the current states.
    pub fn run<T: Send>(
        &self,
        hook: Option<&AdversaryHook>,
        program: impl Fn(&mut Party<Net>) -> Result<T> + Sync,
    ) -> Result<Run<T>> {
        let nets = self.backend.connect()?;
        let fired = Arc::new(AtomicUsize::new(0));
        let mut slots = Vec::with_capacity(PARTIES);
        for (p, net) in nets.into_iter().enumerate() {
            let net = match hook {
                Some(h) if h.corrupted as usize == p => {
                    let hooked = Hooked::new(net, h)?;
                    let counter = hooked.fired_counter();
                    slots.push((Box::new(hooked) as Net, Some(counter)));
                    continue;
                }
                _ => net,
            };
            slots.push((net, None));
        }
        let counters: Vec<_> = slots.iter().map(|(_, c)| c.clone()).collect();
        let slots: Vec<Mutex<Option<Net>>> = slots.into_iter().map(|(n, _)| Mutex::new(Some(n))).collect();
        let out = on_threads(|p| {
            let net = slots[p].lock().expect("unpoisoned").take().expect("one network per party");
            let mut party = Party::new(self.states[p].clone(), net).expect("state matches transport");
            let r = program(&mut party);
            // Dropping the transport here unblocks peers waiting on this party.
            let (st, net) = party.into_parts();
            drop(net);
            (r, st)
        });
        for c in counters.into_iter().flatten() {
            fired.fetch_add(c.load(Ordering::Relaxed), Ordering::Relaxed);
        }
        let [(r0, s0), (r1, s1), (r2, s2)] = out;
        Ok(Run { results: [r0, r1, r2], states: [s0, s1, s2], fired: fired.load(Ordering::Relaxed) })
    }

    /// Like [`Cluster::run`], then adopts the resulting states so later runs
    /// continue from them.
    pub fn run_and_keep<T: Send>(
        &mut self,
        hook: Option<&AdversaryHook>,
        program: impl Fn(&mut Party<Net>) -> Result<T> + Sync,
    ) -> Result<Run<T>> {
        let run = self.run(hook, program)?;
        self.states = run.states.clone();
        Ok(run)
    }

    /// Clears communication meters.
    pub fn reset_meters(&mut self) {
        for s in &mut self.states {
            s.meter.clear();
            s.link.meter.clear();
        }
    }
}

/// Reconstructs from the three parties' views, checking that replicated
/// components agree.
pub fn open(ring: Ring, views: &[Share; PARTIES]) -> Result<Vec<u64>> {
    for p in 0..PARTIES {
        if views[p].b != views[(p + 1) % PARTIES].a {
            return Err(Error::State(format!("views of parties {p} and {} disagree", (p + 1) % PARTIES)));
        }
    }
    Ok(combine(ring, views))
}

/// Reconstructs mod-2 shares from the three parties' views.
pub fn open_bits(views: &[BitShare; PARTIES]) -> Result<Vec<u8>> {
    for p in 0..PARTIES {
        if views[p].b != views[(p + 1) % PARTIES].a {
            return Err(Error::State(format!("bit views of parties {p} and {} disagree", (p + 1) % PARTIES)));
        }
    }
    let mut out = views[0].a.clone();
    xor_into(&mut out, &views[1].a);
    xor_into(&mut out, &views[2].a);
    Ok(out)
}

/// Deterministic RNG for test data.
pub fn data_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_da7a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lthmpc_core::rss::deal;

    #[test]
    fn init_and_reveal() {
        let cluster = Cluster::init(&Setup::new(Ring::DEFAULT, Mode::Malicious, 1), Backend::default()).unwrap();
        assert!(cluster.states.iter().all(PartyState::is_ready));
        let x = vec![5, 6, Ring::DEFAULT.from_signed(-7)];
        let views = deal(Ring::DEFAULT, &x, &mut data_rng(1));
        let run = cluster.run(None, |p| p.reveal(&views[p.id() as usize])).unwrap();
        for out in run.outputs().unwrap() {
            assert_eq!(out, x);
        }
    }

    #[test]
    fn disagreeing_setup_aborts() {
        let a = Setup::new(Ring::DEFAULT, Mode::SemiHonest, 1);
        let mut b = a.clone();
        b.ring = Ring::new(32, 12).unwrap();
        let err = Cluster::init_each(&[a.clone(), b, a], Backend::default()).unwrap_err();
        assert!(matches!(err, Error::Abort(_)), "{err}");
    }
}
