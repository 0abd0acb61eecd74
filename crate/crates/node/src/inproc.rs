//! In-process transport: bounded channels between three threads.

use std::sync::mpsc::{sync_channel, Receiver, RecvTimeoutError, SyncSender};
use std::time::Duration;

use lthmpc_core::net::{Network, PartyId, PARTIES};
use lthmpc_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct InProcConfig {
    /// Frames a channel buffers before `send` blocks.
    pub capacity: usize,
    /// How long `recv` waits before reporting a stalled peer.
    pub timeout: Duration,
    /// Seed for random scheduling delays before sends; `None` disables them.
    pub jitter: Option<u64>,
}

impl Default for InProcConfig {
    fn default() -> Self {
        InProcConfig { capacity: 64, timeout: Duration::from_secs(30), jitter: None }
    }
}

pub struct InProcNet {
    id: PartyId,
    tx: [Option<SyncSender<Vec<u8>>>; PARTIES],
    rx: [Option<Receiver<Vec<u8>>>; PARTIES],
    timeout: Duration,
    jitter: Option<ChaCha8Rng>,
}

/// Fully connected endpoints for parties 0, 1 and 2.
pub fn mesh(cfg: InProcConfig) -> [InProcNet; PARTIES] {
    let mut nets: [InProcNet; PARTIES] = std::array::from_fn(|p| InProcNet {
        id: p as PartyId,
        tx: [None, None, None],
        rx: [None, None, None],
        timeout: cfg.timeout,
        jitter: cfg.jitter.map(|s| ChaCha8Rng::seed_from_u64(s ^ (p as u64) << 56)),
    });
    for from in 0..PARTIES {
        for to in 0..PARTIES {
            if from != to {
                let (tx, rx) = sync_channel(cfg.capacity);
                nets[from].tx[to] = Some(tx);
                nets[to].rx[from] = Some(rx);
            }
        }
    }
    nets
}

fn peer<T>(slots: &mut [Option<T>; PARTIES], me: PartyId, p: PartyId) -> Result<&mut T> {
    slots
        .get_mut(p as usize)
        .and_then(Option::as_mut)
        .ok_or_else(|| Error::Transport(format!("party {me} has no channel to party {p}")))
}

impl Network for InProcNet {
    fn id(&self) -> PartyId {
        self.id
    }

    fn send(&mut self, to: PartyId, frame: Vec<u8>) -> Result<()> {
        if let Some(rng) = &mut self.jitter {
            match rng.gen_range(0..4) {
                0 => std::thread::yield_now(),
                1 => std::thread::sleep(Duration::from_micros(rng.gen_range(1..50))),
                _ => {}
            }
        }
        let me = self.id;
        peer(&mut self.tx, me, to)?.send(frame).map_err(|_| Error::Disconnected(to))
    }

    fn recv(&mut self, from: PartyId) -> Result<Vec<u8>> {
        let (me, timeout) = (self.id, self.timeout);
        match peer(&mut self.rx, me, from)?.recv_timeout(timeout) {
            Ok(f) => Ok(f),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(from)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Disconnected(from)),
        }
    }
}
