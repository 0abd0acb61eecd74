//! TCP transport: one connection per pair of parties, frames prefixed by a
//! 4-byte little-endian length.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use lthmpc_core::net::{Network, PartyId, PARTIES};
use lthmpc_core::{Error, Result};

/// Largest accepted frame.
const MAX_FRAME: usize = 1 << 30;

pub struct TcpNet {
    id: PartyId,
    writers: [Option<TcpStream>; PARTIES],
    rx: [Option<Receiver<Vec<u8>>>; PARTIES],
    timeout: Duration,
}

fn io(e: std::io::Error) -> Error {
    Error::Transport(e.to_string())
}

impl TcpNet {
    /// Connects party `id`, listening on `listener`, to the other parties at
    /// `peers`. Lower ids accept, higher ids dial.
    pub fn connect(id: PartyId, listener: TcpListener, peers: &[SocketAddr; PARTIES], timeout: Duration) -> Result<Self> {
        let mut streams: [Option<TcpStream>; PARTIES] = [None, None, None];
        let deadline = Instant::now() + timeout;
        for q in 0..id {
            let s = loop {
                match TcpStream::connect(peers[q as usize]) {
                    Ok(s) => break s,
                    Err(e) if Instant::now() >= deadline => return Err(io(e)),
                    Err(_) => thread::sleep(Duration::from_millis(20)),
                }
            };
            (&s).write_all(&[id]).map_err(io)?;
            streams[q as usize] = Some(s);
        }
        for _ in id + 1..PARTIES as PartyId {
            let (s, _) = listener.accept().map_err(io)?;
            let mut who = [0u8];
            (&s).read_exact(&mut who).map_err(io)?;
            let q = who[0] as usize;
            if q <= id as usize || q >= PARTIES || streams[q].is_some() {
                return Err(Error::Transport(format!("unexpected peer id {q} at party {id}")));
            }
            streams[q] = Some(s);
        }
        let mut net = TcpNet { id, writers: [None, None, None], rx: [None, None, None], timeout };
        for (q, s) in streams.into_iter().enumerate() {
            let Some(s) = s else { continue };
            s.set_nodelay(true).map_err(io)?;
            let mut reader = s.try_clone().map_err(io)?;
            let (tx, rx) = channel();
            thread::spawn(move || {
                let mut len = [0u8; 4];
                while reader.read_exact(&mut len).is_ok() {
                    let n = u32::from_le_bytes(len) as usize;
                    if n > MAX_FRAME {
                        break;
                    }
                    let mut frame = vec![0u8; n];
                    if reader.read_exact(&mut frame).is_err() || tx.send(frame).is_err() {
                        break;
                    }
                }
            });
            net.writers[q] = Some(s);
            net.rx[q] = Some(rx);
        }
        Ok(net)
    }
}

/// Three connected endpoints on loopback ports chosen by the OS.
pub fn local_mesh(timeout: Duration) -> Result<[TcpNet; PARTIES]> {
    let listeners = (0..PARTIES).map(|_| TcpListener::bind("127.0.0.1:0")).collect::<std::io::Result<Vec<_>>>().map_err(io)?;
    let addrs: [SocketAddr; PARTIES] = std::array::from_fn(|p| listeners[p].local_addr().expect("bound listener"));
    let handles: Vec<_> = listeners
        .into_iter()
        .enumerate()
        .map(|(p, l)| thread::spawn(move || TcpNet::connect(p as PartyId, l, &addrs, timeout)))
        .collect();
    let nets = handles
        .into_iter()
        .map(|h| h.join().map_err(|_| Error::Transport("connect thread panicked".into()))?)
        .collect::<Result<Vec<_>>>()?;
    Ok(nets.try_into().unwrap_or_else(|_| unreachable!("three endpoints")))
}

impl Network for TcpNet {
    fn id(&self) -> PartyId {
        self.id
    }

    fn send(&mut self, to: PartyId, frame: Vec<u8>) -> Result<()> {
        let s = self
            .writers
            .get_mut(to as usize)
            .and_then(Option::as_mut)
            .ok_or_else(|| Error::Transport(format!("party {} has no connection to party {to}", self.id)))?;
        let mut buf = Vec::with_capacity(4 + frame.len());
        buf.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        buf.extend_from_slice(&frame);
        s.write_all(&buf).map_err(|_| Error::Disconnected(to))
    }

    fn recv(&mut self, from: PartyId) -> Result<Vec<u8>> {
        let rx = self
            .rx
            .get(from as usize)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Transport(format!("party {} has no connection to party {from}", self.id)))?;
        match rx.recv_timeout(self.timeout) {
            Ok(f) => Ok(f),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(from)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Disconnected(from)),
        }
    }
}

impl Drop for TcpNet {
    fn drop(&mut self) {
        for s in self.writers.iter().flatten() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}
