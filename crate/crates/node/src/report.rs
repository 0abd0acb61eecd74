//! Communication reports and measured-versus-analytical cost rows.

use std::fmt::Write as _;

use lthmpc_core::cost::{CostRow, Measured, Protocol};
use lthmpc_core::lth::kernels::{BatchNormParams, PoolGeom};
use lthmpc_core::lth::link::LinkMeter;
use lthmpc_core::net::{CommMeter, PARTIES};
use lthmpc_core::rss::deal;
use lthmpc_core::{Mode, Result, Ring};
use rand::Rng;

use crate::harness::{data_rng, Backend, Cluster, Run, Setup};

/// `key=value` lines: one per directed channel, one per component link and
/// a total. Parties are numbered from 1.
pub fn comm_report(meter: &CommMeter, links: &[LinkMeter; PARTIES]) -> String {
    let mut out = String::new();
    for from in 0..PARTIES as u8 {
        for to in 0..PARTIES as u8 {
            if from == to {
                continue;
            }
            let ch = meter.filter(|r| r.from == from && r.to == to);
            let _ = writeln!(
                out,
                "channel={}->{} messages={} rounds={} payload_bytes={} bit_bytes={} header_bytes={}",
                from + 1,
                to + 1,
                ch.messages(),
                ch.rounds(),
                ch.payload(),
                ch.bit_payload(),
                ch.header_bytes()
            );
        }
    }
    for (p, l) in links.iter().enumerate() {
        let _ = writeln!(out, "lth_link={} {l}", p + 1);
    }
    let _ = writeln!(
        out,
        "total messages={} rounds={} payload_bytes={} bit_bytes={} header_bytes={}",
        meter.messages(),
        meter.rounds(),
        meter.payload(),
        meter.bit_payload(),
        meter.header_bytes()
    );
    out
}

pub fn run_report<T>(run: &Run<T>) -> String {
    comm_report(&run.meter(), &run.states.clone().map(|s| s.link.meter))
}

/// Runs `protocol` once in semi-honest mode on random input and returns its
/// measured cost next to the analytical one.
pub fn measure(protocol: Protocol, ring: Ring, seed: u64) -> Result<CostRow> {
    let cluster = Cluster::init(&Setup::new(ring, Mode::SemiHonest, seed), Backend::default())?;
    let mut rng = data_rng(seed);
    let n = protocol.inputs();
    // Softmax inputs stay within its exponent range, others within a quarter
    // of the ring.
    let bound = match protocol {
        Protocol::Softmax { .. } => 1i64 << (ring.frac() + 5),
        _ => 1i64 << (ring.bits() - 3),
    };
    let x: Vec<u64> = (0..n).map(|_| ring.from_signed(rng.gen_range(-bound..bound))).collect();
    let views = deal(ring, &x, &mut rng);
    let one = ring.encode(1.0)?;
    let run = cluster.run(None, |p| {
        let v = &views[p.id() as usize];
        match protocol {
            Protocol::Relu { .. } => p.relu(v).map(drop),
            Protocol::MaxPool { m, w, s } => {
                let g = PoolGeom { batch: 1, channels: 1, height: m, width: m, window: w, stride: s };
                p.maxpool(v, &g, false).map(drop)
            }
            Protocol::Norm { n } => {
                let params = BatchNormParams { channels: 1, inner: n, gamma: vec![one], beta: vec![0], mean: vec![0], var: vec![one] };
                p.batchnorm(v, &params, false).map(drop)
            }
            Protocol::Softmax { n } => p.softmax(v, n).map(drop),
        }
    })?;
    let link = run.link().payload() as usize;
    let meter = run.meter().online();
    run.outputs()?;
    Ok(CostRow {
        protocol,
        analytical: protocol.analytical(),
        measured: Measured { rounds: meter.rounds(), network: meter.payload(), bits: meter.bit_payload(), link },
    })
}
