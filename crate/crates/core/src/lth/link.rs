//! The metered host-to-trusted-component link.

use alloc::collections::BTreeMap;
use core::fmt;

use crate::error::{Error, Result};
use crate::lth::command::{Command, Response, HEADER_LEN};
use crate::lth::Lth;

/// Bandwidth and per-message latency of the link. Accounting is exact
/// whatever the model; the model only drives the simulated transfer time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkModel {
    pub name: &'static str,
    /// Bytes per second; `None` disables timing.
    pub bandwidth: Option<f64>,
    /// Seconds added per message.
    pub latency: f64,
}

impl LinkModel {
    /// Low-pin-count bus of a discrete security chip.
    pub const CHIP: LinkModel = LinkModel { name: "chip", bandwidth: Some(15e6), latency: 1e-5 };
    /// On-chip interconnect of a system-on-chip security block.
    pub const SOC: LinkModel = LinkModel { name: "soc", bandwidth: Some(16e9), latency: 1e-7 };
    /// Counts bytes without simulating time.
    pub const UNMETERED: LinkModel = LinkModel { name: "unmetered", bandwidth: None, latency: 0.0 };

    pub fn preset(name: &str) -> Result<LinkModel> {
        match name {
            "chip" => Ok(Self::CHIP),
            "soc" => Ok(Self::SOC),
            "unmetered" => Ok(Self::UNMETERED),
            other => Err(Error::Config(alloc::format!("unknown link preset {other:?}"))),
        }
    }

    /// Simulated seconds to move one message of `bytes` bytes.
    pub fn transfer_time(&self, bytes: usize) -> f64 {
        match self.bandwidth {
            Some(bw) => self.latency + bytes as f64 / bw,
            None => 0.0,
        }
    }
}

impl Default for LinkModel {
    fn default() -> Self {
        Self::UNMETERED
    }
}

/// Bytes and messages per opcode in one direction pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpcodeTally {
    pub calls: u64,
    pub to_lth: u64,
    pub from_lth: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkMeter {
    /// Payload bytes host to component.
    pub to_lth: u64,
    /// Payload bytes component to host.
    pub from_lth: u64,
    pub header_bytes: u64,
    pub messages: u64,
    /// Simulated transfer seconds.
    pub seconds: f64,
    pub by_opcode: BTreeMap<u8, OpcodeTally>,
}

impl LinkMeter {
    pub fn record(&mut self, op: u8, model: &LinkModel, cmd_len: usize, resp_len: usize) {
        let (cmd_payload, resp_payload) = (cmd_len - HEADER_LEN, resp_len - HEADER_LEN);
        self.to_lth += cmd_payload as u64;
        self.from_lth += resp_payload as u64;
        self.header_bytes += 2 * HEADER_LEN as u64;
        self.messages += 2;
        self.seconds += model.transfer_time(cmd_len) + model.transfer_time(resp_len);
        let t = self.by_opcode.entry(op).or_default();
        t.calls += 1;
        t.to_lth += cmd_payload as u64;
        t.from_lth += resp_payload as u64;
    }

    pub fn payload(&self) -> u64 {
        self.to_lth + self.from_lth
    }

    /// Payload bytes for the given opcodes only.
    pub fn payload_for(&self, ops: &[u8]) -> u64 {
        ops.iter()
            .filter_map(|op| self.by_opcode.get(op))
            .map(|t| t.to_lth + t.from_lth)
            .sum()
    }

    pub fn merge(&mut self, o: &LinkMeter) {
        self.to_lth += o.to_lth;
        self.from_lth += o.from_lth;
        self.header_bytes += o.header_bytes;
        self.messages += o.messages;
        self.seconds += o.seconds;
        for (op, t) in &o.by_opcode {
            let e = self.by_opcode.entry(*op).or_default();
            e.calls += t.calls;
            e.to_lth += t.to_lth;
            e.from_lth += t.from_lth;
        }
    }

    pub fn clear(&mut self) {
        *self = LinkMeter::default();
    }
}

impl fmt::Display for LinkMeter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "to_lth={} from_lth={} header_bytes={} messages={} seconds={:.6}",
            self.to_lth, self.from_lth, self.header_bytes, self.messages, self.seconds
        )
    }
}

/// A host's only path to its component: every command and response crosses
/// here as bytes and is metered.
#[derive(Clone, Debug, Default)]
pub struct Link {
    pub model: LinkModel,
    pub meter: LinkMeter,
}

impl Link {
    pub fn new(model: LinkModel) -> Self {
        Link { model, meter: LinkMeter::default() }
    }

    pub fn call(&mut self, lth: &mut Lth, cmd: &Command) -> Result<Response> {
        let op = cmd.opcode()?;
        let bytes = cmd.encode(lth.mode(), lth.ring())?;
        let resp = lth.execute(&bytes);
        self.meter.record(op, &self.model, bytes.len(), resp.len());
        Response::decode(&resp, op, lth.ring())
    }
}
