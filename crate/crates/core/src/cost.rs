//! Analytical communication costs of the offloaded layers, semi-honest mode,
//! at 4-byte ring elements. Byte formulas are per-party averages, so a run's
//! total over all three parties is compared against three times the value.

use alloc::format;
use alloc::string::String;

/// Layer whose cost is modelled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Relu { n: usize },
    /// `m x m` input, `w x w` window, stride `s`.
    MaxPool { m: usize, w: usize, s: usize },
    /// Batch or layer normalisation.
    Norm { n: usize },
    Softmax { n: usize },
}

/// Analytical cost of one invocation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Analytical {
    pub rounds: usize,
    /// Inter-party bytes per party.
    pub network: f64,
    /// Host-to-component bytes per party.
    pub link: f64,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Relu { .. } => "relu",
            Protocol::MaxPool { .. } => "maxpool",
            Protocol::Norm { .. } => "norm",
            Protocol::Softmax { .. } => "softmax",
        }
    }

    /// Number of layer inputs.
    pub fn inputs(self) -> usize {
        match self {
            Protocol::Relu { n } | Protocol::Norm { n } | Protocol::Softmax { n } => n,
            Protocol::MaxPool { m, .. } => m * m,
        }
    }

    pub fn describe(self) -> String {
        match self {
            Protocol::MaxPool { m, w, s } => format!("maxpool m={m} w={w} s={s}"),
            p => format!("{} n={}", p.name(), p.inputs()),
        }
    }

    pub fn analytical(self) -> Analytical {
        match self {
            Protocol::Relu { n } => Analytical { rounds: 2, network: 5.0 * n as f64, link: 25.0 * n as f64 / 3.0 },
            Protocol::MaxPool { m, w, s } => {
                let o = ((m - w) / s + 1) as f64;
                let (m, w) = (m as f64, w as f64);
                Analytical {
                    rounds: 2,
                    network: 2.0 / 3.0 * (2.0 * m * m + 2.0 * w * w + 5.0 * o * o),
                    link: (8.0 * m * m + 8.0 * w * w + 15.0 * o * o) / 3.0,
                }
            }
            Protocol::Norm { n } => Analytical { rounds: 2, network: 4.0 * n as f64, link: 16.0 * n as f64 / 3.0 },
            Protocol::Softmax { n } => Analytical { rounds: 2, network: 20.0 * n as f64 / 3.0, link: 44.0 * n as f64 / 3.0 },
        }
    }
}

/// Measured cost of one invocation summed over the three parties.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Measured {
    pub rounds: usize,
    /// Inter-party payload bytes, mod-2 shares included.
    pub network: usize,
    /// Part of `network` carrying packed mod-2 shares.
    pub bits: usize,
    pub link: usize,
}

/// One line of the analytical-versus-measured comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct CostRow {
    pub protocol: Protocol,
    pub analytical: Analytical,
    pub measured: Measured,
}

impl CostRow {
    pub fn network_total(&self) -> f64 {
        3.0 * self.analytical.network
    }

    pub fn rounds_match(&self) -> bool {
        self.measured.rounds == self.analytical.rounds
    }

    /// Ring-element bytes (mod-2 shares excluded) equal the analytical total.
    pub fn network_match(&self) -> bool {
        ((self.measured.network - self.measured.bits) as f64 - self.network_total()).abs() < 1e-9
    }

    /// `key=value` record.
    pub fn record(&self) -> String {
        format!(
            "protocol={} inputs={} rounds={} rounds_expected={} payload_bytes={} bit_bytes={} \
             payload_expected={:.2} link_bytes={} link_expected={:.2} match={}",
            self.protocol.name(),
            self.protocol.inputs(),
            self.measured.rounds,
            self.analytical.rounds,
            self.measured.network,
            self.measured.bits,
            self.network_total(),
            self.measured.link,
            3.0 * self.analytical.link,
            self.rounds_match() && self.network_match(),
        )
    }
}
