use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::net::PartyId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// A detected protocol deviation. Once raised the run is poisoned and no
/// output shares are released.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Abort {
    /// Name of the failing check.
    pub check: String,
    /// Channels whose traffic disagreed, as `(sender, receiver)`.
    pub channels: Vec<(PartyId, PartyId)>,
}

impl Abort {
    pub fn new(check: impl Into<String>) -> Self {
        Self {
            check: check.into(),
            channels: Vec::new(),
        }
    }

    pub fn on(mut self, from: PartyId, to: PartyId) -> Self {
        self.channels.push((from, to));
        self
    }

    pub fn involves(&self, from: PartyId, to: PartyId) -> bool {
        self.channels.contains(&(from, to))
    }
}

impl fmt::Display for Abort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.check)?;
        for (i, (from, to)) in self.channels.iter().enumerate() {
            let sep = if i == 0 { " on " } else { ", " };
            write!(f, "{sep}{from}->{to}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("value {value} outside representable range [-{bound}, {bound})")]
    Range { value: f64, bound: f64 },
    #[error("ring descriptor mismatch: {0} vs {1}")]
    RingMismatch(crate::ring::Ring, crate::ring::Ring),
    #[error("invalid ring parameters l={bits} fp={frac}")]
    RingParams { bits: u32, frac: u32 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("trusted component state: {0}")]
    State(String),
    #[error("malformed frame: {0}")]
    Frame(String),
    #[error("softmax exponent {q} outside (0, {limit}]")]
    ExponentRange { q: i64, limit: i64 },
    #[error("abort: {0}")]
    Abort(Abort),
    #[error("peer {0} disconnected")]
    Disconnected(PartyId),
    #[error("timed out waiting for party {0}")]
    Timeout(PartyId),
    #[error("transport: {0}")]
    Transport(String),
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn abort(check: impl Into<String>) -> Self {
        Error::Abort(Abort::new(check))
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn as_abort(&self) -> Option<&Abort> {
        match self {
            Error::Abort(a) => Some(a),
            _ => None,
        }
    }

    /// Every failure of the online phase is treated as an abort by the engine;
    /// this separates explicit check failures from their downstream symptoms.
    pub fn is_root_cause(&self) -> bool {
        !matches!(self, Error::Disconnected(_))
    }
}

impl From<Abort> for Error {
    fn from(a: Abort) -> Self {
        Error::Abort(a)
    }
}
