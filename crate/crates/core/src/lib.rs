#![no_std]
extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod bits;
pub mod codec;
pub mod cost;
pub mod error;
pub mod expsplit;
pub mod lth;
pub mod net;
pub mod offload;
pub mod infer;
pub mod init;
pub mod party;
pub mod prf;
pub mod ring;
pub mod rss;

pub use error::{Abort, Error, Result};
pub use ring::Ring;

/// Security model the parties run under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    SemiHonest,
    Malicious,
}

impl Mode {
    pub fn is_malicious(self) -> bool {
        self == Mode::Malicious
    }
}

impl core::fmt::Display for Mode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Mode::SemiHonest => "semi-honest",
            Mode::Malicious => "malicious",
        })
    }
}
