//! Exhaustive single-byte tampering of one corrupted party's traffic.

use lthmpc_core::net::{proto, Action, AdversaryHook, PartyId, ProtoFilter, Rule, SendRecord, HEADER_LEN, PARTIES};
use lthmpc_core::party::Party;
use lthmpc_core::{Error, Result};

use crate::harness::{Cluster, Net};

/// One frame sent by the corrupted party in an honest run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameRef {
    pub proto: u8,
    pub to: PartyId,
    /// Index among this party's frames of the same protocol to `to`.
    pub index: usize,
    /// Frame length, header included.
    pub len: usize,
}

/// Frames `party` sent, excluding release barriers.
pub fn frames_of(party: PartyId, sends: &[SendRecord]) -> Vec<FrameRef> {
    let mut seen = std::collections::BTreeMap::<(u8, PartyId), usize>::new();
    let mut out = Vec::new();
    for r in sends.iter().filter(|r| r.from == party) {
        let k = seen.entry((r.proto, r.to)).or_default();
        if r.proto != proto::CONTROL {
            out.push(FrameRef { proto: r.proto, to: r.to, index: *k, len: HEADER_LEN + r.payload });
        }
        *k += 1;
    }
    out
}

/// Outcome of a fuzz campaign.
#[derive(Clone, Debug, Default)]
pub struct FuzzReport {
    pub runs: usize,
    /// Runs in which every party failed and an honest party raised an abort.
    pub aborted: usize,
    /// Descriptions of runs where some party obtained output or no honest
    /// party detected the deviation.
    pub escapes: Vec<String>,
}

impl FuzzReport {
    pub fn complete(&self) -> bool {
        self.runs > 0 && self.aborted == self.runs && self.escapes.is_empty()
    }

    pub fn merge(&mut self, o: FuzzReport) {
        self.runs += o.runs;
        self.aborted += o.aborted;
        self.escapes.extend(o.escapes);
    }
}

/// Flips every byte of every frame each party sends while running
/// `program`, one byte per run, and checks that no party completes.
pub fn flip_every_byte<T: Send>(
    cluster: &Cluster,
    program: impl Fn(&mut Party<Net>) -> Result<T> + Sync,
) -> Result<FuzzReport> {
    let mut cluster = cluster.clone();
    cluster.reset_meters();
    let honest = cluster.run(None, &program)?;
    let sends = honest.meter().sends;
    honest.outputs()?;
    let mut report = FuzzReport::default();
    for corrupted in 0..PARTIES as PartyId {
        for f in frames_of(corrupted, &sends) {
            for offset in 0..f.len {
                let hook = AdversaryHook {
                    corrupted,
                    rules: vec![Rule {
                        proto: ProtoFilter::Exactly(f.proto),
                        to: Some(f.to),
                        index: f.index,
                        action: Action::Xor { offset, mask: 0xff },
                    }],
                };
                let run = cluster.run(Some(&hook), &program)?;
                report.runs += 1;
                let what = || format!("party {corrupted} {} #{} to {} byte {offset}", proto::name(f.proto), f.index, f.to);
                if run.fired != 1 {
                    report.escapes.push(format!("{}: hook fired {} times", what(), run.fired));
                    continue;
                }
                let completed: Vec<usize> = (0..PARTIES).filter(|&p| run.results[p].is_ok()).collect();
                let honest_abort = (0..PARTIES)
                    .filter(|&p| p != corrupted as usize)
                    .any(|p| matches!(run.results[p], Err(Error::Abort(_))));
                if completed.is_empty() && honest_abort {
                    report.aborted += 1;
                } else {
                    report.escapes.push(format!("{}: completed {completed:?}, honest abort {honest_abort}", what()));
                }
            }
        }
    }
    Ok(report)
}
