//! Component counters advance by exactly the processed length, and no
//! `(key, counter)` pair is ever consumed twice.

use lthmpc::engine::{infer, view, Inputs};
use lthmpc::harness::{data_rng, Backend, Cluster, Setup};
use lthmpc::model::{mlp, unit_inputs};
use lthmpc_core::lth::kernels::PoolGeom;
use lthmpc_core::net::PARTIES;
use lthmpc_core::prf::{AuditLog, AuditRecord};
use lthmpc_core::rss::deal;
use lthmpc_core::{Mode, Ring};

const R: Ring = Ring::DEFAULT;

fn banks(c: &Cluster) -> Vec<([u64; 4], [u64; 4])> {
    c.states.iter().map(|s| { let (a, b) = s.lth.counters(); (a.ctr, b.ctr) }).collect()
}

#[test]
fn counters_advance_by_input_length() {
    for mode in [Mode::SemiHonest, Mode::Malicious] {
        let mut c = Cluster::init(&Setup::new(R, mode, 51), Backend::default()).unwrap();
        let mut rng = data_rng(51);
        let x: Vec<u64> = (0..72).map(|_| R.from_signed(rand::Rng::gen_range(&mut rng, -5000..5000))).collect();
        let views = deal(R, &x, &mut rng);
        let g = PoolGeom { batch: 2, channels: 1, height: 6, width: 6, window: 3, stride: 3 };
        type Op = fn(&mut lthmpc_core::party::Party<lthmpc::harness::Net>, &lthmpc_core::rss::Share, &PoolGeom) -> lthmpc_core::Result<()>;
        let ops: [(&str, Op); 4] = [
            ("relu", |p, v, _| p.relu(v).map(drop)),
            ("truncate", |p, v, _| p.truncate(v).map(drop)),
            ("maxpool", |p, v, g| p.maxpool(v, g, true).map(drop)),
            ("softmax", |p, v, _| p.softmax(v, 12).map(drop)),
        ];
        for (name, op) in ops {
            let before = banks(&c);
            c.run_and_keep(None, |p| op(p, &views[p.id() as usize], &g)).unwrap().outputs().unwrap();
            let after = banks(&c);
            for p in 0..PARTIES {
                for k in 0..4 {
                    assert_eq!(after[p].0[k] - before[p].0[k], 72, "{mode} {name} party {p} counter {k}");
                    let dup = if mode.is_malicious() { 72 } else { 0 };
                    assert_eq!(after[p].1[k] - before[p].1[k], dup, "{mode} {name} party {p} duplicate counter {k}");
                }
            }
        }
    }
}

#[test]
fn no_counter_reuse_across_inference() {
    for mode in [Mode::SemiHonest, Mode::Malicious] {
        let mut rng = data_rng(52);
        let spec = mlp(R, &[30, 24, 16, 4], &mut rng).unwrap();
        let x = unit_inputs(R, 8 * 30, &mut rng).unwrap();
        let mut setup = Setup::new(R, mode, 52);
        setup.network_hash = spec.hash();
        let mut c = Cluster::init(&setup, Backend::default()).unwrap();
        for s in &mut c.states {
            s.audit.enable();
            s.lth.audit_mut().enable();
        }
        let mut run = c
            .run(None, |p| {
                let (local, input) = view(p.id(), &spec, &x);
                infer(p, &Inputs { spec: &local, input, batch: 8, fused: true })
            })
            .unwrap();
        let mut records: Vec<AuditRecord> = Vec::new();
        for s in &mut run.states {
            records.extend(s.audit.take());
            records.extend(s.lth.audit_mut().take());
        }
        assert!(records.len() > 1000, "{mode}: audit log has {} records", records.len());
        let dups = AuditLog::duplicates(&records);
        assert!(dups.is_empty(), "{mode}: reused {:?}", &dups[..dups.len().min(5)]);
        run.outputs().unwrap();
    }
}
