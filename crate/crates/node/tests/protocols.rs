//! Secure protocols against plaintext oracles, over the in-process backend.

use lthmpc::harness::{data_rng, open, open_bits, Backend, Cluster, Setup};
use lthmpc_core::infer::{max_ulp, softmax_reference};
use lthmpc_core::lth::kernels::{BatchNormParams, LayerNormParams, PoolGeom};
use lthmpc_core::rss::{deal, Share};
use lthmpc_core::{Mode, Ring};
use rand::Rng;

const R: Ring = Ring::DEFAULT;
const MODES: [Mode; 2] = [Mode::SemiHonest, Mode::Malicious];

fn cluster(mode: Mode, seed: u64) -> Cluster {
    Cluster::init(&Setup::new(R, mode, seed), Backend::default()).unwrap()
}

fn random(rng: &mut impl Rng, n: usize, bits: u32) -> Vec<u64> {
    (0..n).map(|_| R.from_signed(rng.gen_range(-(1i64 << (bits - 1))..(1i64 << (bits - 1))))).collect()
}

fn relu_plain(x: &[u64]) -> (Vec<u64>, Vec<u8>) {
    x.iter().map(|&v| if R.signed(v) > 0 { (v, 1) } else { (0, 0) }).unzip()
}

#[test]
fn share_reveal_mul_matmul() {
    for mode in MODES {
        let c = cluster(mode, 11);
        let mut rng = data_rng(11);
        let x = random(&mut rng, 12, 32);
        let y = random(&mut rng, 12, 32);
        let run = c
            .run(None, |p| {
                let xs = p.share_input(0, (p.id() == 0).then_some(&x[..]), 12)?;
                let ys = p.share_input(2, (p.id() == 2).then_some(&y[..]), 12)?;
                let prod = p.mul(&xs, &ys)?;
                let mm = p.matmul(&xs, &ys, 3, 4, 3)?;
                Ok((p.reveal(&xs)?, p.reveal(&prod)?, mm))
            })
            .unwrap();
        let outs = run.outputs().unwrap();
        let want: Vec<u64> = x.iter().zip(&y).map(|(&a, &b)| R.mul(a, b)).collect();
        for (rx, rp, _) in &outs {
            assert_eq!(rx, &x);
            assert_eq!(rp, &want);
        }
        let mm = open(R, &outs.clone().map(|o| o.2)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v = (0..4).fold(0, |acc, k| R.add(acc, R.mul(x[i * 4 + k], y[k * 3 + j])));
                assert_eq!(mm[i * 3 + j], v, "{mode} ({i},{j})");
            }
        }
    }
}

#[test]
fn relu_matches_plaintext() {
    for mode in MODES {
        let c = cluster(mode, 12);
        let mut rng = data_rng(12);
        let mut x = random(&mut rng, 300, 32);
        x.extend([0, 1, R.mask(), R.half(), R.half() - 1]);
        let views = deal(R, &x, &mut rng);
        let outs = c.run(None, |p| p.relu(&views[p.id() as usize])).unwrap().outputs().unwrap();
        let (z, b) = relu_plain(&x);
        assert_eq!(open(R, &outs.clone().map(|o| o.share)).unwrap(), z, "{mode}");
        assert_eq!(open_bits(&outs.map(|o| o.bits)).unwrap(), b, "{mode}");
    }
}

#[test]
fn relu_batch_covers_every_evaluator() {
    for mode in MODES {
        let c = cluster(mode, 13);
        let mut rng = data_rng(13);
        let xs: Vec<Vec<u64>> = (0..6).map(|i| random(&mut rng, 5 + i, 32)).collect();
        let views: Vec<[Share; 3]> = xs.iter().map(|x| deal(R, x, &mut rng)).collect();
        let outs = c
            .run(None, |p| {
                let mine: Vec<Share> = views.iter().map(|v| v[p.id() as usize].clone()).collect();
                p.relu_batch(&mine)
            })
            .unwrap()
            .outputs()
            .unwrap();
        for (i, x) in xs.iter().enumerate() {
            let got = open(R, &[0, 1, 2].map(|p| outs[p][i].share.clone())).unwrap();
            assert_eq!(got, relu_plain(x).0, "{mode} job {i}");
        }
    }
}

#[test]
fn truncation_is_floor_shift() {
    for mode in MODES {
        let c = cluster(mode, 14);
        let mut rng = data_rng(14);
        let x = random(&mut rng, 64, 32);
        let views = deal(R, &x, &mut rng);
        let outs = c.run(None, |p| p.truncate(&views[p.id() as usize])).unwrap().outputs().unwrap();
        let want: Vec<u64> = x.iter().map(|&v| R.from_signed(R.signed(v) >> R.frac())).collect();
        assert_eq!(open(R, &outs).unwrap(), want, "{mode}");
    }
}

fn matmul_relu_plain(x: &[i64], w: &[i64], bias: Option<&[i64]>, (a, b, c): (usize, usize, usize), relu: bool) -> Vec<u64> {
    let mut out = Vec::with_capacity(a * c);
    for i in 0..a {
        for j in 0..c {
            let mut acc: i64 = (0..b).map(|k| x[i * b + k] * w[k * c + j]).sum();
            if let Some(bias) = bias {
                acc += bias[j] << R.frac();
            }
            let acc = R.signed(R.from_signed(acc));
            let t = acc >> R.frac();
            out.push(R.from_signed(if relu { t.max(0) } else { t }));
        }
    }
    out
}

#[test]
fn matmul_relu_matches_plaintext() {
    for mode in MODES {
        let c = cluster(mode, 15);
        let mut rng = data_rng(15);
        for (dims, relu, with_bias) in [((5, 7, 3), true, false), ((4, 6, 9), false, true), ((8, 8, 8), true, true)] {
            let (a, b, cc) = dims;
            let xi: Vec<i64> = (0..a * b).map(|_| rng.gen_range(-40_000..40_000)).collect();
            let wi: Vec<i64> = (0..b * cc).map(|_| rng.gen_range(-40_000..40_000)).collect();
            let bi: Vec<i64> = (0..cc).map(|_| rng.gen_range(-40_000..40_000)).collect();
            let enc = |v: &[i64]| v.iter().map(|&t| R.from_signed(t)).collect::<Vec<_>>();
            let (xv, wv, bv) = (deal(R, &enc(&xi), &mut rng), deal(R, &enc(&wi), &mut rng), deal(R, &enc(&bi), &mut rng));
            let outs = c
                .run(None, |p| {
                    let id = p.id() as usize;
                    p.matmul_relu(&xv[id], &wv[id], dims, with_bias.then_some(&bv[id]), relu)
                })
                .unwrap()
                .outputs()
                .unwrap();
            let want = matmul_relu_plain(&xi, &wi, with_bias.then_some(&bi[..]), dims, relu);
            assert_eq!(open(R, &outs.clone().map(|o| o.share)).unwrap(), want, "{mode} {dims:?}");
            let bits = open_bits(&outs.map(|o| o.bits)).unwrap();
            if relu {
                let pos: Vec<u8> = want.iter().map(|&v| (R.signed(v) > 0) as u8).collect();
                assert_eq!(bits, pos);
            } else {
                assert!(bits.is_empty());
            }
        }
    }
}

#[test]
fn maxpool_matches_plaintext() {
    let g = PoolGeom { batch: 2, channels: 3, height: 5, width: 5, window: 2, stride: 2 };
    for mode in MODES {
        for relu in [false, true] {
            let c = cluster(mode, 16);
            let mut rng = data_rng(16);
            let x = random(&mut rng, g.n_in(), 20);
            let views = deal(R, &x, &mut rng);
            let outs = c.run(None, |p| p.maxpool(&views[p.id() as usize], &g, relu)).unwrap().outputs().unwrap();
            let mut want = Vec::new();
            for img in x.chunks(25) {
                for oy in 0..2 {
                    for ox in 0..2 {
                        let m = (0..4)
                            .map(|t| R.signed(img[(oy * 2 + t / 2) * 5 + ox * 2 + t % 2]))
                            .max()
                            .unwrap();
                        want.push(R.from_signed(if relu { m.max(0) } else { m }));
                    }
                }
            }
            assert_eq!(open(R, &outs.clone().map(|o| o.share)).unwrap(), want, "{mode} relu={relu}");
            let bits = open_bits(&outs.map(|o| o.bits)).unwrap();
            assert_eq!(bits.len(), if relu { want.len() } else { x.len() });
        }
    }
}

#[test]
fn normalisation_matches_plaintext() {
    let enc = |v: f64| R.encode(v).unwrap();
    let bn = BatchNormParams {
        channels: 2,
        inner: 3,
        gamma: vec![enc(1.5), enc(-0.5)],
        beta: vec![enc(0.25), enc(1.0)],
        mean: vec![enc(0.1), enc(-2.0)],
        var: vec![enc(4.0), enc(0.5)],
    };
    let ln = LayerNormParams { group: 6, gamma: (0..6).map(|i| enc(0.5 + i as f64 / 4.0)).collect(), beta: vec![enc(-0.125); 6] };
    for mode in MODES {
        let c = cluster(mode, 17);
        let mut rng = data_rng(17);
        let x: Vec<u64> = (0..24).map(|_| enc(rng.gen_range(-8.0..8.0))).collect();
        let views = deal(R, &x, &mut rng);
        let outs = c
            .run(None, |p| {
                let v = &views[p.id() as usize];
                Ok((p.batchnorm(v, &bn, false)?, p.layernorm(v, &ln, true)?))
            })
            .unwrap()
            .outputs()
            .unwrap();
        let got_bn = open(R, &outs.clone().map(|o| o.0.share)).unwrap();
        let got_ln = open(R, &outs.map(|o| o.1.share)).unwrap();
        for (i, &v) in x.iter().enumerate() {
            let ch = (i / 3) % 2;
            let y = (R.decode(v) - R.decode(bn.mean[ch])) * R.decode(bn.gamma[ch]) / (R.decode(bn.var[ch]) + 1e-5).sqrt()
                + R.decode(bn.beta[ch]);
            assert!((R.decode(got_bn[i]) - y).abs() <= R.ulp(), "{mode} bn {i}");
        }
        for (g, (xs, ys)) in x.chunks(6).zip(got_ln.chunks(6)).enumerate() {
            let v: Vec<f64> = xs.iter().map(|&t| R.decode(t)).collect();
            let mean = v.iter().sum::<f64>() / 6.0;
            let var = v.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 6.0;
            for d in 0..6 {
                let y = ((v[d] - mean) / (var + 1e-5).sqrt() * R.decode(ln.gamma[d]) + R.decode(ln.beta[d])).max(0.0);
                assert!((R.decode(ys[d]) - y).abs() <= R.ulp(), "{mode} ln group {g} elem {d}");
            }
        }
    }
}

#[test]
fn softmax_within_two_ulp() {
    for mode in MODES {
        let c = cluster(mode, 18);
        let mut rng = data_rng(18);
        let x: Vec<u64> = (0..40).map(|_| R.from_signed(rng.gen_range(-262_143..=262_143))).collect();
        let views = deal(R, &x, &mut rng);
        let outs = c.run(None, |p| p.softmax(&views[p.id() as usize], 8)).unwrap().outputs().unwrap();
        let got = open(R, &outs).unwrap();
        let want = softmax_reference(R, &x, 8);
        assert!(max_ulp(R, &got, &want) <= 2, "{mode}: {}", max_ulp(R, &got, &want));
    }
}

#[test]
fn backends_agree() {
    let mut rng = data_rng(19);
    let x = random(&mut rng, 50, 32);
    let views = deal(R, &x, &mut rng);
    let mut res = Vec::new();
    for backend in [Backend::default(), Backend::Tcp(std::time::Duration::from_secs(30))] {
        let c = Cluster::init(&Setup::new(R, Mode::Malicious, 19), backend).unwrap();
        let run = c.run(None, |p| p.relu(&views[p.id() as usize])).unwrap();
        let meter = run.meter();
        let outs = run.outputs().unwrap();
        res.push((outs, meter.payload(), meter.rounds()));
    }
    assert_eq!(res[0], res[1]);
}
