//! Secure inference against the plaintext fixed-point oracle.

use lthmpc::engine::{infer, view, Inputs};
use lthmpc::harness::{data_rng, Backend, Cluster, Setup};
use lthmpc::model::{mlp, unit_inputs};
use lthmpc_core::infer::{max_ulp, plaintext_oracle, Layer, NetworkSpec, Shape};
use lthmpc_core::{Mode, Ring};
use rand::Rng;

const R: Ring = Ring::DEFAULT;

fn secure(spec: &NetworkSpec, x: &[u64], batch: usize, mode: Mode, fused: bool) -> Vec<u64> {
    let mut setup = Setup::new(R, mode, 41);
    setup.network_hash = spec.hash();
    let c = Cluster::init(&setup, Backend::default()).unwrap();
    let outs = c
        .run(None, |p| {
            let (local, input) = view(p.id(), spec, x);
            infer(p, &Inputs { spec: &local, input, batch, fused })
        })
        .unwrap()
        .outputs()
        .unwrap();
    assert!(outs.iter().all(|o| o == &outs[0]));
    outs[0].clone()
}

fn enc(v: f64) -> u64 {
    R.encode(v).unwrap()
}

#[test]
fn mlp_is_exact_in_both_modes_and_plans() {
    let mut rng = data_rng(41);
    let spec = mlp(R, &[20, 16, 12, 5], &mut rng).unwrap();
    let x = unit_inputs(R, 4 * 20, &mut rng).unwrap();
    let want = plaintext_oracle(R, &spec, &x).unwrap();
    for mode in [Mode::SemiHonest, Mode::Malicious] {
        for fused in [true, false] {
            assert_eq!(secure(&spec, &x, 4, mode, fused), want, "{mode} fused={fused}");
        }
    }
}

#[test]
fn conv_pool_norm_softmax_network() {
    let mut rng = data_rng(42);
    let mut w = |n: usize, b: f64| (0..n).map(|_| enc(rng.gen_range(-b..b))).collect::<Vec<_>>();
    let conv = Layer::Conv { cin: 2, cout: 3, kw: 3, kh: 3, stride: 1, pad: 1, weights: Some(w(54, 0.5)), bias: Some(w(3, 0.1)) };
    let bn = Layer::BatchNorm { gamma: w(3, 1.0), beta: w(3, 0.2), mean: w(3, 0.2), var: vec![enc(0.5), enc(1.0), enc(2.0)] };
    let spec = NetworkSpec {
        input: Shape { c: 2, h: 6, w: 6 },
        layers: vec![
            conv,
            bn,
            Layer::Relu,
            Layer::MaxPool { window: 2, stride: 2 },
            Layer::Fc { inp: 27, out: 8, weights: Some(w(27 * 8, 0.4)), bias: None },
            Layer::LayerNorm { gamma: w(8, 1.0), beta: w(8, 0.1) },
            Layer::Softmax,
        ],
    };
    let x = unit_inputs(R, 3 * 72, &mut data_rng(43)).unwrap();
    let want = plaintext_oracle(R, &spec, &x).unwrap();
    for mode in [Mode::SemiHonest, Mode::Malicious] {
        let fused = secure(&spec, &x, 3, mode, true);
        let unfused = secure(&spec, &x, 3, mode, false);
        // Normalisation and softmax each contribute at most two units.
        assert!(max_ulp(R, &fused, &want) <= 3 * 2, "{mode}: {}", max_ulp(R, &fused, &want));
        assert!(max_ulp(R, &unfused, &want) <= 3 * 2, "{mode}: {}", max_ulp(R, &unfused, &want));
    }
}

#[test]
fn conv_maxpool_relu_fusion_is_exact() {
    let mut rng = data_rng(44);
    let mut w = |n: usize, b: f64| (0..n).map(|_| enc(rng.gen_range(-b..b))).collect::<Vec<_>>();
    let spec = NetworkSpec {
        input: Shape { c: 1, h: 7, w: 7 },
        layers: vec![
            Layer::Conv { cin: 1, cout: 4, kw: 3, kh: 2, stride: 2, pad: 1, weights: Some(w(24, 0.8)), bias: Some(w(4, 0.1)) },
            Layer::MaxPool { window: 2, stride: 1 },
            Layer::Relu,
            Layer::Fc { inp: 4 * 3 * 3, out: 6, weights: Some(w(36 * 6, 0.3)), bias: Some(w(6, 0.1)) },
        ],
    };
    let x = unit_inputs(R, 2 * 49, &mut data_rng(45)).unwrap();
    let want = plaintext_oracle(R, &spec, &x).unwrap();
    for mode in [Mode::SemiHonest, Mode::Malicious] {
        assert_eq!(secure(&spec, &x, 2, mode, true), want, "{mode}");
        assert_eq!(secure(&spec, &x, 2, mode, false), want, "{mode}");
    }
}

#[test]
fn mismatched_network_aborts_setup() {
    let mut rng = data_rng(46);
    let a = mlp(R, &[4, 3], &mut rng).unwrap();
    let b = mlp(R, &[4, 2], &mut rng).unwrap();
    let mut sa = Setup::new(R, Mode::SemiHonest, 46);
    sa.network_hash = a.hash();
    let mut sb = sa.clone();
    sb.network_hash = b.hash();
    let err = Cluster::init_each(&[sa.clone(), sa, sb], Backend::default()).unwrap_err();
    assert!(err.as_abort().is_some(), "{err}");
}
