//! Random networks and inputs with trained-looking value ranges.

use lthmpc_core::infer::{Layer, NetworkSpec, Shape};
use lthmpc_core::{Result, Ring};
use rand::Rng;

/// Uniform `[-b, b)` with `b = sqrt(6 / fan_in)`, the usual initialisation
/// scale for ReLU networks.
fn he_uniform(ring: Ring, n: usize, fan_in: usize, rng: &mut impl Rng) -> Result<Vec<u64>> {
    let b = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| ring.encode(rng.gen_range(-b..b))).collect()
}

/// Fully connected layers of the given widths with ReLU between them; the
/// last layer produces logits.
pub fn mlp(ring: Ring, widths: &[usize], rng: &mut impl Rng) -> Result<NetworkSpec> {
    let mut layers = Vec::new();
    for (i, w) in widths.windows(2).enumerate() {
        let (inp, out) = (w[0], w[1]);
        let weights = he_uniform(ring, inp * out, inp, rng)?;
        let bias = (0..out).map(|_| ring.encode(rng.gen_range(-0.1..0.1))).collect::<Result<_>>()?;
        layers.push(Layer::Fc { inp, out, weights: Some(weights), bias: Some(bias) });
        if i + 2 < widths.len() {
            layers.push(Layer::Relu);
        }
    }
    Ok(NetworkSpec { input: Shape::flat(widths[0]), layers })
}

/// Three fully connected layers, 784-128-128-10.
pub fn network_a(ring: Ring, rng: &mut impl Rng) -> Result<NetworkSpec> {
    mlp(ring, &[784, 128, 128, 10], rng)
}

/// Inputs in `[0, 1)`, like normalised pixels.
pub fn unit_inputs(ring: Ring, n: usize, rng: &mut impl Rng) -> Result<Vec<u64>> {
    (0..n).map(|_| ring.encode(rng.gen_range(0.0..1.0))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data_rng;

    #[test]
    fn network_a_shape() {
        let spec = network_a(Ring::DEFAULT, &mut data_rng(1)).unwrap();
        assert_eq!(spec.output().unwrap(), Shape::flat(10));
        assert_eq!(spec.layers.len(), 5);
    }
}
