use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{Layer, LayerSpec, Params};
use super::network::Network;

/// Fan-in of one output unit of a parameterised layer.
pub fn fan_in(spec: &LayerSpec) -> Option<usize> {
    match spec {
        LayerSpec::Convolution(c) => Some(c.in_channels * c.kernel * c.kernel),
        LayerSpec::FullyConnected(f) => Some(f.input.len()),
        _ => None,
    }
}

/// Fills every weight from `U(-a, a)` with `a = sqrt(6 / fan_in)` and zeroes
/// the biases. Deterministic in `seed`.
pub fn init_uniform(layers: &mut [Layer], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in layers.iter_mut() {
        let (Some((nw, nb)), Some(fan)) = (layer.spec.param_counts(), fan_in(&layer.spec)) else {
            continue;
        };
        let a = (6.0 / fan as f64).sqrt();
        let weights = (0..nw).map(|_| rng.gen_range(-a..a) as f32).collect();
        layer.params = Some(Params { weights, bias: vec![0.0; nb] });
    }
}

/// Re-initialises an existing network in place.
pub fn reinit(net: &mut Network, seed: u64) {
    init_uniform(&mut net.layers, seed);
}
