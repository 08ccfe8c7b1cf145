#![allow(dead_code)]

use std::path::PathBuf;

use dfprune::model::InputBounds;
use dfprune::{ActivationKind, DenseLayer, Matrix, Network};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FIXTURE_MODELS: [&str; 3] = ["mlp_8x8digits", "mlp_8x8digits_sigmoid", "mlp_synth_binary"];

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn load_fixture(model: &str) -> Network {
    dfprune::format::load_network(fixture(&format!("{model}.json"))).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense net with the given widths; hidden layers use `hidden`, output is identity.
pub fn random_net(rng: &mut ChaCha8Rng, widths: &[usize], hidden: ActivationKind) -> Network {
    let mut layers = Vec::new();
    for (k, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let bias = (0..fan_out).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
        let act = if k + 2 == widths.len() { ActivationKind::Identity } else { hidden };
        layers.push(DenseLayer::new(Matrix::from_vec(fan_in, fan_out, data).unwrap(), bias, act).unwrap());
    }
    Network::new("random", layers).unwrap()
}

pub fn random_input(rng: &mut ChaCha8Rng, bounds: &InputBounds) -> Vec<f32> {
    bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .map(|(&l, &u)| if l == u { l } else { rng.gen_range(l..=u) })
        .collect()
}
