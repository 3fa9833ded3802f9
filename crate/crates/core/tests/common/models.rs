use std::sync::Arc;

use driftpatch::nncore::{train_epochs, Activation, LayerSpec, Network, OptimizerKind, OptimizerState};
use driftpatch::streams::{to_tensor, transform_flip, LabeledImage};

use super::data::{prototype_dataset, prototype_samples};

pub const SIDE: usize = 6;
pub const CLASSES: u32 = 4;
/// Index of the first dense layer of [`tiny_base`].
pub const FC1: usize = 2;

/// input - flatten - fc1(16) - fc2(12) - softmax(4).
pub fn tiny_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::input(&[1, SIDE, SIDE]),
        LayerSpec::flatten(),
        LayerSpec::dense(16, Activation::Relu),
        LayerSpec::dense(12, Activation::Relu),
        LayerSpec::softmax(CLASSES as usize),
    ]
}

/// A small base trained for a few epochs on prototype data.
pub fn tiny_base(seed: u64) -> (Arc<Network>, Vec<LabeledImage>) {
    let init = prototype_dataset(CLASSES, 40, SIDE, 0.3, seed);
    let (x, y) = to_tensor(&init).unwrap();
    let mut net = Network::new(tiny_layers(), seed).unwrap();
    let mut opt = OptimizerState::new(OptimizerKind::default());
    let mut rng = driftpatch::seed::rng(seed ^ 0xabc);
    train_epochs(&mut net, &x, &y, 5, 16, &mut opt, &mut rng).unwrap();
    (Arc::new(net), init)
}

/// Every parameter as raw bits, for exact comparisons.
pub fn param_bits(net: &Network) -> Vec<u32> {
    net.all_params()
        .iter()
        .flatten()
        .flat_map(|p| p.weights.data().iter().chain(p.bias.data()).map(|v| v.to_bits()))
        .collect()
}

/// Undrifted chunks from the same prototypes as [`tiny_base`].
pub fn clean_chunks(base_seed: u64, chunks: usize, per_class: usize) -> Vec<Vec<LabeledImage>> {
    (0..chunks)
        .map(|c| {
            prototype_samples(
                CLASSES,
                per_class,
                SIDE,
                0.3,
                base_seed,
                base_seed + 1000 + c as u64,
            )
        })
        .collect()
}

/// Pixel-reversed chunks with unchanged labels.
pub fn flipped_chunks(base_seed: u64, chunks: usize, per_class: usize) -> Vec<Vec<LabeledImage>> {
    clean_chunks(base_seed, chunks, per_class)
        .into_iter()
        .map(|c| c.iter().map(transform_flip).collect())
        .collect()
}
