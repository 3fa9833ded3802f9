use std::path::PathBuf;

use driftpatch::streams::LabeledImage;
use rand::Rng;

/// MNIST root: `DRIFTPATCH_DATA`, else `<workspace>/data/mnist`.
pub fn mnist_root() -> Option<PathBuf> {
    let root = std::env::var_os("DRIFTPATCH_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    root.join(driftpatch::streams::idx::MNIST_FILES[0])
        .exists()
        .then_some(root)
}

/// Random images whose pixels are exact multiples of 1/255.
pub fn synthetic_dataset(classes: u32, per_class: usize, side: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = driftpatch::seed::rng(seed);
    let mut out = Vec::new();
    for c in 0..classes {
        for _ in 0..per_class {
            let pixels = (0..side * side)
                .map(|_| rng.gen_range(0u8..=255) as f32 / 255.0)
                .collect();
            out.push(LabeledImage::new(side, side, pixels, c));
        }
    }
    out
}

/// Learnable images: a fixed random prototype per class plus uniform noise.
pub fn prototype_dataset(
    classes: u32,
    per_class: usize,
    side: usize,
    noise: f32,
    seed: u64,
) -> Vec<LabeledImage> {
    prototype_samples(classes, per_class, side, noise, seed, seed)
}

/// Like [`prototype_dataset`] with prototypes from `proto_seed` and noise from `sample_seed`.
pub fn prototype_samples(
    classes: u32,
    per_class: usize,
    side: usize,
    noise: f32,
    proto_seed: u64,
    sample_seed: u64,
) -> Vec<LabeledImage> {
    let mut proto_rng = driftpatch::seed::rng(driftpatch::seed::derive_str(proto_seed, "prototypes"));
    let mut rng = driftpatch::seed::rng(driftpatch::seed::derive_str(sample_seed, "noise"));
    let protos: Vec<Vec<f32>> = (0..classes)
        .map(|_| (0..side * side).map(|_| proto_rng.gen_range(0.0..1.0)).collect())
        .collect();
    let mut out = Vec::new();
    for _ in 0..per_class {
        for c in 0..classes {
            let pixels = protos[c as usize]
                .iter()
                .map(|&p| (p + rng.gen_range(-noise..noise)).clamp(0.0, 1.0))
                .collect();
            out.push(LabeledImage::new(side, side, pixels, c));
        }
    }
    out
}
