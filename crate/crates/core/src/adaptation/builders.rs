use super::config::{BaseArch, PatchConfig};
use crate::error::{Error, Result};
use crate::nncore::{
    train_epochs, Activation, LayerSpec, Network, OptimizerKind, OptimizerState, Padding, TrainReport,
};
use crate::seed;
use crate::streams::{to_tensor, LabeledImage};

/// Layer stack of a base classifier for `input` = `[channels, rows, cols]`.
pub fn base_layers(arch: BaseArch, input: &[usize], classes: usize) -> Vec<LayerSpec> {
    match arch {
        BaseArch::Fcnn => vec![
            LayerSpec::input(input),
            LayerSpec::flatten(),
            LayerSpec::dropout(0.2),
            LayerSpec::dense(2048, Activation::Relu),
            LayerSpec::dense(1024, Activation::Relu),
            LayerSpec::dense(1024, Activation::Relu),
            LayerSpec::dense(512, Activation::Relu),
            LayerSpec::dense(128, Activation::Relu),
            LayerSpec::dropout(0.5),
            LayerSpec::softmax(classes),
        ],
        BaseArch::Cnn => vec![
            LayerSpec::input(input),
            LayerSpec::conv(32, 3, 1, Padding::Valid),
            LayerSpec::conv(64, 3, 1, Padding::Valid),
            LayerSpec::max_pool(2, 2),
            LayerSpec::dropout(0.25),
            LayerSpec::flatten(),
            LayerSpec::dense(128, Activation::Relu),
            LayerSpec::dropout(0.5),
            LayerSpec::softmax(classes),
        ],
    }
}

/// Trains a base classifier on `init_set`.
pub fn build_base(
    arch: BaseArch,
    init_set: &[LabeledImage],
    num_classes: usize,
    epochs: usize,
    minibatch: usize,
    optimizer: OptimizerKind,
    seed: u64,
) -> Result<(Network, TrainReport)> {
    if init_set.is_empty() {
        return Err(Error::InvalidInput("empty init set".into()));
    }
    let (x, y) = to_tensor(init_set)?;
    let mut net = Network::new(base_layers(arch, &x.shape()[1..], num_classes), seed)?;
    let mut opt = OptimizerState::new(optimizer);
    let mut rng = seed::rng(seed::derive_str(seed, "base-train"));
    let report = train_epochs(&mut net, &x, &y, epochs, minibatch, &mut opt, &mut rng)?;
    Ok((net, report))
}

/// The two heuristic engagement layers of a base architecture and the default one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngagementCandidates {
    pub names: [&'static str; 2],
    pub default: &'static str,
}

impl EngagementCandidates {
    /// Resolves the candidate names to layer indices of `net`.
    pub fn indices(&self, net: &Network) -> Result<[usize; 2]> {
        let find = |n: &str| {
            net.layer_index(n)
                .ok_or_else(|| Error::InvalidLayer(format!("network has no layer {n:?}")))
        };
        Ok([find(self.names[0])?, find(self.names[1])?])
    }

    pub fn default_index(&self, net: &Network) -> Result<usize> {
        net.layer_index(self.default)
            .ok_or_else(|| Error::InvalidLayer(format!("network has no layer {:?}", self.default)))
    }
}

/// FC-NN: fc1 / fc2 (default fc1); CNN: conv2 / pool1 (default pool1).
pub fn default_engagement_layer(arch: BaseArch) -> EngagementCandidates {
    match arch {
        BaseArch::Fcnn => EngagementCandidates {
            names: ["fc1", "fc2"],
            default: "fc1",
        },
        BaseArch::Cnn => EngagementCandidates {
            names: ["conv2", "pool1"],
            default: "pool1",
        },
    }
}

fn head_layers(base: &Network, cfg: &PatchConfig, classes: usize) -> Result<Vec<LayerSpec>> {
    cfg.validate()?;
    let l = base.resolve_tap(cfg.engagement_layer)?;
    let features = base.features_at(l);
    let mut layers = vec![LayerSpec::input(&[features])];
    if cfg.dropout_in > 0.0 {
        layers.push(LayerSpec::dropout(cfg.dropout_in));
    }
    for &w in &cfg.hidden {
        layers.push(LayerSpec::dense(w, Activation::Relu));
    }
    if cfg.dropout_hidden > 0.0 {
        layers.push(LayerSpec::dropout(cfg.dropout_hidden));
    }
    layers.push(LayerSpec::softmax(classes));
    Ok(layers)
}

/// Patch network reading the engagement-layer output of `base`.
pub fn build_patch(base: &Network, cfg: &PatchConfig, num_classes: usize, seed: u64) -> Result<Network> {
    Network::new(
        head_layers(base, cfg, num_classes)?,
        seed::derive_str(seed, "patch"),
    )
}

/// Error estimator: same input and architecture as the patch, two outputs
/// (0 = no error, 1 = error).
pub fn build_estimator(base: &Network, cfg: &PatchConfig, seed: u64) -> Result<Network> {
    Network::new(head_layers(base, cfg, 2)?, seed::derive_str(seed, "estimator"))
}
