//! Feed-forward network engine with per-layer activation taps.

pub mod checkpoint;
pub mod init;
pub mod layer;
pub mod network;
pub mod ops;
pub mod optim;
mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use init::glorot_uniform_init;
pub use layer::{Activation, LayerKind, LayerSpec, Padding, TapPoint};
pub use network::{ForwardTrace, Gradients, LayerParams, Mode, Network};
pub use optim::{OptimizerKind, OptimizerState};
pub use tensor::{argmax, Tensor};
pub use train::{accuracy, detect_stagnation, one_hot, train_epochs, TrainReport};

use crate::error::Result;

/// Forward pass; see [`Network::forward`].
pub fn forward<R: rand::Rng + ?Sized>(
    net: &Network,
    batch: &Tensor,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, ForwardTrace)> {
    net.forward(batch, mode, rng)
}

/// Backward pass; see [`Network::backward`].
pub fn backward(net: &Network, trace: &ForwardTrace, targets: &Tensor) -> Result<Gradients> {
    net.backward(trace, targets)
}

/// Applies one optimizer update.
pub fn step(net: &mut Network, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
    opt.step(net, grads)
}

/// Output of `layer` at `point`, flattened to `(batch, features)`.
pub fn activation_at(net: &Network, layer: usize, batch: &Tensor, point: TapPoint) -> Result<Tensor> {
    net.activation_at(layer, batch, point)
}

/// Freezes layers `0..=through`.
pub fn freeze_prefix(net: &mut Network, through: usize) -> Result<()> {
    net.freeze_prefix(through)
}
