use serde::{Deserialize, Serialize};

use super::network::{Gradients, LayerParams, Network};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd {
        lr: f32,
        momentum: f32,
    },
    Adam {
        lr: f32,
        beta1: f32,
        beta2: f32,
        eps: f32,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    first: LayerParams,
    second: Option<LayerParams>,
}

/// Optimizer hyperparameters plus per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    steps: u64,
    moments: Vec<Option<Moments>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            steps: 0,
            moments: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every trainable layer that has a gradient.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let n = net.layers().len();
        if grads.len() != n {
            return Err(Error::Internal(format!(
                "gradient table has {} layers, network has {n}",
                grads.len()
            )));
        }
        if self.moments.len() != n {
            self.moments = vec![None; n];
        }
        self.steps += 1;
        let t = self.steps as i32;
        for i in 0..n {
            let Some(g) = grads.layer(i) else { continue };
            if !net.is_trainable(i) {
                continue;
            }
            let kind = self.kind;
            let p = net
                .params_mut(i)
                .ok_or_else(|| Error::Internal(format!("gradient for parameterless layer {i}")))?;
            if p.weights.shape() != g.weights.shape() || p.bias.shape() != g.bias.shape() {
                return Err(Error::Internal(format!("gradient shape mismatch at layer {i}")));
            }
            let m = self.moments[i].get_or_insert_with(|| Moments {
                first: zeros_like(p),
                second: matches!(kind, OptimizerKind::Adam { .. }).then(|| zeros_like(p)),
            });
            match kind {
                OptimizerKind::Sgd { lr, momentum } => {
                    sgd(
                        p.weights.data_mut(),
                        g.weights.data(),
                        m.first.weights.data_mut(),
                        lr,
                        momentum,
                    );
                    sgd(
                        p.bias.data_mut(),
                        g.bias.data(),
                        m.first.bias.data_mut(),
                        lr,
                        momentum,
                    );
                }
                OptimizerKind::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let v = m.second.as_mut().expect("adam second moment");
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let h = AdamStep {
                        lr,
                        beta1,
                        beta2,
                        eps,
                        c1,
                        c2,
                    };
                    h.apply(
                        p.weights.data_mut(),
                        g.weights.data(),
                        m.first.weights.data_mut(),
                        v.weights.data_mut(),
                    );
                    h.apply(
                        p.bias.data_mut(),
                        g.bias.data(),
                        m.first.bias.data_mut(),
                        v.bias.data_mut(),
                    );
                }
            }
        }
        Ok(())
    }
}

fn zeros_like(p: &LayerParams) -> LayerParams {
    LayerParams {
        weights: Tensor::zeros(p.weights.shape()),
        bias: Tensor::zeros(p.bias.shape()),
    }
}

/// Flushes subnormal values to zero.
#[inline]
fn flush(v: f32) -> f32 {
    if v.abs() < f32::MIN_POSITIVE {
        0.0
    } else {
        v
    }
}

fn sgd(w: &mut [f32], g: &[f32], vel: &mut [f32], lr: f32, momentum: f32) {
    for ((w, g), v) in w.iter_mut().zip(g).zip(vel.iter_mut()) {
        *v = flush(momentum * *v - lr * g);
        *w += *v;
    }
}

struct AdamStep {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    c1: f32,
    c2: f32,
}

impl AdamStep {
    fn apply(&self, w: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32]) {
        let (b1, b2) = (self.beta1, self.beta2);
        let step = self.lr / self.c1;
        let inv_c2 = 1.0 / self.c2;
        for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = flush(b1 * *m + (1.0 - b1) * g);
            *v = flush(b2 * *v + (1.0 - b2) * g * g);
            *w -= step * *m / ((*v * inv_c2).sqrt() + self.eps);
        }
    }
}
