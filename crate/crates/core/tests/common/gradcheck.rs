//! Finite-difference gradient oracle driven by a plain f64 re-implementation
//! of the forward pass (direct loops, no im2col, no shared kernels).

use driftpatch::nncore::{Activation, LayerKind, Mode, Network, Padding, Tensor};
use rand::Rng;

fn window_out(n: usize, k: usize, s: usize, p: Padding) -> (usize, usize) {
    match p {
        Padding::Valid => ((n - k) / s + 1, 0),
        Padding::Same => {
            let out = n.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(n);
            (out, total / 2)
        }
    }
}

/// Mean cross-entropy of `net` on `(x, y)` with every weight taken from
/// `weights` (flat f64 copy of the parameter table, layer order, weights then bias).
pub fn reference_loss(net: &Network, weights: &[Vec<f64>], x: &Tensor, labels: &[u32]) -> f64 {
    reference_loss_with_pattern(net, weights, x, labels).0
}

/// Loss plus the activation pattern (ReLU signs and pool winners) it was computed under.
pub fn reference_loss_with_pattern(
    net: &Network,
    weights: &[Vec<f64>],
    x: &Tensor,
    labels: &[u32],
) -> (f64, Vec<u32>) {
    let mut pattern = Vec::new();
    let b = x.rows();
    let mut shape: Vec<usize> = x.shape()[1..].to_vec();
    let mut act: Vec<Vec<f64>> = (0..b)
        .map(|i| x.row(i).iter().map(|&v| v as f64).collect())
        .collect();
    let mut wi = 0;
    for spec in net.layers().iter().skip(1) {
        match &spec.kind {
            LayerKind::Input { .. } => unreachable!(),
            LayerKind::Dense { units } | LayerKind::SoftmaxOutput { classes: units } => {
                let w = &weights[wi];
                let bias = &weights[wi + 1];
                wi += 2;
                let fan_in = act[0].len();
                for a in act.iter_mut() {
                    let mut z = vec![0.0; *units];
                    for (o, zo) in z.iter_mut().enumerate() {
                        let mut s = bias[o];
                        for i in 0..fan_in {
                            s += a[i] * w[i * units + o];
                        }
                        if spec.activation == Activation::Relu {
                            pattern.push((s > 0.0) as u32);
                            *zo = s.max(0.0);
                        } else {
                            *zo = s;
                        }
                    }
                    *a = z;
                }
                shape = vec![*units];
            }
            LayerKind::Conv2D {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let w = &weights[wi];
                let bias = &weights[wi + 1];
                wi += 2;
                let (c, h, wd) = (shape[0], shape[1], shape[2]);
                let (oh, pt) = window_out(h, *kernel, *stride, *padding);
                let (ow, pl) = window_out(wd, *kernel, *stride, *padding);
                for a in act.iter_mut() {
                    let mut z = vec![0.0; filters * oh * ow];
                    for f in 0..*filters {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut s = bias[f];
                                for ci in 0..c {
                                    for ki in 0..*kernel {
                                        for kj in 0..*kernel {
                                            let iy = (oy * stride + ki) as isize - pt as isize;
                                            let ix = (ox * stride + kj) as isize - pl as isize;
                                            if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= wd {
                                                continue;
                                            }
                                            let wv =
                                                w[f * c * kernel * kernel + (ci * kernel + ki) * kernel + kj];
                                            s += wv * a[(ci * h + iy as usize) * wd + ix as usize];
                                        }
                                    }
                                }
                                z[(f * oh + oy) * ow + ox] = if spec.activation == Activation::Relu {
                                    pattern.push((s > 0.0) as u32);
                                    s.max(0.0)
                                } else {
                                    s
                                };
                            }
                        }
                    }
                    *a = z;
                }
                shape = vec![*filters, oh, ow];
            }
            LayerKind::MaxPool { kernel, stride } => {
                let (c, h, wd) = (shape[0], shape[1], shape[2]);
                let oh = (h - kernel) / stride + 1;
                let ow = (wd - kernel) / stride + 1;
                for a in act.iter_mut() {
                    let mut z = vec![f64::NEG_INFINITY; c * oh * ow];
                    for ci in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut win = 0;
                                for ki in 0..*kernel {
                                    for kj in 0..*kernel {
                                        let v = a[(ci * h + oy * stride + ki) * wd + ox * stride + kj];
                                        let o = &mut z[(ci * oh + oy) * ow + ox];
                                        if v > *o {
                                            *o = v;
                                            win = ki * kernel + kj;
                                        }
                                    }
                                }
                                pattern.push(win as u32);
                            }
                        }
                    }
                    *a = z;
                }
                shape = vec![c, oh, ow];
            }
            LayerKind::Flatten => shape = vec![shape.iter().product()],
            LayerKind::Dropout { .. } => {}
        }
    }
    let mut loss = 0.0;
    for (a, &l) in act.iter().zip(labels) {
        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - a[l as usize];
    }
    (loss / b as f64, pattern)
}

fn flat_params(net: &Network) -> Vec<Vec<f64>> {
    net.all_params()
        .iter()
        .flatten()
        .flat_map(|p| {
            [
                p.weights.data().iter().map(|&v| v as f64).collect::<Vec<_>>(),
                p.bias.data().iter().map(|&v| v as f64).collect(),
            ]
        })
        .collect()
}

/// One sampled coordinate of a gradient check.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub relative_error: f64,
    /// The finite-difference stencil crossed a ReLU or pooling kink.
    pub kink: bool,
}

/// Relative errors between analytic gradients and central differences
/// (h = 1e-3) on `samples` randomly chosen parameter coordinates.
pub fn sampled_relative_errors<R: Rng>(
    net: &Network,
    x: &Tensor,
    labels: &[u32],
    samples: usize,
    rng: &mut R,
) -> Vec<f64> {
    probe_gradients(net, x, labels, samples, rng)
        .into_iter()
        .map(|p| p.relative_error)
        .collect()
}

pub fn probe_gradients<R: Rng>(
    net: &Network,
    x: &Tensor,
    labels: &[u32],
    samples: usize,
    rng: &mut R,
) -> Vec<Probe> {
    let classes = net.num_classes();
    let targets = driftpatch::nncore::one_hot(labels, classes).unwrap();
    let (_, trace) = net.forward(x, Mode::Train, rng).unwrap();
    let grads = net.backward(&trace, &targets).unwrap();
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    for (i, p) in net.all_params().iter().enumerate() {
        if p.is_some() {
            let g = grads.layer(i).expect("trainable layer gradient");
            analytic.push(g.weights.data().iter().map(|&v| v as f64).collect());
            analytic.push(g.bias.data().iter().map(|&v| v as f64).collect());
        }
    }
    let base = flat_params(net);
    let (_, centre) = reference_loss_with_pattern(net, &base, x, labels);
    let h = 1e-3;
    let mut errs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let t = rng.gen_range(0..base.len());
        let j = rng.gen_range(0..base[t].len());
        let mut w = base.clone();
        w[t][j] = base[t][j] + h;
        let (up, pu) = reference_loss_with_pattern(net, &w, x, labels);
        w[t][j] = base[t][j] - h;
        let (down, pd) = reference_loss_with_pattern(net, &w, x, labels);
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[t][j];
        let denom = a.abs().max(numeric.abs());
        errs.push(Probe {
            relative_error: if denom == 0.0 {
                0.0
            } else {
                (a - numeric).abs() / denom
            },
            kink: pu != centre || pd != centre,
        });
    }
    errs
}
