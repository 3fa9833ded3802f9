use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Fan-in and fan-out of a weight shape.
///
/// `[n]` gives `(n, n)`, `[inputs, units]` gives `(inputs, units)` and
/// `[kh, kw, in_channels, filters]` gives
/// `(kh*kw*in_channels, kh*kw*filters)`.
pub fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape(format!(
            "cannot initialize zero-sized shape {shape:?}"
        )));
    }
    Ok(match shape.len() {
        1 => (shape[0], shape[0]),
        2 => (shape[0], shape[1]),
        n => {
            let receptive: usize = shape[..n - 2].iter().product();
            (receptive * shape[n - 2], receptive * shape[n - 1])
        }
    })
}

/// Glorot uniform initialization: values uniform in `[-L, L]` with
/// `L = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform_init<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor> {
    let (fan_in, fan_out) = fans(shape)?;
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let dist = Uniform::new_inclusive(-limit, limit);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Glorot-initialized convolution kernel in `[filters, in_channels*k*k]` layout.
pub fn glorot_conv_kernel<R: Rng + ?Sized>(
    filters: usize,
    in_channels: usize,
    kernel: usize,
    rng: &mut R,
) -> Result<Tensor> {
    let src = glorot_uniform_init(&[kernel, kernel, in_channels, filters], rng)?;
    let s = src.data();
    let mut out = vec![0.0; s.len()];
    for ki in 0..kernel {
        for kj in 0..kernel {
            for c in 0..in_channels {
                for f in 0..filters {
                    let from = ((ki * kernel + kj) * in_channels + c) * filters + f;
                    let to = f * in_channels * kernel * kernel + (c * kernel + ki) * kernel + kj;
                    out[to] = s[from];
                }
            }
        }
    }
    Tensor::new(vec![filters, in_channels * kernel * kernel], out)
}
