use rand::seq::SliceRandom;
use rand::Rng;

use super::network::{Mode, Network};
use super::optim::OptimizerState;
use super::Tensor;
use crate::error::{Error, Result};

/// One-hot encodes labels into a `(len, classes)` tensor.
pub fn one_hot(labels: &[u32], classes: usize) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("cannot one-hot an empty label set".into()));
    }
    let mut data = vec![0.0f32; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= classes {
            return Err(Error::InvalidInput(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        data[i * classes + l as usize] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Per-epoch mean training losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f32>,
}

/// Minibatch training with a fresh shuffle per epoch. The final batch may be smaller.
pub fn train_epochs<R: Rng + ?Sized>(
    net: &mut Network,
    inputs: &Tensor,
    labels: &[u32],
    epochs: usize,
    minibatch: usize,
    opt: &mut OptimizerState,
    rng: &mut R,
) -> Result<TrainReport> {
    if epochs == 0 || minibatch == 0 {
        return Err(Error::InvalidInput(
            "epochs and minibatch must be at least 1".into(),
        ));
    }
    if labels.is_empty() || inputs.rows() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "training set has {} inputs and {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    let classes = net.num_classes();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut report = TrainReport::default();
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0f64;
        for batch in order.chunks(minibatch) {
            let x = inputs.select_rows(batch);
            let y: Vec<u32> = batch.iter().map(|&i| labels[i]).collect();
            let targets = one_hot(&y, classes)?;
            let (_, trace) = net.forward(&x, Mode::Train, rng)?;
            let grads = net.backward(&trace, &targets)?;
            opt.step(net, &grads)?;
            total += grads.loss as f64 * batch.len() as f64;
        }
        report.epoch_losses.push((total / labels.len() as f64) as f32);
    }
    Ok(report)
}

/// Fraction of rows whose predicted class equals the label.
pub fn accuracy(net: &Network, inputs: &Tensor, labels: &[u32]) -> Result<f32> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("accuracy of an empty set".into()));
    }
    let pred = net.predict(inputs)?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f32 / labels.len() as f32)
}

/// True iff the spread of the last `window` losses is below `tol`.
pub fn detect_stagnation(loss_history: &[f32], window: usize, tol: f32) -> Result<bool> {
    if window < 2 {
        return Err(Error::InvalidInput("stagnation window must be at least 2".into()));
    }
    if loss_history.len() < window {
        return Ok(false);
    }
    let tail = &loss_history[loss_history.len() - window..];
    let max = tail.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let min = tail.iter().copied().fold(f32::INFINITY, f32::min);
    Ok(max - min < tol)
}

/// Outcome of [`fit_with_restarts`].
#[derive(Debug, Clone)]
pub struct RestartOutcome<T> {
    pub value: T,
    pub seed: u64,
    pub losses: Vec<f32>,
    pub restarts: Vec<u64>,
}

/// Runs `attempt(seed)` and retries with a new seed (derived from the
/// previous one) while its loss history stagnates, up to `max_attempts`.
/// `on_restart(old_seed, new_seed)` is called before every retry.
pub fn fit_with_restarts<T>(
    seed: u64,
    max_attempts: usize,
    window: usize,
    tol: f32,
    mut attempt: impl FnMut(u64) -> Result<(T, Vec<f32>)>,
    mut on_restart: impl FnMut(u64, u64),
) -> Result<RestartOutcome<T>> {
    let mut cur = seed;
    let mut restarts = Vec::new();
    for n in 0..max_attempts.max(1) {
        let (value, losses) = attempt(cur)?;
        let last = n + 1 == max_attempts.max(1);
        if last || !detect_stagnation(&losses, window, tol)? {
            return Ok(RestartOutcome {
                value,
                seed: cur,
                losses,
                restarts,
            });
        }
        let next = crate::seed::derive(cur, n as u64 + 1);
        on_restart(cur, next);
        restarts.push(cur);
        cur = next;
    }
    unreachable!("loop returns on the last attempt")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stagnation_rules() {
        assert!(!detect_stagnation(&[2.0, 1.5, 1.0, 0.5], 3, 1e-3).unwrap());
        assert!(detect_stagnation(&[2.3, 2.3, 2.3], 3, 1e-3).unwrap());
        assert!(detect_stagnation(&[2.3, 2.3001, 2.2999], 3, 1e-2).unwrap());
        assert!(!detect_stagnation(&[2.3, 2.3], 3, 1e-3).unwrap());
        assert!(detect_stagnation(&[1.0], 1, 1e-3).is_err());
    }

    #[test]
    fn restarts_on_flat_losses() {
        let mut calls = 0;
        let mut log = Vec::new();
        let out = fit_with_restarts(
            5,
            3,
            3,
            1e-3,
            |s| {
                calls += 1;
                let losses = if calls < 2 {
                    vec![2.3; 4]
                } else {
                    vec![2.0, 1.0, 0.5]
                };
                Ok((s, losses))
            },
            |old, new| log.push((old, new)),
        )
        .unwrap();
        assert_eq!(calls, 2);
        assert_eq!(log.len(), 1);
        assert_eq!(out.restarts, vec![5]);
        assert_ne!(out.seed, 5);
        assert_eq!(out.value, out.seed);
    }

    #[test]
    fn one_hot_rejects_out_of_range() {
        assert!(one_hot(&[0, 3], 3).is_err());
        let t = one_hot(&[2, 0], 3).unwrap();
        assert_eq!(t.data(), &[0., 0., 1., 1., 0., 0.]);
    }
}
