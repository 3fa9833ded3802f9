//! Brute-force reference versions of the evaluation measures.
//!
//! Sums of f32 values in [0, 1] are exact in f64 for the trace lengths used
//! here, so a single division gives results that match bit for bit.

pub fn final_accuracy(trace: &[f32]) -> Option<f32> {
    if trace.len() < 5 {
        return None;
    }
    let mut s = 0.0f64;
    for k in 1..=5 {
        s += trace[trace.len() - k] as f64;
    }
    Some((s / 5.0) as f32)
}

pub fn average_accuracy(trace: &[f32], cp: usize) -> Option<f32> {
    if cp >= trace.len() {
        return None;
    }
    let mut s = 0.0f64;
    let mut n = 0usize;
    for (i, &a) in trace.iter().enumerate() {
        if i >= cp {
            s += a as f64;
            n += 1;
        }
    }
    Some((s / n as f64) as f32)
}

pub fn predrift_mean(trace: &[f32], cp: usize) -> Option<f32> {
    if cp == 0 || cp > trace.len() {
        return None;
    }
    let s: f64 = trace[..cp].iter().map(|&a| a as f64).sum();
    Some((s / cp as f64) as f32)
}

pub fn recovery_speed(trace: &[f32], cp: usize, reference: f32) -> Option<usize> {
    let threshold = 0.9f32 * reference;
    let mut k = 0;
    loop {
        if cp + k >= trace.len() {
            return None;
        }
        if trace[cp + k] >= threshold {
            return Some(k);
        }
        k += 1;
    }
}

/// Rank of entry `i`: one plus the number of strictly better entries plus
/// half the number of other entries tied with it.
pub fn rank_of(values: &[f32], i: usize) -> f32 {
    let better = values.iter().filter(|&&v| v > values[i]).count();
    let tied = values.iter().filter(|&&v| v == values[i]).count() - 1;
    1.0 + better as f32 + tied as f32 / 2.0
}

pub fn ranks(traces: &[Vec<f32>], from: usize, to: usize) -> Option<Vec<f32>> {
    if traces.len() < 2 || from >= to {
        return None;
    }
    let mut out = Vec::new();
    for i in 0..traces.len() {
        let mut s = 0.0f64;
        for c in from..to {
            let column: Vec<f32> = traces.iter().map(|t| t[c]).collect();
            s += rank_of(&column, i) as f64;
        }
        out.push((s / (to - from) as f64) as f32);
    }
    Some(out)
}
