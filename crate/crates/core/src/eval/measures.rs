use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::streams::MetricsPhaseMap;

/// Number of chunks in the finish phase.
pub const FINISH_CHUNKS: usize = 5;

/// Reference accuracy for the recovery speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    /// 90% of the model's own final accuracy.
    #[default]
    #[serde(alias = "final")]
    FinalRelative,
    /// 90% of the mean accuracy before the first change point.
    #[serde(alias = "predrift")]
    PredriftBaseRelative,
}

impl std::str::FromStr for RecoveryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" | "final_relative" => Ok(RecoveryMode::FinalRelative),
            "predrift" | "predrift_base_relative" => Ok(RecoveryMode::PredriftBaseRelative),
            _ => Err(Error::InvalidConfig(format!("unknown recovery mode {s:?}"))),
        }
    }
}

/// One model's measures on one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub final_acc: f32,
    pub avg_acc: f32,
    pub recovery_speed: Option<usize>,
    pub adaptation_rank: f32,
    pub final_rank: f32,
}

fn mean(v: &[f32]) -> f32 {
    (v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64) as f32
}

/// Mean accuracy over the last five chunks.
pub fn final_accuracy(trace: &[f32]) -> Result<f32> {
    if trace.len() < FINISH_CHUNKS {
        return Err(Error::Metric(format!(
            "final accuracy needs {FINISH_CHUNKS} chunks, trace has {}",
            trace.len()
        )));
    }
    Ok(mean(&trace[trace.len() - FINISH_CHUNKS..]))
}

/// Mean accuracy from the first change point chunk to the end.
pub fn average_accuracy(trace: &[f32], first_cp: usize) -> Result<f32> {
    if first_cp >= trace.len() {
        return Err(Error::Metric(format!(
            "change point chunk {first_cp} outside a trace of {}",
            trace.len()
        )));
    }
    Ok(mean(&trace[first_cp..]))
}

/// Reference accuracy of `mode` for a trace.
pub fn recovery_reference(trace: &[f32], first_cp: usize, mode: RecoveryMode) -> Result<f32> {
    match mode {
        RecoveryMode::FinalRelative => final_accuracy(trace),
        RecoveryMode::PredriftBaseRelative => {
            if first_cp == 0 || first_cp > trace.len() {
                return Err(Error::Metric(format!(
                    "no pre-drift chunks before change point {first_cp}"
                )));
            }
            Ok(mean(&trace[..first_cp]))
        }
    }
}

/// Chunks after the first change point until accuracy reaches 90% of `reference`.
pub fn recovery_speed(trace: &[f32], first_cp: usize, reference: f32) -> Result<Option<usize>> {
    if first_cp >= trace.len() {
        return Err(Error::Metric(format!(
            "change point chunk {first_cp} outside a trace of {}",
            trace.len()
        )));
    }
    let threshold = 0.9 * reference;
    Ok(trace[first_cp..].iter().position(|&a| a >= threshold))
}

/// Descending ranks (1 = best) with ties sharing the mean of their positions.
pub fn rank_values(values: &[f32]) -> Vec<f32> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f32 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Per-model mean rank over the chunks in `range`.
pub fn ranks(traces: &[&[f32]], range: Range<usize>) -> Result<Vec<f32>> {
    if traces.len() < 2 {
        return Err(Error::Metric("ranking needs at least two models".into()));
    }
    let len = traces[0].len();
    if traces.iter().any(|t| t.len() != len) {
        return Err(Error::Metric("traces differ in length".into()));
    }
    if range.is_empty() || range.end > len {
        return Err(Error::Metric(format!(
            "invalid rank range {range:?} for {len} chunks"
        )));
    }
    let mut sums = vec![0.0f64; traces.len()];
    for c in range.clone() {
        let values: Vec<f32> = traces.iter().map(|t| t[c]).collect();
        for (s, r) in sums.iter_mut().zip(rank_values(&values)) {
            *s += r as f64;
        }
    }
    Ok(sums.iter().map(|s| (s / range.len() as f64) as f32).collect())
}

/// All five measures for a set of models evaluated on the same stream.
pub fn metrics_reports(
    traces: &[&[f32]],
    phases: &MetricsPhaseMap,
    first_cp: usize,
    mode: RecoveryMode,
) -> Result<Vec<MetricsReport>> {
    let adaptation = ranks(traces, phases.adaptation_range.clone())?;
    let finish = ranks(traces, phases.finish_range.clone())?;
    traces
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(MetricsReport {
                final_acc: final_accuracy(t)?,
                avg_acc: average_accuracy(t, first_cp)?,
                recovery_speed: recovery_speed(t, first_cp, recovery_reference(t, first_cp, mode)?)?,
                adaptation_rank: adaptation[i],
                final_rank: finish[i],
            })
        })
        .collect()
}
