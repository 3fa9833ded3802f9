use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::measures::{metrics_reports, MetricsReport, RecoveryMode};
use super::prequential::RunRecord;
use crate::error::{Error, Result};
use crate::streams::MetricsPhaseMap;

/// The five measures in table column order.
pub const MEASURES: [&str; 5] = ["A.Acc", "F.Acc", "R.Spd", "Ad.Rk", "F.Rk"];

/// Standard deviations over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpread {
    pub final_acc: f32,
    pub avg_acc: f32,
    pub recovery_speed: Option<f32>,
    pub adaptation_rank: f32,
    pub final_rank: f32,
}

/// Seed-aggregated measures of one model on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub scenario: String,
    pub model: String,
    pub final_acc: f32,
    pub avg_acc: f32,
    /// Mean over seeds; `None` if any seed never recovered.
    pub recovery_speed: Option<f32>,
    pub adaptation_rank: f32,
    pub final_rank: f32,
    pub seeds: Vec<u64>,
    pub stddev: MeasureSpread,
}

impl SummaryEntry {
    /// Recovery speed as printed in result tables.
    pub fn recovery_display(&self) -> String {
        render_recovery(self.recovery_speed)
    }
}

/// `"---"` for runs that never recovered.
pub fn render_recovery(r: Option<f32>) -> String {
    match r {
        Some(v) => format!("{v:.1}"),
        None => "---".to_string(),
    }
}

fn mean(v: &[f32]) -> f32 {
    (v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64) as f32
}

/// Sample standard deviation; zero for a single value.
pub fn stddev(v: &[f32]) -> f32 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
    let ss: f64 = v.iter().map(|&x| (x as f64 - m).powi(2)).sum();
    (ss / (v.len() - 1) as f64).sqrt() as f32
}

/// Measures for models on one stream, with single-model pools ranked 1.
fn reports_for(
    traces: &[&[f32]],
    phases: &MetricsPhaseMap,
    first_cp: usize,
    mode: RecoveryMode,
) -> Result<Vec<MetricsReport>> {
    if traces.len() == 1 {
        let padded = [traces[0], traces[0]];
        let mut r = metrics_reports(&padded, phases, first_cp, mode)?;
        r.truncate(1);
        r[0].adaptation_rank = 1.0;
        r[0].final_rank = 1.0;
        return Ok(r);
    }
    metrics_reports(traces, phases, first_cp, mode)
}

/// Aggregates the records of one scenario over seeds.
///
/// Accuracy and recovery measures are seed means of per-seed values. Ranks
/// are computed on seed-averaged traces; their spread comes from per-seed ranks.
pub fn summarize_scenario(
    records: &[RunRecord],
    phases: &MetricsPhaseMap,
    first_cp: usize,
    mode: RecoveryMode,
) -> Result<Vec<SummaryEntry>> {
    let scenarios: BTreeSet<&str> = records.iter().map(|r| r.scenario_id.as_str()).collect();
    if scenarios.len() != 1 {
        return Err(Error::Metric(format!(
            "expected records of one scenario, found {}",
            scenarios.len()
        )));
    }
    let scenario = scenarios.into_iter().next().unwrap().to_string();
    let mut models: Vec<&str> = Vec::new();
    for r in records {
        if !models.contains(&r.model_id.as_str()) {
            models.push(&r.model_id);
        }
    }
    let mut by_seed: BTreeMap<u64, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_seed.entry(r.seed).or_default().push(r);
    }
    let mut per_model: BTreeMap<&str, Vec<(u64, MetricsReport)>> = BTreeMap::new();
    for (&seed, recs) in &by_seed {
        let traces: Vec<&[f32]> = recs.iter().map(|r| r.per_chunk_accuracy.as_slice()).collect();
        for (r, m) in recs.iter().zip(reports_for(&traces, phases, first_cp, mode)?) {
            per_model.entry(r.model_id.as_str()).or_default().push((seed, m));
        }
    }
    let mean_traces: Vec<Vec<f32>> = models
        .iter()
        .map(|&m| {
            let traces: Vec<&RunRecord> = records.iter().filter(|r| r.model_id == m).collect();
            let len = traces[0].per_chunk_accuracy.len();
            (0..len)
                .map(|c| mean(&traces.iter().map(|t| t.per_chunk_accuracy[c]).collect::<Vec<_>>()))
                .collect()
        })
        .collect();
    let refs: Vec<&[f32]> = mean_traces.iter().map(Vec::as_slice).collect();
    let pooled = reports_for(&refs, phases, first_cp, mode)?;
    Ok(models
        .iter()
        .zip(pooled)
        .map(|(&m, p)| {
            let runs = &per_model[m];
            let col = |f: &dyn Fn(&MetricsReport) -> f32| runs.iter().map(|(_, r)| f(r)).collect::<Vec<_>>();
            let rec: Option<Vec<f32>> = runs
                .iter()
                .map(|(_, r)| r.recovery_speed.map(|k| k as f32))
                .collect();
            SummaryEntry {
                scenario: scenario.clone(),
                model: m.to_string(),
                final_acc: mean(&col(&|r| r.final_acc)),
                avg_acc: mean(&col(&|r| r.avg_acc)),
                recovery_speed: rec.as_deref().map(mean),
                adaptation_rank: p.adaptation_rank,
                final_rank: p.final_rank,
                seeds: runs.iter().map(|(s, _)| *s).collect(),
                stddev: MeasureSpread {
                    final_acc: stddev(&col(&|r| r.final_acc)),
                    avg_acc: stddev(&col(&|r| r.avg_acc)),
                    recovery_speed: rec.as_deref().map(stddev),
                    adaptation_rank: stddev(&col(&|r| r.adaptation_rank)),
                    final_rank: stddev(&col(&|r| r.final_rank)),
                },
            }
        })
        .collect())
}

/// Top-1 counts per model and measure over scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaTable {
    pub models: Vec<String>,
    pub scenarios: Vec<String>,
    /// `counts[m][k]`: scenarios in which model `m` is best (or tied best) on measure `k`.
    pub counts: Vec<[usize; 5]>,
}

fn round2(x: f32) -> i64 {
    (x as f64 * 100.0).round() as i64
}

/// Measure values as comparable integers where larger is better, at table precision.
fn scores(e: &SummaryEntry) -> [i64; 5] {
    [
        round2(e.avg_acc * 100.0),
        round2(e.final_acc * 100.0),
        e.recovery_speed.map_or(i64::MIN, |r| -round2(r)),
        -round2(e.adaptation_rank),
        -round2(e.final_rank),
    ]
}

/// Counts, per measure, the scenarios where each model is best. Ties are all
/// counted; values are compared after rounding to two decimals.
pub fn meta_table(entries: &[SummaryEntry]) -> Result<MetaTable> {
    let scenarios: Vec<String> = entries
        .iter()
        .map(|e| e.scenario.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut models: Vec<String> = Vec::new();
    for e in entries {
        if !models.contains(&e.model) {
            models.push(e.model.clone());
        }
    }
    if entries.is_empty() {
        return Err(Error::Metric("no results to tabulate".into()));
    }
    let mut counts = vec![[0usize; 5]; models.len()];
    for s in &scenarios {
        let mut row = Vec::with_capacity(models.len());
        for m in &models {
            let found: Vec<&SummaryEntry> = entries
                .iter()
                .filter(|e| &e.scenario == s && &e.model == m)
                .collect();
            if found.len() != 1 {
                return Err(Error::Metric(format!(
                    "incomplete grid: {} entries for ({s}, {m})",
                    found.len()
                )));
            }
            row.push(scores(found[0]));
        }
        for k in 0..5 {
            let best = row.iter().map(|r| r[k]).max().unwrap();
            for (mi, r) in row.iter().enumerate() {
                if r[k] == best {
                    counts[mi][k] += 1;
                }
            }
        }
    }
    Ok(MetaTable {
        models,
        scenarios,
        counts,
    })
}
