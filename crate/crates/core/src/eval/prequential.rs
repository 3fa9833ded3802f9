use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adaptation::{AdaptiveModel, ChunkContext};
use crate::error::{Error, Result};
use crate::nncore::{Network, TapPoint};
use crate::streams::Stream;

/// Per-chunk accuracies of one model on one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model_id: String,
    pub scenario_id: String,
    pub seed: u64,
    pub per_chunk_accuracy: Vec<f32>,
    /// Fraction classified by the patch; `None` for models without one.
    pub diverted_fraction: Vec<Option<f32>>,
}

/// Models sharing one base network and the union of their taps.
struct BaseGroup {
    base: Arc<Network>,
    taps: Vec<(usize, TapPoint)>,
    members: Vec<usize>,
}

fn group_by_base(models: &[AdaptiveModel]) -> Vec<BaseGroup> {
    let mut groups: Vec<BaseGroup> = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let g = match groups.iter_mut().position(|g| Arc::ptr_eq(&g.base, m.base())) {
            Some(g) => &mut groups[g],
            None => {
                groups.push(BaseGroup {
                    base: m.base().clone(),
                    taps: Vec::new(),
                    members: Vec::new(),
                });
                groups.last_mut().unwrap()
            }
        };
        for t in m.required_taps() {
            if !g.taps.contains(&t) {
                g.taps.push(t);
            }
        }
        g.members.push(i);
    }
    groups
}

/// Test-then-train over every chunk of `stream`.
///
/// Each chunk is classified by every model first; the drift signal follows on
/// change-point chunks, then every model trains on the labelled chunk.
pub fn prequential_run(
    models: &mut [AdaptiveModel],
    stream: &Stream,
    scenario_id: &str,
    seed: u64,
) -> Result<Vec<RunRecord>> {
    if models.is_empty() {
        return Err(Error::InvalidInput("no models to evaluate".into()));
    }
    let mut records: Vec<RunRecord> = models
        .iter()
        .map(|m| RunRecord {
            model_id: m.id().to_string(),
            scenario_id: scenario_id.to_string(),
            seed,
            per_chunk_accuracy: Vec::with_capacity(stream.chunks.len()),
            diverted_fraction: Vec::with_capacity(stream.chunks.len()),
        })
        .collect();
    for m in models.iter_mut() {
        m.pretrain_patch(&stream.init_set)?;
    }
    let groups = group_by_base(models);
    for (c, chunk) in stream.chunks.iter().enumerate() {
        let contexts = groups
            .iter()
            .map(|g| ChunkContext::new(&g.base, chunk, &g.taps))
            .collect::<Result<Vec<_>>>()?;
        for (g, ctx) in groups.iter().zip(&contexts) {
            for &i in &g.members {
                let pred = models[i].predict_ctx(ctx)?;
                let acc = pred.accuracy(&ctx.labels);
                if !(0.0..=1.0).contains(&acc) {
                    return Err(Error::Internal(format!("accuracy {acc} out of range")));
                }
                records[i].per_chunk_accuracy.push(acc);
                records[i].diverted_fraction.push(pred.diverted_fraction());
            }
        }
        if stream.change_points.contains(&c) {
            for m in models.iter_mut() {
                m.signal_drift()?;
            }
        }
        for (g, ctx) in groups.iter().zip(&contexts) {
            for &i in &g.members {
                models[i].train_ctx(ctx, chunk)?;
            }
        }
    }
    Ok(records)
}
