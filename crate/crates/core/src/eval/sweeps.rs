use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::measures::{
    average_accuracy, final_accuracy, rank_values, recovery_reference, recovery_speed, RecoveryMode,
};
use super::prequential::prequential_run;
use crate::adaptation::{
    build_patch, format_arch, parse_arch, perfect_ensemble_accuracy, select_training_set, AdaptationSettings,
    AdaptiveModel, ChunkContext, ErrorRegionLabels, ErrorTarget, PatchConfig, TrainingScheme, VariantSpec,
};
use crate::error::{Error, Result};
use crate::nncore::{train_epochs, Network, OptimizerState, TapPoint};
use crate::seed;
use crate::streams::Stream;

/// Result of one engagement-layer configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementRow {
    pub layer: usize,
    pub layer_name: String,
    pub tap: TapPoint,
    pub avg_acc: f32,
    pub final_acc: f32,
    pub per_chunk_accuracy: Vec<f32>,
}

/// Layers a patch may tap: everything except flatten and dropout layers.
pub fn eligible_layers(base: &Network) -> Vec<usize> {
    (0..base.layers().len())
        .filter(|&i| !base.layers()[i].is_passthrough())
        .collect()
}

fn first_cp(stream: &Stream) -> Result<usize> {
    stream
        .first_change_point()
        .ok_or_else(|| Error::Metric("stream has no change point".into()))
}

fn inclusive_no_estimator() -> VariantSpec {
    VariantSpec {
        scheme: TrainingScheme::Inclusive,
        error_target: ErrorTarget::None,
        rehearsal: false,
    }
}

/// Runs an inclusive patch without estimator on every eligible layer and tap point.
pub fn engagement_sweep(
    base: Arc<Network>,
    stream: &Stream,
    template: &PatchConfig,
    taps: &[TapPoint],
    settings: &AdaptationSettings,
    seed: u64,
) -> Result<Vec<EngagementRow>> {
    if taps.is_empty() {
        return Err(Error::InvalidConfig("no tap points to sweep".into()));
    }
    let cp = first_cp(stream)?;
    let names = base.layer_names();
    let mut configs = Vec::new();
    let mut models = Vec::new();
    for layer in eligible_layers(&base) {
        for &tap in taps {
            let cfg = PatchConfig {
                engagement_layer: layer,
                tap,
                ..template.clone()
            };
            let id = format!("incl_noEE@{}:{}", names[layer], tap.as_str());
            models.push(AdaptiveModel::nn_patching(
                id,
                base.clone(),
                inclusive_no_estimator(),
                cfg,
                settings.clone(),
                seed,
            )?);
            configs.push((layer, tap));
        }
    }
    let records = prequential_run(&mut models, stream, "engagement_sweep", seed)?;
    configs
        .into_iter()
        .zip(records)
        .map(|((layer, tap), rec)| {
            Ok(EngagementRow {
                layer,
                layer_name: names[layer].clone(),
                tap,
                avg_acc: average_accuracy(&rec.per_chunk_accuracy, cp)?,
                final_acc: final_accuracy(&rec.per_chunk_accuracy)?,
                per_chunk_accuracy: rec.per_chunk_accuracy,
            })
        })
        .collect()
}

/// Seed-averaged measures of one (architecture, layer) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchRow {
    pub arch: String,
    pub layer: usize,
    pub layer_name: String,
    pub avg_acc: f32,
    pub final_acc: f32,
    /// Mean over seeds; `None` if any seed never recovered.
    pub recovery_speed: Option<f32>,
}

/// Average rank of one architecture over all layers and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchRank {
    pub arch: String,
    pub avg_acc_rank: f32,
    pub final_acc_rank: f32,
    pub recovery_rank: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSweep {
    pub rows: Vec<ArchRow>,
    pub ranks: Vec<ArchRank>,
}

/// Patch architecture strings evaluated in the architecture sweep.
pub const ARCH_LIST: [&str; 25] = [
    "128",
    "256",
    "512",
    "1024",
    "1536",
    "2048",
    "256x128",
    "512x128",
    "512x256",
    "1024x256",
    "1024x512",
    "1536x256",
    "1536x512",
    "2048x256",
    "2048x512",
    "512x256x128",
    "1024x256x128",
    "1024x512x128",
    "1024x512x256",
    "1536x256x128",
    "1536x512x128",
    "1536x512x256",
    "2048x256x128",
    "2048x512x128",
    "2048x512x256",
];

/// Recovery speeds compared by descending `-k`, with "never" ranked last.
fn recovery_score(r: Option<usize>) -> f32 {
    r.map_or(f32::NEG_INFINITY, |k| -(k as f32))
}

/// Evaluates every architecture on every layer for every seed.
#[allow(clippy::too_many_arguments)]
pub fn arch_sweep(
    base: Arc<Network>,
    stream: &Stream,
    layers: &[usize],
    archs: &[String],
    template: &PatchConfig,
    settings: &AdaptationSettings,
    mode: RecoveryMode,
    seeds: &[u64],
) -> Result<ArchSweep> {
    if archs.is_empty() || layers.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "architecture sweep needs architectures, layers and seeds".into(),
        ));
    }
    let hidden = archs.iter().map(|a| parse_arch(a)).collect::<Result<Vec<_>>>()?;
    let cp = first_cp(stream)?;
    let names = base.layer_names();
    let n = archs.len();
    // [layer][arch][seed] -> (avg, final, recovery)
    let mut results = vec![vec![Vec::with_capacity(seeds.len()); n]; layers.len()];
    let mut rank_sums = vec![[0.0f64; 3]; n];
    for (li, &layer) in layers.iter().enumerate() {
        for &s in seeds {
            let mut models = hidden
                .iter()
                .map(|h| {
                    let cfg = PatchConfig {
                        engagement_layer: layer,
                        hidden: h.clone(),
                        ..template.clone()
                    };
                    AdaptiveModel::nn_patching(
                        format!("incl_noEE@{}:{}", names[layer], format_arch(h)),
                        base.clone(),
                        inclusive_no_estimator(),
                        cfg,
                        settings.clone(),
                        s,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let records = prequential_run(&mut models, stream, "arch_sweep", s)?;
            let mut measures = Vec::with_capacity(n);
            for rec in &records {
                let t = &rec.per_chunk_accuracy;
                measures.push((
                    average_accuracy(t, cp)?,
                    final_accuracy(t)?,
                    recovery_speed(t, cp, recovery_reference(t, cp, mode)?)?,
                ));
            }
            let by_avg = rank_values(&measures.iter().map(|m| m.0).collect::<Vec<_>>());
            let by_final = rank_values(&measures.iter().map(|m| m.1).collect::<Vec<_>>());
            let by_rec = rank_values(&measures.iter().map(|m| recovery_score(m.2)).collect::<Vec<_>>());
            for a in 0..n {
                rank_sums[a][0] += by_avg[a] as f64;
                rank_sums[a][1] += by_final[a] as f64;
                rank_sums[a][2] += by_rec[a] as f64;
                results[li][a].push(measures[a]);
            }
        }
    }
    let configs = (layers.len() * seeds.len()) as f64;
    let mean = |v: &[f32]| (v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64) as f32;
    let mut rows = Vec::new();
    for (li, &layer) in layers.iter().enumerate() {
        for a in 0..n {
            let per_seed = &results[li][a];
            let rec: Option<Vec<f32>> = per_seed.iter().map(|m| m.2.map(|k| k as f32)).collect();
            rows.push(ArchRow {
                arch: format_arch(&hidden[a]),
                layer,
                layer_name: names[layer].clone(),
                avg_acc: mean(&per_seed.iter().map(|m| m.0).collect::<Vec<_>>()),
                final_acc: mean(&per_seed.iter().map(|m| m.1).collect::<Vec<_>>()),
                recovery_speed: rec.map(|r| mean(&r)),
            });
        }
    }
    let ranks = (0..n)
        .map(|a| ArchRank {
            arch: format_arch(&hidden[a]),
            avg_acc_rank: (rank_sums[a][0] / configs) as f32,
            final_acc_rank: (rank_sums[a][1] / configs) as f32,
            recovery_rank: (rank_sums[a][2] / configs) as f32,
        })
        .collect();
    Ok(ArchSweep { rows, ranks })
}

/// Per-chunk base, patch and perfect-ensemble accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub chunk: usize,
    pub base_acc: f32,
    /// `None` until the patch exists.
    pub patch_acc: Option<f32>,
    pub bound: f32,
}

/// Trains a patch with the given scheme and reports the perfect-ensemble
/// bound of base and patch on every chunk.
pub fn bound_experiment(
    base: Arc<Network>,
    stream: &Stream,
    scheme: TrainingScheme,
    cfg: &PatchConfig,
    settings: &AdaptationSettings,
    seed: u64,
) -> Result<Vec<BoundRow>> {
    if scheme == TrainingScheme::SemiExclusive {
        return Err(Error::InvalidConfig(
            "the bound experiment compares inclusive and exclusive training".into(),
        ));
    }
    let cp = first_cp(stream)?;
    let l = base.resolve_tap(cfg.engagement_layer)?;
    let taps = [(l, cfg.tap)];
    let mut rng = seed::rng(seed::derive_str(seed, "bound-train"));
    let mut patch: Option<(Network, OptimizerState)> = None;
    let mut rows = Vec::with_capacity(stream.chunks.len());
    for (c, chunk) in stream.chunks.iter().enumerate() {
        let ctx = ChunkContext::new(&base, chunk, &taps)?;
        let feats = ctx.tap(l, cfg.tap).expect("requested tap");
        let base_acc = ctx.base_accuracy();
        let patch_pred = match &patch {
            Some((p, _)) => Some(p.predict(feats)?),
            None => None,
        };
        let (patch_acc, bound) = match &patch_pred {
            Some(pp) => {
                let acc =
                    pp.iter().zip(&ctx.labels).filter(|(p, l)| p == l).count() as f32 / ctx.len() as f32;
                (
                    Some(acc),
                    perfect_ensemble_accuracy(&ctx.base_pred, pp, &ctx.labels)?,
                )
            }
            None => (None, base_acc),
        };
        rows.push(BoundRow {
            chunk: c,
            base_acc,
            patch_acc,
            bound,
        });
        if c == cp && patch.is_none() {
            patch = Some((
                build_patch(&base, cfg, base.num_classes(), seed)?,
                OptimizerState::new(settings.optimizer),
            ));
        }
        if let Some((p, opt)) = patch.as_mut() {
            let n = ctx.len();
            let labels = ErrorRegionLabels {
                true_base_error: (0..n).map(|i| ctx.base_pred[i] != ctx.labels[i]).collect(),
                estimated_base_error: vec![false; n],
                true_patch_error: vec![false; n],
                estimated_patch_error: vec![false; n],
            };
            let selected = select_training_set(scheme, &labels, ErrorTarget::BaseEE)?;
            if !selected.is_empty() {
                let y: Vec<u32> = selected.iter().map(|&i| ctx.labels[i]).collect();
                train_epochs(
                    p,
                    &feats.select_rows(&selected),
                    &y,
                    settings.epochs_per_chunk,
                    settings.minibatch,
                    opt,
                    &mut rng,
                )?;
            }
        }
    }
    Ok(rows)
}

/// Mean bound from the first change point chunk onward.
pub fn average_bound(rows: &[BoundRow], first_cp: usize) -> Result<f32> {
    average_accuracy(&rows.iter().map(|r| r.bound).collect::<Vec<_>>(), first_cp)
}
