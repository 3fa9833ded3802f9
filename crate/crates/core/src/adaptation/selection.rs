use super::config::{ErrorTarget, TrainingScheme};
use crate::error::{Error, Result};

/// Per-instance error indicators for one chunk.
///
/// Estimated fields hold the estimator's verdict; for variants whose
/// estimator targets the other network they are all `false`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorRegionLabels {
    pub true_base_error: Vec<bool>,
    pub estimated_base_error: Vec<bool>,
    pub true_patch_error: Vec<bool>,
    pub estimated_patch_error: Vec<bool>,
}

impl ErrorRegionLabels {
    pub fn len(&self) -> usize {
        self.true_base_error.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_base_error.is_empty()
    }
}

/// Indices of the instances a patch trains on.
///
/// Inclusive: everything. Exclusive: the base's true error region.
/// Semi-exclusive with a base estimator: true base errors plus estimated
/// base errors. Semi-exclusive with a patch estimator: true base errors plus
/// instances the estimator expects the patch to get right.
pub fn select_training_set(
    scheme: TrainingScheme,
    labels: &ErrorRegionLabels,
    target: ErrorTarget,
) -> Result<Vec<usize>> {
    let n = labels.len();
    let pick = |f: &dyn Fn(usize) -> bool| (0..n).filter(|&i| f(i)).collect::<Vec<_>>();
    Ok(match (scheme, target) {
        (TrainingScheme::Inclusive, _) => (0..n).collect(),
        (TrainingScheme::Exclusive, _) => pick(&|i| labels.true_base_error[i]),
        (TrainingScheme::SemiExclusive, ErrorTarget::BaseEE) => {
            pick(&|i| labels.true_base_error[i] || labels.estimated_base_error[i])
        }
        (TrainingScheme::SemiExclusive, ErrorTarget::PatchEE) => {
            pick(&|i| labels.true_base_error[i] || !labels.estimated_patch_error[i])
        }
        (TrainingScheme::SemiExclusive, ErrorTarget::None) => {
            return Err(Error::InvalidConfig(
                "semi-exclusive training needs an error estimator".into(),
            ))
        }
    })
}

/// Fraction of instances that base or patch classifies correctly.
pub fn perfect_ensemble_accuracy(base_preds: &[u32], patch_preds: &[u32], labels: &[u32]) -> Result<f32> {
    if base_preds.len() != labels.len() || patch_preds.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "prediction lengths {} / {} do not match {} labels",
            base_preds.len(),
            patch_preds.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("empty prediction set".into()));
    }
    let hits = (0..labels.len())
        .filter(|&i| base_preds[i] == labels[i] || patch_preds[i] == labels[i])
        .count();
    Ok(hits as f32 / labels.len() as f32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchInitChoice {
    Pretrained,
    Reinitialize,
}

/// Keeps pre-trained patch weights iff the base accuracy after drift exceeds `threshold`.
pub fn choose_patch_init(base_acc_after_drift: f32, threshold: f32) -> PatchInitChoice {
    if base_acc_after_drift > threshold {
        PatchInitChoice::Pretrained
    } else {
        PatchInitChoice::Reinitialize
    }
}
