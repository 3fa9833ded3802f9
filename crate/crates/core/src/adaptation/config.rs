use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{OptimizerKind, TapPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseArch {
    Fcnn,
    Cnn,
}

impl FromStr for BaseArch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "fcnn" => Ok(BaseArch::Fcnn),
            "cnn" => Ok(BaseArch::Cnn),
            _ => Err(Error::InvalidConfig(format!("unknown base architecture {s:?}"))),
        }
    }
}

impl fmt::Display for BaseArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseArch::Fcnn => "fcnn",
            BaseArch::Cnn => "cnn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchInit {
    RandomGlorot,
    PretrainedOnOldConcept,
}

/// Where the patch taps the base network and what it looks like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub engagement_layer: usize,
    pub tap: TapPoint,
    pub hidden: Vec<usize>,
    pub dropout_in: f32,
    pub dropout_hidden: f32,
    pub init: PatchInit,
}

impl PatchConfig {
    /// Hidden [512], dropout 0.25 / 0.5, post-activation tap, random init.
    pub fn new(engagement_layer: usize) -> Self {
        Self {
            engagement_layer,
            tap: TapPoint::PostActivation,
            hidden: vec![512],
            dropout_in: 0.25,
            dropout_hidden: 0.5,
            init: PatchInit::RandomGlorot,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        for d in [self.dropout_in, self.dropout_hidden] {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::InvalidConfig(format!("dropout {d} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Parses `"AxBxC"` patch architecture notation into hidden widths.
pub fn parse_arch(s: &str) -> Result<Vec<usize>> {
    let widths: Option<Vec<usize>> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>().ok().filter(|&w| w > 0))
        .collect();
    match widths {
        Some(w) if !w.is_empty() => Ok(w),
        _ => Err(Error::InvalidConfig(format!(
            "malformed patch architecture {s:?}"
        ))),
    }
}

/// Formats hidden widths back into `"AxBxC"` notation.
pub fn format_arch(hidden: &[usize]) -> String {
    hidden.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainingScheme {
    Inclusive,
    SemiExclusive,
    Exclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorTarget {
    None,
    BaseEE,
    PatchEE,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub scheme: TrainingScheme,
    pub error_target: ErrorTarget,
    pub rehearsal: bool,
}

impl VariantSpec {
    pub fn validate(&self) -> Result<()> {
        if self.error_target == ErrorTarget::None {
            if self.scheme != TrainingScheme::Inclusive {
                return Err(Error::InvalidConfig(
                    "semi-exclusive and exclusive training need an error estimator".into(),
                ));
            }
            if self.rehearsal {
                return Err(Error::InvalidConfig(
                    "rehearsal applies to the error estimator; this variant has none".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The ten model identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantId {
    InclNoEE,
    InclBaseEE,
    SemiBaseEE,
    ExclBaseEE,
    InclPatchEE,
    SemiPatchEE,
    ExclPatchEE,
    Freezing,
    BaseUpdate,
    Baseline,
}

impl VariantId {
    pub const ALL: [VariantId; 10] = [
        VariantId::InclNoEE,
        VariantId::InclBaseEE,
        VariantId::SemiBaseEE,
        VariantId::ExclBaseEE,
        VariantId::InclPatchEE,
        VariantId::SemiPatchEE,
        VariantId::ExclPatchEE,
        VariantId::Freezing,
        VariantId::BaseUpdate,
        VariantId::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantId::InclNoEE => "incl_noEE",
            VariantId::InclBaseEE => "incl_baseEE",
            VariantId::SemiBaseEE => "semi_baseEE",
            VariantId::ExclBaseEE => "excl_baseEE",
            VariantId::InclPatchEE => "incl_patchEE",
            VariantId::SemiPatchEE => "semi_patchEE",
            VariantId::ExclPatchEE => "excl_patchEE",
            VariantId::Freezing => "freezing",
            VariantId::BaseUpdate => "base_update",
            VariantId::Baseline => "baseline",
        }
    }

    /// Scheme and estimator target of the patching variants.
    pub fn patching(self) -> Option<(TrainingScheme, ErrorTarget)> {
        use ErrorTarget::*;
        use TrainingScheme::*;
        Some(match self {
            VariantId::InclNoEE => (Inclusive, None),
            VariantId::InclBaseEE => (Inclusive, BaseEE),
            VariantId::SemiBaseEE => (SemiExclusive, BaseEE),
            VariantId::ExclBaseEE => (Exclusive, BaseEE),
            VariantId::InclPatchEE => (Inclusive, PatchEE),
            VariantId::SemiPatchEE => (SemiExclusive, PatchEE),
            VariantId::ExclPatchEE => (Exclusive, PatchEE),
            _ => return Option::None,
        })
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        VariantId::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model identifier {s:?}")))
    }
}

/// A configured model: an identifier plus the rehearsal flag, written
/// `incl_baseEE` or `incl_baseEE+rehearsal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelSpec {
    pub variant: VariantId,
    pub rehearsal: bool,
}

impl ModelSpec {
    pub fn new(variant: VariantId) -> Self {
        Self {
            variant,
            rehearsal: false,
        }
    }

    pub fn with_rehearsal(variant: VariantId) -> Self {
        Self {
            variant,
            rehearsal: true,
        }
    }

    pub fn variant_spec(&self) -> Option<VariantSpec> {
        self.variant.patching().map(|(scheme, error_target)| VariantSpec {
            scheme,
            error_target,
            rehearsal: self.rehearsal,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self.variant_spec() {
            Some(v) => v.validate(),
            None if self.rehearsal => Err(Error::InvalidConfig(format!(
                "rehearsal is not available for {}",
                self.variant
            ))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.variant)?;
        if self.rehearsal {
            f.write_str("+rehearsal")?;
        }
        Ok(())
    }
}

impl FromStr for ModelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (id, rehearsal) = match s.strip_suffix("+rehearsal") {
            Some(id) => (id, true),
            None => (s, false),
        };
        let spec = ModelSpec {
            variant: id.parse()?,
            rehearsal,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for ModelSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailInit {
    Transfer,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainOrder {
    EstimatorFirst,
    PatchFirst,
}

/// Per-chunk training regime shared by all adaptive models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationSettings {
    pub epochs_per_chunk: usize,
    pub minibatch: usize,
    pub optimizer: OptimizerKind,
    /// Diversion threshold on the estimator's "error" probability.
    pub estimator_threshold: f32,
    pub train_order: TrainOrder,
    /// Epochs used when pre-training a patch on the initial concept.
    pub pretrain_epochs: usize,
}

impl Default for AdaptationSettings {
    fn default() -> Self {
        Self {
            epochs_per_chunk: 1,
            minibatch: 64,
            optimizer: OptimizerKind::default(),
            estimator_threshold: 0.5,
            train_order: TrainOrder::EstimatorFirst,
            pretrain_epochs: 3,
        }
    }
}
