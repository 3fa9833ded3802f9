use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::builders::{build_estimator, build_patch};
use super::config::{
    AdaptationSettings, ErrorTarget, ModelSpec, PatchConfig, PatchInit, TailInit, TrainOrder, VariantId,
    VariantSpec,
};
use super::selection::{choose_patch_init, select_training_set, ErrorRegionLabels, PatchInitChoice};
use crate::error::{Error, Result};
use crate::nncore::{train_epochs, Network, OptimizerState, TapPoint, Tensor};
use crate::seed;
use crate::streams::{to_tensor, LabeledImage};

/// A chunk together with the base network's view of it.
///
/// Built once per chunk and shared by every model on the same base.
#[derive(Debug, Clone)]
pub struct ChunkContext {
    pub inputs: Tensor,
    pub labels: Vec<u32>,
    pub base_pred: Vec<u32>,
    taps: Vec<((usize, TapPoint), Tensor)>,
}

impl ChunkContext {
    /// Runs `base` over `images`, recording the requested taps.
    pub fn new(base: &Network, images: &[LabeledImage], taps: &[(usize, TapPoint)]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidInput("empty chunk".into()));
        }
        let (inputs, labels) = to_tensor(images)?;
        let mut keys: Vec<(usize, TapPoint)> = taps
            .iter()
            .map(|&(l, p)| Ok((base.resolve_tap(l)?, p)))
            .collect::<Result<_>>()?;
        keys.sort_by_key(|&(l, p)| (l, p == TapPoint::PostActivation));
        keys.dedup();
        let (probs, tensors) = base.infer_taps(&inputs, &keys)?;
        Ok(Self {
            inputs,
            labels,
            base_pred: probs.argmax_rows(),
            taps: keys.into_iter().zip(tensors).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Features at an already resolved `(layer, point)`.
    pub fn tap(&self, layer: usize, point: TapPoint) -> Option<&Tensor> {
        self.taps
            .iter()
            .find(|(k, _)| *k == (layer, point))
            .map(|(_, t)| t)
    }

    pub fn base_accuracy(&self) -> f32 {
        hits(&self.base_pred, &self.labels) as f32 / self.len() as f32
    }
}

fn hits(pred: &[u32], labels: &[u32]) -> usize {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count()
}

/// Predictions for one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPrediction {
    pub predictions: Vec<u32>,
    /// Per instance: classified by the patch. `None` for models without a patch.
    pub diverted: Option<Vec<bool>>,
}

impl ChunkPrediction {
    pub fn accuracy(&self, labels: &[u32]) -> f32 {
        hits(&self.predictions, labels) as f32 / labels.len().max(1) as f32
    }

    pub fn diverted_fraction(&self) -> Option<f32> {
        self.diverted
            .as_ref()
            .map(|d| d.iter().filter(|&&b| b).count() as f32 / d.len().max(1) as f32)
    }
}

/// What one training call did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainInfo {
    pub patch_instances: usize,
    pub estimator_instances: usize,
    pub rehearsal_instances: usize,
    pub network_instances: usize,
    pub labels: Option<ErrorRegionLabels>,
    pub init_choice: Option<PatchInitChoice>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    NnPatching {
        variant: VariantSpec,
        patch: PatchConfig,
    },
    Freezing {
        engagement_layer: usize,
        tail_init: TailInit,
    },
    BaseUpdate,
    FrozenBaseline,
}

#[derive(Debug, Clone)]
struct Rehearsal {
    images: Vec<LabeledImage>,
    features: Tensor,
    base_pred: Vec<u32>,
}

/// One adaptation strategy wrapped around a shared, never-mutated base network.
#[derive(Debug, Clone)]
pub struct AdaptiveModel {
    id: String,
    kind: ModelKind,
    base: Arc<Network>,
    patch: Option<Network>,
    estimator: Option<Network>,
    working: Option<Network>,
    patch_opt: Option<OptimizerState>,
    estimator_opt: Option<OptimizerState>,
    working_opt: Option<OptimizerState>,
    rehearsal_candidate: Option<Vec<LabeledImage>>,
    rehearsal: Option<Rehearsal>,
    drift_seen: bool,
    init_decision_pending: bool,
    num_classes: usize,
    settings: AdaptationSettings,
    seed: u64,
    rng: ChaCha8Rng,
}

impl AdaptiveModel {
    fn blank(
        id: String,
        kind: ModelKind,
        base: Arc<Network>,
        settings: AdaptationSettings,
        seed: u64,
    ) -> Self {
        let num_classes = base.num_classes();
        Self {
            id,
            kind,
            base,
            patch: None,
            estimator: None,
            working: None,
            patch_opt: None,
            estimator_opt: None,
            working_opt: None,
            rehearsal_candidate: None,
            rehearsal: None,
            drift_seen: false,
            init_decision_pending: false,
            num_classes,
            settings,
            seed,
            rng: seed::rng(seed::derive_str(seed, "model-train")),
        }
    }

    pub fn nn_patching(
        id: impl Into<String>,
        base: Arc<Network>,
        variant: VariantSpec,
        patch: PatchConfig,
        settings: AdaptationSettings,
        seed: u64,
    ) -> Result<Self> {
        variant.validate()?;
        patch.validate()?;
        base.resolve_tap(patch.engagement_layer)?;
        Ok(Self::blank(
            id.into(),
            ModelKind::NnPatching { variant, patch },
            base,
            settings,
            seed,
        ))
    }

    pub fn freezing(
        id: impl Into<String>,
        base: Arc<Network>,
        engagement_layer: usize,
        tail_init: TailInit,
        settings: AdaptationSettings,
        seed: u64,
    ) -> Result<Self> {
        let l = base.resolve_tap(engagement_layer)?;
        if l + 1 >= base.layers().len() {
            return Err(Error::InvalidLayer(
                "freezing needs at least one trainable layer after the engagement layer".into(),
            ));
        }
        let mut net = (*base).clone();
        net.freeze_prefix(l)?;
        if tail_init == TailInit::Random {
            for i in l + 1..net.layers().len() {
                if net.layers()[i].has_params() {
                    net.reinit_layer(i, seed::derive(seed, i as u64))?;
                }
            }
        }
        let mut model = Self::blank(
            id.into(),
            ModelKind::Freezing {
                engagement_layer: l,
                tail_init,
            },
            base,
            settings,
            seed,
        );
        model.working_opt = Some(OptimizerState::new(model.settings.optimizer));
        model.working = Some(net);
        Ok(model)
    }

    pub fn base_update(
        id: impl Into<String>,
        base: Arc<Network>,
        settings: AdaptationSettings,
        seed: u64,
    ) -> Self {
        let mut model = Self::blank(id.into(), ModelKind::BaseUpdate, base, settings, seed);
        model.working_opt = Some(OptimizerState::new(model.settings.optimizer));
        model.working = Some((*model.base).clone());
        model
    }

    pub fn frozen_baseline(id: impl Into<String>, base: Arc<Network>) -> Self {
        Self::blank(
            id.into(),
            ModelKind::FrozenBaseline,
            base,
            AdaptationSettings::default(),
            0,
        )
    }

    /// Builds the model named by `spec`. Freezing uses the patch engagement layer
    /// and a transferred tail.
    pub fn from_spec(
        spec: ModelSpec,
        base: Arc<Network>,
        patch: &PatchConfig,
        settings: &AdaptationSettings,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let id = spec.to_string();
        let model_seed = seed::derive_str(seed, &id);
        match spec.variant {
            VariantId::Freezing => Self::freezing(
                id,
                base,
                patch.engagement_layer,
                TailInit::Transfer,
                settings.clone(),
                model_seed,
            ),
            VariantId::BaseUpdate => Ok(Self::base_update(id, base, settings.clone(), model_seed)),
            VariantId::Baseline => Ok(Self::frozen_baseline(id, base)),
            _ => Self::nn_patching(
                id,
                base,
                spec.variant_spec().expect("patching variant"),
                patch.clone(),
                settings.clone(),
                model_seed,
            ),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn base(&self) -> &Arc<Network> {
        &self.base
    }

    pub fn patch(&self) -> Option<&Network> {
        self.patch.as_ref()
    }

    pub fn estimator(&self) -> Option<&Network> {
        self.estimator.as_ref()
    }

    /// The network retrained by Freezing / BaseUpdate once drift is signalled.
    pub fn working(&self) -> Option<&Network> {
        self.working.as_ref()
    }

    pub fn drift_seen(&self) -> bool {
        self.drift_seen
    }

    pub fn rehearsal_buffer(&self) -> Option<&[LabeledImage]> {
        self.rehearsal.as_ref().map(|r| r.images.as_slice())
    }

    pub fn uses_rehearsal(&self) -> bool {
        matches!(&self.kind, ModelKind::NnPatching { variant, .. } if variant.rehearsal)
    }

    /// Taps this model reads from the base network.
    pub fn required_taps(&self) -> Vec<(usize, TapPoint)> {
        match &self.kind {
            ModelKind::NnPatching { patch, .. } => vec![(
                self.base
                    .resolve_tap(patch.engagement_layer)
                    .expect("validated layer"),
                patch.tap,
            )],
            _ => Vec::new(),
        }
    }

    fn features<'a>(&self, ctx: &'a ChunkContext) -> Result<&'a Tensor> {
        let (l, p) = self.required_taps()[0];
        ctx.tap(l, p)
            .ok_or_else(|| Error::Internal(format!("chunk context lacks tap ({l}, {p:?})")))
    }

    /// Offers a pre-drift chunk as rehearsal material; the last one offered
    /// before the first drift becomes the buffer.
    pub fn offer_rehearsal_chunk(&mut self, images: &[LabeledImage]) {
        if self.uses_rehearsal() && !self.drift_seen {
            self.rehearsal_candidate = Some(images.to_vec());
        }
    }

    /// Trains the patch on the initial concept so that it can be kept at
    /// drift time when the base still performs well.
    pub fn pretrain_patch(&mut self, images: &[LabeledImage]) -> Result<()> {
        let ModelKind::NnPatching { patch, .. } = &self.kind else {
            return Ok(());
        };
        if patch.init != PatchInit::PretrainedOnOldConcept {
            return Ok(());
        }
        let cfg = patch.clone();
        let ctx = ChunkContext::new(&self.base, images, &self.required_taps())?;
        let mut net = build_patch(&self.base, &cfg, self.num_classes, self.seed)?;
        let mut opt = OptimizerState::new(self.settings.optimizer);
        train_epochs(
            &mut net,
            self.features(&ctx)?,
            &ctx.labels,
            self.settings.pretrain_epochs,
            self.settings.minibatch,
            &mut opt,
            &mut self.rng,
        )?;
        self.patch = Some(net);
        self.patch_opt = Some(opt);
        Ok(())
    }

    /// Drift oracle: the first call initializes the adaptation networks.
    pub fn signal_drift(&mut self) -> Result<()> {
        if self.drift_seen {
            return Ok(());
        }
        self.drift_seen = true;
        match self.kind.clone() {
            ModelKind::NnPatching { variant, patch } => {
                if patch.init == PatchInit::PretrainedOnOldConcept && self.patch.is_some() {
                    self.init_decision_pending = true;
                } else {
                    self.patch = Some(build_patch(&self.base, &patch, self.num_classes, self.seed)?);
                    self.patch_opt = Some(OptimizerState::new(self.settings.optimizer));
                }
                if variant.error_target != ErrorTarget::None {
                    self.estimator = Some(build_estimator(&self.base, &patch, self.seed)?);
                    self.estimator_opt = Some(OptimizerState::new(self.settings.optimizer));
                }
                if variant.rehearsal {
                    if let Some(images) = self.rehearsal_candidate.take() {
                        let ctx = ChunkContext::new(&self.base, &images, &self.required_taps())?;
                        let features = self.features(&ctx)?.clone();
                        self.rehearsal = Some(Rehearsal {
                            images,
                            features,
                            base_pred: ctx.base_pred,
                        });
                    }
                }
            }
            ModelKind::Freezing { .. } | ModelKind::BaseUpdate | ModelKind::FrozenBaseline => {}
        }
        Ok(())
    }

    /// Estimator verdicts "error" (probability of class 1 above the threshold).
    fn estimator_says_error(&self, features: &Tensor) -> Result<Option<Vec<bool>>> {
        let Some(e) = &self.estimator else {
            return Ok(None);
        };
        let probs = e.infer(features)?;
        let t = self.settings.estimator_threshold;
        Ok(Some((0..probs.rows()).map(|i| probs.row(i)[1] > t).collect()))
    }

    /// Classifies a chunk. Only inputs and base outputs of `ctx` are read.
    pub fn predict_ctx(&self, ctx: &ChunkContext) -> Result<ChunkPrediction> {
        match &self.kind {
            ModelKind::FrozenBaseline => Ok(ChunkPrediction {
                predictions: ctx.base_pred.clone(),
                diverted: None,
            }),
            ModelKind::Freezing { .. } | ModelKind::BaseUpdate => {
                let predictions = match &self.working {
                    Some(net) if self.drift_seen => net.predict(&ctx.inputs)?,
                    _ => ctx.base_pred.clone(),
                };
                Ok(ChunkPrediction {
                    predictions,
                    diverted: None,
                })
            }
            ModelKind::NnPatching { variant, .. } => {
                let n = ctx.len();
                let patch = match &self.patch {
                    Some(p) if self.drift_seen => p,
                    _ => {
                        return Ok(ChunkPrediction {
                            predictions: ctx.base_pred.clone(),
                            diverted: Some(vec![false; n]),
                        })
                    }
                };
                let feats = self.features(ctx)?;
                let patch_pred = patch.predict(feats)?;
                let divert = match (variant.error_target, self.estimator_says_error(feats)?) {
                    (ErrorTarget::None, _) => vec![true; n],
                    (ErrorTarget::BaseEE, Some(err)) => err,
                    (ErrorTarget::PatchEE, Some(err)) => err.into_iter().map(|e| !e).collect(),
                    (_, None) => return Err(Error::Internal("estimator missing after drift".into())),
                };
                let predictions = (0..n)
                    .map(|i| {
                        if divert[i] {
                            patch_pred[i]
                        } else {
                            ctx.base_pred[i]
                        }
                    })
                    .collect();
                Ok(ChunkPrediction {
                    predictions,
                    diverted: Some(divert),
                })
            }
        }
    }

    /// Convenience wrapper building the chunk context from `images`.
    pub fn predict(&self, images: &[LabeledImage]) -> Result<ChunkPrediction> {
        self.predict_ctx(&ChunkContext::new(&self.base, images, &self.required_taps())?)
    }

    /// Updates the model with a labelled chunk (after it was evaluated).
    pub fn train_ctx(&mut self, ctx: &ChunkContext, images: &[LabeledImage]) -> Result<TrainInfo> {
        if !self.drift_seen {
            self.offer_rehearsal_chunk(images);
            return Ok(TrainInfo::default());
        }
        match self.kind.clone() {
            ModelKind::FrozenBaseline => Ok(TrainInfo::default()),
            ModelKind::Freezing { .. } | ModelKind::BaseUpdate => {
                let net = self.working.as_mut().expect("initialized at drift");
                let opt = self.working_opt.as_mut().expect("initialized at drift");
                train_epochs(
                    net,
                    &ctx.inputs,
                    &ctx.labels,
                    self.settings.epochs_per_chunk,
                    self.settings.minibatch,
                    opt,
                    &mut self.rng,
                )?;
                Ok(TrainInfo {
                    network_instances: ctx.len(),
                    ..TrainInfo::default()
                })
            }
            ModelKind::NnPatching { variant, patch } => self.train_patching(ctx, variant, &patch),
        }
    }

    /// Convenience wrapper building the chunk context from `images`.
    pub fn train_on_chunk(&mut self, images: &[LabeledImage]) -> Result<TrainInfo> {
        let ctx = ChunkContext::new(&self.base, images, &self.required_taps())?;
        self.train_ctx(&ctx, images)
    }

    fn train_patching(
        &mut self,
        ctx: &ChunkContext,
        variant: VariantSpec,
        cfg: &PatchConfig,
    ) -> Result<TrainInfo> {
        let mut info = TrainInfo::default();
        let feats = self.features(ctx)?.clone();
        if self.init_decision_pending {
            self.init_decision_pending = false;
            let choice = choose_patch_init(ctx.base_accuracy(), 0.5);
            if choice == PatchInitChoice::Reinitialize {
                self.patch = Some(build_patch(&self.base, cfg, self.num_classes, self.seed)?);
                self.patch_opt = Some(OptimizerState::new(self.settings.optimizer));
            }
            info.init_choice = Some(choice);
        }
        let n = ctx.len();
        let patch_pred = self.patch.as_ref().expect("patch initialized").predict(&feats)?;
        let true_base_error: Vec<bool> = (0..n).map(|i| ctx.base_pred[i] != ctx.labels[i]).collect();
        let true_patch_error: Vec<bool> = (0..n).map(|i| patch_pred[i] != ctx.labels[i]).collect();
        let estimated = self
            .estimator_says_error(&feats)?
            .unwrap_or_else(|| vec![false; n]);
        let labels = match variant.error_target {
            ErrorTarget::PatchEE => ErrorRegionLabels {
                true_base_error,
                estimated_base_error: vec![false; n],
                true_patch_error,
                estimated_patch_error: estimated,
            },
            _ => ErrorRegionLabels {
                true_base_error,
                estimated_base_error: estimated,
                true_patch_error,
                estimated_patch_error: vec![false; n],
            },
        };
        let selected = select_training_set(variant.scheme, &labels, variant.error_target)?;
        let estimator_first = self.settings.train_order == TrainOrder::EstimatorFirst;
        if estimator_first {
            self.train_estimator(&feats, &labels, variant.error_target, &mut info)?;
        }
        if !selected.is_empty() {
            let x = feats.select_rows(&selected);
            let y: Vec<u32> = selected.iter().map(|&i| ctx.labels[i]).collect();
            train_epochs(
                self.patch.as_mut().expect("patch initialized"),
                &x,
                &y,
                self.settings.epochs_per_chunk,
                self.settings.minibatch,
                self.patch_opt.as_mut().expect("patch optimizer"),
                &mut self.rng,
            )?;
        }
        info.patch_instances = selected.len();
        if !estimator_first {
            self.train_estimator(&feats, &labels, variant.error_target, &mut info)?;
        }
        info.labels = Some(labels);
        Ok(info)
    }

    fn train_estimator(
        &mut self,
        feats: &Tensor,
        labels: &ErrorRegionLabels,
        target: ErrorTarget,
        info: &mut TrainInfo,
    ) -> Result<()> {
        let targets = match target {
            ErrorTarget::None => return Ok(()),
            ErrorTarget::BaseEE => &labels.true_base_error,
            ErrorTarget::PatchEE => &labels.true_patch_error,
        };
        let mut x = feats.clone();
        let mut y: Vec<u32> = targets.iter().map(|&e| e as u32).collect();
        if let Some(reh) = &self.rehearsal {
            let n = y.len();
            let mut order: Vec<usize> = (0..reh.images.len()).collect();
            order.shuffle(&mut self.rng);
            let picked: Vec<usize> = (0..n).map(|j| order[j % order.len()]).collect();
            let bx = reh.features.select_rows(&picked);
            let by: Vec<u32> = match target {
                ErrorTarget::BaseEE => picked
                    .iter()
                    .map(|&i| (reh.base_pred[i] != reh.images[i].label) as u32)
                    .collect(),
                _ => {
                    let pp = self.patch.as_ref().expect("patch").predict(&bx)?;
                    picked
                        .iter()
                        .zip(pp)
                        .map(|(&i, p)| (p != reh.images[i].label) as u32)
                        .collect()
                }
            };
            let mut data = x.into_data();
            data.extend_from_slice(bx.data());
            x = Tensor::new(vec![2 * n, feats.row_len()], data)?;
            y.extend(by);
            info.rehearsal_instances = n;
        }
        train_epochs(
            self.estimator.as_mut().expect("estimator initialized"),
            &x,
            &y,
            self.settings.epochs_per_chunk,
            self.settings.minibatch,
            self.estimator_opt.as_mut().expect("estimator optimizer"),
            &mut self.rng,
        )?;
        info.estimator_instances = y.len();
        Ok(())
    }
}

/// Freezing baseline built directly from a base network.
pub fn build_freezing(
    base: Arc<Network>,
    engagement_layer: usize,
    tail_init: TailInit,
    settings: AdaptationSettings,
    seed: u64,
) -> Result<AdaptiveModel> {
    AdaptiveModel::freezing("freezing", base, engagement_layer, tail_init, settings, seed)
}
