use std::path::{Path, PathBuf};

use driftpatch::adaptation::{
    default_engagement_layer, format_arch, parse_arch, AdaptationSettings, BaseArch, ModelSpec, PatchInit,
    TrainOrder,
};
use driftpatch::eval::RecoveryMode;
use driftpatch::nncore::{OptimizerKind, TapPoint};
use driftpatch::streams::{ScenarioKind, ScenarioSpec};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

pub const DATA_ENV: &str = "DRIFTPATCH_DATA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_data_root")]
    pub root: PathBuf,
}

fn default_data_root() -> PathBuf {
    PathBuf::from("data/mnist")
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: default_data_root(),
        }
    }
}

/// A scenario given by preset name, by explicit fields, or by a preset with overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ScenarioKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunks: Option<usize>,
}

impl ScenarioConfig {
    /// Scenario identifier used in file names and reports.
    pub fn id(&self) -> String {
        self.id
            .clone()
            .or_else(|| self.preset.clone())
            .unwrap_or_else(|| format!("custom_{}", self.kind.as_ref().map_or("none", |k| k.name())))
    }

    /// Resolves the scenario for a given stream seed.
    pub fn spec(&self, seed: u64) -> Result<ScenarioSpec, Failure> {
        let base = match &self.preset {
            Some(p) => Some(
                ScenarioSpec::preset(p, seed)
                    .ok_or_else(|| Failure::config(format!("unknown scenario preset {p:?}")))?,
            ),
            None => None,
        };
        let missing = |f: &str| Failure::config(format!("scenario {:?} lacks {f}", self.id()));
        let spec = ScenarioSpec {
            kind: match (&self.kind, &base) {
                (Some(k), _) => k.clone(),
                (None, Some(b)) => b.kind.clone(),
                (None, None) => return Err(missing("a preset or kind")),
            },
            init_count: self
                .init_count
                .or(base.as_ref().map(|b| b.init_count))
                .ok_or_else(|| missing("init_count"))?,
            total: self
                .total
                .or(base.as_ref().map(|b| b.total))
                .ok_or_else(|| missing("total"))?,
            chunks: self
                .chunks
                .or(base.as_ref().map(|b| b.chunks))
                .ok_or_else(|| missing("chunks"))?,
            seed,
        };
        spec.validate().map_err(Failure::from_core)?;
        Ok(spec)
    }

    /// Explicit form with every field filled in.
    fn materialize(&self) -> Result<Self, Failure> {
        let spec = self.spec(0)?;
        Ok(Self {
            id: Some(self.id()),
            preset: None,
            kind: Some(spec.kind),
            init_count: Some(spec.init_count),
            total: Some(spec.total),
            chunks: Some(spec.chunks),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseSource {
    /// Train on the scenario's init set.
    Scenario,
    /// Train on the dataset's training split.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseConfig {
    #[serde(default = "default_arch")]
    pub arch: String,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_minibatch")]
    pub minibatch: usize,
    #[serde(default = "default_source")]
    pub source: BaseSource,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    #[serde(default = "default_stagnation_window")]
    pub stagnation_window: usize,
    #[serde(default = "default_stagnation_tol")]
    pub stagnation_tol: f32,
}

fn default_arch() -> String {
    "fcnn".into()
}
fn default_epochs() -> usize {
    10
}
fn default_minibatch() -> usize {
    64
}
fn default_source() -> BaseSource {
    BaseSource::Scenario
}
fn default_max_attempts() -> usize {
    3
}
fn default_stagnation_window() -> usize {
    3
}
fn default_stagnation_tol() -> f32 {
    1e-4
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            arch: default_arch(),
            epochs: default_epochs(),
            minibatch: default_minibatch(),
            source: default_source(),
            max_attempts: default_max_attempts(),
            stagnation_window: default_stagnation_window(),
            stagnation_tol: default_stagnation_tol(),
        }
    }
}

impl BaseConfig {
    pub fn arch(&self) -> Result<BaseArch, Failure> {
        self.arch.parse().map_err(Failure::from_core)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSection {
    /// Layer name; defaults to the architecture's heuristic layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engagement_layer: Option<String>,
    #[serde(default = "default_tap")]
    pub tap: TapPoint,
    #[serde(default = "default_hidden")]
    pub hidden: String,
    #[serde(default = "default_dropout_in")]
    pub dropout_in: f32,
    #[serde(default = "default_dropout_hidden")]
    pub dropout_hidden: f32,
    #[serde(default = "default_init")]
    pub init: PatchInit,
}

fn default_tap() -> TapPoint {
    TapPoint::PostActivation
}
fn default_hidden() -> String {
    "512".into()
}
fn default_dropout_in() -> f32 {
    0.25
}
fn default_dropout_hidden() -> f32 {
    0.5
}
fn default_init() -> PatchInit {
    PatchInit::RandomGlorot
}

impl Default for PatchSection {
    fn default() -> Self {
        Self {
            engagement_layer: None,
            tap: default_tap(),
            hidden: default_hidden(),
            dropout_in: default_dropout_in(),
            dropout_hidden: default_dropout_hidden(),
            init: default_init(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationSection {
    #[serde(default = "one")]
    pub epochs_per_chunk: usize,
    #[serde(default = "default_minibatch")]
    pub minibatch: usize,
    #[serde(default = "half")]
    pub estimator_threshold: f32,
    #[serde(default = "default_order")]
    pub train_order: TrainOrder,
    #[serde(default = "three")]
    pub pretrain_epochs: usize,
}

fn one() -> usize {
    1
}
fn three() -> usize {
    3
}
fn half() -> f32 {
    0.5
}
fn default_order() -> TrainOrder {
    TrainOrder::EstimatorFirst
}

impl Default for AdaptationSection {
    fn default() -> Self {
        Self {
            epochs_per_chunk: 1,
            minibatch: default_minibatch(),
            estimator_threshold: 0.5,
            train_order: default_order(),
            pretrain_epochs: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Architectures for `sweep arch`; defaults to the 25-entry list.
    #[serde(default = "default_archs")]
    pub archs: Vec<String>,
    /// Layers for `sweep arch`; defaults to both heuristic candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<String>>,
    #[serde(default = "default_taps")]
    pub taps: Vec<TapPoint>,
}

fn default_archs() -> Vec<String> {
    driftpatch::eval::ARCH_LIST
        .iter()
        .map(|s| s.to_string())
        .collect()
}
fn default_taps() -> Vec<TapPoint> {
    vec![TapPoint::PreActivation, TapPoint::PostActivation]
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            archs: default_archs(),
            layers: None,
            taps: default_taps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub models: Vec<ModelSpec>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub recovery_mode: RecoveryMode,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(rename = "scenario")]
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default)]
    pub base: BaseConfig,
    #[serde(default)]
    pub patch: PatchSection,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub adaptation: AdaptationSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let cfg: Self = toml::from_str(text).map_err(|e| Failure::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.scenarios.is_empty() {
            return Err(Failure::config("at least one [[scenario]] is required"));
        }
        if self.models.is_empty() {
            return Err(Failure::config("at least one model is required"));
        }
        if self.seeds.is_empty() {
            return Err(Failure::config("at least one seed is required"));
        }
        let mut ids: Vec<String> = self.scenarios.iter().map(ScenarioConfig::id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.scenarios.len() {
            return Err(Failure::config("scenario identifiers must be unique"));
        }
        for s in &self.scenarios {
            s.spec(0)?;
        }
        self.base.arch()?;
        if self.base.epochs == 0 || self.base.minibatch == 0 || self.adaptation.minibatch == 0 {
            return Err(Failure::config("epochs and minibatch sizes must be positive"));
        }
        if self.base.stagnation_window < 2 {
            return Err(Failure::config("stagnation_window must be at least 2"));
        }
        parse_arch(&self.patch.hidden).map_err(Failure::from_core)?;
        for a in &self.sweep.archs {
            parse_arch(a).map_err(Failure::from_core)?;
        }
        if self.sweep.taps.is_empty() {
            return Err(Failure::config("sweep.taps must not be empty"));
        }
        Ok(())
    }

    /// The configuration with every default written out.
    pub fn effective(&self) -> Result<Self, Failure> {
        let mut e = self.clone();
        e.scenarios = self
            .scenarios
            .iter()
            .map(ScenarioConfig::materialize)
            .collect::<Result<_, _>>()?;
        let heuristics = default_engagement_layer(self.base.arch()?);
        if e.patch.engagement_layer.is_none() {
            e.patch.engagement_layer = Some(heuristics.default.to_string());
        }
        e.patch.hidden = format_arch(&parse_arch(&self.patch.hidden).map_err(Failure::from_core)?);
        if e.sweep.layers.is_none() {
            e.sweep.layers = Some(heuristics.names.iter().map(|s| s.to_string()).collect());
        }
        Ok(e)
    }

    pub fn to_toml(&self) -> Result<String, Failure> {
        toml::to_string_pretty(self).map_err(|e| Failure::runtime(format!("cannot serialize config: {e}")))
    }

    pub fn settings(&self) -> AdaptationSettings {
        AdaptationSettings {
            epochs_per_chunk: self.adaptation.epochs_per_chunk,
            minibatch: self.adaptation.minibatch,
            optimizer: self.optimizer,
            estimator_threshold: self.adaptation.estimator_threshold,
            train_order: self.adaptation.train_order,
            pretrain_epochs: self.adaptation.pretrain_epochs,
        }
    }

    /// Dataset root: `DRIFTPATCH_DATA` if set, else the configured path.
    pub fn data_root(&self) -> PathBuf {
        std::env::var_os(DATA_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.data.root.clone())
    }

    /// Seed of one (scenario, seed) cell, independent of the other seeds listed.
    pub fn cell_seed(&self, scenario_id: &str, seed: u64) -> u64 {
        driftpatch::seed::derive(driftpatch::seed::derive_str(self.master_seed, scenario_id), seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seeds = [1, 2]
models = ["incl_noEE", "semi_baseEE+rehearsal", "baseline"]

[[scenario]]
preset = "mnist_flip"
"#;

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut n = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                ExperimentConfig::load(&path).unwrap();
                n += 1;
            }
        }
        assert!(n >= 2);
    }

    #[test]
    fn defaults_are_filled_in() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.base.epochs, 10);
        assert_eq!(cfg.patch.hidden, "512");
        assert_eq!(cfg.optimizer, OptimizerKind::default());
        let e = cfg.effective().unwrap();
        assert_eq!(e.patch.engagement_layer.as_deref(), Some("fc1"));
        assert_eq!(e.scenarios[0].total, Some(140_000));
        assert_eq!(e.scenarios[0].id.as_deref(), Some("mnist_flip"));
    }

    #[test]
    fn effective_config_round_trips() {
        let e = ExperimentConfig::parse(MINIMAL).unwrap().effective().unwrap();
        let text = e.to_toml().unwrap();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, e);
        assert_eq!(back.effective().unwrap(), e);
    }

    #[test]
    fn rejects_bad_configs() {
        let with = |extra: &str| ExperimentConfig::parse(&format!("{MINIMAL}{extra}"));
        assert!(with("bogus = 1\n").is_err());
        assert!(with("[base]\narch = \"resnet\"\n").is_err());
        assert!(with("[patch]\nhidden = \"12y\"\n").is_err());
        assert!(with("[sweep]\narchs = []\ntaps = []\n").is_err());
        assert!(ExperimentConfig::parse(
            "seeds = []\nmodels = [\"baseline\"]\n[[scenario]]\npreset = \"mnist_flip\"\n"
        )
        .is_err());
        assert!(ExperimentConfig::parse(
            "seeds = [1]\nmodels = [\"freezing+rehearsal\"]\n[[scenario]]\npreset = \"mnist_flip\"\n"
        )
        .is_err());
        assert!(ExperimentConfig::parse(
            "seeds = [1]\nmodels = [\"baseline\"]\n[[scenario]]\npreset = \"nope\"\n"
        )
        .is_err());
    }

    #[test]
    fn explicit_scenarios_parse() {
        let cfg = ExperimentConfig::parse(
            r#"
seeds = [1]
models = ["baseline"]
[[scenario]]
id = "small_remap"
kind = { type = "remap", label_map = [[0, 1], [1, 0]], cp = 600 }
init_count = 500
total = 1500
chunks = 10
"#,
        )
        .unwrap();
        let spec = cfg.scenarios[0].spec(3).unwrap();
        assert_eq!(spec.chunks, 10);
        assert_eq!(cfg.scenarios[0].id(), "small_remap");
    }

    #[test]
    fn cell_seeds_ignore_other_seeds() {
        let a = ExperimentConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seeds.push(9);
        assert_eq!(a.cell_seed("mnist_flip", 2), b.cell_seed("mnist_flip", 2));
        assert_ne!(a.cell_seed("mnist_flip", 1), a.cell_seed("mnist_flip", 2));
    }
}
