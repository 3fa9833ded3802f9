use std::path::{Path, PathBuf};
use std::sync::Arc;

use driftpatch::adaptation::{build_base, PatchConfig};
use driftpatch::nncore::{
    accuracy, checkpoint::load_checkpoint, checkpoint::save_checkpoint, train::fit_with_restarts, Network,
};
use driftpatch::streams::{
    build_scenario, load_mnist, read_stream_cache, scenario::dataset_classes, to_tensor, LabeledImage,
    ScenarioSpec, Stream,
};

use crate::config::{BaseSource, ExperimentConfig, ScenarioConfig};
use crate::failure::Failure;

/// Training and test splits of the configured dataset.
pub struct Dataset {
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

impl Dataset {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, Failure> {
        let root = cfg.data_root();
        let (train, test) = load_mnist(&root)
            .map_err(|e| Failure::data(format!("cannot load dataset from {}: {e}", root.display())))?;
        Ok(Self { train, test })
    }

    /// Both splits concatenated: the pool scenarios draw from.
    pub fn pool(&self) -> Vec<LabeledImage> {
        self.train.iter().chain(&self.test).cloned().collect()
    }
}

/// Output layout below the configured directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn dir(&self, name: &str) -> Result<PathBuf, Failure> {
        let d = self.root.join(name);
        std::fs::create_dir_all(&d).map_err(|e| Failure::io(&format!("cannot create {}", d.display()), e))?;
        Ok(d)
    }

    pub fn stream_path(&self, scenario: &str, seed: u64) -> Result<PathBuf, Failure> {
        Ok(self.dir("streams")?.join(format!("{scenario}-s{seed}.drft")))
    }

    pub fn checkpoint_path(
        &self,
        key: &str,
        arch: &str,
        epochs: usize,
        seed: u64,
    ) -> Result<PathBuf, Failure> {
        Ok(self
            .dir("checkpoints")?
            .join(format!("{key}-{arch}-e{epochs}-s{seed}.nnpk")))
    }
}

/// Stream of one (scenario, seed) cell, read from the cache when it matches.
pub fn cell_stream(
    cfg: &ExperimentConfig,
    scenario: &ScenarioConfig,
    seed: u64,
    pool: &[LabeledImage],
    layout: &Layout,
) -> Result<(ScenarioSpec, Stream), Failure> {
    let spec = scenario.spec(cfg.cell_seed(&scenario.id(), seed))?;
    let path = layout.stream_path(&scenario.id(), seed)?;
    if path.exists() {
        if let Ok((cached, stream)) = read_stream_cache(&path) {
            if cached == spec {
                return Ok((spec, stream));
            }
        }
    }
    let stream = build_scenario(pool, &spec)?;
    Ok((spec, stream))
}

/// Trained base of one cell plus how it was obtained.
pub struct BaseOutcome {
    pub net: Arc<Network>,
    pub path: PathBuf,
    pub reused: bool,
}

/// Loads the cell's base checkpoint, or trains and saves it.
#[allow(clippy::too_many_arguments)]
pub fn cell_base(
    cfg: &ExperimentConfig,
    scenario: &ScenarioConfig,
    seed: u64,
    stream: &Stream,
    dataset: &Dataset,
    layout: &Layout,
    force: bool,
    log: &dyn Fn(String),
) -> Result<BaseOutcome, Failure> {
    let arch = cfg.base.arch()?;
    let (key, train_set, classes) = match cfg.base.source {
        BaseSource::Scenario => (scenario.id(), &stream.init_set, stream.num_classes),
        BaseSource::Dataset => (
            "dataset".to_string(),
            &dataset.train,
            dataset_classes(&dataset.train).max(dataset_classes(&dataset.test)),
        ),
    };
    let path = layout.checkpoint_path(&key, &arch.to_string(), cfg.base.epochs, seed)?;
    if path.exists() && !force {
        match load_checkpoint(&path) {
            Ok(net) => {
                return Ok(BaseOutcome {
                    net: Arc::new(net),
                    path,
                    reused: true,
                })
            }
            Err(e) => log(format!("ignoring unreadable checkpoint {}: {e}", path.display())),
        }
    }
    let first_seed = driftpatch::seed::derive_str(cfg.cell_seed(&key, seed), "base");
    let outcome = fit_with_restarts(
        first_seed,
        cfg.base.max_attempts,
        cfg.base.stagnation_window,
        cfg.base.stagnation_tol,
        |s| {
            let (net, report) = build_base(
                arch,
                train_set,
                classes,
                cfg.base.epochs,
                cfg.base.minibatch,
                cfg.optimizer,
                s,
            )?;
            Ok((net, report.epoch_losses))
        },
        |old, new| {
            log(format!(
                "training stagnated with seed {old}; reinitializing with seed {new}"
            ))
        },
    )?;
    save_checkpoint(&outcome.value, &path)
        .map_err(|e| Failure::data(format!("cannot write checkpoint {}: {e}", path.display())))?;
    Ok(BaseOutcome {
        net: Arc::new(outcome.value),
        path,
        reused: false,
    })
}

/// Accuracy of `net` on a set of images.
pub fn accuracy_on(net: &Network, images: &[LabeledImage]) -> Result<f32, Failure> {
    let (x, y) = to_tensor(images)?;
    Ok(accuracy(net, &x, &y)?)
}

/// Layer index for a configured layer name.
pub fn layer_by_name(net: &Network, name: &str) -> Result<usize, Failure> {
    net.layer_index(name).ok_or_else(|| {
        Failure::config(format!(
            "base network has no layer {name:?} (layers: {})",
            net.layer_names().join(", ")
        ))
    })
}

/// Patch configuration resolved against a concrete base network.
pub fn patch_config(cfg: &ExperimentConfig, net: &Network) -> Result<PatchConfig, Failure> {
    let eff = cfg.effective()?;
    let layer = layer_by_name(net, eff.patch.engagement_layer.as_deref().expect("materialized"))?;
    Ok(PatchConfig {
        engagement_layer: layer,
        tap: eff.patch.tap,
        hidden: driftpatch::adaptation::parse_arch(&eff.patch.hidden)?,
        dropout_in: eff.patch.dropout_in,
        dropout_hidden: eff.patch.dropout_hidden,
        init: eff.patch.init,
    })
}
