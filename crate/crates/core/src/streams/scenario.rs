use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::transform::{rotation_schedule, transform_flip, transform_rotate};
use super::LabeledImage;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Instances from `cp` on are flipped.
    Flip { cp: usize },
    /// Random rotations whose maximum angle ramps from 0 at `ramp_start`
    /// to `max_degrees` at `ramp_end`.
    Rotate {
        ramp_start: usize,
        ramp_end: usize,
        max_degrees: f32,
    },
    /// Only `initial_classes` before `cp`, all classes afterwards.
    Appear { initial_classes: Vec<u32>, cp: usize },
    /// After `cp`, an instance labelled `from` shows an image of class `to`.
    Remap { label_map: Vec<(u32, u32)>, cp: usize },
    /// `first_classes` before `cp`, `second_classes` afterwards.
    Transfer {
        first_classes: Vec<u32>,
        second_classes: Vec<u32>,
        cp: usize,
    },
    /// Original, flipped from `cp1`, original again from `cp2`.
    Reoccur { cp1: usize, cp2: usize },
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Flip { .. } => "flip",
            ScenarioKind::Rotate { .. } => "rotate",
            ScenarioKind::Appear { .. } => "appear",
            ScenarioKind::Remap { .. } => "remap",
            ScenarioKind::Transfer { .. } => "transfer",
            ScenarioKind::Reoccur { .. } => "reoccur",
        }
    }

    /// Change points as instance indices.
    pub fn change_points(&self) -> Vec<usize> {
        match self {
            ScenarioKind::Flip { cp }
            | ScenarioKind::Appear { cp, .. }
            | ScenarioKind::Remap { cp, .. }
            | ScenarioKind::Transfer { cp, .. } => vec![*cp],
            ScenarioKind::Rotate { ramp_start, .. } => vec![*ramp_start],
            ScenarioKind::Reoccur { cp1, cp2 } => vec![*cp1, *cp2],
        }
    }
}

/// A drift scenario: how many instances initialize the base, how many
/// follow as a stream, and how that stream is cut into chunks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub init_count: usize,
    pub total: usize,
    pub chunks: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn mnist_flip(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Flip { cp: 70_000 },
            init_count: 40_000,
            total: 140_000,
            chunks: 100,
            seed,
        }
    }

    pub fn mnist_rotate(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Rotate {
                ramp_start: 35_000,
                ramp_end: 65_000,
                max_degrees: 180.0,
            },
            init_count: 20_000,
            total: 70_000,
            chunks: 100,
            seed,
        }
    }

    pub fn mnist_appear(seed: u64) -> Self {
        Self::mnist_appear_from(&[0, 1, 2, 3, 4], seed)
    }

    /// Appear variant with a custom initial class set.
    pub fn mnist_appear_from(initial_classes: &[u32], seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Appear {
                initial_classes: initial_classes.to_vec(),
                cp: 20_400,
            },
            init_count: 15_000,
            total: 50_400,
            chunks: 100,
            seed,
        }
    }

    pub fn mnist_remap(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Remap {
                label_map: (0..5).map(|c| (c, c + 5)).collect(),
                cp: 35_700,
            },
            init_count: 20_000,
            total: 70_000,
            chunks: 100,
            seed,
        }
    }

    pub fn mnist_transfer(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Transfer {
                first_classes: vec![0, 1, 2, 3, 4],
                second_classes: vec![5, 6, 7, 8, 9],
                cp: 35_700,
            },
            init_count: 20_000,
            total: 70_000,
            chunks: 100,
            seed,
        }
    }

    pub fn mnist_flip_reoccur(seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Reoccur {
                cp1: 35_000,
                cp2: 55_000,
            },
            init_count: 20_000,
            total: 70_000,
            chunks: 100,
            seed,
        }
    }

    /// Named presets: `mnist_flip`, `mnist_rotate`, `mnist_appear`,
    /// `mnist_remap`, `mnist_transfer`, `mnist_flip_reoccur`.
    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        Some(match name {
            "mnist_flip" => Self::mnist_flip(seed),
            "mnist_rotate" => Self::mnist_rotate(seed),
            "mnist_appear" => Self::mnist_appear(seed),
            "mnist_remap" => Self::mnist_remap(seed),
            "mnist_transfer" => Self::mnist_transfer(seed),
            "mnist_flip_reoccur" => Self::mnist_flip_reoccur(seed),
            _ => return None,
        })
    }

    pub fn stream_len(&self) -> usize {
        self.total.saturating_sub(self.init_count)
    }

    /// Sizes of every chunk: the remainder is spread one per chunk from the front.
    pub fn chunk_sizes(&self) -> Vec<usize> {
        let len = self.stream_len();
        let base = len / self.chunks.max(1);
        let rem = len % self.chunks.max(1);
        (0..self.chunks).map(|i| base + usize::from(i < rem)).collect()
    }

    /// Index of the chunk containing stream instance `idx` (absolute index).
    pub fn chunk_of(&self, idx: usize) -> Option<usize> {
        if idx < self.init_count || idx >= self.total {
            return None;
        }
        let mut start = self.init_count;
        for (c, size) in self.chunk_sizes().into_iter().enumerate() {
            if idx < start + size {
                return Some(c);
            }
            start += size;
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if self.chunks == 0 {
            return bad("chunks must be at least 1".into());
        }
        if self.init_count == 0 {
            return bad("init_count must be at least 1".into());
        }
        if self.stream_len() < self.chunks {
            return bad(format!(
                "stream of {} instances cannot fill {} chunks",
                self.stream_len(),
                self.chunks
            ));
        }
        let cps = self.kind.change_points();
        if cps[0] <= self.init_count {
            return bad(format!(
                "first change point {} must come after the init set ({})",
                cps[0], self.init_count
            ));
        }
        if cps.iter().any(|&c| c >= self.total) {
            return bad(format!(
                "change points {cps:?} must lie inside the stream (< {})",
                self.total
            ));
        }
        if cps.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("change points {cps:?} must be strictly increasing"));
        }
        let chunk_cps: Vec<usize> = cps.iter().filter_map(|&c| self.chunk_of(c)).collect();
        if chunk_cps.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("change points {cps:?} fall into the same chunk"));
        }
        match &self.kind {
            ScenarioKind::Rotate {
                ramp_start,
                ramp_end,
                max_degrees,
            } => {
                if ramp_start > ramp_end {
                    return bad("ramp_start must not exceed ramp_end".into());
                }
                if !(0.0..=360.0).contains(max_degrees) {
                    return bad(format!("max_degrees {max_degrees} outside [0, 360]"));
                }
            }
            ScenarioKind::Appear { initial_classes, .. } => {
                if initial_classes.is_empty() {
                    return bad("appear needs at least one initial class".into());
                }
            }
            ScenarioKind::Remap { label_map, .. } => {
                let from: BTreeSet<u32> = label_map.iter().map(|m| m.0).collect();
                let to: BTreeSet<u32> = label_map.iter().map(|m| m.1).collect();
                if label_map.is_empty() || from.len() != label_map.len() || to.len() != label_map.len() {
                    return bad("remap label map must be a non-empty injective mapping".into());
                }
            }
            ScenarioKind::Transfer {
                first_classes,
                second_classes,
                ..
            } => {
                let a: BTreeSet<u32> = first_classes.iter().copied().collect();
                if first_classes.is_empty()
                    || second_classes.is_empty()
                    || second_classes.iter().any(|c| a.contains(c))
                {
                    return bad("transfer class sets must be non-empty and disjoint".into());
                }
            }
            ScenarioKind::Flip { .. } | ScenarioKind::Reoccur { .. } => {}
        }
        Ok(())
    }
}

/// A compiled scenario: init set plus labelled chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub init_set: Vec<LabeledImage>,
    pub chunks: Vec<Vec<LabeledImage>>,
    /// Chunk indices in which each drift begins.
    pub change_points: Vec<usize>,
    /// Change points as absolute instance indices.
    pub change_point_instances: Vec<usize>,
    pub num_classes: usize,
}

impl Stream {
    pub fn total(&self) -> usize {
        self.init_set.len() + self.chunks.iter().map(Vec::len).sum::<usize>()
    }

    /// Absolute instance index of the first element of chunk `c`.
    pub fn chunk_start(&self, c: usize) -> usize {
        self.init_set.len() + self.chunks[..c].iter().map(Vec::len).sum::<usize>()
    }

    /// Whether every instance of chunk `c` lies at or after the first change point.
    pub fn fully_post_drift(&self, c: usize) -> bool {
        self.change_point_instances
            .first()
            .is_some_and(|&cp| self.chunk_start(c) >= cp)
    }

    pub fn first_change_point(&self) -> Option<usize> {
        self.change_points.first().copied()
    }
}

/// Index pool drawn without replacement, reshuffled whenever it runs dry.
struct Pool {
    order: Vec<usize>,
    pos: usize,
}

impl Pool {
    fn new(mut items: Vec<usize>, rng: &mut ChaCha8Rng, what: &str) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Scenario(format!("no instances available for {what}")));
        }
        items.shuffle(rng);
        Ok(Self { order: items, pos: 0 })
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

fn indices_of(dataset: &[LabeledImage], classes: &[u32]) -> Vec<usize> {
    let set: BTreeSet<u32> = classes.iter().copied().collect();
    (0..dataset.len())
        .filter(|&i| set.contains(&dataset[i].label))
        .collect()
}

/// Number of classes in a dataset (largest label plus one).
pub fn dataset_classes(dataset: &[LabeledImage]) -> usize {
    dataset.iter().map(|i| i.label as usize + 1).max().unwrap_or(0)
}

/// Compiles `spec` over `dataset` into a chunked stream.
pub fn build_scenario(dataset: &[LabeledImage], spec: &ScenarioSpec) -> Result<Stream> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::Scenario("empty dataset".into()));
    }
    let (rows, cols) = (dataset[0].rows, dataset[0].cols);
    if dataset.iter().any(|i| i.rows != rows || i.cols != cols) {
        return Err(Error::Scenario("dataset images differ in size".into()));
    }
    let ds_classes = dataset_classes(dataset);
    let check_classes = |cs: &[u32]| -> Result<()> {
        match cs.iter().find(|&&c| c as usize >= ds_classes) {
            Some(c) => Err(Error::Scenario(format!(
                "class {c} not present in a dataset of {ds_classes} classes"
            ))),
            None => Ok(()),
        }
    };
    let mut rng = seed::rng(spec.seed);
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut sequence = Vec::with_capacity(spec.total);
    let num_classes;
    match &spec.kind {
        ScenarioKind::Flip { cp } => {
            num_classes = ds_classes;
            let mut pool = Pool::new(all, &mut rng, "flip")?;
            for i in 0..spec.total {
                let img = &dataset[pool.draw(&mut rng)];
                sequence.push(if i >= *cp {
                    transform_flip(img)
                } else {
                    img.clone()
                });
            }
        }
        ScenarioKind::Reoccur { cp1, cp2 } => {
            num_classes = ds_classes;
            let mut pool = Pool::new(all, &mut rng, "reoccur")?;
            for i in 0..spec.total {
                let img = &dataset[pool.draw(&mut rng)];
                let flipped = i >= *cp1 && i < *cp2;
                sequence.push(if flipped { transform_flip(img) } else { img.clone() });
            }
        }
        ScenarioKind::Rotate {
            ramp_start,
            ramp_end,
            max_degrees,
        } => {
            num_classes = ds_classes;
            let mut pool = Pool::new(all, &mut rng, "rotate")?;
            for i in 0..spec.total {
                let img = &dataset[pool.draw(&mut rng)];
                let max = rotation_schedule(*ramp_start, *ramp_end, *max_degrees, i);
                sequence.push(if max > 0.0 {
                    let angle = rng.gen_range(-max..=max);
                    transform_rotate(img, angle)
                } else {
                    img.clone()
                });
            }
        }
        ScenarioKind::Appear { initial_classes, cp } => {
            check_classes(initial_classes)?;
            num_classes = ds_classes;
            let mut pre = Pool::new(indices_of(dataset, initial_classes), &mut rng, "initial classes")?;
            let mut post = Pool::new(all, &mut rng, "all classes")?;
            for i in 0..spec.total {
                let idx = if i < *cp {
                    pre.draw(&mut rng)
                } else {
                    post.draw(&mut rng)
                };
                sequence.push(dataset[idx].clone());
            }
        }
        ScenarioKind::Remap { label_map, cp } => {
            let from: Vec<u32> = label_map.iter().map(|m| m.0).collect();
            let to: Vec<u32> = label_map.iter().map(|m| m.1).collect();
            check_classes(&from)?;
            check_classes(&to)?;
            num_classes = *from.iter().max().expect("non-empty map") as usize + 1;
            let mut pre = Pool::new(indices_of(dataset, &from), &mut rng, "remap domain")?;
            let mut post = Pool::new(indices_of(dataset, &to), &mut rng, "remap targets")?;
            for i in 0..spec.total {
                if i < *cp {
                    sequence.push(dataset[pre.draw(&mut rng)].clone());
                } else {
                    let img = &dataset[post.draw(&mut rng)];
                    let label = label_map
                        .iter()
                        .find(|m| m.1 == img.label)
                        .expect("pool holds mapped classes")
                        .0;
                    sequence.push(LabeledImage { label, ..img.clone() });
                }
            }
        }
        ScenarioKind::Transfer {
            first_classes,
            second_classes,
            cp,
        } => {
            check_classes(first_classes)?;
            check_classes(second_classes)?;
            num_classes = *first_classes
                .iter()
                .chain(second_classes)
                .max()
                .expect("non-empty classes") as usize
                + 1;
            let mut pre = Pool::new(indices_of(dataset, first_classes), &mut rng, "first classes")?;
            let mut post = Pool::new(indices_of(dataset, second_classes), &mut rng, "second classes")?;
            for i in 0..spec.total {
                let idx = if i < *cp {
                    pre.draw(&mut rng)
                } else {
                    post.draw(&mut rng)
                };
                sequence.push(dataset[idx].clone());
            }
        }
    }
    let mut rest = sequence.split_off(spec.init_count);
    let init_set = sequence;
    let mut chunks = Vec::with_capacity(spec.chunks);
    for size in spec.chunk_sizes().into_iter().rev() {
        chunks.push(rest.split_off(rest.len() - size));
    }
    chunks.reverse();
    let cps = spec.kind.change_points();
    let change_points = cps
        .iter()
        .map(|&c| spec.chunk_of(c).expect("validated change point"))
        .collect();
    Ok(Stream {
        init_set,
        chunks,
        change_points,
        change_point_instances: cps,
        num_classes,
    })
}

/// Chunk ranges used by the evaluation measures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsPhaseMap {
    pub adaptation_range: std::ops::Range<usize>,
    pub finish_range: std::ops::Range<usize>,
}

/// Adaptation = `[first CP, chunks - 5)`, finish = the last five chunks.
pub fn phase_map(stream: &Stream) -> Result<MetricsPhaseMap> {
    phase_map_for(stream.chunks.len(), &stream.change_points)
}

pub fn phase_map_for(chunks: usize, change_points: &[usize]) -> Result<MetricsPhaseMap> {
    if chunks < 6 {
        return Err(Error::Metric(format!("{chunks} chunks; at least 6 are needed")));
    }
    let cp = *change_points
        .first()
        .ok_or_else(|| Error::Metric("stream has no change point".into()))?;
    let finish_start = chunks - 5;
    Ok(MetricsPhaseMap {
        adaptation_range: cp.min(finish_start)..finish_start,
        finish_range: finish_start..chunks,
    })
}
