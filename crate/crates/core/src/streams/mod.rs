//! IDX ingestion and drift scenario generation.

pub mod cache;
pub mod idx;
pub mod scenario;
pub mod transform;

pub use cache::{decode_stream, encode_stream, read_stream_cache, write_stream_cache};
pub use idx::{load_idx, load_mnist};
pub use scenario::{
    build_scenario, dataset_classes, phase_map, phase_map_for, MetricsPhaseMap, ScenarioKind, ScenarioSpec,
    Stream,
};
pub use transform::{rotation_schedule, transform_flip, transform_rotate};

use crate::error::Result;
use crate::nncore::Tensor;

/// A grayscale image with pixels in `[0, 1]` and a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f32>,
    pub label: u32,
}

impl LabeledImage {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f32>, label: u32) -> Self {
        assert_eq!(pixels.len(), rows * cols, "pixel count");
        Self {
            rows,
            cols,
            pixels,
            label,
        }
    }
}

/// Stacks images into a `(n, 1, rows, cols)` tensor plus their labels.
pub fn to_tensor(images: &[LabeledImage]) -> Result<(Tensor, Vec<u32>)> {
    let (rows, cols) = images.first().map(|i| (i.rows, i.cols)).unwrap_or((0, 0));
    let mut data = Vec::with_capacity(images.len() * rows * cols);
    for im in images {
        if im.rows != rows || im.cols != cols {
            return Err(crate::Error::InvalidInput("images differ in size".into()));
        }
        data.extend_from_slice(&im.pixels);
    }
    let labels = images.iter().map(|i| i.label).collect();
    Ok((Tensor::new(vec![images.len(), 1, rows, cols], data)?, labels))
}
