//! Synthetic multi-scale corpus, preprocessing, segmentation metrics and
//! image/tensor I/O.

mod loader;
mod metrics;
pub mod pgm;
mod ratefield;
mod synth;

pub use loader::{load_image_dir, save_sample_pair};
pub use metrics::{
    binary_metrics, dice, precision, recall, BinaryMetrics, MetricsReport, Pooling,
};
pub use ratefield::{
    export_rate_field, read_csv, rate_stats, write_csv, RateFieldExport, RateStats,
};
pub use synth::{generate_synth, objects_from_labels, Disk, SynthConfig, FOREGROUND_FRACTION};

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor};

/// One training or test example: a preprocessed `[1, C, H, W]` image, its
/// per-pixel class labels and the objects it contains.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationSample {
    pub image: Tensor<f32>,
    pub labels: LabelMap,
    pub objects: Vec<Disk>,
}

impl SegmentationSample {
    pub fn dims(&self) -> (usize, usize) {
        (self.labels.height(), self.labels.width())
    }
}

/// Zero-mean, unit-variance normalization over all pixels of one image.
pub fn preprocess(raw: &Tensor<f32>) -> Result<Tensor<f32>> {
    let n = raw.len() as f64;
    let mean = raw.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = raw
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return Err(Error::ConstantImage);
    }
    Ok(raw.map(|v| ((v as f64 - mean) / std) as f32))
}
