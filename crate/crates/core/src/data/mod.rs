//! Datasets: IDX ingestion, the synthetic Gaussian-blob generator, and the
//! stratified train/validation split, and binary checkpoints.

mod checkpoint;
mod idx;
mod split;
mod synth;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use idx::{load_idx, read_idx, write_idx, IdxArray, IdxPair, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use split::{split_80_20, Split};
pub use synth::SynthRecipe;

use crate::tensor::Tensor;
use crate::{Error, Result, Scalar};

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Labelled images stored as `N × C × H × W` reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<f64>,
    channels: usize,
    height: usize,
    width: usize,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(
        images: Vec<f64>,
        (channels, height, width): (usize, usize, usize),
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        if images.len() != n * channels * height * width {
            return Err(Error::Data(format!(
                "{} image values for {n} samples of {channels}x{height}x{width}",
                images.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Data(format!("label {bad} outside [0, {class_count})")));
        }
        Ok(Self {
            images,
            channels,
            height,
            width,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Images `indices` as an `[n, C, H, W]` tensor plus their labels.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> (Tensor<S>, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend(self.image(i).iter().map(|&v| S::of(v)));
        }
        let t = Tensor::new(vec![indices.len(), self.channels, self.height, self.width], data)
            .expect("batch shape is consistent");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Self {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..*self
        }
    }

    /// Per-channel statistics over the samples in `indices`.
    pub fn channel_stats(&self, indices: &[usize]) -> ChannelStats {
        let hw = self.height * self.width;
        let count = (indices.len() * hw) as f64;
        let mut mean = vec![0.0; self.channels];
        let mut var = vec![0.0; self.channels];
        for &i in indices {
            for (c, plane) in self.image(i).chunks(hw).enumerate() {
                mean[c] += plane.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for &i in indices {
            for (c, plane) in self.image(i).chunks(hw).enumerate() {
                var[c] += plane.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
        }
        let std = var.iter().map(|v| (v / count).sqrt()).collect();
        ChannelStats { mean, std }
    }

    /// Standardizes every channel with `stats` (zero-variance channels are only centered).
    pub fn normalize_with(&mut self, stats: &ChannelStats) {
        let hw = self.height * self.width;
        for img in self.images.chunks_mut(self.channels * hw) {
            for (c, plane) in img.chunks_mut(hw).enumerate() {
                let s = if stats.std[c] > 0.0 { stats.std[c] } else { 1.0 };
                plane.iter_mut().for_each(|v| *v = (*v - stats.mean[c]) / s);
            }
        }
    }

    /// Standardizes with statistics of the whole set; returns them.
    pub fn normalize(&mut self) -> ChannelStats {
        let all: Vec<usize> = (0..self.len()).collect();
        let stats = self.channel_stats(&all);
        self.normalize_with(&stats);
        stats
    }

    /// Count of each class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        self.labels.iter().for_each(|&l| h[l] += 1);
        h
    }
}
