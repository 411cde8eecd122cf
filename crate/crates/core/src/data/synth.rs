use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::rng::{seeded, standard_normal, uniform_open01, StdRng};
use crate::{Error, Result};

/// Gaussian-blob classification data.
///
/// Recipe (all draws from ChaCha8 seeded with `seed`):
/// 1. Prototypes, stream 0. For class `c = 0..classes`, channel `ch`, blob
///    `b = 0..blobs`, draw `cy = u·H`, `cx = u·W`, `sigma = 1 + u·H/4`,
///    `amp = 2u − 1` (`u` uniform on (0,1), drawn in that order). The
///    prototype plane is `Σ_b amp·exp(−((y−cy)² + (x−cx)²) / (2 sigma²))`,
///    then centered and scaled to unit RMS.
/// 2. Samples, stream `1 + split` (`split = 0` training, `1` held-out). Sample
///    `i = 0..classes·n_per_class` has label `i mod classes` and pixels
///    `prototype + noise·z`, `z` standard normal (Box–Muller) in C,H,W order.
/// 3. The set is standardized per channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRecipe {
    pub classes: usize,
    pub n_per_class: usize,
    pub channels: usize,
    pub resolution: usize,
    pub noise: f64,
    #[serde(default = "default_blobs")]
    pub blobs: usize,
    pub seed: u64,
}

fn default_blobs() -> usize {
    3
}

impl SynthRecipe {
    pub fn new(classes: usize, n_per_class: usize, resolution: usize, seed: u64) -> Self {
        Self {
            classes,
            n_per_class,
            channels: 3,
            resolution,
            noise: 0.5,
            blobs: default_blobs(),
            seed,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Data(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.n_per_class == 0 || self.channels == 0 || self.resolution == 0 || self.blobs == 0 {
            return Err(Error::Data("synthetic sizes must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Data(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        Ok(())
    }

    /// Class prototypes, `classes × C × H × W` (unnormalized across the set).
    pub fn prototypes(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let r = self.resolution;
        let mut rng = seeded(self.seed, 0);
        let mut protos = Vec::with_capacity(self.classes);
        for _ in 0..self.classes {
            let mut img = Vec::with_capacity(self.channels * r * r);
            for _ in 0..self.channels {
                let blobs: Vec<[f64; 4]> = (0..self.blobs)
                    .map(|_| {
                        let cy = uniform_open01(&mut rng) * r as f64;
                        let cx = uniform_open01(&mut rng) * r as f64;
                        let sigma = 1.0 + uniform_open01(&mut rng) * r as f64 / 4.0;
                        let amp = 2.0 * uniform_open01(&mut rng) - 1.0;
                        [cy, cx, sigma, amp]
                    })
                    .collect();
                let mut plane: Vec<f64> = (0..r * r)
                    .map(|p| {
                        let (y, x) = ((p / r) as f64, (p % r) as f64);
                        blobs
                            .iter()
                            .map(|&[cy, cx, s, a]| {
                                a * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp()
                            })
                            .sum()
                    })
                    .collect();
                let mean = plane.iter().sum::<f64>() / plane.len() as f64;
                plane.iter_mut().for_each(|v| *v -= mean);
                let rms = (plane.iter().map(|v| v * v).sum::<f64>() / plane.len() as f64).sqrt();
                if rms > 0.0 {
                    plane.iter_mut().for_each(|v| *v /= rms);
                }
                img.extend(plane);
            }
            protos.push(img);
        }
        Ok(protos)
    }

    fn sample(&self, split: u64) -> Result<Dataset> {
        let protos = self.prototypes()?;
        let mut rng: StdRng = seeded(self.seed, 1 + split);
        let n = self.classes * self.n_per_class;
        let mut images = Vec::with_capacity(n * protos[0].len());
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % self.classes;
            labels.push(c);
            images.extend(protos[c].iter().map(|&v| v + self.noise * standard_normal(&mut rng)));
        }
        let r = self.resolution;
        let mut ds = Dataset::new(images, (self.channels, r, r), labels, self.classes)?;
        ds.normalize();
        Ok(ds)
    }

    /// The training set.
    pub fn generate(&self) -> Result<Dataset> {
        self.sample(0)
    }

    /// An independent draw from the same class prototypes.
    pub fn generate_holdout(&self) -> Result<Dataset> {
        self.sample(1)
    }
}
