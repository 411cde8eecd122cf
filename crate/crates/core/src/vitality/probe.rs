use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::VitalSet;
use crate::data::Dataset;
use crate::rng::{seeded, uniform_open01};
use crate::space::{BlockMask, Network, ProbeBlock};
use crate::tensor::Tensor;
use crate::train::evaluate;
use crate::{Error, Result, Scalar};

/// Masking probabilities probed by default.
pub const DEFAULT_P_LEVELS: [f64; 3] = [0.3, 0.6, 1.0];

/// One multiplier per channel: 0 with probability `p`, else 1.
pub fn draw_channel_mask<S: Scalar, R: Rng + ?Sized>(channels: usize, p: f64, rng: &mut R) -> Result<Vec<S>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("mask probability {p} outside [0, 1]")));
    }
    Ok((0..channels)
        .map(|_| if uniform_open01(rng) < p { S::zero() } else { S::one() })
        .collect())
}

/// Multiplies channel `c` (axis 1) of every sample by `mask[c]`.
pub fn apply_channel_mask<S: Scalar>(y: &Tensor<S>, mask: &[S]) -> Result<Tensor<S>> {
    let shape = y.shape();
    if shape.len() < 2 || shape[1] != mask.len() {
        return Err(Error::shape(
            "mask_channels",
            format!("mask of {} channels for shape {shape:?}", mask.len()),
        ));
    }
    let inner: usize = shape[2..].iter().product();
    let c = shape[1];
    let data = y
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * mask[(i / inner) % c])
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Zeroes each channel of `y` independently with probability `p`, using one
/// mask for the whole batch.
pub fn mask_channels<S: Scalar, R: Rng + ?Sized>(y: &Tensor<S>, p: f64, rng: &mut R) -> Result<Tensor<S>> {
    if y.shape().len() < 2 {
        return Err(Error::shape("mask_channels", "need a channel axis"));
    }
    let mask = draw_channel_mask(y.shape()[1], p, rng)?;
    apply_channel_mask(y, &mask)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub p_levels: Vec<f64>,
    /// Independent masks averaged per (block, p).
    pub seeds: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            p_levels: DEFAULT_P_LEVELS.to_vec(),
            seeds: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub block: String,
    pub vital: bool,
    pub p: f64,
    /// Mean over mask seeds.
    pub accuracy: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub baseline_accuracy: f64,
    pub p_levels: Vec<f64>,
    pub rows: Vec<ProbeRow>,
}

impl ProbeReport {
    /// `block_name,p,accuracy,baseline_accuracy`, baseline first.
    pub fn to_csv(&self) -> String {
        let b = self.baseline_accuracy;
        let mut out = String::from("block_name,p,accuracy,baseline_accuracy\n");
        writeln!(out, "baseline,0.000000,{b:.6},{b:.6}").expect("string write");
        for r in &self.rows {
            writeln!(out, "{},{:.6},{:.6},{b:.6}", r.block, r.p, r.accuracy).expect("string write");
        }
        out
    }

    /// Per-block accuracy drops, one series per p level.
    pub fn plot_json(&self) -> serde_json::Value {
        let mut blocks: Vec<serde_json::Value> = Vec::new();
        for chunk in self.rows.chunks(self.p_levels.len().max(1)) {
            blocks.push(serde_json::json!({
                "name": chunk[0].block,
                "vital": chunk[0].vital,
                "accuracy": chunk.iter().map(|r| round6(r.accuracy)).collect::<Vec<_>>(),
                "drop": chunk.iter().map(|r| round6(self.baseline_accuracy - r.accuracy)).collect::<Vec<_>>(),
            }));
        }
        serde_json::json!({
            "baseline_accuracy": round6(self.baseline_accuracy),
            "p_levels": self.p_levels,
            "blocks": blocks,
        })
    }

    /// Mean accuracy drop over the rows matching `vital` at level `p`.
    pub fn mean_drop(&self, vital: bool, p: f64) -> Option<f64> {
        let drops: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.vital == vital && r.p == p)
            .map(|r| self.baseline_accuracy - r.accuracy)
            .collect();
        (!drops.is_empty()).then(|| drops.iter().sum::<f64>() / drops.len() as f64)
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Accuracy with one block's output masked at a time, for every block and
/// every p level. The network is only read.
///
/// Stem and head count as vital. A layer's mask hits its transform branch
/// before the shortcut is added; the head's mask hits the logits.
pub fn probe_importance<S: Scalar>(
    net: &Network<S>,
    choices: &[usize],
    data: &Dataset,
    indices: &[usize],
    vital: &VitalSet,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    if indices.is_empty() {
        return Err(Error::Data("probe evaluation set is empty".into()));
    }
    if cfg.seeds == 0 {
        return Err(Error::InvalidArgument("probe needs at least one mask seed".into()));
    }
    if let Some(p) = cfg.p_levels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("mask probability {p} outside [0, 1]")));
    }
    let baseline = evaluate(net, choices, data, Some(indices), None)?;
    let names = net.spec().block_names();
    let mut blocks = vec![(ProbeBlock::Stem, "stem".to_string(), true)];
    for (l, name) in names.into_iter().enumerate() {
        blocks.push((ProbeBlock::Layer(l), name, vital.contains(l)));
    }
    blocks.push((ProbeBlock::Head, "head".to_string(), true));

    let jobs: Vec<(usize, f64)> = (0..blocks.len())
        .flat_map(|b| cfg.p_levels.iter().map(move |&p| (b, p)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(b, p)| {
            let (block, ref name, is_vital) = blocks[b];
            let channels = net.block_channels(block);
            let per_seed = (0..cfg.seeds)
                .map(|s| {
                    let mut rng = seeded(cfg.seed.wrapping_add(s as u64), b as u64);
                    let scales = draw_channel_mask::<S, _>(channels, p, &mut rng)?;
                    let mask = BlockMask { block, scales: &scales };
                    evaluate(net, choices, data, Some(indices), Some(mask))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(ProbeRow {
                block: name.clone(),
                vital: is_vital,
                p,
                accuracy: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                per_seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport {
        baseline_accuracy: baseline,
        p_levels: cfg.p_levels.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn extremes_and_errors() {
        let y = Tensor::<f64>::new(vec![2, 3, 1, 2], (1..=12).map(f64::from).collect()).unwrap();
        let mut rng = seeded(1, 0);
        assert_eq!(mask_channels(&y, 0.0, &mut rng).unwrap().data(), y.data());
        assert!(mask_channels(&y, 1.0, &mut rng).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(mask_channels(&y, 1.5, &mut rng).is_err());
        assert!(mask_channels(&y, -0.1, &mut rng).is_err());
    }

    #[test]
    fn mask_is_shared_across_batch_and_idempotent() {
        let y = Tensor::<f64>::new(vec![2, 4, 1, 1], (1..=8).map(f64::from).collect()).unwrap();
        let mask = vec![1.0, 0.0, 0.0, 1.0];
        let once = apply_channel_mask(&y, &mask).unwrap();
        assert_eq!(once.data(), &[1.0, 0.0, 0.0, 4.0, 5.0, 0.0, 0.0, 8.0]);
        assert_eq!(apply_channel_mask(&once, &mask).unwrap().data(), once.data());
    }

    #[test]
    fn binomial_fraction() {
        let p = 0.3;
        let n = 10_000;
        let mask: Vec<f64> = draw_channel_mask(n, p, &mut seeded(7, 3)).unwrap();
        let zeroed = mask.iter().filter(|&&m| m == 0.0).count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((zeroed - n as f64 * p).abs() < 3.0 * sigma, "{zeroed}");
    }
}
