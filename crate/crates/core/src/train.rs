//! Plain training and evaluation of discrete networks.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::rng::seeded;
use crate::space::{ArchMatrix, BlockMask, ForwardMode, ForwardOptions, Network, SuperNetSpec};
use crate::tensor::{sgd_step, Graph};
use crate::{Error, Result, Scalar};

/// Samples used to measure batchnorm statistics after training.
pub const CALIBRATION_SAMPLES: usize = 512;
const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            lr: 0.1,
            seed: 0,
        }
    }
}

/// Splits `order` into batches of `size`; a trailing batch of one sample
/// (which batchnorm cannot normalize) is folded into its predecessor.
pub fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let size = size.max(2);
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("nonempty") = &order[start..];
    }
    out
}

/// One SGD step of `choices` on the samples `batch`; returns the loss.
pub fn train_step<S: Scalar>(
    net: &mut Network<S>,
    choices: &[usize],
    data: &Dataset,
    batch: &[usize],
    lr: f64,
) -> Result<f64> {
    let (images, labels) = data.batch::<S>(batch);
    let mut g = Graph::new();
    let x = g.constant(images);
    let out = net.forward_fixed(&mut g, x, choices, &ForwardOptions::train())?;
    let loss = g.cross_entropy(out.logits, &labels)?;
    let value = g.data(loss)[0].to_f64_lossy();
    g.backward(loss)?;
    g.accumulate_param_grads(net.params_mut())?;
    let used = g.used_params();
    sgd_step(net.params_mut(), &used, S::of(lr))?;
    Ok(value)
}

/// Trains a discrete network and calibrates its batchnorm statistics.
/// Returns the mean loss of every epoch.
pub fn train<S: Scalar>(
    net: &mut Network<S>,
    choices: &[usize],
    data: &Dataset,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if indices.len() < 2 {
        return Err(Error::Data(format!("cannot train on {} samples", indices.len())));
    }
    let mut rng = seeded(cfg.seed, 0x7a41);
    let mut order = indices.to_vec();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let bs = batches(&order, cfg.batch_size);
        for b in &bs {
            total += train_step(net, choices, data, b, cfg.lr)?;
        }
        trace.push(total / bs.len() as f64);
    }
    calibrate(net, choices, data, indices)?;
    Ok(trace)
}

/// Stores batchnorm statistics measured on (at most) the first
/// [`CALIBRATION_SAMPLES`] of `indices`.
pub fn calibrate<S: Scalar>(
    net: &mut Network<S>,
    choices: &[usize],
    data: &Dataset,
    indices: &[usize],
) -> Result<()> {
    let take = indices.len().min(CALIBRATION_SAMPLES);
    let (images, _) = data.batch::<S>(&indices[..take]);
    net.calibrate(&images, choices)
}

/// Index of the largest logit per row; ties (including all-equal rows) go to
/// the lowest class.
pub fn predict_rows<S: Scalar>(logits: &[S], classes: usize) -> Vec<usize> {
    logits
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Accuracy of a calibrated network on `indices` (all samples if `None`),
/// optionally with one block masked.
pub fn evaluate<S: Scalar>(
    net: &Network<S>,
    choices: &[usize],
    data: &Dataset,
    indices: Option<&[usize]>,
    mask: Option<BlockMask<'_, S>>,
) -> Result<f64> {
    let all: Vec<usize>;
    let indices = match indices {
        Some(i) => i,
        None => {
            all = (0..data.len()).collect();
            &all
        }
    };
    if indices.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let opts = ForwardOptions {
        mode: ForwardMode::Eval,
        mask,
    };
    let classes = net.spec().num_classes;
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_BATCH) {
        let (images, labels) = data.batch::<S>(chunk);
        let mut g = Graph::new();
        let x = g.constant(images);
        let out = net.forward_fixed(&mut g, x, choices, &opts)?;
        let pred = predict_rows(g.data(out.logits), classes);
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Trains a freshly initialized instance of `arch` on `train_idx` and reports
/// accuracy on `eval`.
pub fn retrain<S: Scalar>(
    spec: &SuperNetSpec,
    arch: &ArchMatrix,
    train_data: &Dataset,
    train_idx: &[usize],
    eval: (&Dataset, &[usize]),
    cfg: &TrainConfig,
) -> Result<(Network<S>, f64)> {
    let mut rng = seeded(cfg.seed, 0x1417);
    let mut net = Network::instantiate(spec, arch, &mut rng)?;
    let choices = arch.argmax();
    train(&mut net, &choices, train_data, train_idx, cfg)?;
    let acc = evaluate(&net, &choices, eval.0, Some(eval.1), None)?;
    Ok((net, acc))
}
