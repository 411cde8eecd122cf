use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result, Scalar};

/// Variance floor added before the square root.
pub const BN_EPS: f64 = 1e-5;

/// Per-channel statistics used to normalize a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

/// Where batchnorm takes its statistics from.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a, S> {
    /// Statistics of the current batch; no running averages are kept.
    Train,
    /// Fixed statistics, typically measured on a calibration batch.
    Eval(&'a BnStats<S>),
}

impl<S: Scalar> Graph<S> {
    /// Per-channel normalization of `[N, C, H, W]` followed by `gamma * x̂ + beta`.
    ///
    /// Returns the output and the statistics that were applied.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, S>,
    ) -> Result<(Var, BnStats<S>)> {
        let shape = self.shape(input).to_vec();
        let [n, c, h, w] = shape[..] else {
            return Err(Error::shape("batchnorm2d", format!("input must be [N,C,H,W], got {shape:?}")));
        };
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(
                    "batchnorm2d",
                    format!("{name} {:?} vs {c} channels", self.shape(v)),
                ));
            }
        }
        let hw = h * w;
        let count = S::of((n * hw) as f64);
        let x = self.data(input);

        let stats = match mode {
            BnMode::Train => {
                if n < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "batchnorm2d: training needs a batch of at least 2, got {n}"
                    )));
                }
                let mut mean = vec![S::zero(); c];
                let mut var = vec![S::zero(); c];
                for ch in 0..c {
                    let mut s = S::zero();
                    for b in 0..n {
                        let off = (b * c + ch) * hw;
                        s += x[off..off + hw].iter().copied().sum::<S>();
                    }
                    let m = s / count;
                    let mut v = S::zero();
                    for b in 0..n {
                        let off = (b * c + ch) * hw;
                        v += x[off..off + hw].iter().map(|&t| (t - m) * (t - m)).sum::<S>();
                    }
                    mean[ch] = m;
                    var[ch] = v / count;
                }
                BnStats { mean, var }
            }
            BnMode::Eval(stats) => {
                if stats.mean.len() != c || stats.var.len() != c {
                    return Err(Error::shape(
                        "batchnorm2d",
                        format!("stored statistics for {} channels, input has {c}", stats.mean.len()),
                    ));
                }
                stats.clone()
            }
        };

        let eps = S::of(BN_EPS);
        let inv_std: Vec<S> = stats.var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![S::zero(); x.len()];
        let mut y = vec![S::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    xhat[i] = (x[i] - stats.mean[ch]) * inv_std[ch];
                    y[i] = gv[ch] * xhat[i] + bv[ch];
                }
            }
        }
        let batch_stats = matches!(mode, BnMode::Train);
        let out = Tensor::new(shape, y)?;
        let var = self.push(
            out,
            &[input, gamma, beta],
            Box::new(move |args| {
                let dy = args.grad;
                let gv = args.inputs[1].data();
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        for i in off..off + hw {
                            dgamma[ch] += dy[i] * xhat[i];
                            dbeta[ch] += dy[i];
                        }
                    }
                }
                let dx = args.needs[0].then(|| {
                    let mut dx = vec![S::zero(); dy.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * hw;
                            let k = gv[ch] * inv_std[ch];
                            for i in off..off + hw {
                                dx[i] = if batch_stats {
                                    // d/dx of batch-normalized output: remove the
                                    // mean and the projection onto x̂
                                    k * (dy[i] - (dbeta[ch] + xhat[i] * dgamma[ch]) / count)
                                } else {
                                    k * dy[i]
                                };
                            }
                        }
                    }
                    dx
                });
                vec![dx, args.needs[1].then_some(dgamma), args.needs[2].then_some(dbeta)]
            }),
        );
        Ok((var, stats))
    }
}
