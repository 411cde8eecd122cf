use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::gumbel;
use crate::space::ArchMatrix;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Softmax,
    GumbelSoftmax,
    /// One-hot forward, Gumbel-softmax gradient (straight-through).
    GumbelMax,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Softmax => "softmax",
            Self::GumbelSoftmax => "gumbel_softmax",
            Self::GumbelMax => "gumbel_max",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "gumbel_softmax" => Ok(Self::GumbelSoftmax),
            "gumbel_max" => Ok(Self::GumbelMax),
            _ => Err(Error::InvalidArgument(format!(
                "unknown sampler `{s}` (expected softmax, gumbel_softmax or gumbel_max)"
            ))),
        }
    }
}

/// A sampler with its temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sampler {
    pub kind: SamplerKind,
    pub tau: f64,
}

impl Sampler {
    pub fn new(kind: SamplerKind, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
        }
        Ok(Self { kind, tau })
    }

    pub fn softmax(tau: f64) -> Result<Self> {
        Self::new(SamplerKind::Softmax, tau)
    }

    pub fn gumbel_softmax(tau: f64) -> Result<Self> {
        Self::new(SamplerKind::GumbelSoftmax, tau)
    }

    pub fn gumbel_max(tau: f64) -> Result<Self> {
        Self::new(SamplerKind::GumbelMax, tau)
    }

    fn noisy(self) -> bool {
        self.kind != SamplerKind::Softmax
    }
}

/// `rows × cols` logits; `-inf` marks a candidate that can never be sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LogitMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols || cols == 0 {
            return Err(Error::shape("logits", format!("{} values for {rows}x{cols}", data.len())));
        }
        if let Some(v) = data.iter().find(|v| v.is_nan() || **v == f64::INFINITY) {
            return Err(Error::InvalidArgument(format!("logit {v} is not allowed (only -inf pins)")));
        }
        if let Some(r) = (0..rows).find(|&r| data[r * cols..(r + 1) * cols].iter().all(|v| v.is_infinite())) {
            return Err(Error::InvalidArgument(format!("logit row {r} has no finite entry")));
        }
        Ok(Self { rows, cols, data })
    }

    /// Zero logits on allowed entries, `-inf` elsewhere.
    pub fn uniform(allowed: &[Vec<bool>]) -> Result<Self> {
        Self::from_fn(allowed, |_, _| 0.0)
    }

    /// `f(row, col)` on allowed entries, `-inf` elsewhere.
    pub fn from_fn(allowed: &[Vec<bool>], mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let cols = allowed.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(allowed.len() * cols);
        for (r, row) in allowed.iter().enumerate() {
            for (c, &ok) in row.iter().enumerate() {
                data.push(if ok { f(r, c) } else { f64::NEG_INFINITY });
            }
        }
        Self::new(allowed.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Largest logit per row (ties: lowest index).
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.rows).map(|r| argmax(self.row(r))).collect()
    }

    /// Row-wise softmax at temperature 1.
    pub fn probabilities(&self) -> ArchMatrix {
        ArchMatrix::new(self.rows, self.cols, softmax_rows(&self.data, self.cols, 1.0)).expect("shape")
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        Tensor::new(vec![self.rows, self.cols], self.data.iter().map(|&v| S::of(v)).collect())
            .expect("shape")
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Softmax of every `cols`-long row of `z / tau`; `-inf` entries get 0.
pub fn softmax_rows(z: &[f64], cols: usize, tau: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    for row in z.chunks(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|&v| ((v - max) / tau).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

fn perturb<R: Rng + ?Sized>(theta: &[f64], sampler: Sampler, rng: &mut R) -> Vec<f64> {
    if sampler.noisy() {
        theta.iter().map(|&t| t + gumbel(rng)).collect()
    } else {
        theta.to_vec()
    }
}

fn one_hot_rows(z: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for (r, row) in z.chunks(cols).enumerate() {
        out[r * cols + argmax(row)] = 1.0;
    }
    out
}

/// Draws an architecture from `theta`. Noise is drawn row-major, one Gumbel
/// variate per entry (pinned entries included).
pub fn sample_arch<R: Rng + ?Sized>(theta: &LogitMatrix, sampler: Sampler, rng: &mut R) -> ArchMatrix {
    let z = perturb(&theta.data, sampler, rng);
    let data = match sampler.kind {
        SamplerKind::GumbelMax => one_hot_rows(&z, theta.cols),
        _ => softmax_rows(&z, theta.cols, sampler.tau),
    };
    ArchMatrix::new(theta.rows, theta.cols, data).expect("shape")
}

/// Length-`m` simplex weights over proposals.
pub fn sample_mixture<R: Rng + ?Sized>(pi_logits: &[f64], sampler: Sampler, rng: &mut R) -> Result<Vec<f64>> {
    let pi = LogitMatrix::new(1, pi_logits.len(), pi_logits.to_vec())?;
    Ok(sample_arch(&pi, sampler, rng).data().to_vec())
}

/// `Σ_j π_j · G(θ_j)` with one fresh sample per proposal.
pub fn ensemble_arch<R: Rng + ?Sized>(
    pi: &[f64],
    thetas: &[LogitMatrix],
    sampler: Sampler,
    rng: &mut R,
) -> Result<ArchMatrix> {
    if pi.len() != thetas.len() || thetas.is_empty() {
        return Err(Error::shape(
            "ensemble_arch",
            format!("{} weights for {} proposals", pi.len(), thetas.len()),
        ));
    }
    let (rows, cols) = (thetas[0].rows, thetas[0].cols);
    let mut acc = vec![0.0; rows * cols];
    for (&w, theta) in pi.iter().zip(thetas) {
        if (theta.rows, theta.cols) != (rows, cols) {
            return Err(Error::shape("ensemble_arch", "proposals differ in shape"));
        }
        let a = sample_arch(theta, sampler, rng);
        acc.iter_mut().zip(a.data()).for_each(|(x, &v)| *x += w * v);
    }
    ArchMatrix::new(rows, cols, acc)
}

/// A differentiable draw: `arch` is an `[rows, cols]` var; `hard` holds the
/// chosen column per row for the Gumbel-Max sampler.
#[derive(Clone, Debug)]
pub struct SampledArch {
    pub arch: Var,
    pub hard: Option<Vec<usize>>,
}

/// Graph version of [`sample_arch`] (same noise stream for the same rng).
pub fn sample_arch_var<S: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<S>,
    theta: Var,
    sampler: Sampler,
    rng: &mut R,
) -> Result<SampledArch> {
    let shape = g.shape(theta).to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("sample_arch", format!("logits must be 2-D, got {shape:?}")));
    }
    let cols = shape[1];
    let z = if sampler.noisy() {
        let noise: Vec<S> = (0..shape[0] * cols).map(|_| S::of(gumbel(rng))).collect();
        let noise = g.constant(Tensor::new(shape.clone(), noise)?);
        g.add(theta, noise)?
    } else {
        theta
    };
    let scaled = g.scale(z, S::of(1.0 / sampler.tau));
    let soft = g.softmax(scaled);
    if sampler.kind != SamplerKind::GumbelMax {
        return Ok(SampledArch { arch: soft, hard: None });
    }
    let zv: Vec<f64> = g.data(z).iter().map(|v| v.to_f64_lossy()).collect();
    let hard: Vec<usize> = zv.chunks(cols).map(argmax).collect();
    let one_hot = one_hot_rows(&zv, cols).into_iter().map(S::of).collect();
    let arch = g.straight_through(soft, Tensor::new(shape, one_hot)?)?;
    Ok(SampledArch { arch, hard: Some(hard) })
}

/// `Σ_j π_j · A_j` on the graph; `pi` is a `[1, m]` var.
pub fn ensemble_arch_var<S: Scalar>(g: &mut Graph<S>, pi: Var, archs: &[Var]) -> Result<Var> {
    if g.value(pi).numel() != archs.len() || archs.is_empty() {
        return Err(Error::shape(
            "ensemble_arch",
            format!("{} weights for {} proposals", g.value(pi).numel(), archs.len()),
        ));
    }
    let mut acc: Option<Var> = None;
    for (j, &a) in archs.iter().enumerate() {
        let w = g.index(pi, j)?;
        let term = g.mul_scalar_var(a, w)?;
        acc = Some(match acc {
            Some(x) => g.add(x, term)?,
            None => term,
        });
    }
    Ok(acc.expect("nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn equal_logits_split_evenly() {
        let t = LogitMatrix::new(1, 2, vec![0.3, 0.3]).unwrap();
        let a = sample_arch(&t, Sampler::softmax(1.0).unwrap(), &mut seeded(0, 0));
        assert_eq!(a.data(), &[0.5, 0.5]);
    }

    #[test]
    fn low_temperature_limit() {
        let t = LogitMatrix::new(2, 3, vec![0.1, 0.9, 0.2, 0.5, f64::NEG_INFINITY, 0.4]).unwrap();
        let a = sample_arch(&t, Sampler::softmax(1e-4).unwrap(), &mut seeded(0, 0));
        assert_eq!(a.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(LogitMatrix::new(1, 3, vec![1.0, 2.0, 2.0]).unwrap().argmax(), vec![1]);
    }

    #[test]
    fn pins_never_sampled() {
        let t = LogitMatrix::new(1, 3, vec![f64::NEG_INFINITY, -5.0, f64::NEG_INFINITY]).unwrap();
        let mut rng = seeded(3, 0);
        for kind in [SamplerKind::Softmax, SamplerKind::GumbelSoftmax, SamplerKind::GumbelMax] {
            let a = sample_arch(&t, Sampler::new(kind, 0.5).unwrap(), &mut rng);
            assert_eq!(a.data(), &[0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(Sampler::softmax(0.0).is_err());
        assert!(LogitMatrix::new(1, 2, vec![f64::NAN, 0.0]).is_err());
        assert!(LogitMatrix::new(1, 2, vec![f64::INFINITY, 0.0]).is_err());
        assert!(LogitMatrix::new(1, 2, vec![f64::NEG_INFINITY; 2]).is_err());
        assert_eq!("gumbel_max".parse::<SamplerKind>().unwrap(), SamplerKind::GumbelMax);
        assert!("argmax".parse::<SamplerKind>().is_err());
    }

    #[test]
    fn mixture_cases() {
        let mut rng = seeded(1, 1);
        let s = Sampler::softmax(1.0).unwrap();
        assert_eq!(sample_mixture(&[0.0; 4], s, &mut rng).unwrap(), vec![0.25; 4]);
        let gm = Sampler::gumbel_max(1.0).unwrap();
        assert_eq!(sample_mixture(&[0.7], gm, &mut rng).unwrap(), vec![1.0]);
    }

    #[test]
    fn graph_sampler_matches_plain() {
        let t = LogitMatrix::new(2, 3, vec![0.1, 0.9, 0.2, 0.5, f64::NEG_INFINITY, 0.4]).unwrap();
        for kind in [SamplerKind::Softmax, SamplerKind::GumbelSoftmax, SamplerKind::GumbelMax] {
            let s = Sampler::new(kind, 0.7).unwrap();
            let plain = sample_arch(&t, s, &mut seeded(5, 2));
            let mut g = Graph::<f64>::new();
            let v = g.leaf(t.to_tensor());
            let out = sample_arch_var(&mut g, v, s, &mut seeded(5, 2)).unwrap();
            for (a, b) in g.data(out.arch).iter().zip(plain.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(out.hard.is_some(), kind == SamplerKind::GumbelMax);
        }
    }

    #[test]
    fn straight_through_gradient_is_relaxed_gradient() {
        let t = LogitMatrix::new(1, 3, vec![0.3, -0.2, 0.8]).unwrap();
        let weights = [1.0, 2.0, 5.0];
        let grad = |kind| {
            let mut g = Graph::<f64>::new();
            let v = g.leaf(t.to_tensor());
            let s = sample_arch_var(&mut g, v, Sampler::new(kind, 0.5).unwrap(), &mut seeded(8, 0)).unwrap();
            let w = g.mul_const(s.arch, &weights).unwrap();
            let loss = g.sum(w);
            g.backward(loss).unwrap();
            g.grad(v).unwrap().to_vec()
        };
        assert_eq!(grad(SamplerKind::GumbelMax), grad(SamplerKind::GumbelSoftmax));
    }

    #[test]
    fn ensemble_with_one_hot_weights() {
        let a = LogitMatrix::new(1, 2, vec![0.0, 1.0]).unwrap();
        let b = LogitMatrix::new(1, 2, vec![2.0, 0.0]).unwrap();
        let s = Sampler::softmax(1.0).unwrap();
        let e = ensemble_arch(&[0.0, 1.0], &[a, b.clone()], s, &mut seeded(0, 0)).unwrap();
        assert_eq!(e, sample_arch(&b, s, &mut seeded(0, 0)));
    }
}
