use crate::tensor::{gemm, Graph, Tensor, Var};
use crate::{Error, Result, Scalar};

/// Splits a shape into `(rows, last)` for ops acting along the last axis.
fn rows_of(shape: &[usize]) -> (usize, usize) {
    let last = *shape.last().unwrap_or(&1);
    let rows = if last == 0 { 0 } else { shape.iter().product::<usize>() / last };
    (rows, last)
}

fn softmax_row<S: Scalar>(src: &[S], dst: &mut [S]) {
    let max = src.iter().copied().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        // every entry pinned to -inf: leave the row at zero
        dst.iter_mut().for_each(|d| *d = S::zero());
        return;
    }
    let mut total = S::zero();
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        total += *d;
    }
    dst.iter_mut().for_each(|d| *d /= total);
}

impl<S: Scalar> Graph<S> {
    /// `x · Wᵀ (+ b)` with `x: [N, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (&[n, fin], &[fout, fin_w]) = (&sx[..], &sw[..]) else {
            return Err(Error::shape(
                "linear",
                format!("expected input [N, in] and weight [out, in], got {sx:?} and {sw:?}"),
            ));
        };
        if fin != fin_w {
            return Err(Error::shape(
                "linear",
                format!("input features {fin} vs weight in_features {fin_w}"),
            ));
        }
        let mut y = gemm(self.data(x), self.data(w), n, fin, fout, false, true);
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(Error::shape(
                    "linear",
                    format!("bias {:?} vs out_features {fout}", self.shape(b)),
                ));
            }
            let bias = self.data(b);
            for row in y.chunks_mut(fout) {
                row.iter_mut().zip(bias).for_each(|(v, &bv)| *v += bv);
            }
        }
        let out = Tensor::new(vec![n, fout], y)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            out,
            &inputs,
            Box::new(move |args| {
                let (xv, wv) = (args.inputs[0].data(), args.inputs[1].data());
                let mut grads = vec![
                    args.needs[0].then(|| gemm(args.grad, wv, n, fout, fin, false, false)),
                    args.needs[1].then(|| gemm(args.grad, xv, fout, n, fin, true, false)),
                ];
                if args.inputs.len() == 3 {
                    grads.push(args.needs[2].then(|| {
                        let mut gb = vec![S::zero(); fout];
                        for row in args.grad.chunks(fout) {
                            gb.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
                        }
                        gb
                    }));
                }
                grads
            }),
        ))
    }

    /// `[N, C, H, W] → [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [n, c, h, w] = shape[..] else {
            return Err(Error::shape("global_avg_pool", format!("expected [N,C,H,W], got {shape:?}")));
        };
        let hw = h * w;
        let inv = S::one() / S::of(hw as f64);
        let data: Vec<S> = self
            .data(x)
            .chunks(hw)
            .map(|plane| plane.iter().copied().sum::<S>() * inv)
            .collect();
        let out = Tensor::new(vec![n, c], data)?;
        Ok(self.push(
            out,
            &[x],
            Box::new(move |args| {
                let mut g = Vec::with_capacity(n * c * hw);
                for &gv in args.grad {
                    g.extend(std::iter::repeat(gv * inv).take(hw));
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Softmax along the last axis. Entries at `-inf` map to exactly zero.
    pub fn softmax(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let (rows, k) = rows_of(&shape);
        let mut data = vec![S::zero(); rows * k];
        for (src, dst) in self.data(x).chunks(k).zip(data.chunks_mut(k)) {
            softmax_row(src, dst);
        }
        let out = Tensor::new(shape, data).expect("same shape");
        self.push(
            out,
            &[x],
            Box::new(move |args| {
                let p = args.output.data();
                let mut g = vec![S::zero(); rows * k];
                for ((gr, pr), out) in args.grad.chunks(k).zip(p.chunks(k)).zip(g.chunks_mut(k)) {
                    let dot: S = gr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gi), &pi) in out.iter_mut().zip(gr).zip(pr) {
                        *o = pi * (gi - dot);
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let (rows, k) = rows_of(&shape);
        let mut data = vec![S::zero(); rows * k];
        for (src, dst) in self.data(x).chunks(k).zip(data.chunks_mut(k)) {
            let max = src.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = max + src.iter().map(|&s| (s - max).exp()).sum::<S>().ln();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s - lse;
            }
        }
        let out = Tensor::new(shape, data).expect("same shape");
        self.push(
            out,
            &[x],
            Box::new(move |args| {
                let lp = args.output.data();
                let mut g = vec![S::zero(); rows * k];
                for ((gr, lr), out) in args.grad.chunks(k).zip(lp.chunks(k)).zip(g.chunks_mut(k)) {
                    let total: S = gr.iter().copied().sum();
                    for ((o, &gi), &li) in out.iter_mut().zip(gr).zip(lr) {
                        *o = gi - li.exp() * total;
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Mean negative log-likelihood of `labels` under softmax(`logits`).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let [n, k] = shape[..] else {
            return Err(Error::shape("cross_entropy", format!("expected [N, K] logits, got {shape:?}")));
        };
        if labels.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{n} logit rows vs {} labels", labels.len()),
            ));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::InvalidArgument(format!(
                "cross_entropy: label {l} at position {i} out of range for {k} classes"
            )));
        }
        let lp = self.log_softmax(logits);
        let picked: Vec<S> = {
            let d = self.data(lp);
            labels.iter().enumerate().map(|(i, &l)| d[i * k + l]).collect()
        };
        let nll = -picked.iter().copied().sum::<S>() / S::of(n as f64);
        let labels = labels.to_vec();
        Ok(self.push(
            Tensor::scalar(nll),
            &[lp],
            Box::new(move |args| {
                let mut g = vec![S::zero(); n * k];
                let scale = -args.grad[0] / S::of(n as f64);
                for (i, &l) in labels.iter().enumerate() {
                    g[i * k + l] = scale;
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Scales every row of a 2-D tensor to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [r, c] = shape[..] else {
            return Err(Error::shape("normalize_rows", format!("expected 2-D, got {shape:?}")));
        };
        let norms: Vec<S> = self
            .data(x)
            .chunks(c)
            .map(|row| row.iter().map(|&v| v * v).sum::<S>().sqrt())
            .collect();
        if let Some(i) = norms.iter().position(|&v| v == S::zero()) {
            return Err(Error::InvalidArgument(format!("normalize_rows: row {i} has zero norm")));
        }
        let mut data = self.data(x).to_vec();
        for (row, &nrm) in data.chunks_mut(c).zip(&norms) {
            row.iter_mut().for_each(|v| *v /= nrm);
        }
        let out = Tensor::new(vec![r, c], data)?;
        Ok(self.push(
            out,
            &[x],
            Box::new(move |args| {
                let y = args.output.data();
                let mut g = vec![S::zero(); r * c];
                for i in 0..r {
                    let (gy, yy) = (&args.grad[i * c..(i + 1) * c], &y[i * c..(i + 1) * c]);
                    let dot: S = gy.iter().zip(yy).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        g[i * c + j] = (gy[j] - yy[j] * dot) / norms[i];
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::{Graph, Tensor};

    #[test]
    fn softmax_symmetric() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let p = g.softmax(x);
        assert_eq!(g.data(p), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_pinned_entries_are_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(vec![1.0, f64::NEG_INFINITY, 1.0]));
        let p = g.softmax(x);
        assert_eq!(g.data(p), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn cross_entropy_vanishes_with_growing_gap() {
        let mut prev = f64::INFINITY;
        for gap in [1.0, 5.0, 10.0, 20.0, 40.0] {
            let mut g = Graph::<f64>::new();
            let x = g.constant(Tensor::new(vec![1, 3], vec![gap, 0.0, 0.0]).unwrap());
            let l = g.cross_entropy(x, &[0]).unwrap();
            let v = g.data(l)[0];
            assert!(v < prev && v >= 0.0);
            prev = v;
        }
        assert!(prev < 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.cross_entropy(x, &[0, 3]).unwrap_err().to_string();
        assert!(err.contains("label 3"), "{err}");
    }

    #[test]
    fn linear_with_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let w = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap());
        let b = g.constant(Tensor::from_vec(vec![0.5, -0.5]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.data(y), &[1.5, 2.5]);
    }
}
