use crate::tensor::{gemm, Graph, Tensor, Var};
use crate::{Error, Result, Scalar};

impl<S: Scalar> Graph<S> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(out, &[a], Box::new(|args| vec![Some(args.grad.to_vec())])))
    }

    /// Flattens each input and stacks them as the rows of a `[k, n]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::InvalidArgument("stack_rows of zero tensors".into()));
        };
        let n = self.value(first).numel();
        let mut data = Vec::with_capacity(n * rows.len());
        for (i, &r) in rows.iter().enumerate() {
            if self.value(r).numel() != n {
                return Err(Error::shape(
                    "stack_rows",
                    format!("row {i} has {} elements, row 0 has {n}", self.value(r).numel()),
                ));
            }
            data.extend_from_slice(self.data(r));
        }
        let k = rows.len();
        let out = Tensor::new(vec![k, n], data)?;
        Ok(self.push(
            out,
            rows,
            Box::new(move |args| {
                (0..k)
                    .map(|i| args.needs[i].then(|| args.grad[i * n..(i + 1) * n].to_vec()))
                    .collect()
            }),
        ))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let [r, c] = shape[..] else {
            return Err(Error::shape("transpose", format!("expected 2-D, got {shape:?}")));
        };
        let t = |src: &[S], r: usize, c: usize| {
            let mut out = vec![S::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = src[i * c + j];
                }
            }
            out
        };
        let out = Tensor::new(vec![c, r], t(self.data(a), r, c))?;
        Ok(self.push(out, &[a], Box::new(move |args| vec![Some(t(args.grad, c, r))])))
    }

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (&[m, k], &[k2, n]) = (&sa[..], &sb[..]) else {
            return Err(Error::shape("matmul", format!("expected 2-D operands, got {sa:?} and {sb:?}")));
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimension {k} of {sa:?} vs {k2} of {sb:?}"),
            ));
        }
        let out = Tensor::new(vec![m, n], gemm(self.data(a), self.data(b), m, k, n, false, false))?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(move |args| {
                let (x, y) = (args.inputs[0].data(), args.inputs[1].data());
                vec![
                    args.needs[0].then(|| gemm(args.grad, y, m, n, k, false, true)),
                    args.needs[1].then(|| gemm(x, args.grad, k, m, n, true, false)),
                ]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::{Graph, Tensor};

    #[test]
    fn matmul_small() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.constant(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 1]);
        assert_eq!(g.data(c), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_reports_inner_dimension() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("inner dimension 3"), "{err}");
    }
}
