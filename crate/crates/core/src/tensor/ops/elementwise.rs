use super::same_shape;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result, Scalar};

fn zip_map<S: Scalar>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

impl<S: Scalar> Graph<S> {
    /// Elementwise `a + b`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = Tensor::new(
            self.shape(a).to_vec(),
            zip_map(self.data(a), self.data(b), |x, y| x + y),
        )?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|args| vec![Some(args.grad.to_vec()), Some(args.grad.to_vec())]),
        ))
    }

    /// Shortcut connection `y = F(x) + x`; the upstream gradient reaches both
    /// operands unchanged.
    pub fn residual_add(&mut self, x: Var, fx: Var) -> Result<Var> {
        if self.shape(x) != self.shape(fx) {
            return Err(Error::shape(
                "residual_add",
                format!(
                    "shortcut {:?} vs transform {:?}",
                    self.shape(x),
                    self.shape(fx)
                ),
            ));
        }
        self.add(fx, x)
    }

    /// Elementwise `a - b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = Tensor::new(
            self.shape(a).to_vec(),
            zip_map(self.data(a), self.data(b), |x, y| x - y),
        )?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|args| {
                vec![
                    Some(args.grad.to_vec()),
                    Some(args.grad.iter().map(|&g| -g).collect()),
                ]
            }),
        ))
    }

    /// Elementwise `a * b`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = Tensor::new(
            self.shape(a).to_vec(),
            zip_map(self.data(a), self.data(b), |x, y| x * y),
        )?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(|args| {
                let (x, y) = (args.inputs[0].data(), args.inputs[1].data());
                vec![
                    args.needs[0].then(|| zip_map(args.grad, y, |g, v| g * v)),
                    args.needs[1].then(|| zip_map(args.grad, x, |g, v| g * v)),
                ]
            }),
        ))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, a: Var, c: &[S]) -> Result<Var> {
        if c.len() != self.value(a).numel() {
            return Err(Error::shape(
                "mul_const",
                format!("operand {:?} vs constant of {} values", self.shape(a), c.len()),
            ));
        }
        let c = c.to_vec();
        let out = Tensor::new(self.shape(a).to_vec(), zip_map(self.data(a), &c, |x, y| x * y))?;
        Ok(self.push(
            out,
            &[a],
            Box::new(move |args| vec![Some(zip_map(args.grad, &c, |g, v| g * v))]),
        ))
    }

    /// `a * c` for a constant scalar.
    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(
            out,
            &[a],
            Box::new(move |args| vec![Some(args.grad.iter().map(|&g| g * c).collect())]),
        )
    }

    /// `a + c` for a constant scalar.
    pub fn add_scalar(&mut self, a: Var, c: S) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, &[a], Box::new(|args| vec![Some(args.grad.to_vec())]))
    }

    /// `x * s` where `s` holds a single element.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::shape(
                "mul_scalar_var",
                format!("scale must be a single element, got {:?}", self.shape(s)),
            ));
        }
        let sv = self.data(s)[0];
        let out = self.value(x).map(|v| v * sv);
        Ok(self.push(
            out,
            &[x, s],
            Box::new(|args| {
                let sv = args.inputs[1].data()[0];
                let xs = args.inputs[0].data();
                vec![
                    args.needs[0].then(|| args.grad.iter().map(|&g| g * sv).collect()),
                    args.needs[1].then(|| {
                        vec![xs.iter().zip(args.grad).map(|(&x, &g)| x * g).sum()]
                    }),
                ]
            }),
        ))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.abs());
        self.push(
            out,
            &[a],
            Box::new(|args| {
                let x = args.inputs[0].data();
                vec![Some(zip_map(args.grad, x, |g, v| {
                    if v > S::zero() {
                        g
                    } else if v < S::zero() {
                        -g
                    } else {
                        S::zero()
                    }
                }))]
            }),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > S::zero() { x } else { S::zero() });
        self.push(
            out,
            &[a],
            Box::new(|args| {
                let x = args.inputs[0].data();
                vec![Some(zip_map(args.grad, x, |g, v| {
                    if v > S::zero() {
                        g
                    } else {
                        S::zero()
                    }
                }))]
            }),
        )
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let total: S = self.data(a).iter().copied().sum();
        let n = self.value(a).numel();
        self.push(
            Tensor::scalar(total),
            &[a],
            Box::new(move |args| vec![Some(vec![args.grad[0]; n])]),
        )
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum(a);
        self.scale(s, S::one() / S::of(n as f64))
    }

    /// Element `i` of the flattened tensor, shape `[1]`.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let n = self.value(a).numel();
        if i >= n {
            return Err(Error::InvalidArgument(format!(
                "index {i} out of range for {n} elements"
            )));
        }
        let v = self.data(a)[i];
        Ok(self.push(
            Tensor::scalar(v),
            &[a],
            Box::new(move |args| {
                let mut g = vec![S::zero(); n];
                g[i] = args.grad[0];
                vec![Some(g)]
            }),
        ))
    }

    /// Straight-through estimator: the forward value is `hard`, the backward
    /// pass routes the gradient to `soft` unchanged.
    pub fn straight_through(&mut self, soft: Var, hard: Tensor<S>) -> Result<Var> {
        if hard.shape() != self.shape(soft) {
            return Err(Error::shape(
                "straight_through",
                format!("soft {:?} vs hard {:?}", self.shape(soft), hard.shape()),
            ));
        }
        Ok(self.push(hard, &[soft], Box::new(|args| vec![Some(args.grad.to_vec())])))
    }

    /// Multiplies channel `c` of an `[N, C, ...]` tensor by `scales[c]`.
    pub fn channel_scale(&mut self, x: Var, scales: &[S]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || shape[1] != scales.len() {
            return Err(Error::shape(
                "channel_scale",
                format!("input {shape:?} vs {} channel scales", scales.len()),
            ));
        }
        let inner: usize = shape[2..].iter().product();
        let c = shape[1];
        let scales = scales.to_vec();
        let apply = move |src: &[S], scales: &[S]| -> Vec<S> {
            src.iter()
                .enumerate()
                .map(|(i, &v)| v * scales[(i / inner) % c])
                .collect()
        };
        let out = Tensor::new(shape, apply(self.data(x), &scales))?;
        Ok(self.push(
            out,
            &[x],
            Box::new(move |args| vec![Some(apply(args.grad, &scales))]),
        ))
    }
}
