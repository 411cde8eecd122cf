use crate::tensor::kernels::{col2im, im2col, plane_conv, plane_conv_backward, ConvGeom};
use crate::tensor::{gemm, Graph, Tensor, Var};
use crate::{Error, Result, Scalar};

/// Validated shape bookkeeping for one `conv2d` call.
#[derive(Clone, Copy, Debug)]
struct ConvPlan {
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    groups: usize,
    geom: ConvGeom,
}

impl ConvPlan {
    fn new(x: &[usize], w: &[usize], stride: usize, padding: usize, groups: usize) -> Result<Self> {
        let [n, c_in, h, wd] = x[..] else {
            return Err(Error::shape("conv2d", format!("input must be [N,C,H,W], got {x:?}")));
        };
        let [c_out, c_per_group, kh, kw] = w[..] else {
            return Err(Error::shape("conv2d", format!("weight must be [C_out,C_in/g,k,k], got {w:?}")));
        };
        if groups == 0 || stride == 0 {
            return Err(Error::InvalidArgument("conv2d: groups and stride must be positive".into()));
        }
        if kh != kw {
            return Err(Error::shape("conv2d", format!("kernel height {kh} vs kernel width {kw}")));
        }
        if c_in % groups != 0 {
            return Err(Error::shape("conv2d", format!("input channels {c_in} not divisible by groups {groups}")));
        }
        if c_out % groups != 0 {
            return Err(Error::shape("conv2d", format!("output channels {c_out} not divisible by groups {groups}")));
        }
        if c_per_group != c_in / groups {
            return Err(Error::shape(
                "conv2d",
                format!("weight input-channel dimension {c_per_group}, expected C_in/groups = {}", c_in / groups),
            ));
        }
        if h + 2 * padding < kh || wd + 2 * padding < kw {
            return Err(Error::shape(
                "conv2d",
                format!("padded input height/width {}x{} smaller than kernel {kh}", h + 2 * padding, wd + 2 * padding),
            ));
        }
        let out_h = (h + 2 * padding - kh) / stride + 1;
        let out_w = (wd + 2 * padding - kw) / stride + 1;
        Ok(Self {
            batch: n,
            in_ch: c_in,
            out_ch: c_out,
            groups,
            geom: ConvGeom {
                channels: c_per_group,
                height: h,
                width: wd,
                kernel: kh,
                stride,
                padding,
                out_h,
                out_w,
            },
        })
    }

    fn in_plane(&self) -> usize {
        self.geom.height * self.geom.width
    }

    fn out_plane(&self) -> usize {
        self.geom.out_h * self.geom.out_w
    }

    fn out_per_group(&self) -> usize {
        self.out_ch / self.groups
    }

    fn is_depthwise(&self) -> bool {
        self.geom.channels == 1 && self.out_per_group() == 1
    }

    fn forward<S: Scalar>(&self, x: &[S], w: &[S]) -> Vec<S> {
        let g = &self.geom;
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let opg = self.out_per_group();
        let mut out = vec![S::zero(); self.batch * self.out_ch * self.out_plane()];
        if self.is_depthwise() {
            let kk = g.kernel * g.kernel;
            for n in 0..self.batch {
                for c in 0..self.out_ch {
                    let dst = &mut out[(n * self.out_ch + c) * cols..(n * self.out_ch + c + 1) * cols];
                    plane_conv(self.input_slice(x, n, c), &w[c * kk..(c + 1) * kk], g, dst);
                }
            }
            return out;
        }
        let mut buf = vec![S::zero(); if g.is_pointwise() { 0 } else { rows * cols }];
        for n in 0..self.batch {
            for grp in 0..self.groups {
                let src = self.input_slice(x, n, grp);
                let colmat = if g.is_pointwise() {
                    src
                } else {
                    im2col(src, g, &mut buf);
                    &buf[..]
                };
                let wg = &w[grp * opg * rows..(grp + 1) * opg * rows];
                let y = gemm(wg, colmat, opg, rows, cols, false, false);
                let start = (n * self.out_ch + grp * opg) * cols;
                out[start..start + opg * cols].copy_from_slice(&y);
            }
        }
        out
    }

    fn backward<S: Scalar>(
        &self,
        x: &[S],
        w: &[S],
        dy: &[S],
        need_x: bool,
        need_w: bool,
    ) -> (Option<Vec<S>>, Option<Vec<S>>) {
        let g = &self.geom;
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let opg = self.out_per_group();
        let mut dx = need_x.then(|| vec![S::zero(); x.len()]);
        let mut dw = need_w.then(|| vec![S::zero(); w.len()]);
        if self.is_depthwise() {
            let (kk, plane) = (g.kernel * g.kernel, self.in_plane());
            for n in 0..self.batch {
                for c in 0..self.out_ch {
                    let off = (n * self.in_ch + c) * plane;
                    plane_conv_backward(
                        self.input_slice(x, n, c),
                        &w[c * kk..(c + 1) * kk],
                        &dy[(n * self.out_ch + c) * cols..(n * self.out_ch + c + 1) * cols],
                        g,
                        dx.as_mut().map(|d| &mut d[off..off + plane]),
                        dw.as_mut().map(|d| &mut d[c * kk..(c + 1) * kk]),
                    );
                }
            }
            return (dx, dw);
        }
        let mut buf = vec![S::zero(); if g.is_pointwise() { 0 } else { rows * cols }];
        for n in 0..self.batch {
            for grp in 0..self.groups {
                let start = (n * self.out_ch + grp * opg) * cols;
                let dyg = &dy[start..start + opg * cols];
                let wg = &w[grp * opg * rows..(grp + 1) * opg * rows];
                if let Some(dw) = &mut dw {
                    let src = self.input_slice(x, n, grp);
                    let colmat = if g.is_pointwise() {
                        src
                    } else {
                        im2col(src, g, &mut buf);
                        &buf[..]
                    };
                    let part = gemm(dyg, colmat, opg, cols, rows, false, true);
                    dw[grp * opg * rows..(grp + 1) * opg * rows]
                        .iter_mut()
                        .zip(part)
                        .for_each(|(a, b)| *a += b);
                }
                if let Some(dx) = &mut dx {
                    let dcols = gemm(wg, dyg, rows, opg, cols, true, false);
                    let off = (n * self.in_ch + grp * g.channels) * self.in_plane();
                    let dst = &mut dx[off..off + g.channels * self.in_plane()];
                    if g.is_pointwise() {
                        dst.iter_mut().zip(dcols).for_each(|(a, b)| *a += b);
                    } else {
                        col2im(&dcols, g, dst);
                    }
                }
            }
        }
        (dx, dw)
    }

    fn input_slice<'a, S>(&self, x: &'a [S], n: usize, grp: usize) -> &'a [S] {
        let off = (n * self.in_ch + grp * self.geom.channels) * self.in_plane();
        &x[off..off + self.geom.channels * self.in_plane()]
    }
}

impl<S: Scalar> Graph<S> {
    /// Grouped 2-D cross-correlation via im2col + matrix multiply.
    ///
    /// `input: [N, C_in, H, W]`, `weight: [C_out, C_in/groups, k, k]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let plan = ConvPlan::new(self.shape(input), self.shape(weight), stride, padding, groups)?;
        let y = plan.forward(self.data(input), self.data(weight));
        let out = Tensor::new(
            vec![plan.batch, plan.out_ch, plan.geom.out_h, plan.geom.out_w],
            y,
        )?;
        Ok(self.push(
            out,
            &[input, weight],
            Box::new(move |args| {
                let (dx, dw) = plan.backward(
                    args.inputs[0].data(),
                    args.inputs[1].data(),
                    args.grad,
                    args.needs[0],
                    args.needs[1],
                );
                vec![dx, dw]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::{Graph, Tensor};

    #[test]
    fn one_by_one_scalar_multiply() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap());
        let w = g.constant(Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap());
        let y = g.conv2d(x, w, 1, 0, 1).unwrap();
        assert_eq!(g.data(y), &[6.0]);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..2 * 5 * 5).map(|i| (i as f64).sin()).collect();
        let x = g.constant(Tensor::new(vec![1, 2, 5, 5], data.clone()).unwrap());
        // per-channel identity: depthwise 3x3 with center tap 1
        let mut k = vec![0.0; 2 * 9];
        k[4] = 1.0;
        k[9 + 4] = 1.0;
        let w = g.constant(Tensor::new(vec![2, 1, 3, 3], k).unwrap());
        let y = g.conv2d(x, w, 1, 1, 2).unwrap();
        assert_eq!(g.data(y), &data[..]);
    }

    #[test]
    fn stride_two_output_size_is_ceil() {
        let mut g = Graph::<f64>::new();
        for (h, want) in [(4, 2), (5, 3), (7, 4), (8, 4)] {
            let x = g.constant(Tensor::zeros(&[1, 1, h, h]));
            let w = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
            let y = g.conv2d(x, w, 2, 1, 1).unwrap();
            assert_eq!(g.shape(y), &[1, 1, want, want]);
        }
    }

    #[test]
    fn mismatch_names_dimension() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let w = g.constant(Tensor::zeros(&[4, 2, 3, 3]));
        let err = g.conv2d(x, w, 1, 1, 1).unwrap_err().to_string();
        assert!(err.contains("input-channel dimension 2"), "{err}");
        let err = g.conv2d(x, w, 1, 1, 2).unwrap_err().to_string();
        assert!(err.contains("input channels 3 not divisible"), "{err}");
    }
}
