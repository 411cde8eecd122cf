use rayon::prelude::*;

use crate::Scalar;

/// Work size (m·k·n) above which `gemm` splits output rows across threads.
/// Every output row is computed by one thread in a fixed order, so results
/// are identical with or without the split.
const PAR_THRESHOLD: usize = 1 << 18;

/// `C[m×n] = op(A) · op(B)` with row-major storage.
///
/// `trans_a` reads `a` as `[k×m]`; `trans_b` reads `b` as `[n×k]`.
pub fn gemm<S: Scalar>(
    a: &[S],
    b: &[S],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) -> Vec<S> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![S::zero(); m * n];
    if m == 0 || n == 0 {
        return c;
    }
    // a transposed copy keeps the inner loop contiguous
    let bt;
    let b = if trans_b {
        bt = transpose(b, n, k);
        &bt[..]
    } else {
        b
    };
    let row = |i: usize, out: &mut [S]| {
        for p in 0..k {
            let av = if trans_a { a[p * m + i] } else { a[i * k + p] };
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in out.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, out)| row(i, out));
    } else {
        c.chunks_mut(n).enumerate().for_each(|(i, out)| row(i, out));
    }
    c
}

/// `[r×c]` to `[c×r]`.
fn transpose<S: Scalar>(x: &[S], r: usize, c: usize) -> Vec<S> {
    let mut t = vec![S::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = x[i * c + j];
        }
    }
    t
}

/// Geometry of a 2-D convolution over one image plane group.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `channels` planes of `src` into a `[C·k·k, H'·W']` matrix.
pub(crate) fn im2col<S: Scalar>(src: &[S], g: &ConvGeom, dst: &mut [S]) {
    let (k, hw) = (g.kernel, g.col_cols());
    for c in 0..g.channels {
        let plane = &src[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let out = &mut dst[r * hw..(r + 1) * hw];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        out[oy * g.out_w + ox] = if iy >= 0
                            && ix >= 0
                            && (iy as usize) < g.height
                            && (ix as usize) < g.width
                        {
                            plane[iy as usize * g.width + ix as usize]
                        } else {
                            S::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into planes.
pub(crate) fn col2im<S: Scalar>(cols: &[S], g: &ConvGeom, dst: &mut [S]) {
    let (k, hw) = (g.kernel, g.col_cols());
    for c in 0..g.channels {
        let plane = &mut dst[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let col = &cols[r * hw..(r + 1) * hw];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix as usize >= g.width {
                            continue;
                        }
                        plane[iy as usize * g.width + ix as usize] += col[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

impl ConvGeom {
    /// Output index range `[lo, hi)` along one axis for kernel tap `t`.
    fn valid(&self, t: usize, size: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if t >= p { 0 } else { (p - t).div_ceil(s) };
        let hi = if size + p > t { ((size - 1 + p - t) / s + 1).min(out) } else { 0 };
        (lo, hi.max(lo))
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Single-channel correlation `out += w ⋆ x` (depthwise fast path).
pub(crate) fn plane_conv<S: Scalar>(x: &[S], w: &[S], g: &ConvGeom, out: &mut [S]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding);
    for ky in 0..k {
        let (oy_lo, oy_hi) = g.valid(ky, g.height, g.out_h);
        for kx in 0..k {
            let (ox_lo, ox_hi) = g.valid(kx, g.width, g.out_w);
            let wv = w[ky * k + kx];
            for oy in oy_lo..oy_hi {
                let xrow = &x[(oy * s + ky - p) * g.width..];
                let orow = &mut out[oy * g.out_w..(oy + 1) * g.out_w];
                for ox in ox_lo..ox_hi {
                    orow[ox] += wv * xrow[ox * s + kx - p];
                }
            }
        }
    }
}

/// Adjoint of [`plane_conv`] for the input and the kernel.
pub(crate) fn plane_conv_backward<S: Scalar>(
    x: &[S],
    w: &[S],
    dy: &[S],
    g: &ConvGeom,
    dx: Option<&mut [S]>,
    dw: Option<&mut [S]>,
) {
    let (k, s, p) = (g.kernel, g.stride, g.padding);
    if let Some(dw) = dw {
        for ky in 0..k {
            let (oy_lo, oy_hi) = g.valid(ky, g.height, g.out_h);
            for kx in 0..k {
                let (ox_lo, ox_hi) = g.valid(kx, g.width, g.out_w);
                let mut acc = S::zero();
                for oy in oy_lo..oy_hi {
                    let xrow = &x[(oy * s + ky - p) * g.width..];
                    let drow = &dy[oy * g.out_w..];
                    for ox in ox_lo..ox_hi {
                        acc += drow[ox] * xrow[ox * s + kx - p];
                    }
                }
                dw[ky * k + kx] += acc;
            }
        }
    }
    if let Some(dx) = dx {
        for ky in 0..k {
            let (oy_lo, oy_hi) = g.valid(ky, g.height, g.out_h);
            for kx in 0..k {
                let (ox_lo, ox_hi) = g.valid(kx, g.width, g.out_w);
                let wv = w[ky * k + kx];
                for oy in oy_lo..oy_hi {
                    let base = (oy * s + ky - p) * g.width;
                    let drow = &dy[oy * g.out_w..];
                    for ox in ox_lo..ox_hi {
                        dx[base + ox * s + kx - p] += wv * drow[ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_all_transpose_modes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);
        let at = transpose(&a, m, k);
        let bt = transpose(&b, k, n);
        for (aa, ta) in [(&a, false), (&at, true)] {
            for (bb, tb) in [(&b, false), (&bt, true)] {
                let got = gemm(aa, bb, m, k, n, ta, tb);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn plane_conv_matches_im2col() {
        for (h, w, k, stride) in [(5, 5, 3, 1), (6, 7, 3, 2), (5, 4, 5, 2), (3, 3, 5, 1), (1, 1, 3, 2)] {
            let g = ConvGeom {
                channels: 1,
                height: h,
                width: w,
                kernel: k,
                stride,
                padding: (k - 1) / 2,
                out_h: (h + k - 1 - k) / stride + 1,
                out_w: (w + k - 1 - k) / stride + 1,
            };
            let x: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.7).sin()).collect();
            let kern: Vec<f64> = (0..k * k).map(|i| (i as f64 * 0.3).cos()).collect();
            let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
            im2col(&x, &g, &mut cols);
            let want = gemm(&kern, &cols, 1, k * k, g.col_cols(), false, false);
            let mut got = vec![0.0; g.col_cols()];
            plane_conv(&x, &kern, &g, &mut got);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
            let dy: Vec<f64> = (0..g.col_cols()).map(|i| (i as f64 * 1.3).sin()).collect();
            let want_dw = gemm(&dy, &cols, 1, g.col_cols(), k * k, false, true);
            let dcols = gemm(&kern, &dy, k * k, 1, g.col_cols(), true, false);
            let mut want_dx = vec![0.0; h * w];
            col2im(&dcols, &g, &mut want_dx);
            let (mut dx, mut dw) = (vec![0.0; h * w], vec![0.0; k * k]);
            plane_conv_backward(&x, &kern, &dy, &g, Some(&mut dx), Some(&mut dw));
            for (a, b) in dx.iter().zip(&want_dx).chain(dw.iter().zip(&want_dw)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parallel_path_matches_serial_bits() {
        let (m, k, n) = (64, 80, 64);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.013).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.029).cos()).collect();
        assert!(m * k * n >= PAR_THRESHOLD);
        let par = gemm(&a, &b, m, k, n, false, false);
        let ser = naive(&a, &b, m, k, n);
        for (p, s) in par.iter().zip(&ser) {
            assert!((p - s).abs() < 1e-9);
        }
    }
}
