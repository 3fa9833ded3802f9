//! Numeric kernels: matrix products, im2col, pooling, softmax.

/// `c = op(a) * op(b) + beta * c` for row-major operands.
///
/// `op(a)` is `m x k` and `op(b)` is `k x n`. With `trans_a` the buffer `a`
/// holds a row-major `k x m` matrix, likewise for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length assertions above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D sliding window over a `[c, h, w]` sample.
#[derive(Debug, Clone, Copy)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, o: usize, kk: usize, extent: usize, pad: usize) -> Option<usize> {
        let pos = (o * self.stride + kk) as isize - pad as isize;
        if pos < 0 || pos as usize >= extent {
            None
        } else {
            Some(pos as usize)
        }
    }
}

/// Unfolds one sample into a `[c*k*k, out_h*out_w]` matrix.
pub fn im2col(x: &[f32], g: &Window, col: &mut [f32]) {
    let ncol = g.col_cols();
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * ncol..(row + 1) * ncol];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ki, g.height, g.pad_top) else {
                        dst[oy * g.out_w..(oy + 1) * g.out_w].fill(0.0);
                        continue;
                    };
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    for ox in 0..g.out_w {
                        dst[oy * g.out_w + ox] = match g.source(ox, kj, g.width, g.pad_left) {
                            Some(ix) => src[ix],
                            None => 0.0,
                        };
                    }
                }
            }
        }
    }
}

/// Folds a column matrix back, accumulating into `dx`.
pub fn col2im(col: &[f32], g: &Window, dx: &mut [f32]) {
    let ncol = g.col_cols();
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &col[row * ncol..(row + 1) * ncol];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ki, g.height, g.pad_top) else {
                        continue;
                    };
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.source(ox, kj, g.width, g.pad_left) {
                            plane[iy * g.width + ix] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Max pooling of one sample; records the flat input index of each maximum.
pub fn max_pool(x: &[f32], g: &Window, out: &mut [f32], arg: &mut [u32]) {
    let ncol = g.col_cols();
    for c in 0..g.channels {
        let base = c * g.height * g.width;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = f32::NEG_INFINITY;
                let mut best_i = 0usize;
                for ki in 0..g.kernel {
                    let iy = oy * g.stride + ki;
                    for kj in 0..g.kernel {
                        let i = base + iy * g.width + ox * g.stride + kj;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                let o = c * ncol + oy * g.out_w + ox;
                out[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
}

/// Row-wise softmax in place.
pub fn softmax_rows(data: &mut [f32], cols: usize) {
    for row in data.chunks_mut(cols) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}
