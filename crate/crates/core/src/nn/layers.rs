//! Single-sample conv / pool / dense kernels with their backward passes.
//! Activations are CHW row-major.

use super::real::{matmul, Real};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_side: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_side: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }
    fn cols(&self) -> usize {
        self.out_side * self.out_side
    }
}

/// Unfold input into a `(C*k*k) x (OH*OW)` matrix.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut Vec<T>) {
    let (k, s, pad, side, os) = (g.kernel, g.stride, g.padding as isize, g.in_side as isize, g.out_side);
    col.clear();
    col.resize(g.rows() * g.cols(), T::zero());
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &x[c * g.in_side * g.in_side..(c + 1) * g.in_side * g.in_side];
        for ki in 0..k {
            for kj in 0..k {
                let dst = &mut col[row * os * os..(row + 1) * os * os];
                for oy in 0..os {
                    let iy = (oy * s + ki) as isize - pad;
                    if iy < 0 || iy >= side {
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_side..(iy as usize + 1) * g.in_side];
                    let drow = &mut dst[oy * os..(oy + 1) * os];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * s + kj) as isize - pad;
                        if ix >= 0 && ix < side {
                            *d = src[ix as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Fold a column-gradient matrix back onto the input (adjoint of [`im2col`]).
pub(crate) fn col2im<T: Real>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (k, s, pad, side, os) = (g.kernel, g.stride, g.padding as isize, g.in_side as isize, g.out_side);
    dx.iter_mut().for_each(|v| *v = T::zero());
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &mut dx[c * g.in_side * g.in_side..(c + 1) * g.in_side * g.in_side];
        for ki in 0..k {
            for kj in 0..k {
                let src = &col[row * os * os..(row + 1) * os * os];
                for oy in 0..os {
                    let iy = (oy * s + ki) as isize - pad;
                    if iy < 0 || iy >= side {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.in_side..(iy as usize + 1) * g.in_side];
                    for ox in 0..os {
                        let ix = (ox * s + kj) as isize - pad;
                        if ix >= 0 && ix < side {
                            drow[ix as usize] = drow[ix as usize] + src[oy * os + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `y = relu(W * im2col(x) + b)`; `col` keeps the unfolded input for backward.
pub(crate) fn conv_relu_forward<T: Real>(x: &[T], g: &ConvGeom, w: &[T], b: &[T], col: &mut Vec<T>) -> Vec<T> {
    let f = b.len();
    im2col(x, g, col);
    let n = g.cols();
    let mut y = vec![T::zero(); f * n];
    for (fi, row) in y.chunks_exact_mut(n).enumerate() {
        row.iter_mut().for_each(|v| *v = b[fi]);
    }
    matmul(w, false, col, false, &mut y, f, g.rows(), n, T::one());
    y.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
    y
}

/// Backward through ReLU and the convolution. `dy` is w.r.t. the post-ReLU output `y`.
/// Accumulates into `dw`/`db`; returns `dx` when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_relu_backward<T: Real>(
    dy: &mut [T],
    y: &[T],
    g: &ConvGeom,
    w: &[T],
    col: &[T],
    dw: &mut [T],
    db: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    let f = db.len();
    let n = g.cols();
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    for (fi, row) in dy.chunks_exact(n).enumerate() {
        db[fi] = db[fi] + row.iter().copied().sum::<T>();
    }
    // dW += dy (f x n) * col^T (n x rows)
    matmul(dy, false, col, true, dw, f, n, g.rows(), T::one());
    if !want_dx {
        return None;
    }
    let mut dcol = vec![T::zero(); g.rows() * n];
    matmul(w, true, dy, false, &mut dcol, g.rows(), f, n, T::zero());
    let mut dx = vec![T::zero(); g.in_c * g.in_side * g.in_side];
    col2im(&dcol, g, &mut dx);
    Some(dx)
}

/// Ceil-mode max pooling. Returns output and the flat argmax index per output cell.
pub(crate) fn maxpool_forward<T: Real>(
    x: &[T],
    channels: usize,
    side: usize,
    size: usize,
    stride: usize,
    out_side: usize,
) -> (Vec<T>, Vec<u32>) {
    let mut y = Vec::with_capacity(channels * out_side * out_side);
    let mut arg = Vec::with_capacity(channels * out_side * out_side);
    for c in 0..channels {
        let base = c * side * side;
        for oy in 0..out_side {
            let y0 = oy * stride;
            let y1 = (y0 + size).min(side);
            for ox in 0..out_side {
                let x0 = ox * stride;
                let x1 = (x0 + size).min(side);
                let mut best = base + y0 * side + x0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let i = base + iy * side + ix;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                y.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool_backward<T: Real>(dy: &[T], arg: &[u32], in_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); in_len];
    for (&d, &i) in dy.iter().zip(arg) {
        dx[i as usize] = dx[i as usize] + d;
    }
    dx
}

/// `y = W x + b`, W is `out x in`.
pub(crate) fn dense_forward<T: Real>(x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let out = b.len();
    let mut y = b.to_vec();
    matmul(w, false, x, false, &mut y, out, x.len(), 1, T::one());
    y
}

/// Accumulates weight/bias gradients and returns `dx`.
pub(crate) fn dense_backward<T: Real>(dy: &[T], x: &[T], w: &[T], dw: &mut [T], db: &mut [T]) -> Vec<T> {
    let (out, inp) = (dy.len(), x.len());
    for (d, &g) in db.iter_mut().zip(dy) {
        *d = *d + g;
    }
    matmul(dy, false, x, false, dw, out, 1, inp, T::one());
    let mut dx = vec![T::zero(); inp];
    matmul(w, true, dy, false, &mut dx, inp, out, 1, T::zero());
    dx
}
