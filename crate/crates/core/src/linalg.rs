//! Small dense kernels with a fixed reduction order. Every path that must agree
//! bit-for-bit with another (node-wise vs batched forward, trainer vs manual
//! replay) goes through these.

use ndarray::{Array2, ArrayView2};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = M v` for a row-major `M` with `out.len()` rows.
#[inline]
pub fn matvec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    debug_assert_eq!(m.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o = dot(row, v);
    }
}

/// `out = Mᵀ v` for a row-major `M` with `v.len()` rows. Accumulates row by row.
#[inline]
pub fn matvec_t(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    debug_assert_eq!(m.len(), v.len() * cols);
    out.iter_mut().for_each(|o| *o = 0.0);
    for (&vi, row) in v.iter().zip(m.chunks_exact(cols)) {
        if vi != 0.0 {
            axpy(out, vi, row);
        }
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Row-major contiguous copy of a 2-D view.
pub fn to_row_major(m: ArrayView2<'_, f64>) -> Vec<f64> {
    m.iter().copied().collect()
}

/// Pairwise (cascade) summation: order-independent of thread count and stable.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (l, r) = xs.split_at(n / 2);
            pairwise_sum(l) + pairwise_sum(r)
        }
    }
}
