use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::axpy;

/// Compressed sparse column matrix of `f64`.
///
/// Row indices are strictly increasing inside every column and no explicit
/// zeros are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            col_ptr: vec![0; cols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Build from `(row, col, value)` triplets. Duplicate coordinates are summed
    /// in input order; zeros (including cancelled sums) are dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut per_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); cols];
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::dims(format!("entry ({r}, {c}) outside a {rows}x{cols} matrix")));
            }
            per_col[c].push((r, v));
        }
        for col in per_col.iter_mut() {
            col.sort_by_key(|&(r, _)| r);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(col.len());
            for &(r, v) in col.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == r => last.1 += v,
                    _ => merged.push((r, v)),
                }
            }
            *col = merged;
        }
        Ok(Self::from_sorted_columns(rows, per_col))
    }

    /// Columns given as `(row, value)` lists already sorted by row without
    /// duplicates. Zero values are dropped.
    pub(crate) fn from_sorted_columns(rows: usize, columns: Vec<Vec<(usize, f64)>>) -> Self {
        let cols = columns.len();
        let nnz = columns.iter().map(Vec::len).sum();
        let mut col_ptr = Vec::with_capacity(cols + 1);
        let mut row_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        col_ptr.push(0);
        for col in columns {
            for (r, v) in col {
                debug_assert!(r < rows);
                if v != 0.0 {
                    debug_assert!(row_idx.len() == *col_ptr.last().unwrap() || *row_idx.last().unwrap() < r);
                    row_idx.push(r);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            rows,
            cols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn from_dense(m: ArrayView2<'_, f64>) -> Self {
        let (rows, cols) = m.dim();
        let columns = (0..cols)
            .map(|c| (0..rows).map(|r| (r, m[[r, c]])).filter(|&(_, v)| v != 0.0).collect())
            .collect();
        Self::from_sorted_columns(rows, columns)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for (r, c, v) in self.iter() {
            out[[r, c]] = v;
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Half-open range of storage positions belonging to column `c`.
    #[inline]
    pub fn col_range(&self, c: usize) -> std::ops::Range<usize> {
        self.col_ptr[c]..self.col_ptr[c + 1]
    }

    #[inline]
    pub fn col(&self, c: usize) -> (&[usize], &[f64]) {
        let r = self.col_range(c);
        (&self.row_idx[r.clone()], &self.values[r])
    }

    pub fn row_indices(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (rows, vals) = self.col(c);
        match rows.binary_search(&r) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    /// `(row, col, value)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.cols).flat_map(move |c| self.col_range(c).map(move |e| (self.row_idx[e], c, self.values[e])))
    }

    /// Column index of every stored entry, aligned with storage order.
    pub fn entry_cols(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nnz());
        for c in 0..self.cols {
            out.extend(std::iter::repeat_n(c, self.col_ptr[c + 1] - self.col_ptr[c]));
        }
        out
    }

    /// Keep the stored entries whose storage position satisfies `keep`.
    pub fn filter_entries(&self, mut keep: impl FnMut(usize) -> bool) -> SparseMatrix {
        let mut col_ptr = Vec::with_capacity(self.cols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for c in 0..self.cols {
            for e in self.col_range(c) {
                if keep(e) {
                    row_idx.push(self.row_idx[e]);
                    values.push(self.values[e]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn scale(&self, c: f64) -> SparseMatrix {
        if c == 0.0 {
            return SparseMatrix::zeros(self.rows, self.cols);
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.rows];
        for (r, c, v) in self.iter() {
            columns[r].push((c, v));
        }
        SparseMatrix::from_sorted_columns(self.cols, columns)
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.transpose() == *self
    }

    /// Maximum absolute column sum.
    pub fn l1_norm(&self) -> f64 {
        (0..self.cols)
            .map(|c| self.col(c).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Entrywise `self - other`.
    pub fn sub(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.dims() != other.dims() {
            return Err(Error::dims(format!("{:?} minus {:?}", self.dims(), other.dims())));
        }
        let columns = (0..self.cols)
            .map(|c| {
                let mut out = Vec::new();
                merge_columns(self.col(c), other.col(c), |r, a, b| {
                    out.push((r, a - b));
                });
                out
            })
            .collect();
        Ok(SparseMatrix::from_sorted_columns(self.rows, columns))
    }

    /// Whether every stored entry of `self` equals the entry of `other` at the
    /// same position (no new nonzeros, unchanged values).
    pub fn is_dominated_by(&self, other: &SparseMatrix) -> bool {
        self.dims() == other.dims() && self.iter().all(|(r, c, v)| other.get(r, c) == v)
    }
}

/// Walk two sorted sparse columns in lockstep, calling `f(row, a, b)` for every
/// row present in either (missing side reads as 0).
pub(crate) fn merge_columns(
    (ra, va): (&[usize], &[f64]),
    (rb, vb): (&[usize], &[f64]),
    mut f: impl FnMut(usize, f64, f64),
) {
    let (mut i, mut j) = (0, 0);
    while i < ra.len() || j < rb.len() {
        match (ra.get(i), rb.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                f(x, va[i], vb[j]);
                i += 1;
                j += 1;
            }
            (Some(&x), Some(&y)) if x < y => {
                f(x, va[i], 0.0);
                i += 1;
            }
            (Some(&x), None) => {
                f(x, va[i], 0.0);
                i += 1;
            }
            (_, Some(&y)) => {
                f(y, 0.0, vb[j]);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
}

/// Maximum absolute column sum of a dense matrix.
pub fn dense_l1_norm(m: ArrayView2<'_, f64>) -> f64 {
    m.columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn matrix_l1_norm(m: &SparseMatrix) -> f64 {
    m.l1_norm()
}

/// `out[c] = Σ_r a[r, c] · x[r]` over node-major rows of width `d`: accumulates
/// column `c`'s stored entries in storage order into `out` (overwritten).
#[inline]
pub(crate) fn aggregate_column(x_node_major: &[f64], d: usize, a: &SparseMatrix, c: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let (rows, vals) = a.col(c);
    for (&r, &v) in rows.iter().zip(vals) {
        axpy(out, v, &x_node_major[r * d..(r + 1) * d]);
    }
}

/// `X A` for node-major `X` (N rows of width `d`); result is node-major too.
pub(crate) fn aggregate_all(x_node_major: &[f64], d: usize, a: &SparseMatrix) -> Vec<f64> {
    let mut out = vec![0.0; a.cols() * d];
    for (c, chunk) in out.chunks_exact_mut(d).enumerate() {
        aggregate_column(x_node_major, d, a, c, chunk);
    }
    out
}

/// Node-major copy of a `d × N` matrix (one contiguous row of width `d` per node).
pub(crate) fn node_major(x: ArrayView2<'_, f64>) -> Vec<f64> {
    x.t().iter().copied().collect()
}

/// Dense-times-sparse product `X A` with `X` of shape `d × N`.
pub fn right_multiply(x: ArrayView2<'_, f64>, a: &SparseMatrix) -> Result<Array2<f64>> {
    let (d, n) = x.dim();
    if n != a.rows() {
        return Err(Error::dims(format!("X is {d}x{n} but A is {}x{}", a.rows(), a.cols())));
    }
    let xn = node_major(x);
    let out = aggregate_all(&xn, d, a);
    let t = Array2::from_shape_vec((a.cols(), d), out).expect("shape");
    Ok(t.reversed_axes().as_standard_layout().into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn l1_norm_examples() {
        assert_eq!(SparseMatrix::identity(3).l1_norm(), 1.0);
        assert_eq!(SparseMatrix::zeros(4, 4).l1_norm(), 0.0);
        assert_eq!(SparseMatrix::zeros(0, 0).l1_norm(), 0.0);
        let m = SparseMatrix::from_dense(array![[1.0, -2.0], [3.0, 4.0]].view());
        assert_eq!(m.l1_norm(), 6.0);
    }

    #[test]
    fn explicit_zeros_are_dropped() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 0.0), (0, 1, 2.0), (0, 1, -2.0)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert!(SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn right_multiply_identity_and_zero() {
        let x = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        assert_eq!(right_multiply(x.view(), &SparseMatrix::identity(3)).unwrap(), x);
        let z = Array2::<f64>::zeros((2, 3));
        let a = SparseMatrix::from_dense(array![[1.0, 0.5, 0.0], [0.0, 2.0, 1.0], [3.0, 0.0, 1.0]].view());
        assert_eq!(right_multiply(z.view(), &a).unwrap(), z);
        assert!(right_multiply(x.view(), &SparseMatrix::identity(2)).is_err());
    }

    #[test]
    fn right_multiply_two_by_two_against_dense() {
        let x = array![[0.3, -1.2], [2.5, 0.7]];
        let a_dense = array![[0.5, -0.25], [1.5, 2.0]];
        let a = SparseMatrix::from_dense(a_dense.view());
        let got = right_multiply(x.view(), &a).unwrap();
        let want = x.dot(&a_dense);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0));
        }
    }

    #[test]
    fn sub_and_domination() {
        let a = SparseMatrix::from_dense(array![[1.0, 0.0], [2.0, 3.0]].view());
        let b = a.filter_entries(|e| e != 1);
        assert!(b.is_dominated_by(&a));
        assert!(!a.is_dominated_by(&b));
        let d = a.sub(&b).unwrap();
        assert_eq!(d.to_dense(), array![[0.0, 0.0], [2.0, 0.0]]);
    }

    fn dense_strategy(max_n: usize) -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
        (1..=max_n, 1..=6usize).prop_flat_map(|(n, d)| {
            (
                proptest::collection::vec(-2.0f64..2.0, d * n),
                proptest::collection::vec(prop_oneof![3 => Just(0.0), 1 => -1.0f64..1.0], n * n),
            )
                .prop_map(move |(xv, av)| {
                    (
                        Array2::from_shape_vec((d, n), xv).unwrap(),
                        Array2::from_shape_vec((n, n), av).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn right_multiply_matches_dense_product((x, a_dense) in dense_strategy(64)) {
            let a = SparseMatrix::from_dense(a_dense.view());
            let got = right_multiply(x.view(), &a).unwrap();
            let want = x.dot(&a_dense);
            for (g, w) in got.iter().zip(want.iter()) {
                let scale = w.abs().max(1e-300);
                prop_assert!((g - w).abs() <= 1e-12 * scale.max(1.0));
            }
        }

        #[test]
        fn l1_norm_is_absolutely_homogeneous((_, a_dense) in dense_strategy(12), c in -4.0f64..4.0) {
            let a = SparseMatrix::from_dense(a_dense.view());
            let lhs = a.scale(c).l1_norm();
            let rhs = c.abs() * a.l1_norm();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
            prop_assert!((a.l1_norm() - dense_l1_norm(a_dense.view())).abs() <= 1e-12);
        }
    }
}
