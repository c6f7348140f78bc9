//! Deterministic sparse linear algebra over compressed sparse row matrices.
//!
//! Every adjacency matrix in the toolkit lives here as a [`SparseMatrix`];
//! features and weights are [`DenseMatrix`] values. All kernels use 64-bit
//! floats and fixed accumulation orders, so repeated calls are bit-identical.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            values: vec![0.0; n_rows * n_cols],
        }
    }

    /// Builds from a row-major buffer. Rejects length mismatches and
    /// non-finite entries.
    pub fn from_vec(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::Construction(format!(
                "dense buffer has {} values, expected {}x{}",
                values.len(),
                n_rows,
                n_cols
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Construction(format!(
                "non-finite dense entry {} at flat index {}",
                values[pos], pos
            )));
        }
        Ok(Self {
            n_rows,
            n_cols,
            values,
        })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            if r.len() != n_cols {
                return Err(Error::Construction(format!(
                    "ragged dense rows: {} vs {}",
                    r.len(),
                    n_cols
                )));
            }
            values.extend_from_slice(r);
        }
        Self::from_vec(n_rows, n_cols, values)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n_cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.n_cols, self.n_rows);
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                out.values[j * self.n_rows + i] = self.values[i * self.n_cols + j];
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.n_cols != other.n_rows {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!(
                    "{}x{} * {}x{}",
                    self.n_rows, self.n_cols, other.n_rows, other.n_cols
                ),
            });
        }
        let mut out = Self::zeros(self.n_rows, other.n_cols);
        for i in 0..self.n_rows {
            let arow = self.row(i);
            let orow = out.row_mut(i);
            for (k, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = &other.values[k * other.n_cols..(k + 1) * other.n_cols];
                for (j, &b) in brow.iter().enumerate() {
                    orow[j] += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.n_cols != other.n_cols {
            return Err(Error::Shape {
                op: "matmul_nt",
                detail: format!(
                    "{}x{} * ({}x{})^T",
                    self.n_rows, self.n_cols, other.n_rows, other.n_cols
                ),
            });
        }
        let mut out = Self::zeros(self.n_rows, other.n_rows);
        for i in 0..self.n_rows {
            let arow = self.row(i);
            for j in 0..other.n_rows {
                let brow = other.row(j);
                let mut acc = 0.0;
                for k in 0..self.n_cols {
                    acc += arow[k] * brow[k];
                }
                out.values[i * other.n_rows + j] = acc;
            }
        }
        Ok(out)
    }

    /// `self^T * other`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.n_rows != other.n_rows {
            return Err(Error::Shape {
                op: "matmul_tn",
                detail: format!(
                    "({}x{})^T * {}x{}",
                    self.n_rows, self.n_cols, other.n_rows, other.n_cols
                ),
            });
        }
        let mut out = Self::zeros(self.n_cols, other.n_cols);
        for k in 0..self.n_rows {
            let arow = self.row(k);
            let brow = other.row(k);
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.values[i * other.n_cols..(i + 1) * other.n_cols];
                for (j, &b) in brow.iter().enumerate() {
                    orow[j] += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= c;
        }
        out
    }

    /// `ca * a + cb * b` elementwise.
    pub fn lincomb(ca: f64, a: &Self, cb: f64, b: &Self) -> Result<Self> {
        if a.n_rows != b.n_rows || a.n_cols != b.n_cols {
            return Err(Error::Shape {
                op: "lincomb",
                detail: format!(
                    "{}x{} vs {}x{}",
                    a.n_rows, a.n_cols, b.n_rows, b.n_cols
                ),
            });
        }
        let mut out = Self::zeros(a.n_rows, a.n_cols);
        for (o, (&x, &y)) in out.values.iter_mut().zip(a.values.iter().zip(&b.values)) {
            *o = ca * x + cb * y;
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::Shape {
                op: "add_assign",
                detail: format!(
                    "{}x{} vs {}x{}",
                    self.n_rows, self.n_cols, other.n_rows, other.n_cols
                ),
            });
        }
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = f(*v);
        }
        out
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn tanh(&self) -> Self {
        self.map(crate::num::tanh)
    }

    /// Softmax applied to each row independently.
    pub fn row_softmax(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.n_rows {
            let sm = crate::num::softmax(self.row(i));
            out.row_mut(i).copy_from_slice(&sm);
        }
        out
    }

    /// Index of the largest entry per row; ties break toward the lower index.
    pub fn row_argmax(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_rows);
        for i in 0..self.n_rows {
            let row = self.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
        out
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for i in 0..self.n_rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                out[j] += v;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.n_rows, other.n_rows);
        debug_assert_eq!(self.n_cols, other.n_cols);
        let mut max = 0.0f64;
        for (&a, &b) in self.values.iter().zip(&other.values) {
            max = max.max((a - b).abs());
        }
        max
    }

    /// Column-wise concatenation of matrices sharing a row count.
    pub fn hconcat(mats: &[&Self]) -> Result<Self> {
        let n_rows = mats
            .first()
            .ok_or(Error::Empty {
                what: "matrix list",
            })?
            .n_rows;
        let mut n_cols = 0;
        for m in mats {
            if m.n_rows != n_rows {
                return Err(Error::Shape {
                    op: "hconcat",
                    detail: format!("row counts {} vs {}", n_rows, m.n_rows),
                });
            }
            n_cols += m.n_cols;
        }
        let mut out = Self::zeros(n_rows, n_cols);
        for i in 0..n_rows {
            let orow = out.row_mut(i);
            let mut at = 0;
            for m in mats {
                orow[at..at + m.n_cols].copy_from_slice(m.row(i));
                at += m.n_cols;
            }
        }
        Ok(out)
    }
}

/// Compressed sparse row matrix in canonical form: within each row the column
/// indices are strictly increasing, and no explicit zeros are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a canonical matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed and entries that end up exactly zero are
    /// dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for &(r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Construction(format!(
                    "triplet ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Construction(format!(
                    "non-finite value {v} at ({r}, {c})"
                )));
            }
            per_row[r].push((c, v));
        }
        let mut row_offsets = Vec::with_capacity(n_rows + 1);
        row_offsets.push(0usize);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for row in &mut per_row {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                if v != 0.0 {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from raw CSR buffers, validating every canonical-form invariant.
    /// Explicit zeros are rejected rather than silently dropped.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1 {
            return Err(Error::Construction(format!(
                "row_offsets length {} != n_rows + 1 = {}",
                row_offsets.len(),
                n_rows + 1
            )));
        }
        if row_offsets[0] != 0 || row_offsets[n_rows] != col_indices.len() {
            return Err(Error::Construction(
                "row_offsets must start at 0 and end at nnz".into(),
            ));
        }
        if col_indices.len() != values.len() {
            return Err(Error::Construction(format!(
                "col_indices has {} entries, values has {}",
                col_indices.len(),
                values.len()
            )));
        }
        for i in 0..n_rows {
            if row_offsets[i] > row_offsets[i + 1] {
                return Err(Error::Construction(format!(
                    "row_offsets decreasing at row {i}"
                )));
            }
            let cols = &col_indices[row_offsets[i]..row_offsets[i + 1]];
            for (k, &c) in cols.iter().enumerate() {
                if c >= n_cols {
                    return Err(Error::Construction(format!(
                        "column {c} out of range in row {i}"
                    )));
                }
                if k > 0 && cols[k - 1] >= c {
                    return Err(Error::Construction(format!(
                        "columns not strictly increasing in row {i}"
                    )));
                }
            }
        }
        for (k, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Construction(format!(
                    "non-finite value {v} at entry {k}"
                )));
            }
            if v == 0.0 {
                return Err(Error::Construction(format!(
                    "explicit zero stored at entry {k}; canonical form forbids it"
                )));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Internal constructor for buffers already known to be sorted and
    /// in-range; used by kernels that build rows in order. `values` may
    /// contain exact zeros when a caller needs a fixed pattern (the tape
    /// does); public kernels drop them before returning.
    pub(crate) fn from_sorted_parts(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(row_offsets.len(), n_rows + 1);
        debug_assert_eq!(col_indices.len(), values.len());
        Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn from_dense(d: &DenseMatrix) -> Self {
        let mut trips = Vec::new();
        for i in 0..d.n_rows() {
            for (j, &v) in d.row(i).iter().enumerate() {
                if v != 0.0 {
                    trips.push((i, j, v));
                }
            }
        }
        Self::from_triplets(d.n_rows(), d.n_cols(), &trips).expect("dense entries are in range")
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    #[inline]
    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    #[inline]
    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c, v))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_rows);
        for i in 0..self.n_rows {
            out.push(self.row(i).1.iter().sum());
        }
        out
    }

    /// True when every non-empty row sums to 1 within `tol` and all entries
    /// are non-negative. Empty rows are ignored; callers that need them to
    /// count must check separately.
    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        if self.values.iter().any(|&v| v < 0.0) {
            return false;
        }
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            if cols.is_empty() {
                continue;
            }
            let s: f64 = vals.iter().sum();
            if (s - 1.0).abs() > tol {
                return false;
            }
        }
        true
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols];
        for &c in &self.col_indices {
            counts[c] += 1;
        }
        let mut offsets = Vec::with_capacity(self.n_cols + 1);
        offsets.push(0usize);
        for c in 0..self.n_cols {
            offsets.push(offsets[c] + counts[c]);
        }
        let mut cursor = offsets.clone();
        let mut cols = vec![0usize; self.nnz()];
        let mut vals = vec![0.0f64; self.nnz()];
        for (i, c, v) in self.iter() {
            let k = cursor[c];
            cols[k] = i;
            vals[k] = v;
            cursor[c] += 1;
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets: offsets,
            col_indices: cols,
            values: vals,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.iter() {
            d.set(i, j, v);
        }
        d
    }

    /// Adds `gamma` to every diagonal entry, growing the pattern as needed.
    pub fn add_scaled_identity(&self, gamma: f64) -> Result<Self> {
        if self.n_rows != self.n_cols {
            return Err(Error::Shape {
                op: "add_scaled_identity",
                detail: format!("matrix is {}x{}", self.n_rows, self.n_cols),
            });
        }
        let mut trips: Vec<(usize, usize, f64)> = self.iter().collect();
        for i in 0..self.n_rows {
            trips.push((i, i, gamma));
        }
        Self::from_triplets(self.n_rows, self.n_cols, &trips)
    }

    /// Rebuilds through the canonicalizing constructor. For matrices already
    /// in canonical form this is an exact no-op.
    pub fn canonicalized(&self) -> Self {
        let trips: Vec<(usize, usize, f64)> = self.iter().collect();
        Self::from_triplets(self.n_rows, self.n_cols, &trips).expect("entries are in range")
    }
}

/// Row-normalizes `a` after adding `epsilon` to the diagonal, returning
/// `D^{-1}(A + eps I)` where `D` holds the row sums of the augmented matrix.
/// With `epsilon = 0` rows that sum to zero are preserved as zero rows.
pub fn row_normalize(a: &SparseMatrix, epsilon: f64) -> Result<SparseMatrix> {
    if epsilon < 0.0 {
        return Err(Error::Domain {
            op: "row_normalize",
            detail: format!("epsilon {epsilon} is negative"),
        });
    }
    if epsilon > 0.0 && a.n_rows() != a.n_cols() {
        return Err(Error::Shape {
            op: "row_normalize",
            detail: format!(
                "diagonal augmentation needs a square matrix, got {}x{}",
                a.n_rows(),
                a.n_cols()
            ),
        });
    }
    let augmented;
    let src = if epsilon > 0.0 {
        augmented = a.add_scaled_identity(epsilon)?;
        &augmented
    } else {
        a
    };
    let mut offsets = Vec::with_capacity(src.n_rows() + 1);
    offsets.push(0usize);
    let mut cols = Vec::with_capacity(src.nnz());
    let mut vals = Vec::with_capacity(src.nnz());
    for i in 0..src.n_rows() {
        let (rc, rv) = src.row(i);
        let s: f64 = rv.iter().sum();
        for (&c, &v) in rc.iter().zip(rv) {
            let out = if s == 0.0 { v } else { v / s };
            if out != 0.0 {
                cols.push(c);
                vals.push(out);
            }
        }
        offsets.push(cols.len());
    }
    Ok(SparseMatrix::from_sorted_parts(
        src.n_rows(),
        src.n_cols(),
        offsets,
        cols,
        vals,
    ))
}

/// Exact sparse-sparse product `a * b` in canonical form.
pub fn spmm(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix> {
    spmm_impl(a, b, true, None)
}

/// [`spmm`] with an nnz budget; returns [`Error::ProductBudget`] as soon as
/// the output would exceed `max_nnz`. Used to keep explicit transformation
/// sweeps from exhausting memory.
pub fn spmm_budgeted(a: &SparseMatrix, b: &SparseMatrix, max_nnz: usize) -> Result<SparseMatrix> {
    spmm_impl(a, b, true, Some(max_nnz))
}

pub(crate) fn spmm_impl(
    a: &SparseMatrix,
    b: &SparseMatrix,
    drop_zeros: bool,
    max_nnz: Option<usize>,
) -> Result<SparseMatrix> {
    if a.n_cols() != b.n_rows() {
        return Err(Error::Shape {
            op: "spmm",
            detail: format!(
                "{}x{} * {}x{}",
                a.n_rows(),
                a.n_cols(),
                b.n_rows(),
                b.n_cols()
            ),
        });
    }
    let mut offsets = Vec::with_capacity(a.n_rows() + 1);
    offsets.push(0usize);
    let mut out_cols: Vec<usize> = Vec::new();
    let mut out_vals: Vec<f64> = Vec::new();
    let mut acc = vec![0.0f64; b.n_cols()];
    let mut mark = vec![false; b.n_cols()];
    let mut touched: Vec<usize> = Vec::new();
    for i in 0..a.n_rows() {
        let (ac, av) = a.row(i);
        for (&k, &aval) in ac.iter().zip(av) {
            let (bc, bv) = b.row(k);
            for (&j, &bval) in bc.iter().zip(bv) {
                if !mark[j] {
                    mark[j] = true;
                    touched.push(j);
                }
                acc[j] += aval * bval;
            }
        }
        touched.sort_unstable();
        for &j in &touched {
            if !drop_zeros || acc[j] != 0.0 {
                out_cols.push(j);
                out_vals.push(acc[j]);
            }
            acc[j] = 0.0;
            mark[j] = false;
        }
        touched.clear();
        offsets.push(out_cols.len());
        if let Some(limit) = max_nnz {
            if out_cols.len() > limit {
                return Err(Error::ProductBudget { budget: limit });
            }
        }
    }
    Ok(SparseMatrix::from_sorted_parts(
        a.n_rows(),
        b.n_cols(),
        offsets,
        out_cols,
        out_vals,
    ))
}

/// Sparse-dense product `a * x`.
pub fn spdm(a: &SparseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if a.n_cols() != x.n_rows() {
        return Err(Error::Shape {
            op: "spdm",
            detail: format!(
                "{}x{} * {}x{}",
                a.n_rows(),
                a.n_cols(),
                x.n_rows(),
                x.n_cols()
            ),
        });
    }
    let mut out = DenseMatrix::zeros(a.n_rows(), x.n_cols());
    for i in 0..a.n_rows() {
        let (cols, vals) = a.row(i);
        let orow = out.row_mut(i);
        for (&k, &v) in cols.iter().zip(vals) {
            let xrow = x.row(k);
            for (o, &xv) in orow.iter_mut().zip(xrow) {
                *o += v * xv;
            }
        }
    }
    Ok(out)
}

/// Convex combination `sum_t alpha[t] * mats[t]` in canonical form. `alpha`
/// must be a probability vector (entries non-negative, summing to 1 within
/// 1e-9).
pub fn weighted_sum(mats: &[SparseMatrix], alpha: &[f64]) -> Result<SparseMatrix> {
    let refs: Vec<&SparseMatrix> = mats.iter().collect();
    weighted_sum_impl(&refs, alpha, true)
}

pub(crate) fn weighted_sum_impl(
    mats: &[&SparseMatrix],
    alpha: &[f64],
    drop_zero_weights: bool,
) -> Result<SparseMatrix> {
    if mats.is_empty() {
        return Err(Error::Empty {
            what: "matrix list",
        });
    }
    if mats.len() != alpha.len() {
        return Err(Error::Shape {
            op: "weighted_sum",
            detail: format!("{} matrices vs {} weights", mats.len(), alpha.len()),
        });
    }
    let (n_rows, n_cols) = (mats[0].n_rows(), mats[0].n_cols());
    for m in mats {
        if m.n_rows() != n_rows || m.n_cols() != n_cols {
            return Err(Error::Shape {
                op: "weighted_sum",
                detail: format!(
                    "mixed shapes {}x{} and {}x{}",
                    n_rows,
                    n_cols,
                    m.n_rows(),
                    m.n_cols()
                ),
            });
        }
    }
    let sum: f64 = alpha.iter().sum();
    if alpha.iter().any(|&a| a < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Domain {
            op: "weighted_sum",
            detail: format!("weights are not a probability vector (sum {sum})"),
        });
    }
    let mut offsets = Vec::with_capacity(n_rows + 1);
    offsets.push(0usize);
    let mut out_cols: Vec<usize> = Vec::new();
    let mut out_vals: Vec<f64> = Vec::new();
    let mut acc = vec![0.0f64; n_cols];
    let mut mark = vec![false; n_cols];
    let mut touched: Vec<usize> = Vec::new();
    for i in 0..n_rows {
        for (t, m) in mats.iter().enumerate() {
            let w = alpha[t];
            if drop_zero_weights && w == 0.0 {
                continue;
            }
            let (cols, vals) = m.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if !mark[j] {
                    mark[j] = true;
                    touched.push(j);
                }
                acc[j] += w * v;
            }
        }
        touched.sort_unstable();
        for &j in &touched {
            if !drop_zero_weights || acc[j] != 0.0 {
                out_cols.push(j);
                out_vals.push(acc[j]);
            }
            acc[j] = 0.0;
            mark[j] = false;
        }
        touched.clear();
        offsets.push(out_cols.len());
    }
    Ok(SparseMatrix::from_sorted_parts(
        n_rows, n_cols, offsets, out_cols, out_vals,
    ))
}

/// Row sums of `a * b` for row-stochastic inputs. Both inputs must be
/// row-stochastic within 1e-9 with no empty rows; every returned entry equals
/// 1 within the same tolerance, which is the property this call exists to
/// witness.
pub fn degree_of_product(a: &SparseMatrix, b: &SparseMatrix) -> Result<Vec<f64>> {
    for (name, m) in [("left", a), ("right", b)] {
        if !m.is_row_stochastic(1e-9) || m.row_sums().contains(&0.0) {
            return Err(Error::NotStochastic {
                op: "degree_of_product",
                detail: format!("{name} operand; normalize inputs first"),
            });
        }
    }
    let product = spmm(a, b)?;
    Ok(product.row_sums())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand_chacha::ChaCha8Rng;
    use rand::{Rng, SeedableRng};

    fn dense_oracle_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(a.n_rows(), b.n_cols());
        for i in 0..a.n_rows() {
            for j in 0..b.n_cols() {
                let mut acc = 0.0;
                for k in 0..a.n_cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn random_sparse(rng: &mut ChaCha8Rng, n: usize, m: usize, density: f64) -> SparseMatrix {
        let mut trips = Vec::new();
        for i in 0..n {
            for j in 0..m {
                if rng.random::<f64>() < density {
                    trips.push((i, j, rng.random::<f64>() + 0.1));
                }
            }
        }
        SparseMatrix::from_triplets(n, m, &trips).unwrap()
    }

    fn random_stochastic(rng: &mut ChaCha8Rng, n: usize) -> SparseMatrix {
        // Guarantee at least one entry per row so rows are truly stochastic.
        let mut trips = Vec::new();
        for i in 0..n {
            trips.push((i, rng.random_range(0..n), rng.random::<f64>() + 0.1));
            for j in 0..n {
                if rng.random::<f64>() < 0.4 {
                    trips.push((i, j, rng.random::<f64>() + 0.1));
                }
            }
        }
        let a = SparseMatrix::from_triplets(n, n, &trips).unwrap();
        row_normalize(&a, 0.0).unwrap()
    }

    #[test]
    fn row_normalize_direct_division() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 2.0), (1, 1, 4.0)]).unwrap();
        let n = row_normalize(&a, 0.0).unwrap();
        assert_eq!(n.get(0, 0), 0.5);
        assert_eq!(n.get(0, 1), 0.5);
        assert_eq!(n.get(1, 1), 1.0);
        assert_eq!(n.nnz(), 3);
    }

    #[test]
    fn row_normalize_permutation_unchanged() {
        let p =
            SparseMatrix::from_triplets(3, 3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        let n = row_normalize(&p, 0.0).unwrap();
        assert_eq!(n, p);
    }

    #[test]
    fn row_normalize_epsilon_fills_empty_row() {
        // Dense oracle: (A + eps I) then divide each row by its sum.
        let a = SparseMatrix::from_triplets(2, 2, &[(1, 0, 1.0)]).unwrap();
        let eps = 1e-6;
        let n = row_normalize(&a, eps).unwrap();
        let mut oracle = a.to_dense();
        for i in 0..2 {
            oracle.set(i, i, oracle.get(i, i) + eps);
        }
        for i in 0..2 {
            let s: f64 = oracle.row(i).iter().sum();
            for j in 0..2 {
                oracle.set(i, j, oracle.get(i, j) / s);
            }
        }
        assert!(n.to_dense().max_abs_diff(&oracle) <= 1e-15);
        assert!((n.get(0, 0) - 1.0).abs() <= 1e-9);
        assert_eq!(n.get(0, 1), 0.0);
    }

    #[test]
    fn row_normalize_rejects_bad_inputs() {
        let rect = SparseMatrix::from_triplets(2, 3, &[(0, 0, 1.0)]).unwrap();
        assert!(matches!(
            row_normalize(&rect, 1e-6),
            Err(Error::Shape { .. })
        ));
        let sq = SparseMatrix::identity(2);
        assert!(matches!(
            row_normalize(&sq, -1.0),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn row_normalize_preserves_zero_rows_without_epsilon() {
        let a = SparseMatrix::from_triplets(3, 3, &[(0, 1, 2.0)]).unwrap();
        let n = row_normalize(&a, 0.0).unwrap();
        assert_eq!(n.row(1).0.len(), 0);
        assert_eq!(n.row(2).0.len(), 0);
        assert_eq!(n.get(0, 1), 1.0);
    }

    #[test]
    fn spmm_permutation_composition() {
        let p =
            SparseMatrix::from_triplets(3, 3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        let pp = spmm(&p, &p).unwrap();
        let expected =
            SparseMatrix::from_triplets(3, 3, &[(0, 2, 1.0), (1, 0, 1.0), (2, 1, 1.0)]).unwrap();
        assert_eq!(pp, expected);
    }

    #[test]
    fn spmm_identity_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_sparse(&mut rng, 5, 5, 0.5);
        let i = SparseMatrix::identity(5);
        assert_eq!(spmm(&a, &i).unwrap(), a);
        assert_eq!(spmm(&i, &a).unwrap(), a);
    }

    #[test]
    fn spmm_matches_dense_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let a = random_sparse(&mut rng, 6, 6, 0.4);
            let b = random_sparse(&mut rng, 6, 6, 0.4);
            let got = spmm(&a, &b).unwrap().to_dense();
            let want = dense_oracle_matmul(&a.to_dense(), &b.to_dense());
            assert!(got.max_abs_diff(&want) <= 1e-12);
        }
    }

    #[test]
    fn spmm_shape_mismatch() {
        let a = SparseMatrix::zeros(2, 3);
        let b = SparseMatrix::zeros(2, 3);
        assert!(matches!(spmm(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn spmm_budget_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_sparse(&mut rng, 8, 8, 0.9);
        let err = spmm_budgeted(&a, &a, 4).unwrap_err();
        assert!(matches!(err, Error::ProductBudget { budget: 4 }));
    }

    #[test]
    fn spdm_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DenseMatrix::from_vec(4, 3, (0..12).map(|_| rng.random::<f64>()).collect()).unwrap();
        let i = SparseMatrix::identity(4);
        assert_eq!(spdm(&i, &x).unwrap(), x);
        let z = SparseMatrix::zeros(4, 4);
        assert_eq!(spdm(&z, &x).unwrap(), DenseMatrix::zeros(4, 3));
    }

    #[test]
    fn spdm_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_sparse(&mut rng, 8, 8, 0.4);
        let x = DenseMatrix::from_vec(8, 3, (0..24).map(|_| rng.random::<f64>()).collect()).unwrap();
        let got = spdm(&a, &x).unwrap();
        let want = dense_oracle_matmul(&a.to_dense(), &x);
        assert!(got.max_abs_diff(&want) <= 1e-12);
    }

    #[test]
    fn weighted_sum_one_hot_selects_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_sparse(&mut rng, 4, 4, 0.5);
        let b = random_sparse(&mut rng, 4, 4, 0.5);
        let out = weighted_sum(&[a.clone(), b], &[1.0, 0.0]).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn weighted_sum_half_half_with_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let a = random_sparse(&mut rng, 4, 4, 0.5);
        let i = SparseMatrix::identity(4);
        let out = weighted_sum(&[a.clone(), i], &[0.5, 0.5]).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let want = 0.5 * a.get(r, c) + if r == c { 0.5 } else { 0.0 };
                assert!((out.get(r, c) - want).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn weighted_sum_of_stochastic_is_stochastic() {
        // Dense summation oracle plus the row-sum contract.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mats = [
            random_stochastic(&mut rng, 5),
            random_stochastic(&mut rng, 5),
            random_stochastic(&mut rng, 5),
        ];
        let raw = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        let s: f64 = raw.iter().sum();
        let alpha: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let out = weighted_sum(&mats, &alpha).unwrap();
        for rs in out.row_sums() {
            assert!((rs - 1.0).abs() <= 1e-12);
        }
        let mut oracle = DenseMatrix::zeros(5, 5);
        for (t, m) in mats.iter().enumerate() {
            for (i, j, v) in m.iter() {
                oracle.set(i, j, oracle.get(i, j) + alpha[t] * v);
            }
        }
        assert!(out.to_dense().max_abs_diff(&oracle) <= 1e-15);
    }

    #[test]
    fn weighted_sum_rejects_bad_alpha() {
        let i = SparseMatrix::identity(3);
        let err = weighted_sum(&[i.clone(), i.clone()], &[0.7, 0.7]).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
        let err = weighted_sum(&[i.clone(), i.clone()], &[1.5, -0.5]).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
        let err = weighted_sum(&[i], &[0.5, 0.5]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn degree_of_product_permutations() {
        let p =
            SparseMatrix::from_triplets(3, 3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        let d = degree_of_product(&p, &p).unwrap();
        assert_eq!(d, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn degree_of_product_uniform_two_by_two() {
        let a = SparseMatrix::from_triplets(
            2,
            2,
            &[(0, 0, 0.5), (0, 1, 0.5), (1, 0, 0.5), (1, 1, 0.5)],
        )
        .unwrap();
        let d = degree_of_product(&a, &a).unwrap();
        for v in d {
            assert!((v - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn degree_of_product_random_normalized_pairs() {
        // Dense-oracle check of the summation identity behind the row-sum
        // claim: row sums of A*B are exactly 1 for stochastic A, B.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..100 {
            let n = 4 + (trial % 13);
            let a = random_stochastic(&mut rng, n);
            let b = random_stochastic(&mut rng, n);
            let d = degree_of_product(&a, &b).unwrap();
            let dense = dense_oracle_matmul(&a.to_dense(), &b.to_dense());
            for i in 0..n {
                assert!((d[i] - 1.0).abs() <= 1e-9);
                let s: f64 = dense.row(i).iter().sum();
                assert!((d[i] - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn degree_of_product_rejects_unnormalized() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 1.0)]).unwrap();
        let i = SparseMatrix::identity(2);
        assert!(matches!(
            degree_of_product(&a, &i),
            Err(Error::NotStochastic { .. })
        ));
    }

    #[test]
    fn self_loop_degree_is_two_for_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let a = random_stochastic(&mut rng, 6);
        let with_loops = a.add_scaled_identity(1.0).unwrap();
        for s in with_loops.row_sums() {
            assert!((s - 2.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let a = SparseMatrix::from_triplets(
            2,
            2,
            &[(0, 0, 1.0), (0, 0, 2.0), (1, 1, 1.0), (1, 1, -1.0)],
        )
        .unwrap();
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.get(0, 0), 3.0);
    }

    #[test]
    fn from_csr_validates_invariants() {
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 1, 1], vec![0], vec![1.0]).is_ok());
        // Non-monotone offsets.
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        // Unsorted columns within a row.
        assert!(
            SparseMatrix::from_csr(1, 3, vec![0, 2], vec![2, 0], vec![1.0, 1.0]).is_err()
        );
        // Explicit zero.
        assert!(SparseMatrix::from_csr(1, 1, vec![0, 1], vec![0], vec![0.0]).is_err());
        // Column out of range.
        assert!(SparseMatrix::from_csr(1, 1, vec![0, 1], vec![3], vec![1.0]).is_err());
    }

    #[test]
    fn dense_from_vec_rejects_non_finite() {
        assert!(DenseMatrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::from_vec(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn values_are_shareable_across_threads() {
        // Pure data, no interior mutability: both matrix types may be read
        // concurrently.
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<SparseMatrix>();
        assert_send_sync::<DenseMatrix>();
    }

    #[test]
    fn transpose_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_sparse(&mut rng, 5, 7, 0.3);
        assert_eq!(a.transpose().transpose(), a);
    }
}
