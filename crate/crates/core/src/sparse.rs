//! Compressed sparse row matrices and the direct solvers used by the truth
//! and reduced stages.

use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Accumulates `(row, col, value)` entries; duplicates are summed on build.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletBuilder {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        TripletBuilder {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    /// Copies `block` into the builder shifted by `(row_offset, col_offset)`,
    /// scaled by `scale`.
    pub fn push_block(
        &mut self,
        block: &SparseMatrix,
        row_offset: usize,
        col_offset: usize,
        scale: f64,
    ) {
        for (i, j, v) in block.iter() {
            self.push(i + row_offset, j + col_offset, scale * v);
        }
    }

    /// Pushes the transpose of `block` at the given offsets.
    pub fn push_block_transposed(
        &mut self,
        block: &SparseMatrix,
        row_offset: usize,
        col_offset: usize,
        scale: f64,
    ) {
        for (i, j, v) in block.iter() {
            self.push(j + row_offset, i + col_offset, scale * v);
        }
    }

    pub fn build(mut self) -> SparseMatrix {
        self.entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            cols,
            vals,
        }
    }
}

/// Real sparse matrix in CSR layout with sorted, unique column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        TripletBuilder::new(nrows, ncols).build()
    }

    pub fn identity(n: usize) -> Self {
        let mut b = TripletBuilder::with_capacity(n, n, n);
        for i in 0..n {
            b.push(i, i, 1.0);
        }
        b.build()
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut b = TripletBuilder::new(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    b.push(i, j, m[(i, j)]);
                }
            }
        }
        b.build()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    /// Iterates over stored `(row, col, value)` entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[range.clone()].binary_search(&c) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "sparse matvec dimension");
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "sparse transpose matvec dimension");
        let mut y = vec![0.0; self.ncols];
        for (r, c, v) in self.iter() {
            y[c] += v * x[r];
        }
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mul_vec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for (r, c, v) in self.iter() {
            b.push(c, r, v);
        }
        b.build()
    }

    pub fn scale(&self, s: f64) -> SparseMatrix {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `Σ_k w_k A_k` for matrices of identical shape.
    pub fn linear_combination(terms: &[(f64, &SparseMatrix)]) -> Result<SparseMatrix> {
        let (nrows, ncols) = terms
            .first()
            .map(|(_, m)| m.shape())
            .ok_or_else(|| Error::Argument("empty linear combination".into()))?;
        let cap = terms.iter().map(|(_, m)| m.nnz()).sum();
        let mut b = TripletBuilder::with_capacity(nrows, ncols, cap);
        for (w, m) in terms {
            if m.shape() != (nrows, ncols) {
                return Err(Error::Dimension(format!(
                    "cannot combine {:?} with {:?}",
                    m.shape(),
                    (nrows, ncols)
                )));
            }
            b.push_block(m, 0, 0, *w);
        }
        Ok(b.build())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            d[(r, c)] += v;
        }
        d
    }

    /// Sparse × dense product.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols, "sparse-dense product dimension");
        let mut y = DMatrix::zeros(self.nrows, x.ncols());
        for j in 0..x.ncols() {
            let col = x.column(j);
            for r in 0..self.nrows {
                let mut acc = 0.0;
                for (c, v) in self.row(r) {
                    acc += v * col[c];
                }
                y[(r, j)] = acc;
            }
        }
        y
    }

    /// Largest `|A_ij − A_ji|` relative to the largest `|A_ij|`.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let scale = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        self.iter()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
            / scale
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest entrywise difference, over the union of both sparsity patterns.
    pub fn max_abs_diff(&self, other: &SparseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        let a = self.iter().map(|(r, c, v)| (v - other.get(r, c)).abs());
        let b = other.iter().map(|(r, c, v)| (v - self.get(r, c)).abs());
        a.chain(b).fold(0.0, f64::max)
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let triplets: Vec<_> = self.iter().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &triplets)
            .map_err(|e| Error::Solver(format!("cannot build sparse matrix: {e:?}")))
    }
}

/// Sparse LU factorization with partial pivoting.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension(format!(
                "cannot factor a {:?} matrix",
                a.shape()
            )));
        }
        let lu = a
            .to_faer()?
            .sp_lu()
            .map_err(|e| Error::Solver(format!("sparse LU failed (pivot breakdown): {e:?}")))?;
        Ok(SparseLu { n: a.nrows(), lu })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        use faer::linalg::solvers::SolveCore;
        assert_eq!(rhs.len(), self.n);
        let mut b = faer::Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        self.lu.solve_in_place_with_conj(faer::Conj::No, b.as_mut());
        let x: Vec<f64> = (0..self.n).map(|i| b[(i, 0)]).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(
                "sparse LU produced non-finite values (singular matrix)".into(),
            ));
        }
        Ok(x)
    }
}

/// Dense LU solve with partial pivoting.
pub fn dense_solve(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    use faer::linalg::solvers::Solve;
    let n = a.nrows();
    if a.ncols() != n || rhs.len() != n {
        return Err(Error::Dimension(format!(
            "dense solve with {}×{} matrix and {} right-hand side",
            a.nrows(),
            a.ncols(),
            rhs.len()
        )));
    }
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let fa = faer::MatRef::from_column_major_slice(a.as_slice(), n, n);
    let lu = fa.partial_piv_lu();
    let fb = faer::MatRef::from_column_major_slice(rhs.as_slice(), n, 1);
    let x = lu.solve(fb);
    let out = DVector::from_fn(n, |i, _| x[(i, 0)]);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver(
            "dense LU produced non-finite values (singular matrix)".into(),
        ));
    }
    Ok(out)
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
