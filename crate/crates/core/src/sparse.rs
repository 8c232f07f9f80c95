//! Symmetric sparse matrices acting on the right of `d × N` row-stacked
//! variables, plus an LDLᵀ-backed SPD solve.

use nalgebra::DMatrix;
use sprs::{CsMat, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::error::{PgoError, Result};

pub type Mat = DMatrix<f64>;

/// Triplet accumulator; duplicate entries are summed on assembly.
#[derive(Debug, Clone)]
pub struct Triplets {
    dim: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Triplets {
    pub fn new(dim: usize) -> Self {
        Triplets {
            dim,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.dim && c < self.dim);
        self.rows.push(r);
        self.cols.push(c);
        self.vals.push(v);
    }

    /// Adds `scale * block` with its top-left corner at `(r0, c0)`.
    pub fn add_block(&mut self, r0: usize, c0: usize, block: &Mat, scale: f64) {
        for c in 0..block.ncols() {
            for r in 0..block.nrows() {
                self.add(r0 + r, c0 + c, scale * block[(r, c)]);
            }
        }
    }

    /// Adds `scale * I_m` on the diagonal starting at `r0`.
    pub fn add_identity(&mut self, r0: usize, m: usize, scale: f64) {
        for i in 0..m {
            self.add(r0 + i, r0 + i, scale);
        }
    }

    /// Assembles the matrix. Mirrored entries are averaged so the result is
    /// exactly symmetric regardless of duplicate summation order.
    pub fn build(self) -> SymSparse {
        let n = self.dim;
        let summed: CsMat<f64> =
            TriMat::from_triplets((n, n), self.rows, self.cols, self.vals).to_csr();
        let mut tri = TriMat::with_capacity((n, n), summed.nnz());
        for (&v, (r, c)) in summed.iter() {
            match r.cmp(&c) {
                std::cmp::Ordering::Equal => tri.add_triplet(r, c, v),
                std::cmp::Ordering::Less => {
                    let w = match summed.get(c, r) {
                        Some(&u) => 0.5 * (v + u),
                        None => 0.5 * v,
                    };
                    tri.add_triplet(r, c, w);
                    tri.add_triplet(c, r, w);
                }
                std::cmp::Ordering::Greater => {
                    if summed.get(c, r).is_none() {
                        let w = 0.5 * v;
                        tri.add_triplet(r, c, w);
                        tri.add_triplet(c, r, w);
                    }
                }
            }
        }
        SymSparse { mat: tri.to_csr() }
    }
}

/// Symmetric matrix in CSR form. Products are taken as `X·S` with `X` of
/// shape `d × dim`, computed column by column from the rows of `S`.
#[derive(Debug, Clone)]
pub struct SymSparse {
    mat: CsMat<f64>,
}

impl SymSparse {
    pub fn zeros(dim: usize) -> Self {
        Triplets::new(dim).build()
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn nnz(&self) -> usize {
        self.mat.nnz()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.mat.get(r, c).copied().unwrap_or(0.0)
    }

    pub fn inner(&self) -> &CsMat<f64> {
        &self.mat
    }

    /// Nonzeros of row `j` as `(column, value)` pairs in increasing column order.
    pub fn row(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.mat.indptr().outer_inds_sz(j);
        self.mat.indices()[range.clone()]
            .iter()
            .copied()
            .zip(self.mat.data()[range].iter().copied())
    }

    /// `X·S`.
    pub fn right_mul(&self, x: &Mat) -> Mat {
        self.right_mul_cols(x, 0, self.dim())
    }

    /// Columns `start..start+len` of `X·S`. Only the columns of `X` that
    /// appear in the sparsity pattern of those rows are read.
    pub fn right_mul_cols(&self, x: &Mat, start: usize, len: usize) -> Mat {
        assert_eq!(x.ncols(), self.dim(), "right_mul: column count");
        let d = x.nrows();
        let mut out = Mat::zeros(d, len);
        let indptr = self.mat.indptr();
        let indices = self.mat.indices();
        let data = self.mat.data();
        for j in 0..len {
            let row = start + j;
            let range = indptr.outer_inds_sz(row);
            for p in range {
                let i = indices[p];
                let v = data[p];
                for r in 0..d {
                    out[(r, j)] += v * x[(r, i)];
                }
            }
        }
        out
    }

    /// `⟨X·S, X⟩ = trace(X S Xᵀ)`.
    pub fn quadratic(&self, x: &Mat) -> f64 {
        let xs = self.right_mul(x);
        xs.dot(x)
    }

    pub fn to_dense(&self) -> Mat {
        let n = self.dim();
        let mut out = Mat::zeros(n, n);
        for (v, (r, c)) in self.mat.iter() {
            out[(r, c)] += *v;
        }
        out
    }

    /// Principal submatrix on the given (sorted) index set.
    pub fn submatrix(&self, keep: &[usize]) -> SymSparse {
        let mut map = vec![usize::MAX; self.dim()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut t = Triplets::new(keep.len());
        for (new_r, &old_r) in keep.iter().enumerate() {
            for (c, v) in self.row(old_r) {
                if map[c] != usize::MAX {
                    t.add(new_r, map[c], v);
                }
            }
        }
        t.build()
    }

    /// Returns `S + shift·I`.
    pub fn shifted(&self, shift: f64) -> SymSparse {
        let mut t = Triplets::new(self.dim());
        for (v, (r, c)) in self.mat.iter() {
            t.add(r, c, *v);
        }
        t.add_identity(0, self.dim(), shift);
        t.build()
    }

    /// Largest diagonal entry.
    pub fn max_diag(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.get(i, i))
            .fold(0.0, f64::max)
    }
}

/// Sparse LDLᵀ factorization of a symmetric positive definite matrix
/// (reverse Cuthill–McKee ordering). The ordering needs at least two
/// unknowns, so 1×1 systems are handled directly.
pub struct SpdFactor {
    kind: FactorKind,
    dim: usize,
}

enum FactorKind {
    Ldl(LdlNumeric<f64, usize>),
    Scalar(f64),
}

impl std::fmt::Debug for SpdFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdFactor").field("dim", &self.dim).finish()
    }
}

impl SpdFactor {
    /// Factors `s`; fails if any pivot is not safely positive.
    pub fn new(s: &SymSparse) -> Result<Self> {
        let dim = s.dim();
        if dim < 2 {
            let v = if dim == 1 { s.get(0, 0) } else { 1.0 };
            if !(v > 0.0 && v.is_finite()) {
                return Err(PgoError::numerical("matrix is not positive definite"));
            }
            return Ok(SpdFactor {
                kind: FactorKind::Scalar(v),
                dim,
            });
        }
        let csc = s.mat.to_csc();
        let ldl = Ldl::new()
            .numeric(csc.view())
            .map_err(|e| PgoError::numerical(format!("LDLᵀ factorization failed: {e}")))?;
        let dmax = ldl.d().iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
        let floor = dmax * 1e-13;
        if ldl.d().iter().any(|&v| !(v > floor)) {
            return Err(PgoError::numerical("matrix is not positive definite"));
        }
        Ok(SpdFactor {
            kind: FactorKind::Ldl(ldl),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match &self.kind {
            FactorKind::Ldl(ldl) => ldl.solve(rhs),
            FactorKind::Scalar(v) => rhs.iter().map(|r| r / v).collect(),
        }
    }

    /// `X·S⁻¹` for `X` of shape `d × dim` (one solve per row, `S` symmetric).
    pub fn solve_rows(&self, x: &Mat) -> Mat {
        assert_eq!(x.ncols(), self.dim, "solve_rows: column count");
        let mut out = Mat::zeros(x.nrows(), self.dim);
        for r in 0..x.nrows() {
            let rhs: Vec<f64> = x.row(r).iter().copied().collect();
            let sol = self.solve(&rhs);
            for (c, v) in sol.into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        out
    }
}
