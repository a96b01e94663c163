//! Dense kernels used by the solver: L2,1 norms, symmetric eigendecomposition,
//! thin SVD, SPD solves with a ridge fallback, and the nearest matrix with
//! orthonormal rows.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen, SVD};

use crate::error::{invalid, Error, Result};

pub type Matrix = DMatrix<f64>;

/// Nonnegative diagonal of a reweighting matrix, stored as a vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagWeights(Vec<f64>);

impl DiagWeights {
    pub fn ones(len: usize) -> Self {
        DiagWeights(vec![1.0; len])
    }

    pub fn zeros(len: usize) -> Self {
        DiagWeights(vec![0.0; len])
    }

    /// Fails if any entry is negative or non-finite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(invalid(format!("diagonal weight {v} is not a finite nonnegative value")));
        }
        Ok(DiagWeights(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_diagonal(&DVector::from_column_slice(&self.0))
    }
}

impl std::ops::Index<usize> for DiagWeights {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn ensure_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(invalid(format!("{what} has an empty dimension ({}x{})", a.nrows(), a.ncols())));
    }
    if let Some((idx, v)) = a.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        // column-major storage
        let (r, c) = (idx % a.nrows(), idx / a.nrows());
        return Err(invalid(format!("{what}[{r}][{c}] = {v} is not finite")));
    }
    Ok(())
}

pub(crate) fn ensure_shape(a: &Matrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if a.nrows() != rows || a.ncols() != cols {
        return Err(invalid(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Euclidean norm of every row.
pub fn row_norms(a: &Matrix) -> Vec<f64> {
    a.row_iter().map(|r| r.norm()).collect()
}

/// Euclidean norm of every column.
pub fn col_norms(a: &Matrix) -> Vec<f64> {
    a.column_iter().map(|c| c.norm()).collect()
}

/// Row-wise L2,1 norm: the sum of the Euclidean norms of the rows.
pub fn l21_rows(a: &Matrix) -> Result<f64> {
    ensure_finite(a, "matrix")?;
    Ok(row_norms(a).iter().sum())
}

/// L2,1 norm of the transpose, i.e. the sum of column norms.
pub fn l21_cols(a: &Matrix) -> Result<f64> {
    ensure_finite(a, "matrix")?;
    Ok(col_norms(a).iter().sum())
}

pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Subtracts each column's mean. Returns the centered copy and the means.
pub fn center_columns(a: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = a.clone();
    let mut means = Vec::with_capacity(a.ncols());
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        means.push(mean);
    }
    (out, means)
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Orthonormal eigenvectors, one per column, in the order of `values`.
    pub vectors: Matrix,
    pub values: DVector<f64>,
}

impl SymEigen {
    /// `vectors · diag(values) · vectorsᵀ`
    pub fn recompose(&self) -> Matrix {
        let scaled = &self.vectors * Matrix::from_diagonal(&self.values);
        scaled * self.vectors.transpose()
    }
}

const SYMMETRY_TOL: f64 = 1e-10;

/// Eigendecomposition of a symmetric matrix. Ties in the eigenvalue order
/// keep the order produced by the underlying solver.
pub fn sym_evd(s: &Matrix) -> Result<SymEigen> {
    ensure_finite(s, "symmetric matrix")?;
    if !s.is_square() {
        return Err(invalid(format!("eigendecomposition needs a square matrix, got {}x{}", s.nrows(), s.ncols())));
    }
    let scale = max_abs(s).max(f64::MIN_POSITIVE);
    let asym = max_abs(&(s - s.transpose()));
    if asym > SYMMETRY_TOL * scale {
        return Err(invalid(format!(
            "matrix is not symmetric: max |S - S^T| = {asym:e} exceeds {SYMMETRY_TOL:e} relative"
        )));
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let order = descending_order(eig.eigenvalues.as_slice());
    let n = s.nrows();
    let mut vectors = Matrix::zeros(n, n);
    let mut values = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        values[dst] = eig.eigenvalues[src];
    }
    Ok(SymEigen { vectors, values })
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    // stable sort keeps input order among ties
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

/// Thin SVD `V = left · diag(singular) · rightᵀ` of a wide matrix.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// k×k
    pub left: Matrix,
    /// length k, descending
    pub singular: DVector<f64>,
    /// m×k
    pub right: Matrix,
}

impl ThinSvd {
    pub fn recompose(&self) -> Matrix {
        &self.left * Matrix::from_diagonal(&self.singular) * self.right.transpose()
    }

    /// Count of singular values above `rel_tol · max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.singular.iter().cloned().fold(0.0_f64, f64::max);
        if top == 0.0 {
            return 0;
        }
        self.singular.iter().filter(|&&s| s > rel_tol * top).count()
    }
}

pub fn thin_svd(v: &Matrix) -> Result<ThinSvd> {
    ensure_finite(v, "matrix")?;
    let (k, m) = v.shape();
    if k > m {
        return Err(invalid(format!("thin SVD expects rows <= cols, got {k}x{m}")));
    }
    let svd: SVD<f64, Dyn, Dyn> = SVD::new(v.clone(), true, true);
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let order = descending_order(svd.singular_values.as_slice());
    let mut left = Matrix::zeros(k, k);
    let mut right = Matrix::zeros(m, k);
    let mut singular = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        left.set_column(dst, &u.column(src));
        right.set_column(dst, &vt.row(src).transpose());
        singular[dst] = svd.singular_values[src];
    }
    Ok(ThinSvd { left, singular, right })
}

/// Singular values at or below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Closest matrix (in Frobenius norm) to `v` whose rows are orthonormal:
/// `R·Tᵀ` from the thin SVD `V = R·S·Tᵀ`. Rank-deficient input has no
/// unique answer and is rejected.
pub fn nearest_orthonormal(v: &Matrix) -> Result<Matrix> {
    let svd = thin_svd(v)?;
    let k = v.nrows();
    let rank = svd.rank(RANK_TOL);
    if rank < k {
        return Err(Error::Degenerate { rank, required: k });
    }
    Ok(&svd.left * svd.right.transpose())
}

/// Ridge scales tried, in order, when a Cholesky factorization fails. Each is
/// multiplied by `trace(A)/dim`.
const RIDGE_LADDER: [f64; 3] = [0.0, 1e-10, 1e-6];
const REFINE_STEPS: usize = 2;

/// Cholesky factor of `A + ridge·I` that can be reused for several solves.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    system: Matrix,
    ridge: f64,
}

impl SpdFactor {
    /// Factorizes `a`, escalating through the ridge ladder on failure.
    pub fn new(a: &Matrix) -> Result<Self> {
        ensure_finite(a, "system matrix")?;
        if !a.is_square() {
            return Err(invalid(format!("system matrix must be square, got {}x{}", a.nrows(), a.ncols())));
        }
        let dim = a.nrows();
        let mean_diag = (a.trace() / dim as f64).abs().max(f64::MIN_POSITIVE);
        for scale in RIDGE_LADDER {
            let ridge = scale * mean_diag;
            let mut system = a.clone();
            for i in 0..dim {
                system[(i, i)] += ridge;
            }
            if let Some(chol) = Cholesky::new(system.clone()) {
                if chol.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                    return Ok(SpdFactor { chol, system, ridge });
                }
            }
        }
        Err(Error::Singular(format!(
            "Cholesky failed on {dim}x{dim} system even with ridge {:e}",
            RIDGE_LADDER[RIDGE_LADDER.len() - 1] * mean_diag
        )))
    }

    /// Ridge actually added to the diagonal (0 when none was needed).
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Solves `(A + ridge·I)·X = B` with a couple of refinement sweeps.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        if b.nrows() != self.system.nrows() {
            return Err(invalid(format!(
                "right-hand side has {} rows, system has {}",
                b.nrows(),
                self.system.nrows()
            )));
        }
        let mut x = self.chol.solve(b);
        for _ in 0..REFINE_STEPS {
            let r = b - &self.system * &x;
            x += self.chol.solve(&r);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("solve produced non-finite values".into()));
        }
        Ok(x)
    }
}

/// Solves `A·X = B` for symmetric positive definite `A`.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    ensure_finite(b, "right-hand side")?;
    SpdFactor::new(a)?.solve(b)
}

/// `Σ_ij a_ij b_ij`
pub fn frob_inner(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
