//! Alternating closed-form optimization of the joint feature/instance
//! selection objective
//!
//! ```text
//! min_{P,Q}  ||X − UV||₂,₁ + λ1·||P||₂,₁ + λ2·||Qᵀ||₂,₁ + λ3·Tr(PᵀLP)
//! s.t.       U = XP,  V = QX,  VVᵀ = I,  P ≥ 0,  Q ≥ 0
//! ```
//!
//! `U` and `V` are relaxed into auxiliary blocks coupled to `XP` and `QX`
//! by squared Frobenius penalties, the orthogonality constraint is carried
//! by a proxy `W` with orthonormal rows, and each non-smooth L2,1 term is
//! handled by iterative reweighting with a diagonal matrix refreshed from
//! the current iterate. One outer iteration runs, in order:
//!
//! 1. `evd(UᵀU)`, then the column reweighting `Θ` of `X − UV`;
//! 2. the inner loop alternating the `V` solve and the `W` projection;
//! 3. the `Q` solve (projected onto `Q ≥ 0`), then `Π` from the columns of `Q`;
//! 4. `evd(VVᵀ)`, `G` from the rows of `P`, the `P` solve (projected onto `P ≥ 0`);
//! 5. the `U` solve, then the row reweighting `K` of `X − UV`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::graph::{dirichlet_energy, Laplacian};
use crate::numerics::{
    col_norms, ensure_finite, ensure_shape, l21_cols, l21_rows, nearest_orthonormal,
    row_norms, sym_evd, DiagWeights, Matrix, SpdFactor, SymEigen,
};

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Row sparsity of the feature selector `P`.
    pub lambda1: f64,
    /// Column sparsity of the instance selector `Q`.
    pub lambda2: f64,
    /// Graph smoothness of `P`.
    pub lambda3: f64,
    /// Latent dimension.
    pub k: usize,
    pub tol_outer: f64,
    pub tol_inner: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Relative ridge (times the mean diagonal) always added to the `P` and
    /// `Q` systems. Zero by default.
    pub ridge_eps: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda1: 0.1,
            lambda2: 0.1,
            lambda3: 1.0,
            k: 10,
            tol_outer: 1e-4,
            tol_inner: 1e-5,
            max_outer: 200,
            max_inner: 100,
            ridge_eps: 0.0,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("ridge_eps", self.ridge_eps),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        for (name, v) in [("tol_outer", self.tol_outer), ("tol_inner", self.tol_inner)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.k == 0 || self.k > n.min(m) {
            return Err(invalid(format!("k = {} must lie in [1, min(n, m) = {}]", self.k, n.min(m))));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(invalid("iteration caps must be positive"));
        }
        Ok(())
    }
}

/// Working set of the alternating optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// m×k feature selector, nonnegative.
    pub p: Matrix,
    /// k×n instance selector, nonnegative.
    pub q: Matrix,
    /// n×k
    pub u: Matrix,
    /// k×m
    pub v: Matrix,
    /// k×m with orthonormal rows.
    pub w: Matrix,
    /// Column reweighting of the reconstruction residual (length m).
    pub theta: DiagWeights,
    /// Column reweighting of `Q` (length n).
    pub pi: DiagWeights,
    /// Row reweighting of the reconstruction residual (length n).
    pub kappa: DiagWeights,
    /// Row reweighting of `P` (length m).
    pub g: DiagWeights,
    pub outer_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub converged: bool,
    pub outer_iters: usize,
    /// Objective after each outer iteration.
    pub objective_trace: Vec<f64>,
    /// Objective at the initial state.
    pub initial_objective: f64,
    /// Last `||ΔP||_F / (1 + ||P||_F)`, the quantity tested against `tol_outer`.
    pub final_delta_p: f64,
    pub final_delta_q: f64,
    /// Inner V/W iterations spent in each outer iteration.
    pub inner_iters: Vec<usize>,
    /// Outer iterations whose inner loop hit `max_inner`.
    pub inner_nonconverged: usize,
    /// Times a rank-deficient `V` had to be replaced by a random draw.
    pub reseeds: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: SolverState,
    pub report: FitReport,
}

impl FitResult {
    pub fn p(&self) -> &Matrix {
        &self.state.p
    }

    pub fn q(&self) -> &Matrix {
        &self.state.q
    }
}

/// Rectangular identity: ones where the row index equals the column index.
fn rect_identity(rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| if i == j { 1.0 } else { 0.0 })
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    // row-major draw order so the stream does not depend on storage layout
    let mut a = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            a[(i, j)] = rng.random::<f64>();
        }
    }
    a
}

const MAX_RESEEDS: usize = 16;

/// Replaces `v` by fresh uniform draws until it has full row rank, then
/// returns its orthonormal-row projection.
fn orthonormal_or_reseed(v: &Matrix, rng: &mut ChaCha8Rng, reseeds: &mut usize) -> Result<Matrix> {
    let mut err = match nearest_orthonormal(v) {
        Ok(w) => return Ok(w),
        Err(e @ Error::Degenerate { .. }) => e,
        Err(e) => return Err(e),
    };
    for _ in 0..MAX_RESEEDS {
        *reseeds += 1;
        let fresh = uniform(rng, v.nrows(), v.ncols());
        match nearest_orthonormal(&fresh) {
            Ok(w) => return Ok(w),
            Err(e @ Error::Degenerate { .. }) => err = e,
            Err(e) => return Err(e),
        }
    }
    Err(err)
}

pub fn init_state(x: &Matrix, hyper: &HyperParams) -> Result<SolverState> {
    ensure_finite(x, "X")?;
    let (n, m) = x.shape();
    if n < 2 || m < 2 {
        return Err(invalid(format!("need at least 2 instances and 2 features, got {n}x{m}")));
    }
    hyper.validate(n, m)?;
    let k = hyper.k;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let u = uniform(&mut rng, n, k);
    let mut v = uniform(&mut rng, k, m);
    let mut reseeds = 0;
    let w = orthonormal_or_reseed(&v, &mut rng, &mut reseeds)?;
    if reseeds > 0 {
        v = w.clone();
    }
    Ok(SolverState {
        p: rect_identity(m, k),
        q: rect_identity(k, n),
        u,
        v,
        w,
        theta: DiagWeights::ones(m),
        pi: DiagWeights::ones(n),
        kappa: DiagWeights::ones(n),
        g: DiagWeights::ones(m),
        outer_iter: 0,
    })
}

/// `1/(2r)` per norm. Only an exactly-zero norm (or one so small that its
/// reciprocal overflows) gets weight 0: any positive cutoff lets a shrinking
/// row or column bounce between "zero" and "tiny" and the iteration cycles.
fn inverse_twice(norms: Vec<f64>) -> DiagWeights {
    let w = norms
        .into_iter()
        .map(|r| {
            let w = 1.0 / (2.0 * r);
            if r > 0.0 && w.is_finite() { w } else { 0.0 }
        })
        .collect();
    DiagWeights::new(w).expect("reweighting values are finite and nonnegative")
}

fn residual(x: &Matrix, u: &Matrix, v: &Matrix) -> Result<Matrix> {
    let (n, m) = x.shape();
    ensure_shape(u, n, u.ncols(), "U")?;
    ensure_shape(v, u.ncols(), m, "V")?;
    Ok(x - u * v)
}

/// `Θ_jj = 1 / (2·||column j of X − UV||)`, or 0 for a zero column.
pub fn reweight_theta(x: &Matrix, u: &Matrix, v: &Matrix) -> Result<DiagWeights> {
    let r = residual(x, u, v)?;
    Ok(inverse_twice(col_norms(&r)))
}

/// `K_ii = 1 / (2·||row i of X − UV||)`, or 0 for a zero row.
pub fn reweight_k(x: &Matrix, u: &Matrix, v: &Matrix) -> Result<DiagWeights> {
    let r = residual(x, u, v)?;
    Ok(inverse_twice(row_norms(&r)))
}

/// `Π_ii = 1 / (2·||column i of Q||)`, or 0 for a zero column.
pub fn reweight_pi(q: &Matrix) -> DiagWeights {
    inverse_twice(col_norms(q))
}

/// `G_ii = 1 / (2·||row i of P||)`, or 0 for a zero row.
pub fn reweight_g(p: &Matrix) -> DiagWeights {
    inverse_twice(row_norms(p))
}

fn symmetric_gram(a: &Matrix) -> Matrix {
    let g = a.tr_mul(a);
    (&g + g.transpose()) * 0.5
}

/// The `V` subproblem with `U`, `Q` and `Θ` held fixed. Its stationarity
/// condition is `Uᵀ(UV − X)Θ + 2V − QX − W = 0`; the eigendecomposition
/// `UᵀU = AΣAᵀ` diagonalizes it entrywise in the basis `E = AᵀV`.
#[derive(Debug, Clone)]
pub struct VSystem {
    basis: Matrix,
    sigma: Vec<f64>,
    theta: Vec<f64>,
    /// `UᵀXΘ + QX`
    fixed_rhs: Matrix,
}

impl VSystem {
    pub fn new(x: &Matrix, u: &Matrix, q: &Matrix, theta: &DiagWeights) -> Result<Self> {
        let (n, m) = x.shape();
        let k = u.ncols();
        ensure_shape(u, n, k, "U")?;
        ensure_shape(q, k, n, "Q")?;
        if theta.len() != m {
            return Err(invalid(format!("Θ has length {}, expected {m}", theta.len())));
        }
        let evd = sym_evd(&symmetric_gram(u))?;
        let mut fixed_rhs = u.tr_mul(x);
        for (j, mut col) in fixed_rhs.column_iter_mut().enumerate() {
            col *= theta[j];
        }
        fixed_rhs += q * x;
        Ok(Self::from_parts(evd, theta, fixed_rhs))
    }

    fn from_parts(evd: SymEigen, theta: &DiagWeights, fixed_rhs: Matrix) -> Self {
        VSystem {
            basis: evd.vectors,
            // UᵀU is PSD; round-off negatives are clamped
            sigma: evd.values.iter().map(|s| s.max(0.0)).collect(),
            theta: theta.values().to_vec(),
            fixed_rhs,
        }
    }

    /// Minimizer over `V` for the given orthonormal proxy `W`.
    pub fn solve(&self, w: &Matrix) -> Matrix {
        let psi = &self.fixed_rhs + w;
        let mut e = self.basis.tr_mul(&psi);
        for j in 0..e.ncols() {
            for i in 0..e.nrows() {
                e[(i, j)] /= self.sigma[i] * self.theta[j] + 2.0;
            }
        }
        &self.basis * e
    }
}

pub fn update_v(x: &Matrix, u: &Matrix, q: &Matrix, w: &Matrix, theta: &DiagWeights) -> Result<Matrix> {
    let sys = VSystem::new(x, u, q, theta)?;
    ensure_shape(w, u.ncols(), x.ncols(), "W")?;
    Ok(sys.solve(w))
}

pub fn update_w(v: &Matrix) -> Result<Matrix> {
    nearest_orthonormal(v)
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub v: Matrix,
    pub w: Matrix,
    pub iters: usize,
    pub converged: bool,
}

fn small_change(new: &Matrix, old: &Matrix, tol: f64) -> bool {
    (new - old).norm() <= tol * (1.0 + old.norm())
}

fn inner_loop(
    sys: &VSystem,
    v0: &Matrix,
    w0: &Matrix,
    hyper: &HyperParams,
    rng: &mut ChaCha8Rng,
    reseeds: &mut usize,
) -> Result<InnerOutcome> {
    let mut v = v0.clone();
    let mut w = w0.clone();
    for it in 1..=hyper.max_inner {
        let v_new = sys.solve(&w);
        let w_new = orthonormal_or_reseed(&v_new, rng, reseeds)?;
        let done = small_change(&v_new, &v, hyper.tol_inner) && small_change(&w_new, &w, hyper.tol_inner);
        v = v_new;
        w = w_new;
        if done {
            return Ok(InnerOutcome { v, w, iters: it, converged: true });
        }
    }
    Ok(InnerOutcome { v, w, iters: hyper.max_inner, converged: false })
}

/// Alternates the `V` solve and the `W` projection with `U`, `Q`, `Θ` fixed,
/// starting from the state's `V` and `W`.
pub fn inner_vw_loop(state: &SolverState, x: &Matrix, hyper: &HyperParams) -> Result<InnerOutcome> {
    let sys = VSystem::new(x, &state.u, &state.q, &state.theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut reseeds = 0;
    inner_loop(&sys, &state.v, &state.w, hyper, &mut rng, &mut reseeds)
}

fn add_diag(a: &mut Matrix, diag: impl Iterator<Item = f64>) {
    for (i, d) in diag.enumerate() {
        a[(i, i)] += d;
    }
}

fn ridge_of(a: &Matrix, eps: f64) -> f64 {
    eps * a.trace() / a.nrows() as f64
}

/// Unprojected `Q` solving `Q·(XXᵀ + D) = VXᵀ` with `D = λ2·Π`.
///
/// When there are more instances than features and `D` is positive, the
/// n×n system is reduced to an m×m one through
/// `(XXᵀ + D)⁻¹ = D⁻¹ − D⁻¹X(I + XᵀD⁻¹X)⁻¹XᵀD⁻¹`; otherwise the n×n system
/// is factorized directly.
pub fn solve_q_raw(x: &Matrix, v: &Matrix, pi: &DiagWeights, lambda2: f64) -> Result<Matrix> {
    QSolver::new(x, 0.0).solve_raw(v, pi, lambda2)
}

pub fn update_q(x: &Matrix, v: &Matrix, pi: &DiagWeights, lambda2: f64) -> Result<Matrix> {
    Ok(solve_q_raw(x, v, pi, lambda2)?.map(|e| e.max(0.0)))
}

const REDUCED_ACCEPT: f64 = 1e-11;
const REDUCED_REFINE: usize = 3;

struct QSolver<'a> {
    x: &'a Matrix,
    ridge_eps: f64,
    xxt: std::cell::OnceCell<Matrix>,
}

impl<'a> QSolver<'a> {
    fn new(x: &'a Matrix, ridge_eps: f64) -> Self {
        QSolver { x, ridge_eps, xxt: std::cell::OnceCell::new() }
    }

    fn xxt(&self) -> &Matrix {
        self.xxt.get_or_init(|| {
            let g = self.x * self.x.transpose();
            (&g + g.transpose()) * 0.5
        })
    }

    fn diag(&self, pi: &DiagWeights, lambda2: f64) -> Vec<f64> {
        let ridge = if self.ridge_eps > 0.0 {
            // trace(XXᵀ) = ||X||²
            self.ridge_eps * self.x.norm_squared() / self.x.nrows() as f64
        } else {
            0.0
        };
        pi.values().iter().map(|p| lambda2 * p + ridge).collect()
    }

    fn solve_raw(&self, v: &Matrix, pi: &DiagWeights, lambda2: f64) -> Result<Matrix> {
        let (n, m) = self.x.shape();
        ensure_shape(v, v.nrows(), m, "V")?;
        if pi.len() != n {
            return Err(invalid(format!("Π has length {}, expected {n}", pi.len())));
        }
        let d = self.diag(pi, lambda2);
        // transposed problem: (XXᵀ + D)·Qᵀ = X·Vᵀ
        let rhs = self.x * v.transpose();
        if n > m && d.iter().all(|&di| di > 0.0) {
            if let Some(qt) = self.solve_reduced(&d, &rhs)? {
                return Ok(qt.transpose());
            }
        }
        let mut a = self.xxt().clone();
        add_diag(&mut a, d.iter().copied());
        Ok(SpdFactor::new(&a)?.solve(&rhs)?.transpose())
    }

    /// Returns `None` when the reduced route cannot reach full accuracy.
    fn solve_reduced(&self, d: &[f64], rhs: &Matrix) -> Result<Option<Matrix>> {
        let x = self.x;
        let m = x.ncols();
        let dinv: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
        let mut dinv_x = x.clone();
        for (i, mut row) in dinv_x.row_iter_mut().enumerate() {
            row *= dinv[i];
        }
        let mut core = x.tr_mul(&dinv_x);
        core = (&core + core.transpose()) * 0.5;
        add_diag(&mut core, std::iter::repeat_n(1.0, m));
        let factor = SpdFactor::new(&core)?;
        let apply_inverse = |b: &Matrix| -> Result<Matrix> {
            let mut db = b.clone();
            for (i, mut row) in db.row_iter_mut().enumerate() {
                row *= dinv[i];
            }
            let inner = factor.solve(&dinv_x.tr_mul(b))?;
            Ok(db - &dinv_x * inner)
        };
        let apply_system = |z: &Matrix| -> Matrix {
            let mut out = x * x.tr_mul(z);
            for (i, mut row) in out.row_iter_mut().enumerate() {
                row += z.row(i) * d[i];
            }
            out
        };
        let mut z = apply_inverse(rhs)?;
        for _ in 0..REDUCED_REFINE {
            let r = rhs - apply_system(&z);
            z += apply_inverse(&r)?;
        }
        let res = (rhs - apply_system(&z)).norm();
        if z.iter().all(|v| v.is_finite()) && res <= REDUCED_ACCEPT * (1.0 + rhs.norm()) {
            Ok(Some(z))
        } else {
            Ok(None)
        }
    }
}

/// Unprojected `P = (XᵀX + λ1·G + λ3·L)⁻¹·XᵀU`.
pub fn solve_p_raw(
    x: &Matrix,
    u: &Matrix,
    g: &DiagWeights,
    l: &Laplacian,
    lambda1: f64,
    lambda3: f64,
) -> Result<Matrix> {
    let base = p_base(x, l, lambda3);
    solve_p_with_base(&base, x, u, g, lambda1, 0.0)
}

pub fn update_p(
    x: &Matrix,
    u: &Matrix,
    g: &DiagWeights,
    l: &Laplacian,
    lambda1: f64,
    lambda3: f64,
) -> Result<Matrix> {
    Ok(solve_p_raw(x, u, g, l, lambda1, lambda3)?.map(|e| e.max(0.0)))
}

/// `XᵀX + λ3·L`, constant over the whole fit.
fn p_base(x: &Matrix, l: &Laplacian, lambda3: f64) -> Matrix {
    let g = x.tr_mul(x);
    (&g + g.transpose()) * 0.5 + l.matrix() * lambda3
}

fn solve_p_with_base(
    base: &Matrix,
    x: &Matrix,
    u: &Matrix,
    g: &DiagWeights,
    lambda1: f64,
    ridge_eps: f64,
) -> Result<Matrix> {
    let (n, m) = x.shape();
    ensure_shape(base, m, m, "XᵀX + λ3·L")?;
    ensure_shape(u, n, u.ncols(), "U")?;
    if g.len() != m {
        return Err(invalid(format!("G has length {}, expected {m}", g.len())));
    }
    let mut a = base.clone();
    let ridge = ridge_of(base, ridge_eps);
    add_diag(&mut a, g.values().iter().map(|gi| lambda1 * gi + ridge));
    SpdFactor::new(&a)?.solve(&x.tr_mul(u))
}

/// `U` solving `K(UV − X)Vᵀ + U − XP = 0`, via `VVᵀ = BΛBᵀ` and the
/// entrywise update of `H = UB`.
pub fn update_u(x: &Matrix, p: &Matrix, v: &Matrix, kappa: &DiagWeights) -> Result<Matrix> {
    let (n, m) = x.shape();
    let k = v.nrows();
    ensure_shape(p, m, k, "P")?;
    ensure_shape(v, k, m, "V")?;
    if kappa.len() != n {
        return Err(invalid(format!("K has length {}, expected {n}", kappa.len())));
    }
    let vvt = v * v.transpose();
    let evd = sym_evd(&((&vvt + vvt.transpose()) * 0.5))?;
    let lambda: Vec<f64> = evd.values.iter().map(|l| l.max(0.0)).collect();
    let mut xi = x * v.transpose();
    for (i, mut row) in xi.row_iter_mut().enumerate() {
        row *= kappa[i];
    }
    xi += x * p;
    let mut h = xi * &evd.vectors;
    for j in 0..k {
        for i in 0..n {
            h[(i, j)] /= kappa[i] * lambda[j] + 1.0;
        }
    }
    Ok(h * evd.vectors.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    /// `||X − XP·QX||₂,₁` (row-wise)
    pub reconstruction: f64,
    /// `λ1·||P||₂,₁`
    pub feature_sparsity: f64,
    /// `λ2·||Qᵀ||₂,₁`
    pub instance_sparsity: f64,
    /// `λ3·Tr(PᵀLP)`
    pub smoothness: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.feature_sparsity + self.instance_sparsity + self.smoothness
    }
}

/// Full objective evaluated on the constraint surface `U = XP`, `V = QX`.
pub fn objective(x: &Matrix, p: &Matrix, q: &Matrix, l: &Laplacian, hyper: &HyperParams) -> Result<ObjectiveTerms> {
    let (n, m) = x.shape();
    let k = p.ncols();
    ensure_shape(p, m, k, "P")?;
    ensure_shape(q, k, n, "Q")?;
    if l.dim() != m {
        return Err(invalid(format!("Laplacian is {}x{0}, expected {m}x{m}", l.dim())));
    }
    let recon = x - (x * p) * (q * x);
    Ok(ObjectiveTerms {
        reconstruction: l21_rows(&recon)?,
        feature_sparsity: hyper.lambda1 * l21_rows(p)?,
        instance_sparsity: hyper.lambda2 * l21_cols(q)?,
        smoothness: hyper.lambda3 * dirichlet_energy(p, l)?.max(0.0),
    })
}

/// Stateful driver for the outer loop. `fit` is the usual entry point;
/// this type exposes single steps for inspection.
pub struct Solver<'a> {
    x: &'a Matrix,
    l: &'a Laplacian,
    hyper: HyperParams,
    p_base: Matrix,
    q_solver: QSolver<'a>,
    rng: ChaCha8Rng,
    pub state: SolverState,
    reseeds: usize,
}

/// What one outer iteration did.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub delta_p: f64,
    pub delta_q: f64,
    pub rel_delta_p: f64,
    pub rel_delta_q: f64,
    pub inner_iters: usize,
    pub inner_converged: bool,
    pub objective: f64,
}

impl<'a> Solver<'a> {
    pub fn new(x: &'a Matrix, l: &'a Laplacian, hyper: &HyperParams) -> Result<Self> {
        let state = init_state(x, hyper)?;
        if l.dim() != x.ncols() {
            return Err(invalid(format!(
                "Laplacian has {} nodes but X has {} features",
                l.dim(),
                x.ncols()
            )));
        }
        Ok(Solver {
            x,
            l,
            hyper: hyper.clone(),
            p_base: p_base(x, l, hyper.lambda3),
            q_solver: QSolver::new(x, hyper.ridge_eps),
            rng: ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x9e37_79b9_7f4a_7c15),
            state,
            reseeds: 0,
        })
    }

    pub fn objective(&self) -> Result<ObjectiveTerms> {
        objective(self.x, &self.state.p, &self.state.q, self.l, &self.hyper)
    }

    pub fn step(&mut self) -> Result<StepInfo> {
        let x = self.x;
        let hyper = &self.hyper;
        let st = &mut self.state;

        st.theta = reweight_theta(x, &st.u, &st.v)?;
        let sys = VSystem::new(x, &st.u, &st.q, &st.theta)?;
        let inner = inner_loop(&sys, &st.v, &st.w, hyper, &mut self.rng, &mut self.reseeds)?;
        st.v = inner.v;
        st.w = inner.w;

        let q_new = self.q_solver.solve_raw(&st.v, &st.pi, hyper.lambda2)?.map(|e| e.max(0.0));
        st.pi = reweight_pi(&q_new);

        st.g = reweight_g(&st.p);
        let p_new = solve_p_with_base(&self.p_base, x, &st.u, &st.g, hyper.lambda1, hyper.ridge_eps)?
            .map(|e| e.max(0.0));

        st.u = update_u(x, &p_new, &st.v, &st.kappa)?;
        st.kappa = reweight_k(x, &st.u, &st.v)?;

        let delta_p = (&p_new - &st.p).norm();
        let delta_q = (&q_new - &st.q).norm();
        let rel_delta_p = delta_p / (1.0 + st.p.norm());
        let rel_delta_q = delta_q / (1.0 + st.q.norm());
        st.p = p_new;
        st.q = q_new;
        st.outer_iter += 1;

        for (name, a) in [("P", &st.p), ("Q", &st.q), ("U", &st.u), ("V", &st.v)] {
            if a.iter().any(|e| !e.is_finite()) {
                return Err(Error::Singular(format!("{name} became non-finite at outer iteration {}", st.outer_iter)));
            }
        }

        let objective = self.objective()?.total();
        Ok(StepInfo {
            delta_p,
            delta_q,
            rel_delta_p,
            rel_delta_q,
            inner_iters: inner.iters,
            inner_converged: inner.converged,
            objective,
        })
    }

    pub fn run(mut self) -> Result<FitResult> {
        let initial_objective = self.objective()?.total();
        let mut report = FitReport {
            converged: false,
            outer_iters: 0,
            objective_trace: Vec::new(),
            initial_objective,
            final_delta_p: f64::NAN,
            final_delta_q: f64::NAN,
            inner_iters: Vec::new(),
            inner_nonconverged: 0,
            reseeds: 0,
        };
        for _ in 0..self.hyper.max_outer {
            let info = self.step()?;
            report.outer_iters += 1;
            report.objective_trace.push(info.objective);
            report.inner_iters.push(info.inner_iters);
            if !info.inner_converged {
                report.inner_nonconverged += 1;
            }
            report.final_delta_p = info.rel_delta_p;
            report.final_delta_q = info.rel_delta_q;
            if info.rel_delta_p <= self.hyper.tol_outer && info.rel_delta_q <= self.hyper.tol_outer {
                report.converged = true;
                break;
            }
        }
        report.reseeds = self.reseeds;
        Ok(FitResult { state: self.state, report })
    }
}

/// Runs the alternating optimization to convergence or `max_outer`.
pub fn fit(x: &Matrix, l: &Laplacian, hyper: &HyperParams) -> Result<FitResult> {
    Solver::new(x, l, hyper)?.run()
}

/// Smooth surrogate costs minimized by each block update when the
/// reweighting matrices are held fixed. Diagnostic use only.
pub mod surrogate {
    use super::*;

    fn weighted_cols_sq(r: &Matrix, w: &DiagWeights) -> f64 {
        r.column_iter().enumerate().map(|(j, c)| w[j] * c.norm_squared()).sum()
    }

    fn weighted_rows_sq(r: &Matrix, w: &DiagWeights) -> f64 {
        r.row_iter().enumerate().map(|(i, c)| w[i] * c.norm_squared()).sum()
    }

    /// `Σ_j Θ_jj·||(X − UV)_j||² + ||V − QX||² + ||V − W||²`
    pub fn v_cost(x: &Matrix, u: &Matrix, v: &Matrix, q: &Matrix, w: &Matrix, theta: &DiagWeights) -> f64 {
        weighted_cols_sq(&(x - u * v), theta) + (v - q * x).norm_squared() + (v - w).norm_squared()
    }

    /// `||V − QX||² + λ2·Σ_i Π_ii·||Q^i||²`
    pub fn q_cost(x: &Matrix, v: &Matrix, q: &Matrix, pi: &DiagWeights, lambda2: f64) -> f64 {
        (v - q * x).norm_squared() + lambda2 * weighted_cols_sq(q, pi)
    }

    /// `||U − XP||² + λ1·Σ_i G_ii·||P_i||² + λ3·Tr(PᵀLP)`
    pub fn p_cost(
        x: &Matrix,
        u: &Matrix,
        p: &Matrix,
        g: &DiagWeights,
        l: &Laplacian,
        lambda1: f64,
        lambda3: f64,
    ) -> f64 {
        (u - x * p).norm_squared()
            + lambda1 * weighted_rows_sq(p, g)
            + lambda3 * dirichlet_energy(p, l).expect("shapes checked by caller")
    }

    /// `Σ_i K_ii·||(X − UV)_i||² + ||U − XP||²`
    pub fn u_cost(x: &Matrix, u: &Matrix, v: &Matrix, p: &Matrix, kappa: &DiagWeights) -> f64 {
        weighted_rows_sq(&(x - u * v), kappa) + (u - x * p).norm_squared()
    }
}

/// Stationarity residuals of the four block updates, as Frobenius norms.
pub mod stationarity {
    use super::*;

    fn scale_cols(a: &Matrix, w: &DiagWeights) -> Matrix {
        let mut out = a.clone();
        for (j, mut c) in out.column_iter_mut().enumerate() {
            c *= w[j];
        }
        out
    }

    fn scale_rows(a: &Matrix, w: &DiagWeights) -> Matrix {
        let mut out = a.clone();
        for (i, mut r) in out.row_iter_mut().enumerate() {
            r *= w[i];
        }
        out
    }

    /// `||Uᵀ(UV − X)Θ + 2V − QX − W||`
    pub fn v_residual(x: &Matrix, u: &Matrix, v: &Matrix, q: &Matrix, w: &Matrix, theta: &DiagWeights) -> f64 {
        let r = u.tr_mul(&scale_cols(&(u * v - x), theta)) + v * 2.0 - q * x - w;
        r.norm()
    }

    /// `||(QX − V)Xᵀ + λ2·QΠ||`
    pub fn q_residual(x: &Matrix, v: &Matrix, q: &Matrix, pi: &DiagWeights, lambda2: f64) -> f64 {
        let r = (q * x - v) * x.transpose() + scale_cols(q, pi) * lambda2;
        r.norm()
    }

    /// `||Xᵀ(XP − U) + λ1·GP + λ3·LP||`
    pub fn p_residual(
        x: &Matrix,
        u: &Matrix,
        p: &Matrix,
        g: &DiagWeights,
        l: &Laplacian,
        lambda1: f64,
        lambda3: f64,
    ) -> f64 {
        let r = x.tr_mul(&(x * p - u)) + scale_rows(p, g) * lambda1 + l.matrix() * p * lambda3;
        r.norm()
    }

    /// `||K(UV − X)Vᵀ + U − XP||`
    pub fn u_residual(x: &Matrix, u: &Matrix, v: &Matrix, p: &Matrix, kappa: &DiagWeights) -> f64 {
        let r = scale_rows(&(u * v - x), kappa) * v.transpose() + u - x * p;
        r.norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NetworkStructure;
    use approx::assert_abs_diff_eq;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rand_weights(rng: &mut ChaCha8Rng, len: usize) -> DiagWeights {
        DiagWeights::new((0..len).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap()
    }

    fn ring(m: usize) -> Laplacian {
        let edges: Vec<_> = (0..m).map(|i| (i, (i + 1) % m, 1.0)).collect();
        NetworkStructure::new(m, &edges).unwrap().laplacian()
    }

    #[test]
    fn init_uses_rectangular_identities() {
        let x = Matrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let hyper = HyperParams { k: 2, seed: 7, ..Default::default() };
        let st = init_state(&x, &hyper).unwrap();
        let mut expected = Matrix::zeros(3, 2);
        expected[(0, 0)] = 1.0;
        expected[(1, 1)] = 1.0;
        assert_eq!(st.p, expected);
        assert_eq!(st.q, rect_identity(2, 4));
        assert_eq!(st.theta, DiagWeights::ones(3));
        assert!(st.u.iter().all(|v| (0.0..1.0).contains(v)));
        let wwt = &st.w * st.w.transpose();
        assert!((wwt - Matrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn init_is_seeded() {
        let x = Matrix::from_fn(4, 3, |i, j| (i + j) as f64);
        let a = init_state(&x, &HyperParams { k: 2, seed: 7, ..Default::default() }).unwrap();
        let b = init_state(&x, &HyperParams { k: 2, seed: 7, ..Default::default() }).unwrap();
        let c = init_state(&x, &HyperParams { k: 2, seed: 8, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.u, c.u);
    }

    #[test]
    fn init_rejects_bad_k() {
        let x = Matrix::zeros(4, 3);
        assert!(init_state(&x, &HyperParams { k: 0, ..Default::default() }).is_err());
        assert!(init_state(&x, &HyperParams { k: 4, ..Default::default() }).is_err());
        assert!(init_state(&Matrix::zeros(1, 3), &HyperParams { k: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn theta_examples() {
        let u = Matrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let v = Matrix::from_row_slice(1, 2, &[3.0, -1.0]);
        let x = &u * &v;
        assert_eq!(reweight_theta(&x, &u, &v).unwrap(), DiagWeights::zeros(2));

        // residual column norm 0.5 → weight 1
        let mut x2 = x.clone();
        x2[(0, 1)] += 0.3;
        x2[(1, 1)] += 0.4;
        let t = reweight_theta(&x2, &u, &v).unwrap();
        assert_eq!(t[0], 0.0);
        assert_abs_diff_eq!(t[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reweights_match_direct_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, m, k) = (6, 5, 2);
        let x = rand_mat(&mut rng, n, m);
        let u = rand_mat(&mut rng, n, k);
        let v = rand_mat(&mut rng, k, m);
        let theta = reweight_theta(&x, &u, &v).unwrap();
        let kappa = reweight_k(&x, &u, &v).unwrap();
        for j in 0..m {
            let mut s = 0.0;
            for i in 0..n {
                let mut uv = 0.0;
                for t in 0..k {
                    uv += u[(i, t)] * v[(t, j)];
                }
                s += (x[(i, j)] - uv).powi(2);
            }
            assert_abs_diff_eq!(theta[j], 0.5 / s.sqrt(), epsilon = 1e-12);
        }
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..m {
                let mut uv = 0.0;
                for t in 0..k {
                    uv += u[(i, t)] * v[(t, j)];
                }
                s += (x[(i, j)] - uv).powi(2);
            }
            assert_abs_diff_eq!(kappa[i], 0.5 / s.sqrt(), epsilon = 1e-12);
        }
        let q = rand_mat(&mut rng, k, n);
        let pi = reweight_pi(&q);
        for i in 0..n {
            let s: f64 = (0..k).map(|t| q[(t, i)].powi(2)).sum();
            assert_abs_diff_eq!(pi[i], 0.5 / s.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn pi_and_g_examples() {
        let q = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(reweight_pi(&q)[0], 0.0);
        let p = Matrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 0.0]);
        let g = reweight_g(&p);
        assert_abs_diff_eq!(g[0], 0.1, epsilon = 1e-15);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn update_v_closed_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, m, k) = (5, 6, 2);
        let x = rand_mat(&mut rng, n, m);
        let q = rand_mat(&mut rng, k, n);
        let w = nearest_orthonormal(&rand_mat(&mut rng, k, m)).unwrap();
        let expected = (&q * &x + &w) * 0.5;

        let v = update_v(&x, &Matrix::zeros(n, k), &q, &w, &rand_weights(&mut rng, m)).unwrap();
        assert!((v - &expected).amax() < 1e-12);

        let u = rand_mat(&mut rng, n, k);
        let v = update_v(&x, &u, &q, &w, &DiagWeights::zeros(m)).unwrap();
        assert!((v - &expected).amax() < 1e-12);
    }

    #[test]
    fn update_v_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (n, m, k) = (8, 7, 3);
            let x = rand_mat(&mut rng, n, m);
            let u = rand_mat(&mut rng, n, k);
            let q = rand_mat(&mut rng, k, n);
            let w = nearest_orthonormal(&rand_mat(&mut rng, k, m)).unwrap();
            let theta = rand_weights(&mut rng, m);
            let v = update_v(&x, &u, &q, &w, &theta).unwrap();
            let res = stationarity::v_residual(&x, &u, &v, &q, &w, &theta);
            assert!(res <= 1e-8 * (1.0 + (&q * &x + &w).norm()), "residual {res}");
        }
    }

    #[test]
    fn update_q_closed_cases() {
        // square orthogonal X: XXᵀ = I
        let c = (0.3_f64).cos();
        let s = (0.3_f64).sin();
        let x = Matrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let v = Matrix::from_row_slice(1, 2, &[0.5, -0.2]);
        let q = solve_q_raw(&x, &v, &DiagWeights::ones(2), 0.0).unwrap();
        assert!((q - &v * x.transpose()).amax() < 1e-12);

        let q = update_q(&x, &Matrix::zeros(1, 2), &DiagWeights::ones(2), 0.3).unwrap();
        assert_eq!(q, Matrix::zeros(1, 2));
    }

    #[test]
    fn update_q_is_stationary_on_both_routes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // n > m exercises the reduced route, n < m the direct one
        for &(n, m) in &[(20, 6), (6, 9), (12, 12)] {
            let k = 3;
            let x = rand_mat(&mut rng, n, m);
            let v = rand_mat(&mut rng, k, m);
            let pi = rand_weights(&mut rng, n);
            let q = solve_q_raw(&x, &v, &pi, 0.7).unwrap();
            let res = stationarity::q_residual(&x, &v, &q, &pi, 0.7);
            assert!(res <= 1e-8 * (1.0 + (&v * x.transpose()).norm()), "residual {res} for {n}x{m}");
        }
    }

    #[test]
    fn update_q_handles_zero_pi_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let (n, m, k) = (15, 5, 2);
        let x = rand_mat(&mut rng, n, m);
        let v = rand_mat(&mut rng, k, m);
        let mut w = rand_weights(&mut rng, n).into_vec();
        w[3] = 0.0;
        let pi = DiagWeights::new(w).unwrap();
        let q = solve_q_raw(&x, &v, &pi, 0.5).unwrap();
        let res = stationarity::q_residual(&x, &v, &q, &pi, 0.5);
        assert!(res <= 1e-8 * (1.0 + (&v * x.transpose()).norm()));
    }

    #[test]
    fn update_p_closed_cases() {
        // X with orthonormal columns: XᵀX = I
        let x = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.6, 0.0, 0.8]);
        let l = ring(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = rand_mat(&mut rng, 3, 1);
        let p = solve_p_raw(&x, &u, &DiagWeights::ones(2), &l, 0.0, 0.0).unwrap();
        assert!((p - x.transpose() * &u).amax() < 1e-12);

        let p = update_p(&x, &Matrix::zeros(3, 1), &DiagWeights::ones(2), &l, 0.3, 0.4).unwrap();
        assert_eq!(p, Matrix::zeros(2, 1));
    }

    #[test]
    fn update_p_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for &(n, m) in &[(10, 6), (5, 8)] {
            let k = 2;
            let x = rand_mat(&mut rng, n, m);
            let u = rand_mat(&mut rng, n, k);
            let g = rand_weights(&mut rng, m);
            let l = ring(m);
            let p = solve_p_raw(&x, &u, &g, &l, 0.4, 1.3).unwrap();
            let res = stationarity::p_residual(&x, &u, &p, &g, &l, 0.4, 1.3);
            assert!(res <= 1e-8 * (1.0 + x.tr_mul(&u).norm()), "residual {res}");
        }
    }

    #[test]
    fn update_u_closed_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, m, k) = (5, 4, 2);
        let x = rand_mat(&mut rng, n, m);
        let p = rand_mat(&mut rng, m, k);
        let v = rand_mat(&mut rng, k, m);
        let u = update_u(&x, &p, &v, &DiagWeights::zeros(n)).unwrap();
        assert!((u - &x * &p).amax() < 1e-12);
        let u = update_u(&x, &p, &Matrix::zeros(k, m), &rand_weights(&mut rng, n)).unwrap();
        assert!((u - &x * &p).amax() < 1e-12);
    }

    #[test]
    fn update_u_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let (n, m, k) = (9, 6, 3);
            let x = rand_mat(&mut rng, n, m);
            let p = rand_mat(&mut rng, m, k);
            let v = rand_mat(&mut rng, k, m);
            let kappa = rand_weights(&mut rng, n);
            let u = update_u(&x, &p, &v, &kappa).unwrap();
            let res = stationarity::u_residual(&x, &u, &v, &p, &kappa);
            assert!(res <= 1e-8 * (1.0 + (&x * &p).norm()), "residual {res}");
        }
    }

    #[test]
    fn objective_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, m, k) = (5, 4, 2);
        let l = ring(m);
        let hyper = HyperParams { k, lambda1: 0.3, lambda2: 0.2, lambda3: 0.7, ..Default::default() };
        let x = rand_mat(&mut rng, n, m);
        let t = objective(&x, &Matrix::zeros(m, k), &Matrix::zeros(k, n), &l, &hyper).unwrap();
        assert_abs_diff_eq!(t.total(), l21_rows(&x).unwrap(), epsilon = 1e-12);

        let p = rand_mat(&mut rng, m, k).abs();
        let q = rand_mat(&mut rng, k, n).abs();
        let t = objective(&Matrix::zeros(n, m), &p, &q, &l, &hyper).unwrap();
        let expected = 0.3 * l21_rows(&p).unwrap() + 0.2 * l21_cols(&q).unwrap() + 0.7 * dirichlet_energy(&p, &l).unwrap();
        assert_abs_diff_eq!(t.total(), expected, epsilon = 1e-12);
        assert_eq!(t.reconstruction, 0.0);
    }

    #[test]
    fn inner_loop_stops_at_fixpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (n, m) = (12, 8);
        let x = rand_mat(&mut rng, n, m);
        let hyper = HyperParams { k: 3, ..Default::default() };
        let mut st = init_state(&x, &hyper).unwrap();
        st.theta = reweight_theta(&x, &st.u, &st.v).unwrap();
        let first = inner_vw_loop(&st, &x, &hyper).unwrap();
        assert!(first.converged);
        assert!(first.iters <= hyper.max_inner);
        st.v = first.v.clone();
        st.w = first.w.clone();
        let again = inner_vw_loop(&st, &x, &hyper).unwrap();
        assert_eq!(again.iters, 1);
        assert!((&again.v - &first.v).norm() <= hyper.tol_inner * (1.0 + first.v.norm()));
        let wwt = &again.w * again.w.transpose();
        assert!((wwt - Matrix::identity(3, 3)).amax() < 1e-8);
    }

    #[test]
    fn fit_keeps_selectors_nonnegative_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, m) = (20, 8);
        let x = rand_mat(&mut rng, n, m);
        let l = ring(m);
        let hyper = HyperParams { k: 3, max_outer: 15, seed: 3, ..Default::default() };
        let a = fit(&x, &l, &hyper).unwrap();
        let b = fit(&x, &l, &hyper).unwrap();
        assert!(a.p().iter().all(|v| *v >= 0.0));
        assert!(a.q().iter().all(|v| *v >= 0.0));
        assert_eq!(a.report.objective_trace.len(), a.report.outer_iters);
        assert_eq!(a.p(), b.p());
        assert_eq!(a.q(), b.q());
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn fit_rejects_mismatched_laplacian() {
        let x = Matrix::from_element(4, 3, 1.0);
        assert!(fit(&x, &ring(4), &HyperParams { k: 2, ..Default::default() }).is_err());
    }
}
