//! Restarted GMRES, the block preconditioner built on the Schur complement
//! of the source-coupling blocks, and dense diagnostics (materialization,
//! condition numbers, singular values).
//!
//! The preconditioner inverts `[I E; F D]` exactly: the M x M Schur
//! complement `S = D - F E` is LU-factored once, after which one
//! application costs a backsolve for the strengths plus `z_sigma =
//! r_sigma - E z_a`, i.e. O(NM + M^2).

use crate::system::DiscreteSystem;
use ndarray::{Array1, Array2};
use ndarray_linalg::{FactorizeInto, LUFactorized, ReciprocalConditionNum, Solve, SVD};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinsysError {
    #[error("operator dimension {op} does not match right-hand side {rhs}")]
    ShapeMismatch { op: usize, rhs: usize },
    #[error("Schur complement is numerically singular")]
    SingularSchur,
    #[error("matrix is numerically singular")]
    SingularMatrix,
    #[error("dimension {0} exceeds the dense-diagnostics guard {1}")]
    TooLarge(usize, usize),
    #[error("matrix contains a non-finite entry")]
    NonFinite,
    #[error("linear algebra backend failure: {0}")]
    Backend(String),
    #[error(transparent)]
    System(#[from] crate::system::SystemError),
}

/// Iteration controls for restarted GMRES.
#[derive(Debug, Clone, Copy)]
pub struct GmresConfig {
    /// Relative residual target, measured on the preconditioned system.
    pub tol: f64,
    /// Arnoldi cycle length.
    pub restart: usize,
    /// Total inner-iteration budget.
    pub max_iters: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self { tol: 1e-11, restart: 50, max_iters: 2000 }
    }
}

/// Outcome of a GMRES run. `converged` is false when the iteration budget
/// ran out; `solution` then holds the best iterate reached.
#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Left-preconditioned restarted GMRES with classical Gram-Schmidt and one
/// reorthogonalization pass.
pub fn gmres<A, P>(
    apply: A,
    precond: Option<P>,
    rhs: &[f64],
    cfg: &GmresConfig,
) -> Result<GmresOutcome, LinsysError>
where
    A: Fn(&[f64]) -> Result<Vec<f64>, LinsysError>,
    P: Fn(&[f64]) -> Vec<f64>,
{
    let n = rhs.len();
    let prec = |v: &[f64]| -> Vec<f64> {
        match &precond {
            Some(p) => p(v),
            None => v.to_vec(),
        }
    };

    let b = prec(rhs);
    let b_norm = norm(&b);
    if b_norm == 0.0 {
        return Ok(GmresOutcome {
            solution: vec![0.0; n],
            iterations: 0,
            residual_history: vec![0.0],
            converged: true,
        });
    }

    let mut x = vec![0.0; n];
    let mut history = Vec::new();
    let mut total_iters = 0usize;
    let restart = cfg.restart.max(1);

    loop {
        // Residual of the current iterate.
        let ax = apply(&x)?;
        if ax.len() != n {
            return Err(LinsysError::ShapeMismatch { op: ax.len(), rhs: n });
        }
        let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        r = prec(&r);
        let beta = norm(&r);
        if total_iters == 0 {
            history.push(beta / b_norm);
        }
        if beta / b_norm <= cfg.tol {
            return Ok(GmresOutcome {
                solution: x,
                iterations: total_iters,
                residual_history: history,
                converged: true,
            });
        }
        if total_iters >= cfg.max_iters {
            return Ok(GmresOutcome {
                solution: x,
                iterations: total_iters,
                residual_history: history,
                converged: false,
            });
        }

        // Arnoldi cycle.
        let m = restart;
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut hess = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut k_done = 0;
        let mut broke_down = false;

        for k in 0..m {
            if total_iters >= cfg.max_iters {
                break;
            }
            let mut w = prec(&apply(&basis[k])?);
            // Classical Gram-Schmidt with one reorthogonalization pass.
            let mut coeffs = vec![0.0f64; k + 1];
            for pass in 0..2 {
                for (j, c) in coeffs.iter_mut().enumerate() {
                    let proj = dot(&basis[j], &w);
                    *c += proj;
                    for (wi, vi) in w.iter_mut().zip(&basis[j]) {
                        *wi -= proj * vi;
                    }
                    if pass == 0 {
                        // first pass fills coeffs; second refines
                    }
                }
            }
            for (j, c) in coeffs.iter().enumerate() {
                hess[j][k] = *c;
            }
            let wn = norm(&w);
            hess[k + 1][k] = wn;

            // Apply accumulated Givens rotations to the new column.
            for j in 0..k {
                let (h1, h2) = (hess[j][k], hess[j + 1][k]);
                hess[j][k] = cs[j] * h1 + sn[j] * h2;
                hess[j + 1][k] = -sn[j] * h1 + cs[j] * h2;
            }
            let (h1, h2) = (hess[k][k], hess[k + 1][k]);
            let rno = (h1 * h1 + h2 * h2).sqrt();
            if rno == 0.0 {
                broke_down = true;
                k_done = k;
                break;
            }
            cs[k] = h1 / rno;
            sn[k] = h2 / rno;
            hess[k][k] = rno;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];

            total_iters += 1;
            k_done = k + 1;
            let rel = g[k + 1].abs() / b_norm;
            history.push(rel);

            if wn <= 1e-300 {
                broke_down = true; // happy breakdown: exact solution in span
                break;
            }
            if rel <= cfg.tol {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }

        // Back-substitute for the least-squares coefficients and update x.
        if k_done > 0 {
            let mut y = vec![0.0f64; k_done];
            for i in (0..k_done).rev() {
                let mut s = g[i];
                for j in (i + 1)..k_done {
                    s -= hess[i][j] * y[j];
                }
                y[i] = s / hess[i][i];
            }
            for (j, yy) in y.iter().enumerate() {
                for (xi, vi) in x.iter_mut().zip(&basis[j]) {
                    *xi += yy * vi;
                }
            }
        }
        if broke_down {
            // Loop back to measure the true residual and exit there.
            continue;
        }
    }
}

/// Factored form of the block preconditioner `[I E; F D]`.
pub struct SchurPreconditioner {
    e_block: Vec<f64>,
    n_per_curve: usize,
    m: usize,
    s_lu: LUFactorized<ndarray::OwnedRepr<f64>>,
}

/// Forms `S = D - F E` and LU-factors it.
pub fn build_preconditioner(sys: &DiscreteSystem) -> Result<SchurPreconditioner, LinsysError> {
    let m = sys.n_islands();
    let n = sys.n_per_curve();
    let e = sys.e_block();
    let mut s = Array2::<f64>::zeros((m, m));
    // Row 0 of [F D] is the strength sum: D row of ones, F row zero.
    for col in 0..m {
        s[[0, col]] = 1.0;
    }
    // Rows k >= 1: -(sum of E rows over curve k).
    for k in 1..m {
        for col in 0..m {
            let mut acc = 0.0;
            for j in 0..n {
                acc += e[(k * n + j) * m + col];
            }
            s[[k, col]] = -acc;
        }
    }
    if !s.iter().all(|v| v.is_finite()) {
        return Err(LinsysError::NonFinite);
    }
    let s_lu = s.factorize_into().map_err(|_| LinsysError::SingularSchur)?;
    // Reject numerically singular factorizations.
    let rcond = s_lu.rcond().map_err(|_| LinsysError::SingularSchur)?;
    if !rcond.is_finite() || rcond <= 1e-12 {
        return Err(LinsysError::SingularSchur);
    }
    Ok(SchurPreconditioner {
        e_block: e.to_vec(),
        n_per_curve: n,
        m,
        s_lu,
    })
}

impl SchurPreconditioner {
    /// Solves `[I E; F D] z = r` through the Schur complement:
    /// `S z_a = r_a - F r_sigma`, then `z_sigma = r_sigma - E z_a`.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let n = self.n_per_curve;
        let m = self.m;
        let nm = r.len() - m;
        let (r_sigma, r_a) = r.split_at(nm);

        let mut rhs_a = Array1::<f64>::zeros(m);
        rhs_a[0] = r_a[0];
        for k in 1..m {
            let fsum: f64 = r_sigma[k * n..(k + 1) * n].iter().sum();
            rhs_a[k] = r_a[k] - fsum;
        }
        let z_a = self.s_lu.solve(&rhs_a).expect("factorization verified at build time");

        let mut z = vec![0.0; r.len()];
        for i in 0..nm {
            let mut acc = r_sigma[i];
            for mm in 0..m {
                acc -= self.e_block[i * m + mm] * z_a[mm];
            }
            z[i] = acc;
        }
        for mm in 0..m {
            z[nm + mm] = z_a[mm];
        }
        z
    }
}

/// Applies the factored preconditioner (free-function form).
pub fn apply_preconditioner(prec: &SchurPreconditioner, r: &[f64]) -> Vec<f64> {
    prec.apply(r)
}

/// Dense-diagnostics dimension guard: materialization and condition numbers
/// are limited to systems this size.
pub const DENSE_GUARD: usize = 8192;

/// Runs dense kernels on a dedicated wide-stack thread; the BLAS/LAPACK
/// routines want more stack than test harnesses give their threads.
fn with_big_stack<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    std::thread::Builder::new()
        .stack_size(64 * 1024 * 1024)
        .spawn(f)
        .expect("spawn linear-algebra worker")
        .join()
        .expect("linear-algebra worker panicked")
}

/// Materializes the operator as a dense matrix, assembled directly from the
/// kernel (not by probing the operator).
pub fn dense_materialize(sys: &DiscreteSystem) -> Result<Array2<f64>, LinsysError> {
    let dim = sys.dim();
    if dim > DENSE_GUARD {
        return Err(LinsysError::TooLarge(dim, DENSE_GUARD));
    }
    let nm = sys.n_density();
    let m = sys.n_islands();
    let n = sys.n_per_curve();
    let domain = sys.domain();
    let nodes: Vec<_> = domain.all_nodes().collect();
    let d_nodes: Vec<_> =
        domain.curves().iter().flat_map(|c| c.d_nodes().iter().copied()).collect();
    let curvs: Vec<f64> =
        domain.curves().iter().flat_map(|c| c.curvatures().iter().copied()).collect();
    let h = 2.0 * std::f64::consts::PI / n as f64;

    let mut a = Array2::<f64>::zeros((dim, dim));
    for i in 0..nm {
        for j in 0..nm {
            let k = if i == j {
                crate::kernels::dlp_kernel_diag(nodes[j], d_nodes[j], curvs[j])
            } else {
                crate::kernels::dlp_kernel(nodes[i], nodes[j], d_nodes[j])
            };
            a[[i, j]] = 2.0 * h * k + if i == j { 1.0 } else { 0.0 };
        }
        for mm in 0..m {
            a[[i, nm + mm]] = sys.e_block()[i * m + mm];
        }
    }
    for col in 0..m {
        a[[nm, nm + col]] = 1.0;
    }
    for k in 1..m {
        for j in 0..n {
            a[[nm + k, k * n + j]] = 1.0;
        }
    }
    Ok(a)
}

/// Materializes the unaugmented density block `I + 2hK` alone.
pub fn dense_materialize_unaugmented(sys: &DiscreteSystem) -> Result<Array2<f64>, LinsysError> {
    let full = dense_materialize(sys)?;
    let nm = sys.n_density();
    Ok(full.slice(ndarray::s![..nm, ..nm]).to_owned())
}

/// All singular values, descending. Limited to moderate dimensions.
pub fn singular_values(a: &Array2<f64>) -> Result<Vec<f64>, LinsysError> {
    let a = a.clone();
    with_big_stack(move || {
        if !a.iter().all(|v| v.is_finite()) {
            return Err(LinsysError::NonFinite);
        }
        let (_, s, _) = a.svd(false, false).map_err(|e| LinsysError::Backend(e.to_string()))?;
        let mut v: Vec<f64> = s.to_vec();
        v.sort_by(|x, y| y.partial_cmp(x).unwrap());
        Ok(v)
    })
}

/// 2-norm condition number.
///
/// Uses the full singular value decomposition up to 2048 unknowns; beyond
/// that the two extreme singular values are computed iteratively (power
/// iteration on `A^T A` and inverse iteration through an LU factorization),
/// which matches the SVD to a few parts in 1e5 and keeps large studies
/// affordable. Runs on a dedicated thread: the BLAS kernels want more stack
/// than test harnesses provide.
pub fn condition_number(a: &Array2<f64>) -> Result<f64, LinsysError> {
    let a = a.clone();
    with_big_stack(move || condition_number_impl(&a, 2048))
}

fn condition_number_impl(a: &Array2<f64>, svd_threshold: usize) -> Result<f64, LinsysError> {
    let n = a.nrows();
    if n != a.ncols() || n == 0 {
        return Err(LinsysError::ShapeMismatch { op: a.ncols(), rhs: n });
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(LinsysError::NonFinite);
    }
    if n <= svd_threshold {
        let s = singular_values(a)?;
        let (smax, smin) = (s[0], s[n - 1]);
        if smin < 1e-300 {
            return Err(LinsysError::SingularMatrix);
        }
        return Ok(smax / smin);
    }

    let at = a.t();
    // sigma_max via power iteration on A^T A.
    let mut v = Array1::<f64>::from_shape_fn(n, |i| ((i * 2654435761 + 1) % 1000) as f64 / 1000.0 - 0.5);
    let mut lam = 0.0f64;
    for _ in 0..1000 {
        let w = at.dot(&a.dot(&v));
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return Err(LinsysError::SingularMatrix);
        }
        let new_lam = v.dot(&w);
        v = w / wn;
        if (new_lam - lam).abs() <= 1e-13 * new_lam.abs() {
            lam = new_lam;
            break;
        }
        lam = new_lam;
    }
    let smax = lam.max(0.0).sqrt();

    // sigma_min via inverse iteration: w solves A^T A w = v.
    let lu = a.to_owned().factorize_into().map_err(|_| LinsysError::SingularMatrix)?;
    let mut v = Array1::<f64>::from_shape_fn(n, |i| ((i * 1103515245 + 7) % 1000) as f64 / 1000.0 - 0.5);
    let mut lam_inv = 0.0f64;
    for _ in 0..1000 {
        let u = lu.solve_t(&v).map_err(|_| LinsysError::SingularMatrix)?;
        let w = lu.solve(&u).map_err(|_| LinsysError::SingularMatrix)?;
        let wn = w.dot(&w).sqrt();
        if !wn.is_finite() || wn == 0.0 {
            return Err(LinsysError::SingularMatrix);
        }
        let new_lam = v.dot(&w);
        v = w / wn;
        if (new_lam - lam_inv).abs() <= 1e-10 * new_lam.abs() {
            lam_inv = new_lam;
            break;
        }
        lam_inv = new_lam;
    }
    let smin = 1.0 / lam_inv.max(1e-300).sqrt();
    if smin < 1e-300 {
        return Err(LinsysError::SingularMatrix);
    }
    Ok(smax / smin)
}

/// Dense LU solve, used as an oracle against the iterative path.
pub fn solve_dense(a: &Array2<f64>, b: &[f64]) -> Result<Vec<f64>, LinsysError> {
    let a = a.clone();
    let rhs = Array1::from_vec(b.to_vec());
    with_big_stack(move || {
        let x = a.solve(&rhs).map_err(|_| LinsysError::SingularMatrix)?;
        Ok(x.to_vec())
    })
}
