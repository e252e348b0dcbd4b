//! Forward solver: a Mehrotra-style predictor-corrector interior-point method
//! for dense QPs, with batch solving and a retained factorization of the final
//! KKT system so a backward pass can reuse it without refactoring.
//!
//! Each iteration factors the symmetrized KKT matrix at the current iterate.
//! With column order `(z, s, lambda, nu)` and the complementarity row block
//! scaled by `D(1/s)` to make the matrix symmetric, it reads
//!
//! ```text
//!     [ Q + eI   0          G'     A'  ]
//!     [ 0        D(l/s)     I      0   ]
//!     [ G        I         -eI     0   ]
//!     [ A        0          0     -eI  ]
//! ```
//!
//! where `e` is a static regularization on the otherwise-zero diagonal blocks
//! (it perturbs solutions by `O(e)`, and guards rank-deficient corner cases).
//! The affine (predictor) direction solves this system against the negated
//! KKT residuals, the corrector re-solves against a centering term `sigma*mu`
//! minus the predictor's complementarity products, and all four variables move
//! by one common step length capped at `step_fraction` of the distance to the
//! positivity boundary of `(s, lambda)`.
//!
//! Iteration stops once the stationarity, equality, and slack residuals all
//! fall below `tol_residual` in the infinity norm and the duality gap `mu`
//! falls below `tol_gap`. Infeasible problems surface as `MaxIters` with
//! diverging residuals; no infeasibility certificate is produced.

use rayon::prelude::*;

use crate::linalg::{axpy, dot, lu_factor, vec_inf_norm, DenseMatrix, LuFactors};
use crate::qp::{kkt_residuals, kkt_residuals_with_gz, KktResidual, QpBatch, QpInstance};
use crate::{Error, Result};

/// Tuning knobs for [`solve`]. The defaults solve well-conditioned problems
/// with `n, p <= 100` to tight tolerances in well under the iteration cap.
#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    /// Maximum number of predictor-corrector steps before giving up.
    pub max_iters: usize,
    /// Infinity-norm bound on the stationarity, equality, and slack residuals.
    pub tol_residual: f64,
    /// Bound on the duality gap `mu = s'lambda / p`.
    pub tol_gap: f64,
    /// Fraction of the distance to the positivity boundary taken per step.
    pub step_fraction: f64,
    /// Static shift applied to the KKT diagonal: `+e` on the `Q` block, `-e`
    /// on the otherwise-zero `lambda` and `nu` blocks.
    pub regularization_eps: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iters: 25,
            tol_residual: 1e-8,
            tol_gap: 1e-8,
            step_fraction: 0.99,
            regularization_eps: 1e-11,
        }
    }
}

impl SolverSettings {
    /// Rejects settings outside their domain (`NaN` is rejected everywhere).
    pub fn validate(&self) -> Result<()> {
        if !(self.step_fraction > 0.0 && self.step_fraction < 1.0) {
            return Err(Error::InvalidData(format!(
                "step_fraction must lie strictly inside (0, 1), got {}",
                self.step_fraction
            )));
        }
        if !(self.tol_residual > 0.0) || !(self.tol_gap > 0.0) {
            return Err(Error::InvalidData(format!(
                "tolerances must be positive, got tol_residual = {}, tol_gap = {}",
                self.tol_residual, self.tol_gap
            )));
        }
        if !(self.regularization_eps >= 0.0) {
            return Err(Error::InvalidData(format!(
                "regularization_eps must be nonnegative, got {}",
                self.regularization_eps
            )));
        }
        Ok(())
    }
}

/// A primal-dual iterate `(z, s, lambda, nu)`. Interior iterates keep
/// `s > 0` and `lambda > 0` componentwise.
#[derive(Debug, Clone)]
pub struct PrimalDualPoint {
    /// Primal variables, length `n`.
    pub z: Vec<f64>,
    /// Inequality slacks, length `p`.
    pub s: Vec<f64>,
    /// Inequality multipliers, length `p`.
    pub lambda: Vec<f64>,
    /// Equality multipliers, length `m`.
    pub nu: Vec<f64>,
}

impl PrimalDualPoint {
    /// Duality gap `mu = s'lambda / p`, defined as `0` when `p = 0`.
    pub fn mu(&self) -> f64 {
        if self.s.is_empty() {
            return 0.0;
        }
        dot(&self.s, &self.lambda) / self.s.len() as f64
    }
}

/// Terminal state of a solve. Singular factorizations are reported through
/// `Err` instead (see [`crate::Error::is_numerical`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// All residual norms and the duality gap met their tolerances.
    Solved,
    /// The iteration cap was reached first.
    MaxIters,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolveStatus::Solved => write!(f, "Solved"),
            SolveStatus::MaxIters => write!(f, "MaxIters"),
        }
    }
}

/// LU factors of the symmetrized KKT matrix at one iterate, plus the row
/// scaling that symmetrized it. Retained in [`SolveResult`] so gradients can
/// be computed with back-substitutions only.
#[derive(Debug, Clone)]
pub struct KktFactorization {
    factors: LuFactors,
    n: usize,
    p: usize,
    m: usize,
    diag_scaling: Vec<f64>,
}

impl KktFactorization {
    /// Problem dimensions `(n, p, m)` of the factored system.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.p, self.m)
    }

    /// Side length of the factored matrix, `n + 2p + m`.
    pub fn dim(&self) -> usize {
        self.n + 2 * self.p + self.m
    }

    /// The underlying LU factors.
    pub fn factors(&self) -> &LuFactors {
        &self.factors
    }

    /// The `D(1/s)` scaling applied to the complementarity rows, length `p`.
    pub fn diag_scaling(&self) -> &[f64] {
        &self.diag_scaling
    }

    /// Back-substitutes one right-hand side; no new factorization happens.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.dim(), "KKT right-hand side length");
        self.factors.solve_vec(rhs)
    }
}

/// Outcome of [`solve`]: the final iterate, how it terminated, the KKT
/// residuals at that iterate, and the retained factorization.
#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Final primal-dual iterate.
    pub point: PrimalDualPoint,
    /// How the iteration terminated.
    pub status: SolveStatus,
    /// Number of predictor-corrector steps taken.
    pub iterations: usize,
    /// KKT residuals of `(z, lambda, nu)` at the final iterate.
    pub residuals: KktResidual,
    /// Factorization of the symmetrized KKT matrix at the final iterate.
    pub factorization: KktFactorization,
}

/// One search direction in `(z, s, lambda, nu)` coordinates.
#[derive(Debug, Clone)]
pub struct Direction {
    pub dz: Vec<f64>,
    pub ds: Vec<f64>,
    pub dlam: Vec<f64>,
    pub dnu: Vec<f64>,
}

/// Assembles the symmetrized KKT matrix at `pt` (layout in the module docs).
/// Only `pt.s` and `pt.lambda` enter; with `p = 0` the matrix reduces to
/// `[[Q + eI, A'], [A, -eI]]`.
pub fn kkt_matrix(qp: &QpInstance, pt: &PrimalDualPoint, eps: f64) -> DenseMatrix {
    let (n, m, p) = (qp.n, qp.m, qp.p);
    let dim = n + 2 * p + m;
    let mut k = DenseMatrix::zeros(dim, dim);

    k.set_block(0, 0, &qp.q_mat);
    for i in 0..n {
        k[(i, i)] += eps;
    }
    for i in 0..p {
        for j in 0..n {
            let gij = qp.g[(i, j)];
            k[(n + p + i, j)] = gij;
            k[(j, n + p + i)] = gij;
        }
        k[(n + i, n + i)] = pt.lambda[i] / pt.s[i];
        k[(n + i, n + p + i)] = 1.0;
        k[(n + p + i, n + i)] = 1.0;
        k[(n + p + i, n + p + i)] = -eps;
    }
    for i in 0..m {
        for j in 0..n {
            let aij = qp.a[(i, j)];
            k[(n + 2 * p + i, j)] = aij;
            k[(j, n + 2 * p + i)] = aij;
        }
        k[(n + 2 * p + i, n + 2 * p + i)] = -eps;
    }
    k
}

/// Builds and LU-factors the symmetrized KKT matrix at `pt`.
pub fn factorize_kkt(
    qp: &QpInstance,
    pt: &PrimalDualPoint,
    eps: f64,
) -> Result<KktFactorization> {
    let k = kkt_matrix(qp, pt, eps);
    let factors = lu_factor(&k)?;
    let diag_scaling = pt.s.iter().map(|si| 1.0 / si).collect();
    Ok(KktFactorization {
        factors,
        n: qp.n,
        p: qp.p,
        m: qp.m,
        diag_scaling,
    })
}

fn split_direction(x: Vec<f64>, n: usize, p: usize, m: usize) -> Direction {
    debug_assert_eq!(x.len(), n + 2 * p + m);
    let mut x = x;
    let dnu = x.split_off(n + 2 * p);
    let dlam = x.split_off(n + p);
    let ds = x.split_off(n);
    Direction {
        dz: x,
        ds,
        dlam,
        dnu,
    }
}

fn add_vectors(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(u, v)| u + v).collect()
}

fn add_directions(a: &Direction, b: &Direction) -> Direction {
    Direction {
        dz: add_vectors(&a.dz, &b.dz),
        ds: add_vectors(&a.ds, &b.ds),
        dlam: add_vectors(&a.dlam, &b.dlam),
        dnu: add_vectors(&a.dnu, &b.dnu),
    }
}

/// Affine direction from precomputed residual blocks. The scaled right-hand
/// side is `(-r_stat, -lambda, -r_slack, -r_eq)`: scaling the complementarity
/// residual `-S lambda` by `D(1/s)` leaves exactly `-lambda`.
fn affine_from_residuals(
    pt: &PrimalDualPoint,
    fact: &KktFactorization,
    r_stat: &[f64],
    r_eq: &[f64],
    r_slack: &[f64],
) -> Direction {
    let (n, p, m) = fact.dims();
    let mut rhs = vec![0.0; fact.dim()];
    for i in 0..n {
        rhs[i] = -r_stat[i];
    }
    for i in 0..p {
        rhs[n + i] = -pt.lambda[i];
        rhs[n + p + i] = -r_slack[i];
    }
    for i in 0..m {
        rhs[n + 2 * p + i] = -r_eq[i];
    }
    split_direction(fact.solve(&rhs), n, p, m)
}

/// Predictor step: solves the KKT system at `pt` against the negated
/// residuals, reusing `fact` (which must be the factorization at `pt`).
pub fn affine_direction(qp: &QpInstance, pt: &PrimalDualPoint, fact: &KktFactorization) -> Direction {
    let (res, gz) = kkt_residuals_with_gz(qp, &pt.z, &pt.lambda, &pt.nu);
    let r_slack: Vec<f64> = gz
        .iter()
        .zip(&pt.s)
        .zip(&qp.h)
        .map(|((gzi, si), hi)| gzi + si - hi)
        .collect();
    affine_from_residuals(pt, fact, &res.r_stat, &res.r_eq, &r_slack)
}

/// Corrector step: re-solves against the centering-minus-correction term
/// `(0, (sigma*mu - ds_aff .* dlam_aff) / s, 0, 0)` using the same factors.
pub fn corrector_direction(
    pt: &PrimalDualPoint,
    fact: &KktFactorization,
    aff: &Direction,
    sigma: f64,
) -> Direction {
    let (n, p, m) = fact.dims();
    let mu = pt.mu();
    let mut rhs = vec![0.0; fact.dim()];
    for i in 0..p {
        rhs[n + i] = (sigma * mu - aff.ds[i] * aff.dlam[i]) / pt.s[i];
    }
    split_direction(fact.solve(&rhs), n, p, m)
}

/// Longest step `alpha = min(1, step_fraction * sup{a : s + a*ds >= 0,
/// lambda + a*dlam >= 0})`. With `step_fraction < 1` and `s, lambda > 0` the
/// updated variables stay strictly positive.
pub fn step_size(s: &[f64], lambda: &[f64], ds: &[f64], dlam: &[f64], step_fraction: f64) -> f64 {
    debug_assert_eq!(s.len(), ds.len());
    debug_assert_eq!(lambda.len(), dlam.len());
    let mut sup = f64::INFINITY;
    for (v, dv) in s.iter().zip(ds).chain(lambda.iter().zip(dlam)) {
        if *dv < 0.0 {
            sup = sup.min(-v / dv);
        }
    }
    (step_fraction * sup).min(1.0)
}

/// Strictly interior starting point from one equality-regularized auxiliary
/// solve of
///
/// ```text
///     [ Q + eI   A'    G' ] [ z  ]   [ -q ]
///     [ A       -eI    0  ] [ nu ] = [  b ]
///     [ G        0    -I  ] [ w  ]   [  h ]
/// ```
///
/// followed by `s0 = h - Gz`, `lambda0 = -w`, each shifted by `1 + |min|`
/// whenever its smallest entry is nonpositive (so raw nonpositive values land
/// at `>= 1`).
pub fn initialize(qp: &QpInstance, settings: &SolverSettings) -> Result<PrimalDualPoint> {
    let (n, m, p) = (qp.n, qp.m, qp.p);
    let eps = settings.regularization_eps;
    let dim = n + m + p;
    let mut aux = DenseMatrix::zeros(dim, dim);

    aux.set_block(0, 0, &qp.q_mat);
    for i in 0..n {
        aux[(i, i)] += eps;
    }
    for i in 0..m {
        for j in 0..n {
            let aij = qp.a[(i, j)];
            aux[(n + i, j)] = aij;
            aux[(j, n + i)] = aij;
        }
        aux[(n + i, n + i)] = -eps;
    }
    for i in 0..p {
        for j in 0..n {
            let gij = qp.g[(i, j)];
            aux[(n + m + i, j)] = gij;
            aux[(j, n + m + i)] = gij;
        }
        aux[(n + m + i, n + m + i)] = -1.0;
    }

    let mut rhs = vec![0.0; dim];
    for i in 0..n {
        rhs[i] = -qp.q_vec[i];
    }
    rhs[n..n + m].copy_from_slice(&qp.b);
    rhs[n + m..].copy_from_slice(&qp.h);

    let factors = lu_factor(&aux)?;
    let mut x = factors.solve_vec(&rhs);
    let w = x.split_off(n + m);
    let nu = x.split_off(n);
    let z = x;

    let gz = qp.g.matvec(&z);
    let mut s: Vec<f64> = qp.h.iter().zip(&gz).map(|(hi, gzi)| hi - gzi).collect();
    let mut lambda: Vec<f64> = w.iter().map(|wi| -wi).collect();
    shift_positive(&mut s);
    shift_positive(&mut lambda);

    Ok(PrimalDualPoint { z, s, lambda, nu })
}

fn shift_positive(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        let shift = 1.0 + min.abs();
        for x in v.iter_mut() {
            *x += shift;
        }
    }
}

/// Solves one QP to the settings' tolerances. Problems with `p = 0` are
/// dispatched to [`solve_equality_only`]; otherwise the predictor-corrector
/// loop runs from [`initialize`], and the factorization at the final iterate
/// (the one whose residuals are reported) is retained in the result.
///
/// The centering weight is `sigma = clamp((mu_aff / mu)^3, 0, 1)` with
/// `mu_aff` evaluated after a trial step to the positivity boundary along the
/// affine direction.
pub fn solve(qp: &QpInstance, settings: &SolverSettings) -> Result<SolveResult> {
    settings.validate()?;
    if qp.p == 0 {
        return solve_equality_only(qp, settings);
    }
    let eps = settings.regularization_eps;
    let p = qp.p;
    let mut pt = initialize(qp, settings)?;

    for it in 0..=settings.max_iters {
        let (res, gz) = kkt_residuals_with_gz(qp, &pt.z, &pt.lambda, &pt.nu);
        let r_slack: Vec<f64> = gz
            .iter()
            .zip(&pt.s)
            .zip(&qp.h)
            .map(|((gzi, si), hi)| gzi + si - hi)
            .collect();
        let mu = pt.mu();
        let fact = factorize_kkt(qp, &pt, eps)?;

        let converged = res.stat_norm() <= settings.tol_residual
            && res.eq_norm() <= settings.tol_residual
            && vec_inf_norm(&r_slack) <= settings.tol_residual
            && mu <= settings.tol_gap;
        if converged || it == settings.max_iters {
            let status = if converged {
                SolveStatus::Solved
            } else {
                SolveStatus::MaxIters
            };
            return Ok(SolveResult {
                point: pt,
                status,
                iterations: it,
                residuals: res,
                factorization: fact,
            });
        }

        let aff = affine_from_residuals(&pt, &fact, &res.r_stat, &res.r_eq, &r_slack);
        let alpha_aff = step_size(&pt.s, &pt.lambda, &aff.ds, &aff.dlam, 1.0);
        let mut mu_aff = 0.0;
        for i in 0..p {
            mu_aff += (pt.s[i] + alpha_aff * aff.ds[i]) * (pt.lambda[i] + alpha_aff * aff.dlam[i]);
        }
        mu_aff /= p as f64;
        let sigma = if mu > 0.0 {
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };

        let cc = corrector_direction(&pt, &fact, &aff, sigma);
        let step = add_directions(&aff, &cc);
        let alpha = step_size(&pt.s, &pt.lambda, &step.ds, &step.dlam, settings.step_fraction);
        axpy(alpha, &step.dz, &mut pt.z);
        axpy(alpha, &step.ds, &mut pt.s);
        axpy(alpha, &step.dlam, &mut pt.lambda);
        axpy(alpha, &step.dnu, &mut pt.nu);
        debug_assert!(
            pt.s.iter().all(|v| *v > 0.0) && pt.lambda.iter().all(|v| *v > 0.0),
            "step left the strict interior"
        );
    }
    unreachable!("loop exits through the convergence or iteration-cap return");
}

/// Direct solve for `p = 0`: one factorization of `[[Q + eI, A'], [A, -eI]]`
/// against `(-q, b)`. The factorization is retained and is exactly the
/// symmetrized KKT matrix of the degenerate problem, so the backward pass
/// treats it like any other.
pub fn solve_equality_only(qp: &QpInstance, settings: &SolverSettings) -> Result<SolveResult> {
    settings.validate()?;
    if qp.p != 0 {
        return Err(Error::Shape(format!(
            "equality-only solve requires p = 0, got p = {}",
            qp.p
        )));
    }
    let (n, m) = (qp.n, qp.m);
    let pt0 = PrimalDualPoint {
        z: vec![0.0; n],
        s: Vec::new(),
        lambda: Vec::new(),
        nu: vec![0.0; m],
    };
    let factorization = factorize_kkt(qp, &pt0, settings.regularization_eps)?;

    let mut rhs = vec![0.0; n + m];
    for i in 0..n {
        rhs[i] = -qp.q_vec[i];
    }
    rhs[n..].copy_from_slice(&qp.b);
    let mut x = factorization.solve(&rhs);
    let nu = x.split_off(n);
    let point = PrimalDualPoint {
        z: x,
        s: Vec::new(),
        lambda: Vec::new(),
        nu,
    };

    let residuals = kkt_residuals(qp, &point.z, &point.lambda, &point.nu);
    let status = if residuals.stat_norm() <= settings.tol_residual
        && residuals.eq_norm() <= settings.tol_residual
    {
        SolveStatus::Solved
    } else {
        SolveStatus::MaxIters
    };
    Ok(SolveResult {
        point,
        status,
        iterations: 1,
        residuals,
        factorization,
    })
}

/// Solves every instance of a batch concurrently. Results are bitwise
/// identical to solving each instance sequentially with the same settings; a
/// failing instance aborts the batch with its index attached.
pub fn solve_batch(batch: &QpBatch, settings: &SolverSettings) -> Result<Vec<SolveResult>> {
    settings.validate()?;
    let results: Vec<Result<SolveResult>> = (0..batch.len())
        .into_par_iter()
        .map(|i| solve(&batch.instance(i), settings))
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                return Err(Error::BatchElement {
                    index: i,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(out)
}
