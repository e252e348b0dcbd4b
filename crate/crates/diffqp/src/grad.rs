//! Backward pass: exact gradients of a scalar loss through the argmin of a
//! solved QP, computed from the linearized KKT conditions at the solution.
//!
//! Two routes produce the dual sensitivities `(d_z, d_lambda, d_nu)`:
//!
//! * [`backward_reuse`] back-substitutes through the factorization retained by
//!   the forward solve — no new factorization — solving
//!   `K_sym (d_z, d_s, dt_lambda, d_nu) = (dl/dz, 0, 0, 0)` and unscaling
//!   `d_lambda = D(1/lambda) dt_lambda`.
//! * [`backward_fresh`] forms and factors the transposed differential system
//!   `[[Q, G'D(l), A'], [G, D(Gz-h), 0], [A, 0, 0]]` from scratch. It is the
//!   independent oracle for the reuse path, and fails loudly near degenerate
//!   points where strict complementarity breaks down.
//!
//! [`assemble_param_grads`] turns the sensitivities into gradients for every
//! problem parameter:
//!
//! ```text
//!     dl/dq = -d_z                 dl/db = d_nu
//!     dl/dh = D(l) d_lambda        dl/dQ = -(d_z z' + z d_z') / 2
//!     dl/dA = -d_nu z' - nu d_z'   dl/dG = -D(l) d_lambda z' - lambda d_z'
//! ```
//!
//! The interior-point forward pass terminates with `s .* lambda` at the gap
//! tolerance rather than exactly zero, which keeps the retained factorization
//! nonsingular even when the underlying solution is degenerate; the reuse path
//! then returns one (finite) element of the subdifferential.

use rayon::prelude::*;

use crate::ipm::{SolveResult, SolveStatus};
use crate::linalg::{lu_factor, DenseMatrix};
use crate::qp::{QpBatch, QpInstance, SharedMask};
use crate::{Error, Result};

/// Incoming gradient of the downstream loss with respect to the QP solution.
#[derive(Debug, Clone)]
pub struct BackwardSeeds {
    /// `dl/dz*`, length `n`.
    pub dl_dz: Vec<f64>,
}

impl BackwardSeeds {
    pub fn new(dl_dz: Vec<f64>) -> Self {
        BackwardSeeds { dl_dz }
    }
}

/// Solution of the adjoint KKT system. `d_s` is a by-product of the reuse
/// path (useful for residual verification); the fresh path leaves it empty
/// since no parameter gradient consumes it.
#[derive(Debug, Clone)]
pub struct DualSensitivities {
    pub d_z: Vec<f64>,
    pub d_lam: Vec<f64>,
    pub d_nu: Vec<f64>,
    pub d_s: Vec<f64>,
}

/// Gradients of the loss with respect to every QP parameter. Field names
/// mirror [`QpInstance`].
#[derive(Debug, Clone)]
pub struct ParamGradients {
    /// `dl/dQ`, symmetric `n x n`.
    pub dq_mat: DenseMatrix,
    /// `dl/dq`, length `n`.
    pub dq_vec: Vec<f64>,
    /// `dl/dA`, `m x n`.
    pub da: DenseMatrix,
    /// `dl/db`, length `m`.
    pub db: Vec<f64>,
    /// `dl/dG`, `p x n`.
    pub dg: DenseMatrix,
    /// `dl/dh`, length `p`.
    pub dh: Vec<f64>,
}

impl ParamGradients {
    /// All-zero gradients for a problem of the given dimensions.
    pub fn zeros(n: usize, m: usize, p: usize) -> Self {
        ParamGradients {
            dq_mat: DenseMatrix::zeros(n, n),
            dq_vec: vec![0.0; n],
            da: DenseMatrix::zeros(m, n),
            db: vec![0.0; m],
            dg: DenseMatrix::zeros(p, n),
            dh: vec![0.0; p],
        }
    }
}

fn check_seeds(seeds: &BackwardSeeds, n: usize) -> Result<()> {
    if seeds.dl_dz.len() != n {
        return Err(Error::Shape(format!(
            "backward seed has length {}, expected n = {}",
            seeds.dl_dz.len(),
            n
        )));
    }
    if !seeds.dl_dz.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidData(
            "backward seed contains non-finite entries".into(),
        ));
    }
    Ok(())
}

/// Sensitivities via the retained forward factorization: one back-substitution
/// against `(dl/dz, 0, 0, 0)`, then `d_lambda = dt_lambda ./ lambda`. The
/// terminal multipliers are positive at the gap-tolerance level, which keeps
/// that division well defined; entries below `1e-300` are rejected instead of
/// overflowing.
pub fn backward_reuse(result: &SolveResult, seeds: &BackwardSeeds) -> Result<DualSensitivities> {
    if result.status != SolveStatus::Solved {
        return Err(Error::NotSolved {
            status: result.status.to_string(),
        });
    }
    let (n, p, m) = result.factorization.dims();
    check_seeds(seeds, n)?;
    for (i, l) in result.point.lambda.iter().enumerate() {
        if l.abs() < 1e-300 {
            return Err(Error::DegenerateKkt { index: i });
        }
    }

    let mut rhs = vec![0.0; result.factorization.dim()];
    rhs[..n].copy_from_slice(&seeds.dl_dz);
    let mut x = result.factorization.solve(&rhs);
    let d_nu = x.split_off(n + 2 * p);
    let dt_lam = x.split_off(n + p);
    let d_s = x.split_off(n);
    let d_z = x;
    let d_lam = dt_lam
        .iter()
        .zip(&result.point.lambda)
        .map(|(dt, l)| dt / l)
        .collect();
    Ok(DualSensitivities {
        d_z,
        d_lam,
        d_nu,
        d_s,
    })
}

/// Sensitivities from a freshly factored differential system at `(z, lambda,
/// nu)`, which should satisfy the KKT conditions to about `1e-6`. Rejects
/// points where some constraint has both a small multiplier and a small gap
/// (`lambda_i + |Gz - h|_i < 1e-6`): there strict complementarity fails and
/// the system is singular or nearly so.
pub fn backward_fresh(
    qp: &QpInstance,
    z: &[f64],
    lambda: &[f64],
    nu: &[f64],
    seeds: &BackwardSeeds,
) -> Result<DualSensitivities> {
    let (n, m, p) = (qp.n, qp.m, qp.p);
    check_seeds(seeds, n)?;
    if z.len() != n || lambda.len() != p || nu.len() != m {
        return Err(Error::Shape(format!(
            "point dimensions ({}, {}, {}) do not match problem ({}, {}, {})",
            z.len(),
            lambda.len(),
            nu.len(),
            n,
            p,
            m
        )));
    }

    let gz = qp.g.matvec(z);
    let gap: Vec<f64> = gz.iter().zip(&qp.h).map(|(gzi, hi)| gzi - hi).collect();
    for i in 0..p {
        if lambda[i] + gap[i].abs() < 1e-6 {
            return Err(Error::DegenerateKkt { index: i });
        }
    }

    let dim = n + p + m;
    let mut mat = DenseMatrix::zeros(dim, dim);
    mat.set_block(0, 0, &qp.q_mat);
    for i in 0..p {
        for j in 0..n {
            let gij = qp.g[(i, j)];
            mat[(j, n + i)] = gij * lambda[i];
            mat[(n + i, j)] = gij;
        }
        mat[(n + i, n + i)] = gap[i];
    }
    for i in 0..m {
        for j in 0..n {
            let aij = qp.a[(i, j)];
            mat[(j, n + p + i)] = aij;
            mat[(n + p + i, j)] = aij;
        }
    }

    let mut rhs = vec![0.0; dim];
    rhs[..n].copy_from_slice(&seeds.dl_dz);
    let factors = lu_factor(&mat)?;
    let mut x = factors.solve_vec(&rhs);
    let d_nu = x.split_off(n + p);
    let d_lam = x.split_off(n);
    Ok(DualSensitivities {
        d_z: x,
        d_lam,
        d_nu,
        d_s: Vec::new(),
    })
}

/// Contracts the dual sensitivities into per-parameter gradients (formulas in
/// the module docs). `dq_mat` comes out exactly symmetric.
pub fn assemble_param_grads(
    z: &[f64],
    lambda: &[f64],
    nu: &[f64],
    d: &DualSensitivities,
) -> Result<ParamGradients> {
    let (n, p, m) = (z.len(), lambda.len(), nu.len());
    if d.d_z.len() != n || d.d_lam.len() != p || d.d_nu.len() != m {
        return Err(Error::Shape(format!(
            "sensitivity dimensions ({}, {}, {}) do not match point ({}, {}, {})",
            d.d_z.len(),
            d.d_lam.len(),
            d.d_nu.len(),
            n,
            p,
            m
        )));
    }

    let mut dq_mat = DenseMatrix::zeros(n, n);
    dq_mat.add_outer(-0.5, &d.d_z, z);
    dq_mat.add_outer(-0.5, z, &d.d_z);
    let dq_vec = d.d_z.iter().map(|v| -v).collect();

    let mut da = DenseMatrix::zeros(m, n);
    da.add_outer(-1.0, &d.d_nu, z);
    da.add_outer(-1.0, nu, &d.d_z);
    let db = d.d_nu.clone();

    let scaled_dlam: Vec<f64> = lambda.iter().zip(&d.d_lam).map(|(l, dl)| l * dl).collect();
    let mut dg = DenseMatrix::zeros(p, n);
    dg.add_outer(-1.0, &scaled_dlam, z);
    dg.add_outer(-1.0, lambda, &d.d_z);
    let dh = scaled_dlam;

    Ok(ParamGradients {
        dq_mat,
        dq_vec,
        da,
        db,
        dg,
        dh,
    })
}

/// How a layer's QP parameters depend on the previous activation, for
/// chain-ruling [`ParamGradients`] back to the layer input. Dependencies not
/// listed here are not expressible, so the contract is enforced by the type.
#[derive(Debug, Clone)]
pub enum InputDependency {
    /// `q = x`: the input is the linear cost itself.
    LinCost,
    /// `q = W x`: the linear cost is an affine image of the input.
    LinCostLinear(DenseMatrix),
    /// `h = x`: the input is the inequality right-hand side.
    IneqRhs,
}

/// Gradient of the loss with respect to the layer input under `dep`.
pub fn grad_wrt_input(
    dep: &InputDependency,
    lambda: &[f64],
    d: &DualSensitivities,
) -> Result<Vec<f64>> {
    match dep {
        InputDependency::LinCost => Ok(d.d_z.iter().map(|v| -v).collect()),
        InputDependency::LinCostLinear(w) => {
            if w.rows() != d.d_z.len() {
                return Err(Error::Shape(format!(
                    "cost map has {} rows but d_z has length {}",
                    w.rows(),
                    d.d_z.len()
                )));
            }
            let neg: Vec<f64> = d.d_z.iter().map(|v| -v).collect();
            Ok(w.tr_matvec(&neg))
        }
        InputDependency::IneqRhs => {
            if lambda.len() != d.d_lam.len() {
                return Err(Error::Shape(format!(
                    "lambda has length {} but d_lambda has length {}",
                    lambda.len(),
                    d.d_lam.len()
                )));
            }
            Ok(lambda.iter().zip(&d.d_lam).map(|(l, dl)| l * dl).collect())
        }
    }
}

/// Per-example parameter gradients for a solved batch, via the reuse path,
/// computed concurrently. `results` and `seeds` must align with the batch.
pub fn backward_batch(
    batch: &QpBatch,
    results: &[SolveResult],
    seeds: &[BackwardSeeds],
) -> Result<Vec<ParamGradients>> {
    if results.len() != batch.len() || seeds.len() != batch.len() {
        return Err(Error::Shape(format!(
            "batch of {} with {} results and {} seeds",
            batch.len(),
            results.len(),
            seeds.len()
        )));
    }
    let grads: Vec<Result<ParamGradients>> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let d = backward_reuse(&results[i], &seeds[i])?;
            assemble_param_grads(
                &results[i].point.z,
                &results[i].point.lambda,
                &results[i].point.nu,
                &d,
            )
        })
        .collect();
    let mut out = Vec::with_capacity(grads.len());
    for (i, g) in grads.into_iter().enumerate() {
        match g {
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

/// Sums per-example gradients for the parameters flagged shared (minibatch
/// reverse-mode semantics), in ascending example order so the reduction is
/// deterministic. Parameters not flagged come back zero — their gradients
/// stay per-example.
pub fn accumulate_shared(mask: SharedMask, grads: &[ParamGradients]) -> Result<ParamGradients> {
    let first = grads.first().ok_or_else(|| {
        Error::Shape("cannot accumulate an empty gradient batch".into())
    })?;
    let n = first.dq_vec.len();
    let m = first.db.len();
    let p = first.dh.len();
    let mut acc = ParamGradients::zeros(n, m, p);
    for g in grads {
        if g.dq_vec.len() != n || g.db.len() != m || g.dh.len() != p {
            return Err(Error::Shape(
                "gradient batch has inconsistent dimensions".into(),
            ));
        }
        if mask.q_mat {
            acc.dq_mat.add_scaled(1.0, &g.dq_mat);
        }
        if mask.q_vec {
            crate::linalg::axpy(1.0, &g.dq_vec, &mut acc.dq_vec);
        }
        if mask.a {
            acc.da.add_scaled(1.0, &g.da);
        }
        if mask.b {
            crate::linalg::axpy(1.0, &g.db, &mut acc.db);
        }
        if mask.g {
            acc.dg.add_scaled(1.0, &g.dg);
        }
        if mask.h {
            crate::linalg::axpy(1.0, &g.dh, &mut acc.dh);
        }
    }
    Ok(acc)
}
