//! Differentiable dense quadratic programming.
//!
//! The crate solves batches of convex QPs
//!
//! ```text
//!     minimize    1/2 z'Qz + q'z
//!     subject to  Az = b,  Gz <= h
//! ```
//!
//! with a primal-dual interior-point method, and then differentiates the
//! argmin: given a loss gradient at the solution, it produces exact gradients
//! with respect to every problem parameter (Q, q, A, b, G, h) by solving one
//! linear system against the KKT factorization retained from the forward
//! solve. That makes a QP usable as a layer inside a network trained by
//! gradient descent, and the upper modules do exactly that.
//!
//! Start with the runnable examples (`cargo run --example <name>`):
//!
//! | example              | shows                                              |
//! |----------------------|----------------------------------------------------|
//! | `solve_qp`           | building and solving a single QP                   |
//! | `batched_solve`      | batch solves, bitwise equal to a sequential loop   |
//! | `qp_gradients`       | gradients through the argmin vs finite differences |
//! | `relu_as_qp`         | a ReLU recovered exactly as a tiny QP              |
//! | `simplex_projection` | projection onto the probability simplex as a QP    |
//! | `tv_denoise`         | total-variation denoising of a piecewise signal    |
//! | `learn_denoiser`     | fine-tuning the denoiser's difference operator     |
//! | `sudoku_learn`       | learning mini-Sudoku rules as equality constraints |
//!
//! Module map, bottom up:
//!
//! - [`linalg`]: row-major dense matrices, LU with partial pivoting, batch
//!   containers. Fixed summation order; bitwise-reproducible.
//! - [`qp`]: problem/batch types, validation, KKT residuals, a random
//!   feasible-instance generator, JSON (de)serialization.
//! - [`ipm`]: the interior-point solver (Mehrotra predictor-corrector) over
//!   a symmetrized KKT system whose factorization is kept for the backward
//!   pass.
//! - [`grad`]: the backward pass; reuses the retained factorization (no new
//!   factorization) or refactors fresh from the KKT point, then assembles
//!   parameter gradients.
//! - [`layer`]: a learnable QP layer (Q = LL' + eps I, feasibility-by-
//!   construction rhs) with checkpointing.
//! - [`nn`]: a minimal reverse-mode harness: linear/ReLU layers, MSE, Adam,
//!   a training loop, and finite-difference gradient checking.
//! - [`constructions`]: tiny QPs with closed-form answers (ReLU, sum-of-max,
//!   max-of-linear, simplex projection) used as end-to-end oracles.
//! - [`denoise`]: 1-d total-variation denoising experiment with a learnable
//!   difference operator.
//! - [`sudoku`]: 4x4 Sudoku experiment: learning the constraint matrix of a
//!   QP that completes puzzles.
//! - [`cli`]: the `diffqp` command-line entry points.

pub mod cli;
pub mod constructions;
pub mod denoise;
pub mod grad;
pub mod ipm;
pub mod layer;
pub mod linalg;
pub mod nn;
pub mod qp;
pub mod sudoku;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or shape inconsistency in supplied data.
    #[error("shape error: {0}")]
    Shape(String),
    /// A factorization hit a pivot below the singularity threshold.
    #[error("singular matrix: pivot {index} below threshold")]
    Singular { index: usize },
    /// The KKT system at the solution is too close to degenerate to
    /// differentiate reliably (an active constraint with vanishing
    /// multiplier).
    #[error("degenerate KKT point: constraint {index} active with vanishing multiplier")]
    DegenerateKkt { index: usize },
    /// Asked to differentiate through a solve that did not converge.
    #[error("cannot differentiate: solve status was {status}")]
    NotSolved { status: String },
    /// A batched operation failed on one element.
    #[error("batch element {index}: {source}")]
    BatchElement {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    /// Malformed problem files, datasets, or checkpoints.
    #[error("invalid input: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics themselves (as opposed to bad
    /// input), which the CLI reports with a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular { .. } | Error::DegenerateKkt { .. } | Error::NotSolved { .. } => true,
            Error::BatchElement { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
