//! Problem model: QP instances, batches with parameter sharing, validation,
//! KKT residuals, a random feasible-instance generator, and the JSON
//! interchange format.
//!
//! A problem is
//!
//! ```text
//!     minimize    1/2 z'Qz + q'z
//!     subject to  Az = b        (m rows)
//!                 Gz <= h       (p rows)
//! ```
//!
//! with `Q` symmetric positive semidefinite and `A` of full row rank.
//! `m = 0` or `p = 0` simply mean the corresponding blocks are empty.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky_shifted_ok, rank, vec_inf_norm, DenseMatrix};
use crate::{Error, Result};

/// One quadratic program. Fields are public; shape consistency is checked at
/// construction and can be re-audited with [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// Quadratic cost `Q`, `n x n`.
    pub q_mat: DenseMatrix,
    /// Linear cost `q`.
    pub q_vec: Vec<f64>,
    /// Equality matrix `A`, `m x n`.
    pub a: DenseMatrix,
    /// Equality right-hand side `b`.
    pub b: Vec<f64>,
    /// Inequality matrix `G`, `p x n`.
    pub g: DenseMatrix,
    /// Inequality right-hand side `h`.
    pub h: Vec<f64>,
}

impl QpInstance {
    pub fn new(
        q_mat: DenseMatrix,
        q_vec: Vec<f64>,
        a: DenseMatrix,
        b: Vec<f64>,
        g: DenseMatrix,
        h: Vec<f64>,
    ) -> Result<Self> {
        let n = q_vec.len();
        let m = b.len();
        let p = h.len();
        if (q_mat.rows(), q_mat.cols()) != (n, n) {
            return Err(Error::Shape(format!(
                "Q is {}x{}, expected {n}x{n}",
                q_mat.rows(),
                q_mat.cols()
            )));
        }
        if (a.rows(), a.cols()) != (m, n) {
            return Err(Error::Shape(format!(
                "A is {}x{}, expected {m}x{n}",
                a.rows(),
                a.cols()
            )));
        }
        if (g.rows(), g.cols()) != (p, n) {
            return Err(Error::Shape(format!(
                "G is {}x{}, expected {p}x{n}",
                g.rows(),
                g.cols()
            )));
        }
        Ok(QpInstance {
            n,
            m,
            p,
            q_mat,
            q_vec,
            a,
            b,
            g,
            h,
        })
    }

    /// QP with inequality constraints only.
    pub fn inequality_only(
        q_mat: DenseMatrix,
        q_vec: Vec<f64>,
        g: DenseMatrix,
        h: Vec<f64>,
    ) -> Result<Self> {
        let n = q_vec.len();
        QpInstance::new(q_mat, q_vec, DenseMatrix::zeros(0, n), Vec::new(), g, h)
    }

    /// QP with no constraints at all.
    pub fn unconstrained(q_mat: DenseMatrix, q_vec: Vec<f64>) -> Result<Self> {
        let n = q_vec.len();
        QpInstance::new(
            q_mat,
            q_vec,
            DenseMatrix::zeros(0, n),
            Vec::new(),
            DenseMatrix::zeros(0, n),
            Vec::new(),
        )
    }

    /// Objective value `1/2 z'Qz + q'z`.
    pub fn objective(&self, z: &[f64]) -> f64 {
        let qz = self.q_mat.matvec(z);
        0.5 * crate::linalg::dot(z, &qz) + crate::linalg::dot(&self.q_vec, z)
    }
}

/// Outcome of the structural audit in [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// All stored dimensions are mutually consistent.
    pub shapes_ok: bool,
    /// `|Q_ij - Q_ji| <= 1e-10 * max(1, max|Q|)` for every pair.
    pub symmetry_ok: bool,
    /// Minimum eigenvalue of `Q` is at least `-1e-8 * ||Q||_inf`, screened by
    /// an attempted Cholesky factorization of the shifted matrix.
    pub psd_ok: bool,
    /// `A` has full row rank (vacuously true for `m = 0`).
    pub eq_rank_ok: bool,
}

impl ValidationReport {
    pub fn all_ok(&self) -> bool {
        self.shapes_ok && self.symmetry_ok && self.psd_ok && self.eq_rank_ok
    }
}

/// Audits a problem for the structural properties the solver relies on.
/// These are screens against gross errors, not exact certificates.
pub fn validate(qp: &QpInstance) -> ValidationReport {
    let shapes_ok = qp.q_vec.len() == qp.n
        && (qp.q_mat.rows(), qp.q_mat.cols()) == (qp.n, qp.n)
        && (qp.a.rows(), qp.a.cols()) == (qp.m, qp.n)
        && qp.b.len() == qp.m
        && (qp.g.rows(), qp.g.cols()) == (qp.p, qp.n)
        && qp.h.len() == qp.p;

    let mut symmetry_ok = shapes_ok;
    if shapes_ok {
        let tol = 1e-10 * qp.q_mat.max_abs().max(1.0);
        'outer: for i in 0..qp.n {
            for j in i + 1..qp.n {
                if (qp.q_mat[(i, j)] - qp.q_mat[(j, i)]).abs() > tol {
                    symmetry_ok = false;
                    break 'outer;
                }
            }
        }
    }

    let psd_ok = shapes_ok && {
        let shift = 1e-8 * qp.q_mat.inf_norm() + 1e-14;
        cholesky_shifted_ok(&qp.q_mat, shift)
    };

    let eq_rank_ok = shapes_ok && (qp.m == 0 || rank(&qp.a, 1e-10) == qp.m);

    ValidationReport {
        shapes_ok,
        symmetry_ok,
        psd_ok,
        eq_rank_ok,
    }
}

/// KKT residuals of a candidate primal-dual point.
#[derive(Debug, Clone)]
pub struct KktResidual {
    /// Stationarity `Qz + q + A'nu + G'lambda`.
    pub r_stat: Vec<f64>,
    /// Equality residual `Az - b`.
    pub r_eq: Vec<f64>,
    /// Elementwise inequality violation `max(Gz - h, 0)`.
    pub r_ineq_viol: Vec<f64>,
    /// Complementarity `lambda .* (Gz - h)`.
    pub r_comp: Vec<f64>,
}

impl KktResidual {
    pub fn stat_norm(&self) -> f64 {
        vec_inf_norm(&self.r_stat)
    }

    pub fn eq_norm(&self) -> f64 {
        vec_inf_norm(&self.r_eq)
    }

    pub fn ineq_norm(&self) -> f64 {
        vec_inf_norm(&self.r_ineq_viol)
    }

    pub fn comp_norm(&self) -> f64 {
        vec_inf_norm(&self.r_comp)
    }
}

/// Evaluates the KKT residuals of `(z, lambda, nu)` for `qp`.
pub fn kkt_residuals(qp: &QpInstance, z: &[f64], lambda: &[f64], nu: &[f64]) -> KktResidual {
    kkt_residuals_with_gz(qp, z, lambda, nu).0
}

/// As [`kkt_residuals`], but also hands back the product `Gz` so interior-point
/// iterations can form the slack residual `Gz + s - h` without a second pass.
pub(crate) fn kkt_residuals_with_gz(
    qp: &QpInstance,
    z: &[f64],
    lambda: &[f64],
    nu: &[f64],
) -> (KktResidual, Vec<f64>) {
    assert_eq!(z.len(), qp.n);
    assert_eq!(lambda.len(), qp.p);
    assert_eq!(nu.len(), qp.m);

    let mut r_stat = qp.q_mat.matvec(z);
    crate::linalg::axpy(1.0, &qp.q_vec, &mut r_stat);
    crate::linalg::axpy(1.0, &qp.a.tr_matvec(nu), &mut r_stat);
    crate::linalg::axpy(1.0, &qp.g.tr_matvec(lambda), &mut r_stat);

    let mut r_eq = qp.a.matvec(z);
    crate::linalg::axpy(-1.0, &qp.b, &mut r_eq);

    let gz = qp.g.matvec(z);
    let gap: Vec<f64> = gz.iter().zip(&qp.h).map(|(gzi, h)| gzi - h).collect();
    let r_ineq_viol = gap.iter().map(|v| v.max(0.0)).collect();
    let r_comp = gap.iter().zip(lambda).map(|(g, l)| l * g).collect();

    (
        KktResidual {
            r_stat,
            r_eq,
            r_ineq_viol,
            r_comp,
        },
        gz,
    )
}

/// Which parameters a batch shares across all its instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SharedMask {
    pub q_mat: bool,
    pub q_vec: bool,
    pub a: bool,
    pub b: bool,
    pub g: bool,
    pub h: bool,
}

impl SharedMask {
    /// Everything shared.
    pub fn all() -> Self {
        SharedMask {
            q_mat: true,
            q_vec: true,
            a: true,
            b: true,
            g: true,
            h: true,
        }
    }
}

/// A batch of QPs of equal dimensions. A parameter marked shared is stored
/// once and served to every instance; unshared parameters are stored per
/// instance.
#[derive(Debug, Clone)]
pub struct QpBatch {
    n: usize,
    m: usize,
    p: usize,
    len: usize,
    shared: SharedMask,
    q_mats: Vec<DenseMatrix>,
    q_vecs: Vec<Vec<f64>>,
    a_mats: Vec<DenseMatrix>,
    b_vecs: Vec<Vec<f64>>,
    g_mats: Vec<DenseMatrix>,
    h_vecs: Vec<Vec<f64>>,
}

fn collect_shared<T: Clone + PartialEq>(
    items: Vec<T>,
    is_shared: bool,
    name: &str,
) -> Result<Vec<T>> {
    if !is_shared {
        return Ok(items);
    }
    let mut it = items.into_iter();
    let first = it.next().expect("non-empty batch");
    for (i, item) in it.enumerate() {
        if item != first {
            return Err(Error::Shape(format!(
                "{name} is marked shared but instance {} differs from instance 0",
                i + 1
            )));
        }
    }
    Ok(vec![first])
}

impl QpBatch {
    /// Builds a batch from per-instance problems, deduplicating parameters
    /// marked shared. All instances must have identical dimensions, and a
    /// shared parameter must be bitwise identical across the batch.
    pub fn from_instances(instances: Vec<QpInstance>, shared: SharedMask) -> Result<QpBatch> {
        let first = instances
            .first()
            .ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (n, m, p) = (first.n, first.m, first.p);
        for (i, qp) in instances.iter().enumerate() {
            if (qp.n, qp.m, qp.p) != (n, m, p) {
                return Err(Error::Shape(format!(
                    "instance {i} has dims (n={}, m={}, p={}), expected (n={n}, m={m}, p={p})",
                    qp.n, qp.m, qp.p
                )));
            }
        }
        let len = instances.len();
        let mut q_mats = Vec::with_capacity(len);
        let mut q_vecs = Vec::with_capacity(len);
        let mut a_mats = Vec::with_capacity(len);
        let mut b_vecs = Vec::with_capacity(len);
        let mut g_mats = Vec::with_capacity(len);
        let mut h_vecs = Vec::with_capacity(len);
        for qp in instances {
            q_mats.push(qp.q_mat);
            q_vecs.push(qp.q_vec);
            a_mats.push(qp.a);
            b_vecs.push(qp.b);
            g_mats.push(qp.g);
            h_vecs.push(qp.h);
        }
        Ok(QpBatch {
            n,
            m,
            p,
            len,
            shared,
            q_mats: collect_shared(q_mats, shared.q_mat, "Q")?,
            q_vecs: collect_shared(q_vecs, shared.q_vec, "q")?,
            a_mats: collect_shared(a_mats, shared.a, "A")?,
            b_vecs: collect_shared(b_vecs, shared.b, "b")?,
            g_mats: collect_shared(g_mats, shared.g, "G")?,
            h_vecs: collect_shared(h_vecs, shared.h, "h")?,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `(n, m, p)` common to every instance.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.m, self.p)
    }

    pub fn shared(&self) -> SharedMask {
        self.shared
    }

    fn pick<'a, T>(items: &'a [T], i: usize) -> &'a T {
        if items.len() == 1 {
            &items[0]
        } else {
            &items[i]
        }
    }

    pub fn q_mat(&self, i: usize) -> &DenseMatrix {
        Self::pick(&self.q_mats, i)
    }

    pub fn q_vec(&self, i: usize) -> &[f64] {
        Self::pick(&self.q_vecs, i)
    }

    pub fn a(&self, i: usize) -> &DenseMatrix {
        Self::pick(&self.a_mats, i)
    }

    pub fn b(&self, i: usize) -> &[f64] {
        Self::pick(&self.b_vecs, i)
    }

    pub fn g(&self, i: usize) -> &DenseMatrix {
        Self::pick(&self.g_mats, i)
    }

    pub fn h(&self, i: usize) -> &[f64] {
        Self::pick(&self.h_vecs, i)
    }

    /// Assembles instance `i` as an owned problem.
    pub fn instance(&self, i: usize) -> QpInstance {
        QpInstance {
            n: self.n,
            m: self.m,
            p: self.p,
            q_mat: self.q_mat(i).clone(),
            q_vec: self.q_vec(i).to_vec(),
            a: self.a(i).clone(),
            b: self.b(i).to_vec(),
            g: self.g(i).clone(),
            h: self.h(i).to_vec(),
        }
    }
}

/// Draws a random strictly feasible QP.
///
/// Construction: `Q = U'U + 1e-3 I` with `U` uniform on `[0, 1)`; `q`
/// standard normal; `G` standard normal; `h = G z0 + s0` for a standard
/// normal anchor `z0` and uniform positive slacks `s0`, making `z0` strictly
/// feasible by construction. When `m > 0`, `A` is standard normal
/// (redrawn in the measure-zero event it loses rank) and `b = A z0`, so
/// `z0` also satisfies the equalities exactly.
///
/// The draw order (U, q, G, z0, s0, A) is fixed; the same seed yields the
/// same instance bit for bit.
pub fn random_feasible_qp(n: usize, m: usize, p: usize, seed: u64) -> QpInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let u = DenseMatrix::from_vec(n, n, (0..n * n).map(|_| rng.gen::<f64>()).collect());
    let mut q_mat = u.transpose().matmul(&u);
    for i in 0..n {
        q_mat[(i, i)] += 1e-3;
    }

    let q_vec: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let g = DenseMatrix::from_vec(
        p,
        n,
        (0..p * n).map(|_| rng.sample(StandardNormal)).collect(),
    );
    let z0: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let s0: Vec<f64> = (0..p)
        .map(|_| loop {
            let v = rng.gen::<f64>();
            if v > 0.0 {
                break v;
            }
        })
        .collect();
    let mut h = g.matvec(&z0);
    crate::linalg::axpy(1.0, &s0, &mut h);

    let (a, b) = if m > 0 {
        let a = loop {
            let cand = DenseMatrix::from_vec(
                m,
                n,
                (0..m * n).map(|_| rng.sample(StandardNormal)).collect(),
            );
            if rank(&cand, 1e-10) == m {
                break cand;
            }
        };
        let b = a.matvec(&z0);
        (a, b)
    } else {
        (DenseMatrix::zeros(0, n), Vec::new())
    };

    QpInstance {
        n,
        m,
        p,
        q_mat,
        q_vec,
        a,
        b,
        g,
        h,
    }
}

// ---------------------------------------------------------------------------
// JSON interchange
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct QpJson {
    n: usize,
    m: usize,
    p: usize,
    #[serde(rename = "Q")]
    q_mat: Vec<Vec<f64>>,
    q: Vec<f64>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<Vec<f64>>,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    g: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<Vec<f64>>,
}

fn nested_to_matrix(rows: &[Vec<f64>], want_rows: usize, want_cols: usize, name: &str) -> Result<DenseMatrix> {
    if rows.len() != want_rows {
        return Err(Error::Shape(format!(
            "\"{name}\" has {} rows, expected {want_rows}",
            rows.len()
        )));
    }
    let mut data = Vec::with_capacity(want_rows * want_cols);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != want_cols {
            return Err(Error::Shape(format!(
                "\"{name}\" row {i} has {} entries, expected {want_cols}",
                row.len()
            )));
        }
        data.extend_from_slice(row);
    }
    Ok(DenseMatrix::from_vec(want_rows, want_cols, data))
}

fn matrix_to_nested(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn qp_from_json_value(j: QpJson) -> Result<QpInstance> {
    let (n, m, p) = (j.n, j.m, j.p);
    if j.q.len() != n {
        return Err(Error::Shape(format!(
            "\"q\" has {} entries, expected n = {n}",
            j.q.len()
        )));
    }
    let q_mat = nested_to_matrix(&j.q_mat, n, n, "Q")?;

    let (a, b) = match (j.a, j.b) {
        (Some(a), Some(b)) => {
            if m == 0 {
                return Err(Error::InvalidData(
                    "\"A\"/\"b\" present but m = 0".into(),
                ));
            }
            if b.len() != m {
                return Err(Error::Shape(format!(
                    "\"b\" has {} entries, expected m = {m}",
                    b.len()
                )));
            }
            (nested_to_matrix(&a, m, n, "A")?, b)
        }
        (None, None) => {
            if m != 0 {
                return Err(Error::InvalidData(format!(
                    "m = {m} but \"A\"/\"b\" are absent"
                )));
            }
            (DenseMatrix::zeros(0, n), Vec::new())
        }
        _ => {
            return Err(Error::InvalidData(
                "\"A\" and \"b\" must be present together".into(),
            ))
        }
    };

    let (g, h) = match (j.g, j.h) {
        (Some(g), Some(h)) => {
            if p == 0 {
                return Err(Error::InvalidData(
                    "\"G\"/\"h\" present but p = 0".into(),
                ));
            }
            if h.len() != p {
                return Err(Error::Shape(format!(
                    "\"h\" has {} entries, expected p = {p}",
                    h.len()
                )));
            }
            (nested_to_matrix(&g, p, n, "G")?, h)
        }
        (None, None) => {
            if p != 0 {
                return Err(Error::InvalidData(format!(
                    "p = {p} but \"G\"/\"h\" are absent"
                )));
            }
            (DenseMatrix::zeros(0, n), Vec::new())
        }
        _ => {
            return Err(Error::InvalidData(
                "\"G\" and \"h\" must be present together".into(),
            ))
        }
    };

    QpInstance::new(q_mat, j.q, a, b, g, h)
}

fn qp_to_json_value(qp: &QpInstance) -> QpJson {
    QpJson {
        n: qp.n,
        m: qp.m,
        p: qp.p,
        q_mat: matrix_to_nested(&qp.q_mat),
        q: qp.q_vec.clone(),
        a: (qp.m > 0).then(|| matrix_to_nested(&qp.a)),
        b: (qp.m > 0).then(|| qp.b.clone()),
        g: (qp.p > 0).then(|| matrix_to_nested(&qp.g)),
        h: (qp.p > 0).then(|| qp.h.clone()),
    }
}

/// Parses a single QP from its JSON object form.
pub fn qp_from_json_str(s: &str) -> Result<QpInstance> {
    let j: QpJson = serde_json::from_str(s)?;
    qp_from_json_value(j)
}

/// Serializes a single QP to a JSON object.
pub fn qp_to_json_string(qp: &QpInstance) -> String {
    serde_json::to_string_pretty(&qp_to_json_value(qp)).expect("QP serialization cannot fail")
}

/// Parses either a single QP object or an array of them.
pub fn qps_from_json_str(s: &str) -> Result<Vec<QpInstance>> {
    let v: serde_json::Value = serde_json::from_str(s)?;
    match v {
        serde_json::Value::Array(items) => items
            .into_iter()
            .map(|item| qp_from_json_value(serde_json::from_value(item)?))
            .collect(),
        obj @ serde_json::Value::Object(_) => {
            Ok(vec![qp_from_json_value(serde_json::from_value(obj)?)?])
        }
        _ => Err(Error::InvalidData(
            "expected a QP object or an array of QP objects".into(),
        )),
    }
}

/// Serializes a batch as a JSON array.
pub fn qps_to_json_string(qps: &[QpInstance]) -> String {
    let vals: Vec<QpJson> = qps.iter().map(qp_to_json_value).collect();
    serde_json::to_string_pretty(&vals).expect("QP serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn mat(rows: &[&[f64]]) -> DenseMatrix {
        let r = rows.len();
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        DenseMatrix::from_vec(r, c, data)
    }

    #[test]
    fn validate_passes_well_formed_qp() {
        let qp = random_feasible_qp(6, 2, 4, 42);
        let report = validate(&qp);
        assert!(report.all_ok(), "{report:?}");
    }

    #[test]
    fn validate_flags_indefinite_q() {
        let qp = QpInstance::unconstrained(mat(&[&[1.0, 2.0], &[2.0, 1.0]]), vec![0.0, 0.0]).unwrap();
        let report = validate(&qp);
        assert!(!report.psd_ok);
        assert!(report.symmetry_ok);
    }

    #[test]
    fn validate_flags_asymmetry_and_rank_deficiency() {
        let mut qp = random_feasible_qp(4, 2, 2, 3);
        qp.q_mat[(0, 1)] += 1e-6;
        assert!(!validate(&qp).symmetry_ok);

        let mut qp = random_feasible_qp(4, 2, 2, 4);
        let row0 = qp.a.row(0).to_vec();
        qp.a.row_mut(1).copy_from_slice(&row0);
        assert!(!validate(&qp).eq_rank_ok);
    }

    #[test]
    fn new_rejects_shape_mismatch() {
        let err = QpInstance::new(
            DenseMatrix::zeros(2, 2),
            vec![0.0; 3],
            DenseMatrix::zeros(0, 3),
            vec![],
            DenseMatrix::zeros(0, 3),
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn residuals_vanish_at_unconstrained_minimum() {
        // min 1/2 z^2 has z* = 0
        let qp = QpInstance::unconstrained(mat(&[&[1.0]]), vec![0.0]).unwrap();
        let r = kkt_residuals(&qp, &[0.0], &[], &[]);
        assert_eq!(r.stat_norm(), 0.0);
        assert_eq!(r.eq_norm(), 0.0);
        assert_eq!(r.ineq_norm(), 0.0);
        assert_eq!(r.comp_norm(), 0.0);
    }

    #[test]
    fn residuals_at_active_constraint() {
        // min 1/2 z^2 - 2z s.t. z <= 1: z* = 1, lambda* = 1
        let qp = QpInstance::inequality_only(
            mat(&[&[1.0]]),
            vec![-2.0],
            mat(&[&[1.0]]),
            vec![1.0],
        )
        .unwrap();
        let r = kkt_residuals(&qp, &[1.0], &[1.0], &[]);
        assert_eq!(r.stat_norm(), 0.0);
        assert_eq!(r.ineq_norm(), 0.0);
        assert_eq!(r.comp_norm(), 0.0);
    }

    #[test]
    fn residuals_are_affine_in_rhs_terms() {
        // superposition in (q, b, h) at a fixed point
        let base = random_feasible_qp(5, 2, 3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lam: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let nu: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let with_rhs = |q: &[f64], b: &[f64], h: &[f64]| {
            let mut qp = base.clone();
            qp.q_vec = q.to_vec();
            qp.b = b.to_vec();
            qp.h = h.to_vec();
            kkt_residuals(&qp, &z, &lam, &nu)
        };
        let q1: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q2: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b1: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b2: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h1: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h2: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let sum: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| a + b).collect();
        let bsum: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a + b).collect();
        let hsum: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| a + b).collect();

        let r12 = with_rhs(&sum, &bsum, &hsum);
        let r1 = with_rhs(&q1, &b1, &h1);
        let r2 = with_rhs(&q2, &b2, &h2);
        let r0 = with_rhs(&vec![0.0; 5], &vec![0.0; 2], &vec![0.0; 3]);

        for i in 0..5 {
            let lin = r1.r_stat[i] + r2.r_stat[i] - r0.r_stat[i];
            assert!((r12.r_stat[i] - lin).abs() <= 1e-12);
        }
        for i in 0..2 {
            let lin = r1.r_eq[i] + r2.r_eq[i] - r0.r_eq[i];
            assert!((r12.r_eq[i] - lin).abs() <= 1e-12);
        }
        for i in 0..3 {
            let lin = r1.r_comp[i] + r2.r_comp[i] - r0.r_comp[i];
            assert!((r12.r_comp[i] - lin).abs() <= 1e-12);
        }
    }

    #[test]
    fn generator_produces_strictly_feasible_anchor() {
        let qp = random_feasible_qp(5, 2, 3, 0);
        // recover z0 through the equality block: b = A z0 was computed from
        // the anchor, so audit feasibility margins directly against h
        // by checking that some strictly interior point exists: the
        // construction guarantees max(G z0 - h) = -min(s0) < 0, and b = A z0
        // exactly. Reproduce the draws to obtain z0.
        let qp2 = random_feasible_qp(5, 2, 3, 0);
        assert_eq!(qp.q_mat, qp2.q_mat);
        assert_eq!(qp.b, qp2.b);

        // z0 is not exported; verify via the generator contract instead:
        // h - G z0 = s0 > 0 componentwise is equivalent to existence of a
        // point with positive slacks, which we confirm by solving the
        // equalities approximately with least squares on the anchor relation
        // b = A z0. Here we simply re-derive z0 by re-running the sampler.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let _u: Vec<f64> = (0..25).map(|_| rng.gen::<f64>()).collect();
        let _q: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        let _g: Vec<f64> = (0..15).map(|_| rng.sample(StandardNormal)).collect();
        let z0: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();

        let gz0 = qp.g.matvec(&z0);
        let worst = gz0
            .iter()
            .zip(&qp.h)
            .map(|(gz, h)| gz - h)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst < 0.0, "anchor not strictly feasible: {worst}");

        let az0 = qp.a.matvec(&z0);
        assert_eq!(az0, qp.b, "b must equal A z0 exactly");
    }

    #[test]
    fn generator_is_seed_deterministic() {
        let a = random_feasible_qp(6, 2, 4, 123);
        let b = random_feasible_qp(6, 2, 4, 123);
        assert_eq!(a, b);
        let c = random_feasible_qp(6, 2, 4, 124);
        assert_ne!(a, c);
    }

    #[test]
    fn batch_shares_storage_for_shared_parameters() {
        let base = random_feasible_qp(4, 0, 3, 5);
        let mut instances = Vec::new();
        for k in 0..4 {
            let mut qp = base.clone();
            qp.q_vec = (0..4).map(|i| (i + k) as f64).collect();
            instances.push(qp);
        }
        let shared = SharedMask {
            q_mat: true,
            q_vec: false,
            a: true,
            b: true,
            g: true,
            h: true,
        };
        let batch = QpBatch::from_instances(instances, shared).unwrap();
        assert_eq!(batch.len(), 4);
        // shared Q stored once: identical addresses for every instance
        assert!(std::ptr::eq(batch.q_mat(0), batch.q_mat(3)));
        assert!(!std::ptr::eq(batch.q_vec(0).as_ptr(), batch.q_vec(3).as_ptr()));
        assert_eq!(batch.q_vec(2)[0], 2.0);
    }

    #[test]
    fn batch_rejects_shared_parameter_mismatch() {
        let a = random_feasible_qp(3, 0, 2, 1);
        let mut b2 = a.clone();
        b2.h[0] += 1.0;
        let err = QpBatch::from_instances(vec![a, b2], SharedMask::all()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn batch_rejects_dimension_mismatch() {
        let a = random_feasible_qp(3, 0, 2, 1);
        let b = random_feasible_qp(4, 0, 2, 1);
        assert!(QpBatch::from_instances(vec![a, b], SharedMask::default()).is_err());
    }

    #[test]
    fn json_roundtrip_preserves_every_bit() {
        let qp = random_feasible_qp(5, 2, 3, 99);
        let s = qp_to_json_string(&qp);
        let back = qp_from_json_str(&s).unwrap();
        assert_eq!(qp, back);

        let no_eq = random_feasible_qp(4, 0, 2, 100);
        let s = qp_to_json_string(&no_eq);
        assert!(!s.contains("\"A\""));
        let back = qp_from_json_str(&s).unwrap();
        assert_eq!(no_eq, back);
    }

    #[test]
    fn json_rejects_inconsistent_dims() {
        let s = r#"{"n": 3, "m": 0, "p": 0, "Q": [[1.0, 0.0], [0.0, 1.0]], "q": [0.0, 0.0, 0.0]}"#;
        match qp_from_json_str(s) {
            Err(Error::Shape(msg)) => {
                assert!(msg.contains("\"Q\""), "{msg}");
                assert!(msg.contains('3'), "{msg}");
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn json_rejects_missing_required_key() {
        let s = r#"{"n": 1, "m": 0, "p": 0, "q": [0.0]}"#;
        match qp_from_json_str(s) {
            Err(Error::Json(e)) => assert!(e.to_string().contains('Q'), "{e}"),
            other => panic!("expected json error, got {other:?}"),
        }
    }

    #[test]
    fn json_rejects_m_without_a() {
        let s = r#"{"n": 1, "m": 1, "p": 0, "Q": [[1.0]], "q": [0.0]}"#;
        match qp_from_json_str(s) {
            Err(Error::InvalidData(msg)) => assert!(msg.contains("m = 1"), "{msg}"),
            other => panic!("expected invalid-data error, got {other:?}"),
        }
    }

    #[test]
    fn json_array_parses_as_batch() {
        let a = random_feasible_qp(3, 1, 2, 1);
        let b = random_feasible_qp(3, 1, 2, 2);
        let s = qps_to_json_string(&[a.clone(), b.clone()]);
        let back = qps_from_json_str(&s).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn objective_evaluates_quadratic() {
        let qp = QpInstance::unconstrained(mat(&[&[2.0, 0.0], &[0.0, 4.0]]), vec![1.0, -1.0]).unwrap();
        let z = [3.0, 2.0];
        // 1/2 (2*9 + 4*4) + (3 - 2) = 17 + 1
        assert_eq!(qp.objective(&z), 18.0);
    }
}
