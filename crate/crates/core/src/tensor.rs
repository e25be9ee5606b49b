//! Exact algebra of symmetric traceless 3x3 tensors and the kinematic
//! tensors built from the velocity gradient.
//!
//! The order parameter is stored as its five independent components
//! (`q11`, `q22`, `q12`, `q13`, `q23`); symmetry and tracelessness are
//! properties of the representation rather than numerical constraints, so
//! they hold exactly at every point of every trajectory.
//!
//! Contraction conventions used throughout the crate:
//!
//! * `A : B = sum_ij A_ij B_ij` for matrices (full Frobenius pairing);
//! * for rank-3 objects such as `grad Q`, the pairing contracts all free
//!   indices componentwise, e.g. `grad Q :: grad S = sum_{i,k,l}
//!   d_i Q_kl d_i S_kl`;
//! * `(grad Q odot grad Q)_ij = sum_kl d_i Q_kl d_j Q_kl`, the Gram matrix
//!   of the three directional derivatives (the standard Landau-de Gennes
//!   convention for the elastic stress).

use crate::error::{CoreError, Result};
use nalgebra::{Matrix3, Vector3};

/// Symmetric traceless 3x3 tensor stored by its five independent
/// components. The remaining entries are `q21 = q12`, `q31 = q13`,
/// `q32 = q23`, and `q33 = -q11 - q22`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QTensor {
    pub q11: f64,
    pub q22: f64,
    pub q12: f64,
    pub q13: f64,
    pub q23: f64,
}

impl QTensor {
    /// The zero tensor (isotropic state).
    pub const ZERO: QTensor = QTensor {
        q11: 0.0,
        q22: 0.0,
        q12: 0.0,
        q13: 0.0,
        q23: 0.0,
    };

    /// Builds the tensor from its five independent components.
    pub fn new(q11: f64, q22: f64, q12: f64, q13: f64, q23: f64) -> Self {
        QTensor {
            q11,
            q22,
            q12,
            q13,
            q23,
        }
    }

    /// The dependent component `q33 = -(q11 + q22)`.
    #[inline]
    pub fn q33(&self) -> f64 {
        -(self.q11 + self.q22)
    }

    /// Full 3x3 matrix form.
    #[inline]
    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.q11,
            self.q12,
            self.q13,
            self.q12,
            self.q22,
            self.q23,
            self.q13,
            self.q23,
            self.q33(),
        )
    }

    /// Full Frobenius pairing `self : other = sum_ij self_ij other_ij`.
    #[inline]
    pub fn dot(&self, other: &QTensor) -> f64 {
        let a33 = self.q33();
        let b33 = other.q33();
        self.q11 * other.q11
            + self.q22 * other.q22
            + a33 * b33
            + 2.0 * (self.q12 * other.q12 + self.q13 * other.q13 + self.q23 * other.q23)
    }

    /// Squared Frobenius norm `|Q|^2 = Q : Q`.
    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// Frobenius norm.
    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Pairing with a full matrix, `Q : m = sum_ij Q_ij m_ij`.
    #[inline]
    pub fn dot_mat(&self, m: &Matrix3<f64>) -> f64 {
        self.q11 * m[(0, 0)]
            + self.q22 * m[(1, 1)]
            + self.q33() * m[(2, 2)]
            + self.q12 * (m[(0, 1)] + m[(1, 0)])
            + self.q13 * (m[(0, 2)] + m[(2, 0)])
            + self.q23 * (m[(1, 2)] + m[(2, 1)])
    }

    /// Projects a symmetric matrix onto the traceless subspace without the
    /// symmetry check; the caller guarantees `m` is symmetric (e.g. it was
    /// assembled as `A + A^t` or as a product known to be symmetric).
    #[inline]
    pub fn project_sym(m: &Matrix3<f64>) -> QTensor {
        let tr3 = (m[(0, 0)] + m[(1, 1)] + m[(2, 2)]) / 3.0;
        QTensor {
            q11: m[(0, 0)] - tr3,
            q22: m[(1, 1)] - tr3,
            q12: 0.5 * (m[(0, 1)] + m[(1, 0)]),
            q13: 0.5 * (m[(0, 2)] + m[(2, 0)]),
            q23: 0.5 * (m[(1, 2)] + m[(2, 1)]),
        }
    }

    /// Uniaxial tensor with leading eigenvalue `lambda1` along the unit
    /// director `n`: eigenvalues `(lambda1, -lambda1/2, -lambda1/2)`.
    pub fn uniaxial(lambda1: f64, n: &Vector3<f64>) -> QTensor {
        let n = n.normalize();
        let s = 1.5 * lambda1;
        let m = s * (n * n.transpose() - Matrix3::identity() / 3.0);
        QTensor::project_sym(&m)
    }

    /// Reassembles `R diag(lambda) R^t` as a `QTensor`. The eigenvalues
    /// must (approximately) sum to zero; any numerical trace remainder is
    /// projected out exactly by the representation.
    pub fn from_eigen(lambda: &[f64; 3], r: &Matrix3<f64>) -> QTensor {
        let m = r * Matrix3::from_diagonal(&Vector3::new(lambda[0], lambda[1], lambda[2]))
            * r.transpose();
        QTensor::project_sym(&m)
    }
}

impl std::ops::Add for QTensor {
    type Output = QTensor;
    fn add(self, o: QTensor) -> QTensor {
        QTensor::new(
            self.q11 + o.q11,
            self.q22 + o.q22,
            self.q12 + o.q12,
            self.q13 + o.q13,
            self.q23 + o.q23,
        )
    }
}

impl std::ops::Sub for QTensor {
    type Output = QTensor;
    fn sub(self, o: QTensor) -> QTensor {
        QTensor::new(
            self.q11 - o.q11,
            self.q22 - o.q22,
            self.q12 - o.q12,
            self.q13 - o.q13,
            self.q23 - o.q23,
        )
    }
}

impl std::ops::Neg for QTensor {
    type Output = QTensor;
    fn neg(self) -> QTensor {
        QTensor::new(-self.q11, -self.q22, -self.q12, -self.q13, -self.q23)
    }
}

impl std::ops::Mul<f64> for QTensor {
    type Output = QTensor;
    fn mul(self, c: f64) -> QTensor {
        QTensor::new(
            c * self.q11,
            c * self.q22,
            c * self.q12,
            c * self.q13,
            c * self.q23,
        )
    }
}

impl std::ops::AddAssign for QTensor {
    fn add_assign(&mut self, o: QTensor) {
        self.q11 += o.q11;
        self.q22 += o.q22;
        self.q12 += o.q12;
        self.q13 += o.q13;
        self.q23 += o.q23;
    }
}

/// Velocity gradient at a point, decomposable into the strain rate
/// `eps(u) = (grad u + grad u^t)/2` and the vorticity
/// `omega(u) = (grad u - grad u^t)/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelGrad {
    /// Entries `m[(i, j)] = d_j u_i`.
    pub m: Matrix3<f64>,
}

impl VelGrad {
    pub fn new(m: Matrix3<f64>) -> Self {
        VelGrad { m }
    }

    /// Symmetric part (strain rate).
    #[inline]
    pub fn strain(&self) -> Matrix3<f64> {
        0.5 * (self.m + self.m.transpose())
    }

    /// Antisymmetric part (vorticity tensor).
    #[inline]
    pub fn vorticity(&self) -> Matrix3<f64> {
        0.5 * (self.m - self.m.transpose())
    }

    /// `tr(grad u) = div u` (zero for incompressible samples).
    #[inline]
    pub fn trace(&self) -> f64 {
        self.m.trace()
    }
}

/// Full contraction of two 3x3 matrices, `a : b = sum_ij a_ij b_ij`.
#[inline]
pub fn mat_dot(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[(i, j)] * b[(i, j)];
        }
    }
    s
}

/// Maximum absolute entry of a matrix, used for relative tolerances.
#[inline]
pub fn mat_abs_max(a: &Matrix3<f64>) -> f64 {
    let mut s: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s = s.max(a[(i, j)].abs());
        }
    }
    s
}

/// Projection `L[h] = h - (tr h / 3) I` of a symmetric matrix onto the
/// space of symmetric traceless tensors. Rejects non-symmetric input:
/// `|h - h^t|` must not exceed `1e-12 * max(1, |h|_max)`.
///
/// The projection is linear and idempotent, and the result's trace
/// vanishes exactly by construction of [`QTensor`].
pub fn traceless_project(h: &Matrix3<f64>) -> Result<QTensor> {
    let asym = (h - h.transpose()).abs().max();
    let tol = 1e-12 * mat_abs_max(h).max(1.0);
    if asym > tol {
        return Err(CoreError::NotSymmetric { asym, tol });
    }
    Ok(QTensor::project_sym(h))
}

/// Raw (un-projected) stretching tensor
/// `S = (xi eps + omega)(Q + I/3) + (Q + I/3)(xi eps - omega)
///  - 2 xi (Q + I/3) (Q : grad u)`.
fn stretching_matrix(g: &VelGrad, q: &QTensor, xi: f64) -> Matrix3<f64> {
    let eps = g.strain();
    let omega = g.vorticity();
    let m = q.to_matrix() + Matrix3::identity() / 3.0;
    let q_du = q.dot_mat(&g.m);
    (xi * eps + omega) * m + m * (xi * eps - omega) - 2.0 * xi * q_du * m
}

/// Stretching tensor `S(grad u, Q)`: the co-rotational/alignment coupling
/// of the flow gradient to the order parameter, parameterized by `xi`
/// (`xi = 0` is purely co-rotational).
///
/// `S` is symmetric by construction. Its trace vanishes analytically for
/// divergence-free `u` (the `-2 xi (Q + I/3)(Q : grad u)` term cancels the
/// trace of the first two); the result is re-projected so the returned
/// tensor is traceless exactly, and [`stretching_with_residual`] exposes
/// the pre-projection trace for audits.
pub fn stretching(g: &VelGrad, q: &QTensor, xi: f64) -> QTensor {
    QTensor::project_sym(&stretching_matrix(g, q, xi))
}

/// Same as [`stretching`], additionally returning the absolute value of
/// the pre-projection trace (the residual removed by the projection).
pub fn stretching_with_residual(g: &VelGrad, q: &QTensor, xi: f64) -> (QTensor, f64) {
    let s = stretching_matrix(g, q, xi);
    let residual = s.trace().abs();
    (QTensor::project_sym(&s), residual)
}

/// Elastic stress kernel `(grad Q odot grad Q)_ij = sum_kl d_i Q_kl
/// d_j Q_kl`, the Gram matrix of the directional derivatives of `Q`.
/// Symmetric positive semidefinite for every input.
pub fn odot(gq: &[QTensor; 3]) -> Matrix3<f64> {
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        for j in i..3 {
            let v = gq[i].dot(&gq[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Residual of the commutator identity relating the power of the
/// stretching tensor to the non-dissipative stress:
///
/// ```text
/// -H : S(grad u, Q)  =  (Q H - H Q) : grad u
///                     + 2 xi (H : Q)(Q : grad u)
///                     - xi [ H (Q + I/3) + (Q + I/3) H ] : grad u
/// ```
///
/// Both sides are evaluated independently and the absolute difference is
/// returned. The identity is exact for traceless symmetric `H` (the
/// molecular field always is); for a symmetric `H` with nonzero trace the
/// two sides differ by exactly `2 xi (Q : grad u) tr(H) / 3`, which the
/// unit tests pin down.
pub fn commutator_identity_check(h: &Matrix3<f64>, q: &QTensor, g: &VelGrad, xi: f64) -> f64 {
    let s = stretching_matrix(g, q, xi);
    let lhs = -mat_dot(h, &s);

    let qm = q.to_matrix();
    let m = qm + Matrix3::identity() / 3.0;
    let comm = qm * h - h * qm;
    let h_q = mat_dot(h, &qm);
    let q_du = q.dot_mat(&g.m);
    let anchor = h * m + m * h;
    let rhs = mat_dot(&comm, &g.m) + 2.0 * xi * h_q * q_du - xi * mat_dot(&anchor, &g.m);

    (lhs - rhs).abs()
}

/// Material-derivative combination `D Q / Dt = dQ/dt + u . grad Q - S`,
/// evaluated pointwise from precomputed ingredients.
pub fn material_derivative(
    q_t: &QTensor,
    u: &Vector3<f64>,
    gq: &[QTensor; 3],
    s: &QTensor,
) -> QTensor {
    *q_t + gq[0] * u[0] + gq[1] * u[1] + gq[2] * u[2] - *s
}

// ---------------------------------------------------------------------------
// Closed-form eigen-decomposition of symmetric 3x3 matrices.
// ---------------------------------------------------------------------------

/// Eigenvalues by the trigonometric closed form alone. Near a tied pair
/// the acos loses half the significant digits (the split is resolved only
/// to sqrt(epsilon)); [`eig_sym3`] repairs that with Rayleigh quotients,
/// so this raw form stays private.
fn eig_sym3_values_raw(a: &Matrix3<f64>) -> [f64; 3] {
    let q = a.trace() / 3.0;
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2)
        + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if p <= 1e-300 {
        return [q, q, q];
    }
    let b = (a - q * Matrix3::identity()) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    // Roots at angles phi + 2*pi*k/3; phi lies in [0, pi/3], so cos(phi)
    // gives the largest root and cos(phi + 2*pi/3) the smallest.
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let l2 = 3.0 * q - l1 - l3;
    [l1, l2, l3]
}

/// Eigenvalues of a symmetric 3x3 matrix in descending order, accurate to
/// a few units in the last place even through tied pairs.
pub fn eig_sym3_values(a: &Matrix3<f64>) -> [f64; 3] {
    eig_sym3(a).0
}

/// Best-conditioned unit vector in the null space of `m` (assumed rank
/// deficient), via cross products of its rows; falls back to an arbitrary
/// orthogonal completion when the row space itself is (near) degenerate.
fn null_vector(m: &Matrix3<f64>) -> Vector3<f64> {
    let r0 = Vector3::new(m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let r1 = Vector3::new(m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let r2 = Vector3::new(m[(2, 0)], m[(2, 1)], m[(2, 2)]);
    let c01 = r0.cross(&r1);
    let c12 = r1.cross(&r2);
    let c20 = r2.cross(&r0);
    let (mut best, mut best_n) = (c01, c01.norm_squared());
    if c12.norm_squared() > best_n {
        best = c12;
        best_n = c12.norm_squared();
    }
    if c20.norm_squared() > best_n {
        best = c20;
        best_n = c20.norm_squared();
    }
    let scale = r0.norm_squared() + r1.norm_squared() + r2.norm_squared();
    if best_n > 1e-24 * scale.max(1e-300) * scale.max(1e-300) {
        return normalize_signed(&best);
    }
    // Rows are (nearly) parallel: the null space is a plane orthogonal to
    // the largest row; any unit vector in it will do.
    let mut p = r0;
    if r1.norm_squared() > p.norm_squared() {
        p = r1;
    }
    if r2.norm_squared() > p.norm_squared() {
        p = r2;
    }
    if p.norm_squared() <= 1e-300 {
        return Vector3::new(1.0, 0.0, 0.0);
    }
    let e = if p[0].abs() <= p[1].abs() && p[0].abs() <= p[2].abs() {
        Vector3::new(1.0, 0.0, 0.0)
    } else if p[1].abs() <= p[2].abs() {
        Vector3::new(0.0, 1.0, 0.0)
    } else {
        Vector3::new(0.0, 0.0, 1.0)
    };
    normalize_signed(&p.cross(&e))
}

/// Normalizes and fixes the sign deterministically: the component of
/// largest magnitude is made positive (ties broken by lowest index).
fn normalize_signed(v: &Vector3<f64>) -> Vector3<f64> {
    let n = v.normalize();
    let mut k = 0;
    for i in 1..3 {
        if n[i].abs() > n[k].abs() {
            k = i;
        }
    }
    if n[k] < 0.0 {
        -n
    } else {
        n
    }
}

/// Full eigen-decomposition of a symmetric 3x3 matrix: eigenvalues in
/// descending order and an orthonormal matrix `R` whose columns are the
/// corresponding eigenvectors, so that `a = R diag(lambda) R^t`.
///
/// The decomposition is a pure deterministic function of the entries
/// (closed-form eigenvalues, cross-product eigenvectors with a fixed sign
/// convention), which the restart-exactness guarantee of the time stepper
/// relies on.
pub fn eig_sym3(a: &Matrix3<f64>) -> ([f64; 3], Matrix3<f64>) {
    let lambda = eig_sym3_values_raw(a);
    let spread = lambda[0] - lambda[2];
    if spread <= 1e-14 * lambda[0].abs().max(lambda[2].abs()).max(1.0) {
        // Isotropic within rounding: any orthonormal frame diagonalizes.
        // Rayleigh quotients against the identity frame are the diagonal.
        return ([a[(0, 0)], a[(1, 1)], a[(2, 2)]], Matrix3::identity());
    }
    // Extract eigenvectors for the two extreme (best separated)
    // eigenvalues and complete the orthonormal frame.
    let v1 = null_vector(&(a - lambda[0] * Matrix3::identity()));
    let v3_raw = null_vector(&(a - lambda[2] * Matrix3::identity()));
    let v3_orth = v3_raw - v1 * v1.dot(&v3_raw);
    let v3 = if v3_orth.norm_squared() > 1e-12 {
        normalize_signed(&v3_orth)
    } else {
        // Degenerate fallback: any unit vector orthogonal to v1.
        let e = if v1[0].abs() <= v1[1].abs() && v1[0].abs() <= v1[2].abs() {
            Vector3::new(1.0, 0.0, 0.0)
        } else if v1[1].abs() <= v1[2].abs() {
            Vector3::new(0.0, 1.0, 0.0)
        } else {
            Vector3::new(0.0, 0.0, 1.0)
        };
        normalize_signed(&v1.cross(&e))
    };
    let v2 = v3.cross(&v1);
    // Rayleigh-quotient refinement: the closed-form values resolve a tied
    // pair only to sqrt(epsilon), while the quadratic forms over the
    // computed (orthonormal) frame are accurate to rounding — a vector
    // anywhere in a tied invariant plane is an exact eigenvector, and for
    // separated eigenvalues the frame error enters only quadratically.
    let mut pairs = [
        ((a * v1).dot(&v1), v1),
        ((a * v2).dot(&v2), v2),
        ((a * v3).dot(&v3), v3),
    ];
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    (
        [pairs[0].0, pairs[1].0, pairs[2].0],
        Matrix3::from_columns(&[pairs[0].1, pairs[1].1, pairs[2].1]),
    )
}

/// Eigen-decomposition of a [`QTensor`]; see [`eig_sym3`].
pub fn eigen_q(q: &QTensor) -> ([f64; 3], Matrix3<f64>) {
    eig_sym3(&q.to_matrix())
}

/// Eigenvalues only of a [`QTensor`], descending.
pub fn eigenvalues_q(q: &QTensor) -> [f64; 3] {
    eig_sym3_values(&q.to_matrix())
}
