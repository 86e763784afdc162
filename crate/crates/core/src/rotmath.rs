//! Rotation representations.
//!
//! Orientations are carried as 3×3 rotation matrices and exchanged with the
//! network in the continuous 6D form: the first two matrix columns, stored
//! column-major (`v[0..3]` is column 1, `v[3..6]` is column 2). Decoding
//! re-orthonormalizes with Gram-Schmidt, so any non-degenerate 6-vector maps
//! to a valid rotation.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as degenerate by the Gram-Schmidt decoder.
pub const DEGENERACY_EPS: f64 = 1e-8;

/// A proper rotation (orthonormal columns, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

/// The 6D rotation encoding: first two columns of the matrix, column-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn as_array(&self) -> &[f64; 6] {
        &self.0
    }

    pub fn first(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn second(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }
}

impl Default for Rot6D {
    fn default() -> Self {
        Rot6D::IDENTITY
    }
}

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Wraps a matrix without checking it. Callers own the invariant.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotationMatrix(m)
    }

    /// Wraps a matrix after checking orthonormality and determinant at `tol`.
    pub fn try_from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        let r = RotationMatrix(m);
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateInput("non-finite rotation entry".into()));
        }
        if r.orthonormality_error() > tol || (m.determinant() - 1.0).abs() > tol {
            return Err(Error::DegenerateInput(format!(
                "matrix is not a rotation (orthonormality error {:.3e}, det {:.6})",
                r.orthonormality_error(),
                m.determinant()
            )));
        }
        Ok(r)
    }

    /// Row-major 9-vector constructor, projected onto SO(3).
    ///
    /// Used for file input where a few ulps of drift are expected.
    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        let m = Matrix3::from_row_slice(v);
        let r = project_to_rotation(&m)?;
        if (r.0 - m).abs().max() > 1e-3 {
            return Err(Error::DegenerateInput(
                "row-major matrix is too far from a rotation".into(),
            ));
        }
        Ok(r)
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(self.0.transpose())
    }

    pub fn mul(&self, other: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// `max |RᵀR − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).abs().max()
    }

    /// Rodrigues' formula. `axis` need not be normalized; a zero axis yields identity.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        let k = axis / n;
        let kx = skew(&k);
        RotationMatrix(Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos()))
    }

    /// Rotation vector (axis × angle) version of [`RotationMatrix::from_axis_angle`].
    pub fn exp(rotvec: &Vector3<f64>) -> Self {
        Self::from_axis_angle(rotvec, rotvec.norm())
    }

    /// Inverse of [`RotationMatrix::exp`], angle in `[0, π]`.
    pub fn log(&self) -> Vector3<f64> {
        let m = &self.0;
        let w = Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        );
        let s = 0.5 * w.norm();
        let c = 0.5 * (m.trace() - 1.0);
        let angle = s.atan2(c);
        if angle < 1e-12 {
            return 0.5 * w;
        }
        if std::f64::consts::PI - angle > 1e-6 {
            return w * (angle / (2.0 * s));
        }
        // Near π the antisymmetric part vanishes; read the axis off the symmetric part.
        let b = (m + Matrix3::identity()) * 0.5;
        let col = (0..3)
            .max_by(|&a, &b2| b[(a, a)].partial_cmp(&b[(b2, b2)]).unwrap())
            .unwrap();
        let mut axis: Vector3<f64> = b.column(col).into();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        axis * angle
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }
}

/// Cross-product matrix: `skew(a) * b == a × b`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Gram-Schmidt decode of a 6D vector.
pub fn rot6d_to_matrix(v: &Rot6D) -> Result<RotationMatrix> {
    let a1 = v.first();
    let a2 = v.second();
    let n1 = a1.norm();
    if !(n1 > DEGENERACY_EPS) {
        return Err(Error::DegenerateInput(format!(
            "first 6D column has norm {n1:.3e}"
        )));
    }
    let b1 = a1 / n1;
    let u = a2 - b1 * b1.dot(&a2);
    let n2 = u.norm();
    if !(n2 > DEGENERACY_EPS) {
        return Err(Error::DegenerateInput(format!(
            "second 6D column is parallel to the first (residual {n2:.3e})"
        )));
    }
    let b2 = u / n2;
    let b3 = b1.cross(&b2);
    Ok(RotationMatrix(Matrix3::from_columns(&[b1, b2, b3])))
}

/// Gram-Schmidt decode together with the derivative of the matrix with
/// respect to each of the six inputs (`d[b] = ∂R/∂v[b]`).
pub fn rot6d_to_matrix_with_jacobian(v: &Rot6D) -> Result<(RotationMatrix, [Matrix3<f64>; 6])> {
    let r = rot6d_to_matrix(v)?;
    let a1 = v.first();
    let a2 = v.second();
    let n1 = a1.norm();
    let b1: Vector3<f64> = r.0.column(0).into();
    let b2: Vector3<f64> = r.0.column(1).into();
    let u = a2 - b1 * b1.dot(&a2);
    let n2 = u.norm();
    let p1 = (Matrix3::identity() - b1 * b1.transpose()) / n1;
    let p2 = (Matrix3::identity() - b2 * b2.transpose()) / n2;
    let mut out = [Matrix3::zeros(); 6];
    for (b, d) in out.iter_mut().enumerate() {
        let mut da1 = Vector3::zeros();
        let mut da2 = Vector3::zeros();
        if b < 3 {
            da1[b] = 1.0;
        } else {
            da2[b - 3] = 1.0;
        }
        let db1 = p1 * da1;
        let du = da2 - b1 * (db1.dot(&a2) + b1.dot(&da2)) - db1 * b1.dot(&a2);
        let db2 = p2 * du;
        let db3 = db1.cross(&b2) + b1.cross(&db2);
        *d = Matrix3::from_columns(&[db1, db2, db3]);
    }
    Ok((r, out))
}

pub fn matrix_to_rot6d(r: &RotationMatrix) -> Rot6D {
    let m = &r.0;
    Rot6D([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ])
}

/// `R_aᵀ · R_b`: the rotation taking frame `a` to frame `b`, expressed in `a`.
pub fn relative_rotation(a: &RotationMatrix, b: &RotationMatrix) -> RotationMatrix {
    RotationMatrix(a.0.transpose() * b.0)
}

/// Geodesic distance on SO(3), in radians within `[0, π]`.
///
/// Equal to `arccos(clamp((tr(R_aᵀR_b) − 1)/2))`; evaluated through `atan2`
/// of the antisymmetric and trace parts, which stays accurate near 0 and π.
pub fn geodesic_angle(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let m = a.0.transpose() * b.0;
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let w = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let s = 0.5 * w.norm();
    s.atan2(c)
}

/// Nearest rotation in Frobenius norm (SVD projection).
pub fn project_to_rotation(m: &Matrix3<f64>) -> Result<RotationMatrix> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite matrix".into()));
    }
    let svd = m.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::DegenerateInput("SVD failed".into())),
    };
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Ok(RotationMatrix(u * d * vt))
}

/// Uniformly distributed rotation (normalized Gaussian quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < 1e-6 {
            continue;
        }
        let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        let m = Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        );
        // One Gram-Schmidt pass removes the rounding left by the quaternion formula.
        return rot6d_to_matrix(&matrix_to_rot6d(&RotationMatrix(m)))
            .expect("unit quaternion yields a non-degenerate matrix");
    }
}
