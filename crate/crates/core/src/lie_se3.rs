//! Rigid body motions SE(3), rotations SO(3) and orientations on S².
//!
//! Rotations are stored as 3×3 matrices. The Lie algebra coordinates follow
//! the usual split into three spatial coefficients (c¹, c², c³) and three
//! rotational coefficients (c⁴, c⁵, c⁶), the latter being the rotation vector
//! of the rotation part.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Vector3};

use crate::Error;

pub type Vec3 = Vector3<f64>;

/// Below this rotation angle the closed-form coefficients are replaced by
/// their Taylor series.
const SMALL_ANGLE: f64 = 1e-4;

/// Orientations closer than this to the z-axis are treated as poles and get
/// γ = 0.
const POLE_EPS: f64 = 1e-13;

/// Skew-symmetric matrix `Ω` with `Ω v = w × v`.
pub fn skew(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// A rotation matrix in SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps `m` after checking orthonormality and unit determinant.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, Error> {
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if !(ortho <= 1e-9 && (det - 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidParameter(format!(
                "not a rotation matrix (|MᵀM - I| = {ortho:e}, det = {det})"
            )));
        }
        Ok(Rotation(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Counter-clockwise rotation about the x-axis.
    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    /// Counter-clockwise rotation about the y-axis.
    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    /// Counter-clockwise rotation about the z-axis.
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// `R_z(gamma) R_y(beta) R_z(alpha)`.
    pub fn euler_zyz(gamma: f64, beta: f64, alpha: f64) -> Self {
        Rotation(Self::about_z(gamma).0 * Self::about_y(beta).0 * Self::about_z(alpha).0)
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn apply_inverse(&self, v: &Vec3) -> Vec3 {
        self.0.tr_mul(v)
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let w = vee_antisymmetric(&self.0);
        let cos = 0.5 * (self.0.trace() - 1.0);
        w.norm().atan2(cos)
    }

    /// Principal logarithm: the rotation vector `(c⁴, c⁵, c⁶)` with norm in `[0, π]`.
    ///
    /// Near angle π the axis is read off the symmetric part `(R + Rᵀ)/2`, which
    /// stays well conditioned; the sign comes from the antisymmetric part when
    /// that is resolvable, otherwise the first nonzero axis component is made
    /// positive.
    pub fn log(&self) -> Vec3 {
        let m = &self.0;
        let w = vee_antisymmetric(m);
        let sin = w.norm();
        let cos = (0.5 * (m.trace() - 1.0)).clamp(-1.0, 1.0);
        let angle = sin.atan2(cos);

        if angle < SMALL_ANGLE {
            // angle / sin(angle) = 1 + angle²/6 + 7 angle⁴/360
            let a2 = angle * angle;
            return w * (1.0 + a2 / 6.0 + 7.0 * a2 * a2 / 360.0);
        }
        if angle < 0.75 * PI {
            return w * (angle / sin);
        }

        // (R + Rᵀ)/2 - cos I = (1 - cos) a aᵀ
        let one_minus_cos = 1.0 - cos;
        let b = 0.5 * (m + m.transpose()) - Matrix3::identity() * cos;
        let k = (0..3)
            .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
            .unwrap_or(0);
        let ak = (b[(k, k)] / one_minus_cos).max(0.0).sqrt();
        let mut axis = Vec3::zeros();
        for i in 0..3 {
            axis[i] = if i == k {
                ak
            } else {
                b[(i, k)] / (one_minus_cos * ak)
            };
        }
        axis /= axis.norm();

        let dot = axis.dot(&w);
        if sin > 1e-14 && dot.abs() > 1e-15 {
            if dot < 0.0 {
                axis = -axis;
            }
        } else if let Some(first) = axis.iter().copied().find(|c| c.abs() > 1e-12) {
            if first < 0.0 {
                axis = -axis;
            }
        }
        axis * angle
    }

    /// Rodrigues' formula for the exponential of a rotation vector.
    pub fn exp(v: &Vec3) -> Rotation {
        let q2 = v.norm_squared();
        let q = q2.sqrt();
        let (a, b) = if q < SMALL_ANGLE {
            (
                1.0 - q2 / 6.0 + q2 * q2 / 120.0,
                0.5 - q2 / 24.0 + q2 * q2 / 720.0,
            )
        } else {
            (q.sin() / q, (1.0 - q.cos()) / q2)
        };
        let omega = skew(v);
        Rotation(Matrix3::identity() + omega * a + omega * omega * b)
    }
}

fn vee_antisymmetric(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// A unit vector on S².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Orientation(Vec3);

impl Orientation {
    /// Normalizes `v`; fails for zero or non-finite input.
    pub fn new(v: Vec3) -> Result<Self, Error> {
        let norm = v.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cannot normalize orientation {v:?}"
            )));
        }
        Ok(Orientation(v / norm))
    }

    pub(crate) fn from_unit_unchecked(v: Vec3) -> Self {
        Orientation(v)
    }

    pub fn e_z() -> Self {
        Orientation(Vec3::z())
    }

    pub fn vector(&self) -> &Vec3 {
        &self.0
    }

    pub fn negated(&self) -> Self {
        Orientation(-self.0)
    }

    /// Spherical angles `(β, γ)` with `R_z(γ) R_y(β) e_z = n`.
    ///
    /// `β ∈ [0, π]`, `γ ∈ (-π, π]`; at the poles γ is 0.
    pub fn beta_gamma(&self) -> (f64, f64) {
        let n = &self.0;
        let rho = n.x.hypot(n.y);
        let beta = rho.atan2(n.z);
        let gamma = if rho <= POLE_EPS { 0.0 } else { n.y.atan2(n.x) };
        (beta, gamma)
    }

    pub fn angle_to(&self, other: &Orientation) -> f64 {
        self.0.cross(&other.0).norm().atan2(self.0.dot(&other.0))
    }
}

/// Coefficients of the SE(3) logarithm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LieCoefficients {
    /// c¹, c², c³
    pub spatial: Vec3,
    /// c⁴, c⁵, c⁶ (a rotation vector)
    pub rotational: Vec3,
}

impl LieCoefficients {
    pub fn zero() -> Self {
        LieCoefficients {
            spatial: Vec3::zeros(),
            rotational: Vec3::zeros(),
        }
    }

    pub fn from_array(c: [f64; 6]) -> Self {
        LieCoefficients {
            spatial: Vec3::new(c[0], c[1], c[2]),
            rotational: Vec3::new(c[3], c[4], c[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (s, r) = (&self.spatial, &self.rotational);
        [s.x, s.y, s.z, r.x, r.y, r.z]
    }

    /// Norm of the rotational part.
    pub fn q(&self) -> f64 {
        self.rotational.norm()
    }

    pub fn exp(&self) -> RigidMotion {
        RigidMotion::exp(self)
    }
}

/// An element `(x, R)` of SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    pub translation: Vec3,
    pub rotation: Rotation,
}

impl fmt::Display for RigidMotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.translation;
        write!(f, "(x=[{}, {}, {}], R={:?})", t.x, t.y, t.z, self.rotation.0.as_slice())
    }
}

impl RigidMotion {
    pub fn new(translation: Vec3, rotation: Rotation) -> Self {
        RigidMotion {
            translation,
            rotation,
        }
    }

    pub fn identity() -> Self {
        RigidMotion::new(Vec3::zeros(), Rotation::identity())
    }

    /// `(x, R)(x', R') = (x + R x', R R')`
    pub fn compose(&self, other: &RigidMotion) -> RigidMotion {
        RigidMotion {
            translation: self.translation + self.rotation.apply(&other.translation),
            rotation: self.rotation.compose(&other.rotation),
        }
    }

    /// `(x, R)⁻¹ = (-Rᵀx, Rᵀ)`
    pub fn inverse(&self) -> RigidMotion {
        RigidMotion {
            translation: -self.rotation.apply_inverse(&self.translation),
            rotation: self.rotation.inverse(),
        }
    }

    /// Principal logarithm.
    ///
    /// `c⁽¹⁾ = (I - Ω/2 + q⁻²(1 - (q/2)cot(q/2)) Ω²) x` where Ω is the skew
    /// matrix of the rotation vector `c⁽²⁾` and `q = |c⁽²⁾|`.
    pub fn log(&self) -> LieCoefficients {
        let rotational = self.rotation.log();
        let q2 = rotational.norm_squared();
        let q = q2.sqrt();
        let coef = if q < SMALL_ANGLE {
            1.0 / 12.0 + q2 / 720.0
        } else {
            let half = 0.5 * q;
            (1.0 - half / half.tan()) / q2
        };
        let omega = skew(&rotational);
        let x = &self.translation;
        let ox = omega * x;
        let spatial = x - 0.5 * ox + coef * (omega * ox);
        LieCoefficients {
            spatial,
            rotational,
        }
    }

    /// Closed-form exponential, the inverse of [`RigidMotion::log`].
    pub fn exp(c: &LieCoefficients) -> RigidMotion {
        let v = &c.rotational;
        let q2 = v.norm_squared();
        let q = q2.sqrt();
        let (a, b) = if q < SMALL_ANGLE {
            (
                0.5 - q2 / 24.0 + q2 * q2 / 720.0,
                1.0 / 6.0 - q2 / 120.0 + q2 * q2 / 5040.0,
            )
        } else {
            ((1.0 - q.cos()) / q2, (q - q.sin()) / (q2 * q))
        };
        let omega = skew(v);
        let ou = omega * c.spatial;
        let translation = c.spatial + a * ou + b * (omega * ou);
        RigidMotion {
            translation,
            rotation: Rotation::exp(v),
        }
    }

    pub fn max_abs_diff(&self, other: &RigidMotion) -> f64 {
        let dt = (self.translation - other.translation).abs().max();
        let dr = (self.rotation.0 - other.rotation.0).abs().max();
        dt.max(dr)
    }
}
