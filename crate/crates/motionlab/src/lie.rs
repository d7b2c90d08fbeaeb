//! Twists in se(3) and rigid transforms in SE(3).
//!
//! A twist `xi = (omega, nu)` maps to a rigid transform through the
//! exponential map
//!
//! ```text
//! exp(xi) = (R, t),  R = I + a [omega]x + b [omega]x^2,  t = V(omega) nu,
//! a = sin(theta)/theta,  b = (1 - cos(theta))/theta^2,  theta = |omega|,
//! V = I + b [omega]x + d [omega]x^2,  d = (theta - sin(theta))/theta^3.
//! ```
//!
//! All trigonometric coefficient functions switch to truncated Taylor series
//! below [`SMALL_ANGLE`]. The closed forms subtract nearly equal quantities
//! (`1 - cos(theta)`, `theta - sin(theta)`, and worse for the derivative
//! coefficients), so evaluating them at small angles loses most significant
//! digits; at the `1e-2` crossover the series truncation error (first
//! dropped term is O(theta^8)) is below 1e-19 while the worst closed-form
//! cancellation still retains ~10 significant digits. Both branches are
//! full-precision at the switch point.
//!
//! The logarithm is single-valued for rotation angles below `pi`. Within
//! [`NEAR_PI_MARGIN`] of `pi` the antisymmetric part of `R` no longer
//! determines the axis reliably and [`log_map`] refuses; callers that accept
//! ~1e-6 absolute error can use [`log_map_with_fallback`], which recovers the
//! axis from the symmetric part.

use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

/// Angle below which coefficient functions use Taylor series.
pub const SMALL_ANGLE: f64 = 1e-2;

/// Crossover for the derivative coefficients, whose closed forms cancel
/// twice (their numerators shrink like `theta^3`..`theta^5`); the series
/// through `theta^6` and the closed forms are both accurate to ~1e-11
/// relative at this angle.
pub const DERIV_SMALL_ANGLE: f64 = 0.3;

/// Margin around `pi` inside which `log_map` reports `NearPiSingularity`.
pub const NEAR_PI_MARGIN: f64 = 1e-6;

/// Maximum orthogonality / determinant residual accepted as a rotation.
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LieError {
    #[error("NONFINITE_INPUT: non-finite value in {context}")]
    NonFiniteInput { context: &'static str },
    #[error(
        "NEAR_PI_SINGULARITY: rotation angle {angle} is within {NEAR_PI_MARGIN} of pi; \
         use log_map_with_fallback for ~1e-6 accuracy"
    )]
    NearPiSingularity { angle: f64 },
    #[error("NOT_A_ROTATION: orthogonality/determinant residual {residual:e} exceeds {ROTATION_TOL:e}")]
    NotARotation { residual: f64 },
}

/// An element of se(3): angular part `omega` (axis times angle, radians) and
/// linear part `nu`.
///
/// The canonical form produced by [`canonicalize`] keeps `|omega| <= pi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub nu: Vector3<f64>,
}

impl Twist {
    pub fn new(omega: [f64; 3], nu: [f64; 3]) -> Self {
        Twist {
            omega: Vector3::from(omega),
            nu: Vector3::from(nu),
        }
    }

    pub fn zero() -> Self {
        Twist {
            omega: Vector3::zeros(),
            nu: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.omega.iter().chain(self.nu.iter()).all(|v| v.is_finite())
    }

    /// Rotation angle `|omega|` in radians.
    pub fn angle(&self) -> f64 {
        self.omega.norm()
    }

    /// The six components in `(omega, nu)` order.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.omega.x, self.omega.y, self.omega.z, self.nu.x, self.nu.y, self.nu.z,
        ]
    }

    pub fn from_array(v: &[f64; 6]) -> Self {
        Twist::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }
}

/// A rigid transform (R, t) acting on points as `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Composition: `(self * other)(p) = self(other(p))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut h = Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        h
    }

    /// Largest deviation of the rotation block from orthonormality.
    pub fn rotation_residual(&self) -> f64 {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = (r.determinant() - 1.0).abs();
        ortho.max(det)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite())
    }
}

/// Skew-symmetric matrix `[v]x` with `[v]x u = v x u`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] applied to the antisymmetric part of `m`.
fn vee_antisym(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Trigonometric coefficients of the SO(3)/SE(3) exponential at angle `theta`:
/// `a = sin/theta`, `b = (1-cos)/theta^2`, `d = (theta-sin)/theta^3`.
pub(crate) fn exp_coeffs(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < SMALL_ANGLE {
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0 - t6 / 5040.0,
            0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362880.0,
        )
    } else {
        (
            theta.sin() / theta,
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    }
}

/// Radial derivatives of the exponential coefficients, divided by `theta`:
/// `a1 = a'(theta)/theta`, `b1 = b'/theta`, `d1 = d'/theta`. Dividing by
/// `theta` keeps them finite at zero, which is the form needed for
/// `dR/d omega_k = a1 omega_k [omega]x + ...`.
pub(crate) fn exp_deriv_coeffs(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < DERIV_SMALL_ANGLE {
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        (
            -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0 + t6 / 45360.0,
            -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0 + t6 / 453600.0,
            -1.0 / 60.0 + t2 / 1260.0 - t4 / 60480.0 + t6 / 4989600.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t3 = t2 * theta;
        (
            (theta * c - s) / t3,
            (theta * s - 2.0 * (1.0 - c)) / (t3 * theta),
            (theta * (1.0 - c) - 3.0 * (theta - s)) / (t3 * t2),
        )
    }
}

/// Rodrigues rotation `R = I + a [omega]x + b [omega]x^2`.
pub fn rodrigues(omega: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b, _) = exp_coeffs(omega.norm());
    let w = hat(omega);
    Matrix3::identity() + w * a + w * w * b
}

/// Left Jacobian `V = I + b [omega]x + d [omega]x^2` of SO(3).
pub fn left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let (_, b, d) = exp_coeffs(omega.norm());
    let w = hat(omega);
    Matrix3::identity() + w * b + w * w * d
}

/// Inverse left Jacobian `V^-1 = I - [omega]x/2 + e [omega]x^2` with
/// `e = (1 - a/(2b))/theta^2`.
pub fn left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let t2 = theta * theta;
    let e = if theta < SMALL_ANGLE {
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2 * t2 * t2 / 1209600.0
    } else {
        let (a, b, _) = exp_coeffs(theta);
        (1.0 - a / (2.0 * b)) / t2
    };
    let w = hat(omega);
    Matrix3::identity() - w * 0.5 + w * w * e
}

/// Elementwise partial derivatives `dR/d omega_k` of the Rodrigues rotation.
pub(crate) fn rodrigues_jacobian(omega: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta = omega.norm();
    let (a, b, _) = exp_coeffs(theta);
    let (a1, b1, _) = exp_deriv_coeffs(theta);
    let w = hat(omega);
    let w2 = w * w;
    std::array::from_fn(|k| {
        let mut e = Vector3::zeros();
        e[k] = 1.0;
        let ek = hat(&e);
        w * (a1 * omega[k]) + ek * a + w2 * (b1 * omega[k]) + (ek * w + w * ek) * b
    })
}

/// Elementwise partial derivatives `dV/d omega_k` of the left Jacobian.
pub(crate) fn left_jacobian_jacobian(omega: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta = omega.norm();
    let (_, b, d) = exp_coeffs(theta);
    let (_, b1, d1) = exp_deriv_coeffs(theta);
    let w = hat(omega);
    let w2 = w * w;
    std::array::from_fn(|k| {
        let mut e = Vector3::zeros();
        e[k] = 1.0;
        let ek = hat(&e);
        w * (b1 * omega[k]) + ek * b + w2 * (d1 * omega[k]) + (ek * w + w * ek) * d
    })
}

/// Exponential map from se(3) to SE(3).
pub fn exp_map(twist: &Twist) -> Result<RigidTransform, LieError> {
    if !twist.is_finite() {
        return Err(LieError::NonFiniteInput { context: "exp_map twist" });
    }
    Ok(RigidTransform {
        rotation: rodrigues(&twist.omega),
        translation: left_jacobian(&twist.omega) * twist.nu,
    })
}

fn check_rotation(g: &RigidTransform) -> Result<(), LieError> {
    if !g.is_finite() {
        return Err(LieError::NonFiniteInput { context: "log_map transform" });
    }
    let residual = g.rotation_residual();
    if residual > ROTATION_TOL {
        return Err(LieError::NotARotation { residual });
    }
    Ok(())
}

/// Logarithm map from SE(3) to se(3), single-valued for angles in `[0, pi)`.
///
/// The angle is recovered as `atan2(|antisym(R)|, (tr R - 1)/2)`, which stays
/// well-conditioned at both ends of the range. Errors with
/// `NearPiSingularity` once the angle is within [`NEAR_PI_MARGIN`] of `pi`,
/// where the antisymmetric part degenerates.
pub fn log_map(g: &RigidTransform) -> Result<Twist, LieError> {
    check_rotation(g)?;
    let anti = vee_antisym(&g.rotation);
    let s = anti.norm().min(1.0);
    let c = ((g.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if theta > std::f64::consts::PI - NEAR_PI_MARGIN {
        return Err(LieError::NearPiSingularity { angle: theta });
    }
    // omega = theta/sin(theta) * anti; the factor expands to 1 + theta^2/6 + ...
    let factor = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0 + 31.0 * t2 * t2 * t2 / 15120.0
    } else {
        theta / theta.sin()
    };
    let omega = anti * factor;
    let nu = left_jacobian_inv(&omega) * g.translation;
    Ok(Twist { omega, nu })
}

/// Logarithm map that falls back to the symmetric-part branch near `pi`.
///
/// Away from the singularity this is identical to [`log_map`]. Within the
/// margin it recovers the axis from `R + R^T = 2 cos(theta) I +
/// 2(1 - cos(theta)) n n^T`, accurate to about 1e-6. The axis sign is taken
/// from the antisymmetric part when it is resolvable, otherwise the
/// component with the largest magnitude (smallest index on ties) is made
/// positive.
pub fn log_map_with_fallback(g: &RigidTransform) -> Result<Twist, LieError> {
    match log_map(g) {
        Err(LieError::NearPiSingularity { .. }) => {}
        other => return other,
    }
    let c = ((g.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = c.acos();
    // n n^T from the symmetric part; diagonal gives |n_i|, off-diagonals fix
    // relative signs through the row of the largest diagonal entry.
    let sym = (g.rotation + g.rotation.transpose()) * 0.5;
    let outer = (sym - Matrix3::identity() * c) / (1.0 - c);
    let mut i = 0;
    for k in 1..3 {
        if outer[(k, k)] > outer[(i, i)] {
            i = k;
        }
    }
    let mut n = Vector3::new(outer[(i, 0)], outer[(i, 1)], outer[(i, 2)]);
    n[i] = outer[(i, i)].max(0.0).sqrt();
    for k in 0..3 {
        if k != i {
            n[k] /= n[i];
        }
    }
    n.normalize_mut();
    let anti = vee_antisym(&g.rotation);
    if anti.norm() > 1e-9 {
        if n.dot(&anti) < 0.0 {
            n = -n;
        }
    } else {
        // Largest-magnitude component positive; smallest index wins ties.
        let mut j = 0;
        for k in 1..3 {
            if n[k].abs() > n[j].abs() + 1e-12 {
                j = k;
            }
        }
        if n[j] < 0.0 {
            n = -n;
        }
    }
    let omega = n * theta;
    let nu = left_jacobian_inv(&omega) * g.translation;
    Ok(Twist { omega, nu })
}

/// Rewraps `omega` into `|omega| <= pi` while preserving the transform:
/// `exp_map(canonicalize(xi)) == exp_map(xi)`.
///
/// Reducing the angle changes the left Jacobian, so `nu` is remapped as
/// `nu' = V(omega')^-1 V(omega) nu` to keep the translation fixed.
pub fn canonicalize(twist: &Twist) -> Result<Twist, LieError> {
    if !twist.is_finite() {
        return Err(LieError::NonFiniteInput { context: "canonicalize twist" });
    }
    let theta = twist.angle();
    if theta <= std::f64::consts::PI {
        return Ok(*twist);
    }
    let axis = twist.omega / theta;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut reduced = theta % two_pi;
    let mut flipped_axis = axis;
    if reduced > std::f64::consts::PI {
        reduced = two_pi - reduced;
        flipped_axis = -axis;
    }
    let omega = flipped_axis * reduced;
    let translation = left_jacobian(&twist.omega) * twist.nu;
    let nu = left_jacobian_inv(&omega) * translation;
    Ok(Twist { omega, nu })
}
