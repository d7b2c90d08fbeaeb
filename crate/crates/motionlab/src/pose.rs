//! Pose representations and differentiable forward kinematics.
//!
//! A pose is held in two coupled forms: [`CoordPose`] stores root-relative
//! 3D joint coordinates, [`LiePose`] stores one twist per joint. Forward
//! kinematics walks each chain outward, composing the exponentials of the
//! bone twists; a joint's position is the translation of the accumulated
//! transform:
//!
//! ```text
//! pos(j_i) = translation( prod_{k <= i} exp(xi_k) )   (chains from the root)
//! ```
//!
//! Chains that hang from a non-root joint (the arms, from the thorax) are
//! premultiplied by the accumulated transform of their origin joint.
//!
//! [`fk_pullback`] implements the exact reverse-mode gradient of this map,
//! built from the closed-form partial derivatives of the Rodrigues formula
//! and the left Jacobian, so forward kinematics can sit inside a network as
//! a differentiable operation.

use crate::lie::{
    self, left_jacobian, left_jacobian_inv, left_jacobian_jacobian, rodrigues_jacobian,
    RigidTransform, Twist,
};
use crate::skeleton::Skeleton;
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Values per joint in the flattened coordinate layout.
pub const COORD_DIMS: usize = 3;

/// Values per joint in the flattened twist layout (`omega` then `nu`).
pub const LIE_DIMS: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum PoseError {
    #[error("SKELETON_MISMATCH: pose has {got} joints, skeleton has {expected}")]
    SkeletonMismatch { expected: usize, got: usize },
    #[error("NONFINITE_INPUT: non-finite value in {context}")]
    NonFiniteInput { context: &'static str },
    #[error("DEGENERATE_BONE: bone ending at joint {joint} has length {length:e}")]
    DegenerateBone { joint: usize, length: f64 },
}

/// Root-relative 3D joint coordinates in meters.
///
/// The root entry is exactly `(0, 0, 0)`; constructors recenter to enforce
/// this.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordPose {
    joints: Vec<[f64; 3]>,
}

impl CoordPose {
    /// Builds a root-relative pose by subtracting the root position.
    pub fn root_relative(mut joints: Vec<[f64; 3]>, root: usize) -> Self {
        let origin = joints[root];
        for p in joints.iter_mut() {
            for k in 0..3 {
                p[k] -= origin[k];
            }
        }
        joints[root] = [0.0; 3];
        CoordPose { joints }
    }

    /// Wraps already root-relative coordinates, forcing the root slot to
    /// exact zero.
    pub fn from_joints(joints: Vec<[f64; 3]>, root: usize) -> Self {
        Self::root_relative(joints, root)
    }

    pub fn joints(&self) -> &[[f64; 3]] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn position(&self, joint: usize) -> Vector3<f64> {
        Vector3::from(self.joints[joint])
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }

    /// Flattens to `[x, y, z]` per joint in joint order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flatten().copied().collect()
    }

    pub fn from_flat(flat: &[f64], root: usize) -> Self {
        let joints = flat
            .chunks_exact(COORD_DIMS)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Self::root_relative(joints, root)
    }
}

/// One twist per joint; the root twist is the zero twist.
#[derive(Debug, Clone, PartialEq)]
pub struct LiePose {
    twists: Vec<Twist>,
}

impl LiePose {
    /// Wraps per-joint twists, forcing the root slot to the zero twist.
    pub fn from_twists(mut twists: Vec<Twist>, root: usize) -> Self {
        twists[root] = Twist::zero();
        LiePose { twists }
    }

    pub fn twists(&self) -> &[Twist] {
        &self.twists
    }

    pub fn twist(&self, joint: usize) -> &Twist {
        &self.twists[joint]
    }

    pub fn joint_count(&self) -> usize {
        self.twists.len()
    }

    pub fn is_finite(&self) -> bool {
        self.twists.iter().all(|t| t.is_finite())
    }

    /// Rewraps every twist into the canonical `|omega| <= pi` form.
    pub fn canonicalized(&self) -> Result<LiePose, lie::LieError> {
        let twists = self
            .twists
            .iter()
            .map(lie::canonicalize)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LiePose { twists })
    }

    /// Flattens to `[omega, nu]` (6 values) per joint in joint order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.twists.iter().flat_map(|t| t.to_array()).collect()
    }

    pub fn from_flat(flat: &[f64], root: usize) -> Self {
        let twists = flat
            .chunks_exact(LIE_DIMS)
            .map(|c| Twist::new([c[0], c[1], c[2]], [c[3], c[4], c[5]]))
            .collect();
        Self::from_twists(twists, root)
    }
}

fn check_joint_count(skeleton: &Skeleton, got: usize) -> Result<(), PoseError> {
    if got != skeleton.joint_count() {
        return Err(PoseError::SkeletonMismatch {
            expected: skeleton.joint_count(),
            got,
        });
    }
    Ok(())
}

/// Accumulated transforms for every joint (root = identity), chain by chain.
fn accumulate(skeleton: &Skeleton, twists: &[Twist]) -> Vec<RigidTransform> {
    let mut acc = vec![RigidTransform::identity(); skeleton.joint_count()];
    for chain in &skeleton.chains {
        for &j in chain {
            let p = skeleton.joints[j].parent.expect("validated chain joint");
            let e = RigidTransform {
                rotation: lie::rodrigues(&twists[j].omega),
                translation: left_jacobian(&twists[j].omega) * twists[j].nu,
            };
            acc[j] = acc[p].compose(&e);
        }
    }
    acc
}

/// Maps a Lie pose to root-relative joint coordinates.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &LiePose) -> Result<CoordPose, PoseError> {
    check_joint_count(skeleton, pose.joint_count())?;
    if !pose.is_finite() {
        return Err(PoseError::NonFiniteInput {
            context: "forward_kinematics pose",
        });
    }
    let acc = accumulate(skeleton, pose.twists());
    let joints = acc
        .iter()
        .map(|g| [g.translation.x, g.translation.y, g.translation.z])
        .collect();
    // Accumulated translations are already root-relative: the root chain
    // starts at the identity.
    Ok(CoordPose { joints })
}

/// Forward kinematics on a flat twist buffer (6 values per joint), producing
/// a flat coordinate buffer (3 values per joint). Used by the autodiff op.
pub fn fk_flat(skeleton: &Skeleton, flat: &[f64]) -> Vec<f64> {
    debug_assert_eq!(flat.len(), skeleton.joint_count() * LIE_DIMS);
    let twists: Vec<Twist> = flat
        .chunks_exact(LIE_DIMS)
        .map(|c| Twist::new([c[0], c[1], c[2]], [c[3], c[4], c[5]]))
        .collect();
    let mut twists = twists;
    twists[skeleton.root] = Twist::zero();
    let acc = accumulate(skeleton, &twists);
    let mut out = Vec::with_capacity(skeleton.joint_count() * COORD_DIMS);
    for g in &acc {
        out.extend_from_slice(&[g.translation.x, g.translation.y, g.translation.z]);
    }
    out
}

/// Reverse-mode gradient of [`fk_flat`].
///
/// `upstream` holds the gradient of a scalar loss with respect to each output
/// coordinate (3 per joint); the return value is the gradient with respect to
/// each twist component (6 per joint, root slots zero).
///
/// Joints are visited in reverse chain order, so every joint's adjoint is
/// complete before it is propagated to its parent. For the composition
/// `G_j = A * E` the adjoints are
///
/// ```text
/// A_R += G_R E_R^T + g_t e_t^T,   A_t += g_t,
/// E_R  = A_R^T G_R,               e_t  = A_R^T g_t,
/// ```
///
/// and the twist receives `nu_bar = V^T e_t` and
/// `omega_bar_k = <E_R, dR/dw_k> + e_t . (dV/dw_k) nu`.
pub fn fk_pullback(skeleton: &Skeleton, flat: &[f64], upstream: &[f64]) -> Vec<f64> {
    let n = skeleton.joint_count();
    debug_assert_eq!(flat.len(), n * LIE_DIMS);
    debug_assert_eq!(upstream.len(), n * COORD_DIMS);
    let mut twists: Vec<Twist> = flat
        .chunks_exact(LIE_DIMS)
        .map(|c| Twist::new([c[0], c[1], c[2]], [c[3], c[4], c[5]]))
        .collect();
    twists[skeleton.root] = Twist::zero();
    let acc = accumulate(skeleton, &twists);

    // Adjoint of each joint's accumulated transform.
    let mut rot_bar = vec![Matrix3::<f64>::zeros(); n];
    let mut t_bar: Vec<Vector3<f64>> = (0..n)
        .map(|j| {
            Vector3::new(
                upstream[j * COORD_DIMS],
                upstream[j * COORD_DIMS + 1],
                upstream[j * COORD_DIMS + 2],
            )
        })
        .collect();
    let mut grad = vec![0.0; n * LIE_DIMS];

    let order: Vec<usize> = skeleton.chains.iter().flatten().copied().collect();
    for &j in order.iter().rev() {
        let p = skeleton.joints[j].parent.expect("validated chain joint");
        let parent_rot = if p == skeleton.root {
            Matrix3::identity()
        } else {
            acc[p].rotation
        };
        let omega = twists[j].omega;
        let nu = twists[j].nu;
        let e_rot = lie::rodrigues(&omega);
        let v = left_jacobian(&omega);
        let e_t = v * nu;

        let g_rot_bar = rot_bar[j];
        let g_t_bar = t_bar[j];

        // Local adjoints of exp(xi_j).
        let e_rot_bar = parent_rot.transpose() * g_rot_bar;
        let e_t_bar = parent_rot.transpose() * g_t_bar;

        if p != skeleton.root {
            rot_bar[p] += g_rot_bar * e_rot.transpose() + g_t_bar * e_t.transpose();
            t_bar[p] += g_t_bar;
        }

        let dr = rodrigues_jacobian(&omega);
        let dv = left_jacobian_jacobian(&omega);
        for k in 0..3 {
            let frob = e_rot_bar.component_mul(&dr[k]).sum();
            grad[j * LIE_DIMS + k] = frob + e_t_bar.dot(&(dv[k] * nu));
        }
        let nu_bar = v.transpose() * e_t_bar;
        grad[j * LIE_DIMS + 3] = nu_bar.x;
        grad[j * LIE_DIMS + 4] = nu_bar.y;
        grad[j * LIE_DIMS + 5] = nu_bar.z;
    }
    grad
}

/// Converts root-relative coordinates to a kinematically exact Lie pose.
///
/// Each bone twist uses the minimal rotation taking the local bone axis
/// `x_hat` to the observed bone direction, and `nu = V(omega)^-1 l` where `l`
/// is the bone vector in the parent's accumulated frame, so forward
/// kinematics reproduces the input coordinates to machine precision. Bones
/// antiparallel to the local axis have no unique minimal rotation; the
/// half-turn is taken about the smallest-index coordinate axis orthogonal to
/// `x_hat` (the y axis), which keeps the choice deterministic.
pub fn coord_to_lie(skeleton: &Skeleton, pose: &CoordPose) -> Result<LiePose, PoseError> {
    check_joint_count(skeleton, pose.joint_count())?;
    if !pose.is_finite() {
        return Err(PoseError::NonFiniteInput {
            context: "coord_to_lie pose",
        });
    }
    let n = skeleton.joint_count();
    let mut twists = vec![Twist::zero(); n];
    let mut acc = vec![RigidTransform::identity(); n];
    let x_hat = Vector3::new(1.0, 0.0, 0.0);
    for chain in &skeleton.chains {
        for &j in chain {
            let p = skeleton.joints[j].parent.expect("validated chain joint");
            let bone_world = pose.position(j) - pose.position(p);
            let length = bone_world.norm();
            if length <= crate::skeleton::MIN_BONE_LENGTH {
                return Err(PoseError::DegenerateBone { joint: j, length });
            }
            let local = acc[p].rotation.transpose() * bone_world;
            let dir = local / length;
            let cross = x_hat.cross(&dir);
            let sin = cross.norm();
            let cos = x_hat.dot(&dir);
            let omega = if sin < 1e-12 {
                if cos > 0.0 {
                    Vector3::zeros()
                } else {
                    // Antiparallel: half turn about the y axis.
                    Vector3::new(0.0, std::f64::consts::PI, 0.0)
                }
            } else {
                cross / sin * sin.atan2(cos)
            };
            let nu = left_jacobian_inv(&omega) * local;
            twists[j] = Twist { omega, nu };
            let e = RigidTransform {
                rotation: lie::rodrigues(&omega),
                translation: local,
            };
            acc[j] = acc[p].compose(&e);
        }
    }
    Ok(LiePose { twists })
}

/// Consistency gap `|coord - FK(lie)|_2` between the two representations of
/// one pose, flattened over all joints.
pub fn consistency_gap(
    skeleton: &Skeleton,
    coord: &CoordPose,
    lie_pose: &LiePose,
) -> Result<f64, PoseError> {
    let fk = forward_kinematics(skeleton, lie_pose)?;
    check_joint_count(skeleton, coord.joint_count())?;
    let gap: f64 = fk
        .to_flat()
        .iter()
        .zip(coord.to_flat().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(gap.sqrt())
}
