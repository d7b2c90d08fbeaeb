//! Kinematic tree for a 16-joint human skeleton organised as five chains.
//!
//! The skeleton is a rooted tree: every joint except the root has exactly one
//! parent, and the non-root joints are partitioned into chains that are walked
//! outward during forward kinematics. Three chains (spine, both legs) hang
//! from the pelvis root; the two arm chains hang from the thorax, so their
//! world transform is the accumulated spine transform up to the thorax.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bones shorter than this are rejected as degenerate.
pub const MIN_BONE_LENGTH: f64 = 1e-6;

/// Maximum number of parent hops from any joint to the root.
pub const MAX_DEPTH: usize = 6;

/// Number of kinematic chains in a valid skeleton.
pub const CHAIN_COUNT: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum SkeletonError {
    #[error("SKELETON_MISMATCH: expected {expected} joints, got {got}")]
    JointCount { expected: usize, got: usize },
    #[error("SKELETON_MISMATCH: joint {joint} has out-of-range parent {parent}")]
    BadParent { joint: usize, parent: usize },
    #[error("SKELETON_MISMATCH: parent graph contains a cycle through joint {joint}")]
    Cycle { joint: usize },
    #[error("SKELETON_MISMATCH: expected {CHAIN_COUNT} chains, got {got}")]
    ChainCount { got: usize },
    #[error("SKELETON_MISMATCH: joint {joint} appears in {count} chains (must be exactly 1)")]
    ChainCoverage { joint: usize, count: usize },
    #[error("SKELETON_MISMATCH: chain {chain} is not parent-linked at joint {joint}")]
    ChainLink { chain: usize, joint: usize },
    #[error("SKELETON_MISMATCH: chain {chain} hangs from joint {origin} which is not resolved by an earlier chain")]
    ChainOrigin { chain: usize, origin: usize },
    #[error("SKELETON_MISMATCH: joint {joint} is {depth} steps from the root (max {MAX_DEPTH})")]
    TooDeep { joint: usize, depth: usize },
    #[error("DEGENERATE_BONE: bone ending at joint {joint} has length {length} (min {MIN_BONE_LENGTH})")]
    DegenerateBone { joint: usize, length: f64 },
    #[error("SKELETON_MISMATCH: root {root} is out of range or has a parent")]
    BadRoot { root: usize },
}

/// A named joint with an optional parent (only the root has none).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
}

/// A rooted kinematic tree with five outward-ordered chains.
///
/// `bone_lengths[j]` is the length in meters of the bone from `parent(j)` to
/// joint `j`; the root entry is 0. Chains list non-root joints ordered from
/// the chain origin outward, and a chain's origin (the parent of its first
/// joint) is either the root or a joint of an earlier chain, so forward
/// kinematics can process chains in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
    pub root: usize,
    pub chains: Vec<Vec<usize>>,
    pub bone_lengths: Vec<f64>,
}

impl Skeleton {
    /// The default 16-joint skeleton in the Human3.6M convention.
    ///
    /// Joint order (chain-contiguous): pelvis (root), then spine/thorax/head,
    /// left leg, right leg, left arm, right arm. Legs and spine hang from the
    /// pelvis; arms hang from the thorax. Default bone lengths are average
    /// adult proportions in meters:
    ///
    /// | bone | length |
    /// |---|---|
    /// | pelvis-spine, spine-thorax | 0.25 |
    /// | thorax-head | 0.30 |
    /// | pelvis-hip | 0.13 |
    /// | hip-knee, knee-ankle | 0.45 |
    /// | thorax-shoulder | 0.18 |
    /// | shoulder-elbow | 0.28 |
    /// | elbow-wrist | 0.25 |
    pub fn default_h36m16() -> Self {
        let j = |name: &str, parent: Option<usize>| Joint {
            name: name.to_string(),
            parent,
        };
        let skeleton = Skeleton {
            joints: vec![
                j("pelvis", None),
                j("spine", Some(0)),
                j("thorax", Some(1)),
                j("head", Some(2)),
                j("left_hip", Some(0)),
                j("left_knee", Some(4)),
                j("left_ankle", Some(5)),
                j("right_hip", Some(0)),
                j("right_knee", Some(7)),
                j("right_ankle", Some(8)),
                j("left_shoulder", Some(2)),
                j("left_elbow", Some(10)),
                j("left_wrist", Some(11)),
                j("right_shoulder", Some(2)),
                j("right_elbow", Some(13)),
                j("right_wrist", Some(14)),
            ],
            root: 0,
            chains: vec![
                vec![1, 2, 3],
                vec![4, 5, 6],
                vec![7, 8, 9],
                vec![10, 11, 12],
                vec![13, 14, 15],
            ],
            bone_lengths: vec![
                0.0, 0.25, 0.25, 0.30, 0.13, 0.45, 0.45, 0.13, 0.45, 0.45, 0.18, 0.28, 0.25, 0.18,
                0.28, 0.25,
            ],
        };
        debug_assert!(skeleton.validate().is_ok());
        skeleton
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn bone_count(&self) -> usize {
        self.joints.len() - 1
    }

    /// The joint each chain hangs from (parent of the chain's first joint).
    pub fn chain_origin(&self, chain: usize) -> usize {
        self.joints[self.chains[chain][0]].parent.expect("chain joints have parents")
    }

    /// Index of the joint with the given name, if present.
    pub fn joint_by_name(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Number of parent hops from `joint` to the root.
    pub fn depth(&self, joint: usize) -> usize {
        let mut depth = 0;
        let mut current = joint;
        while let Some(parent) = self.joints[current].parent {
            depth += 1;
            current = parent;
        }
        depth
    }

    /// Checks all structural invariants.
    ///
    /// Rejects out-of-range or cyclic parent links, wrong chain counts,
    /// chains that skip or reuse joints, chains whose origin is not resolved
    /// by the root or an earlier chain, joints deeper than [`MAX_DEPTH`], and
    /// bones shorter than [`MIN_BONE_LENGTH`].
    pub fn validate(&self) -> Result<(), SkeletonError> {
        let n = self.joints.len();
        if self.bone_lengths.len() != n {
            return Err(SkeletonError::JointCount {
                expected: n,
                got: self.bone_lengths.len(),
            });
        }
        if self.root >= n || self.joints[self.root].parent.is_some() {
            return Err(SkeletonError::BadRoot { root: self.root });
        }
        for (i, joint) in self.joints.iter().enumerate() {
            match joint.parent {
                None if i != self.root => {
                    return Err(SkeletonError::ChainLink { chain: 0, joint: i })
                }
                Some(p) if p >= n => return Err(SkeletonError::BadParent { joint: i, parent: p }),
                _ => {}
            }
        }
        // Walking more than n parents without reaching the root means a cycle.
        for start in 0..n {
            let mut current = start;
            let mut steps = 0;
            while let Some(parent) = self.joints[current].parent {
                current = parent;
                steps += 1;
                if steps > n {
                    return Err(SkeletonError::Cycle { joint: start });
                }
            }
            if steps > MAX_DEPTH {
                return Err(SkeletonError::TooDeep {
                    joint: start,
                    depth: steps,
                });
            }
        }
        if self.chains.len() != CHAIN_COUNT {
            return Err(SkeletonError::ChainCount {
                got: self.chains.len(),
            });
        }
        let mut seen = vec![0usize; n];
        for (c, chain) in self.chains.iter().enumerate() {
            let mut prev: Option<usize> = None;
            for &joint in chain {
                if joint >= n {
                    return Err(SkeletonError::BadParent {
                        joint,
                        parent: joint,
                    });
                }
                seen[joint] += 1;
                let expected_parent = match prev {
                    Some(p) => p,
                    None => {
                        let origin = self.joints[joint].parent.ok_or(SkeletonError::ChainLink {
                            chain: c,
                            joint,
                        })?;
                        let resolved = origin == self.root
                            || self.chains[..c].iter().any(|earlier| earlier.contains(&origin));
                        if !resolved {
                            return Err(SkeletonError::ChainOrigin { chain: c, origin });
                        }
                        origin
                    }
                };
                if self.joints[joint].parent != Some(expected_parent) {
                    return Err(SkeletonError::ChainLink { chain: c, joint });
                }
                prev = Some(joint);
            }
        }
        seen[self.root] += 1;
        for (joint, &count) in seen.iter().enumerate() {
            if count != 1 {
                return Err(SkeletonError::ChainCoverage { joint, count });
            }
        }
        for (joint, &length) in self.bone_lengths.iter().enumerate() {
            if joint != self.root && length <= MIN_BONE_LENGTH {
                return Err(SkeletonError::DegenerateBone { joint, length });
            }
        }
        Ok(())
    }

    /// Measures bone lengths from explicit joint positions (meters).
    ///
    /// `positions[j]` is the world position of joint `j`. Returns one length
    /// per joint (root entry 0). Fails with `DegenerateBone` if any measured
    /// bone is shorter than [`MIN_BONE_LENGTH`].
    pub fn bone_lengths_from(&self, positions: &[[f64; 3]]) -> Result<Vec<f64>, SkeletonError> {
        if positions.len() != self.joints.len() {
            return Err(SkeletonError::JointCount {
                expected: self.joints.len(),
                got: positions.len(),
            });
        }
        let mut lengths = vec![0.0; self.joints.len()];
        for (j, joint) in self.joints.iter().enumerate() {
            if let Some(p) = joint.parent {
                let d: f64 = (0..3)
                    .map(|k| (positions[j][k] - positions[p][k]).powi(2))
                    .sum();
                let length = d.sqrt();
                if length <= MIN_BONE_LENGTH {
                    return Err(SkeletonError::DegenerateBone { joint: j, length });
                }
                lengths[j] = length;
            }
        }
        Ok(lengths)
    }

    /// Serializes to a standalone JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton serializes")
    }

    /// Parses and validates a skeleton from JSON.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let skeleton: Skeleton = serde_json::from_str(text).map_err(|e| e.to_string())?;
        skeleton.validate().map_err(|e| e.to_string())?;
        Ok(skeleton)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_skeleton_is_valid() {
        let s = Skeleton::default_h36m16();
        assert_eq!(s.joint_count(), 16);
        assert_eq!(s.bone_count(), 15);
        assert_eq!(s.chains.len(), 5);
        s.validate().unwrap();
    }

    #[test]
    fn default_chain_origins() {
        let s = Skeleton::default_h36m16();
        let thorax = s.joint_by_name("thorax").unwrap();
        assert_eq!(s.chain_origin(0), s.root);
        assert_eq!(s.chain_origin(1), s.root);
        assert_eq!(s.chain_origin(2), s.root);
        assert_eq!(s.chain_origin(3), thorax);
        assert_eq!(s.chain_origin(4), thorax);
    }

    #[test]
    fn every_joint_within_six_steps_of_root() {
        let s = Skeleton::default_h36m16();
        for j in 0..s.joint_count() {
            assert!(s.depth(j) <= MAX_DEPTH, "joint {} too deep", j);
        }
        // Deepest joints are the wrists: thorax chain (2) + arm chain (3).
        assert_eq!(s.depth(s.joint_by_name("left_wrist").unwrap()), 5);
    }

    #[test]
    fn validate_rejects_cycle() {
        let mut s = Skeleton::default_h36m16();
        s.joints[1].parent = Some(3); // spine's parent becomes head: 1->3->2->1
        let err = s.validate().unwrap_err();
        assert!(matches!(err, SkeletonError::Cycle { .. }), "{err}");
    }

    #[test]
    fn validate_rejects_wrong_chain_count() {
        let mut s = Skeleton::default_h36m16();
        let arm = s.chains.pop().unwrap();
        assert!(matches!(
            s.validate().unwrap_err(),
            SkeletonError::ChainCount { got: 4 }
        ));
        s.chains.push(arm.clone());
        s.chains.push(arm);
        assert!(matches!(
            s.validate().unwrap_err(),
            SkeletonError::ChainCount { got: 6 }
        ));
    }

    #[test]
    fn validate_rejects_duplicate_joint_in_chains() {
        let mut s = Skeleton::default_h36m16();
        s.chains[1] = vec![1, 2, 3]; // duplicates the spine chain, orphans the left leg
        let err = s.validate().unwrap_err();
        assert!(matches!(err, SkeletonError::ChainCoverage { .. }), "{err}");
    }

    #[test]
    fn validate_rejects_degenerate_bone() {
        let mut s = Skeleton::default_h36m16();
        s.bone_lengths[5] = 0.0;
        assert!(matches!(
            s.validate().unwrap_err(),
            SkeletonError::DegenerateBone { joint: 5, .. }
        ));
    }

    #[test]
    fn validate_rejects_unresolved_chain_origin() {
        let mut s = Skeleton::default_h36m16();
        // Arms before the spine chain: their thorax origin is not yet resolved.
        s.chains.swap(0, 3);
        let err = s.validate().unwrap_err();
        assert!(matches!(err, SkeletonError::ChainOrigin { .. }), "{err}");
    }

    #[test]
    fn bone_lengths_from_recovers_straight_pose() {
        let s = Skeleton::default_h36m16();
        // Lay every chain along +x from its origin so lengths add up.
        let mut pos = vec![[0.0; 3]; 16];
        for c in 0..s.chains.len() {
            let chain = s.chains[c].clone();
            let mut base = pos[s.chain_origin(c)];
            for &j in &chain {
                base = [base[0] + s.bone_lengths[j], base[1], base[2]];
                pos[j] = base;
            }
        }
        let lengths = s.bone_lengths_from(&pos).unwrap();
        for j in 0..16 {
            assert!((lengths[j] - s.bone_lengths[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn bone_lengths_from_rejects_coincident_joints() {
        let s = Skeleton::default_h36m16();
        let pos = vec![[0.0; 3]; 16];
        assert!(matches!(
            s.bone_lengths_from(&pos).unwrap_err(),
            SkeletonError::DegenerateBone { .. }
        ));
    }

    #[test]
    fn json_round_trip() {
        let s = Skeleton::default_h36m16();
        let text = s.to_json();
        let back = Skeleton::from_json(&text).unwrap();
        assert_eq!(back, s);
        // Field names are part of the file format.
        for key in ["\"joints\"", "\"name\"", "\"parent\"", "\"chains\"", "\"root\"", "\"bone_lengths\""] {
            assert!(text.contains(key), "missing {key}");
        }
    }
}
