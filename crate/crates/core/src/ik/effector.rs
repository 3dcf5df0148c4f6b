use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{is_rotation, Mat3, Vec3};
use crate::skeleton::{FkState, ShapeParams, SkeletonTemplate, CANONICAL_JOINT_COUNT, SHAPE_DIMS};

/// Default upper bound on effectors per training example.
pub const DEFAULT_MAX_EFFECTORS: usize = 16;

/// Width of one encoded effector before projection.
pub const TOKEN_DIMS: usize = 3 + CANONICAL_JOINT_COUNT + PAYLOAD_SLOTS + 1 + CONDITION_DIMS;
/// `[betas, gender one-hot, scale]`
pub const CONDITION_DIMS: usize = SHAPE_DIMS + 3 + 1;

const PAYLOAD_SLOTS: usize = 9;
const JOINT_OFFSET: usize = 3;
pub(crate) const PAYLOAD_OFFSET: usize = JOINT_OFFSET + CANONICAL_JOINT_COUNT;
const TOLERANCE_OFFSET: usize = PAYLOAD_OFFSET + PAYLOAD_SLOTS;
pub(crate) const CONDITION_OFFSET: usize = TOLERANCE_OFFSET + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectorKind {
    Position,
    Rotation,
    #[serde(rename = "lookat")]
    LookAt,
}

impl EffectorKind {
    pub const ALL: [EffectorKind; 3] = [Self::Position, Self::Rotation, Self::LookAt];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EffectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Position => "position",
            Self::Rotation => "rotation",
            Self::LookAt => "lookat",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    /// Global joint position, meters.
    Position(Vec3),
    /// Global joint rotation.
    Rotation(Mat3),
    /// Point the joint's forward ray should pass through, meters.
    LookAt(Vec3),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Effector {
    pub joint: usize,
    pub target: Target,
    /// 0 is a hard constraint, 1 the loosest.
    pub tolerance: f64,
}

impl Effector {
    pub fn position(joint: usize, p: Vec3) -> Self {
        Self {
            joint,
            target: Target::Position(p),
            tolerance: 0.0,
        }
    }

    pub fn rotation(joint: usize, r: Mat3) -> Self {
        Self {
            joint,
            target: Target::Rotation(r),
            tolerance: 0.0,
        }
    }

    pub fn look_at(joint: usize, p: Vec3) -> Self {
        Self {
            joint,
            target: Target::LookAt(p),
            tolerance: 0.0,
        }
    }

    pub fn with_tolerance(mut self, t: f64) -> Self {
        self.tolerance = t;
        self
    }

    pub fn kind(&self) -> EffectorKind {
        match self.target {
            Target::Position(_) => EffectorKind::Position,
            Target::Rotation(_) => EffectorKind::Rotation,
            Target::LookAt(_) => EffectorKind::LookAt,
        }
    }

    /// Position or rotation payload read off a posed skeleton. Look-at
    /// targets need a distance and go through [`Effector::look_at_from_fk`].
    pub fn from_fk(kind: EffectorKind, joint: usize, state: &FkState) -> Self {
        match kind {
            EffectorKind::Position => Self::position(joint, state.positions[joint]),
            EffectorKind::Rotation => Self::rotation(joint, state.globals[joint]),
            EffectorKind::LookAt => panic!("look-at effectors need a target distance"),
        }
    }

    /// Target placed `distance` meters along the joint's rotated forward axis.
    pub fn look_at_from_fk(
        template: &SkeletonTemplate,
        joint: usize,
        state: &FkState,
        distance: f64,
    ) -> Self {
        let axis = template.joints()[joint].forward_axis;
        Self::look_at(
            joint,
            state.positions[joint] + state.globals[joint] * axis * distance,
        )
    }

    pub fn validate(&self, joint_count: usize) -> Result<()> {
        if self.joint >= joint_count {
            return Err(Error::Input(format!(
                "effector joint {} out of range (0..{joint_count})",
                self.joint
            )));
        }
        if !(0.0..=1.0).contains(&self.tolerance) {
            return Err(Error::Input(format!(
                "effector tolerance {} outside [0, 1]",
                self.tolerance
            )));
        }
        let finite = match &self.target {
            Target::Position(p) | Target::LookAt(p) => p.iter().all(|v| v.is_finite()),
            Target::Rotation(r) => {
                if r.iter().all(|v| v.is_finite()) && !is_rotation(r) {
                    return Err(Error::Input(format!(
                        "rotation effector on joint {} is not a rotation",
                        self.joint
                    )));
                }
                r.iter().all(|v| v.is_finite())
            }
        };
        if !finite {
            return Err(Error::Input(format!(
                "effector on joint {} has a non-finite payload",
                self.joint
            )));
        }
        Ok(())
    }
}

/// Effectors with unique `(kind, joint)` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EffectorSet {
    effectors: Vec<Effector>,
}

impl EffectorSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(effectors: Vec<Effector>, joint_count: usize) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &effectors {
            e.validate(joint_count)?;
            if !seen.insert((e.kind(), e.joint)) {
                return Err(Error::Input(format!(
                    "duplicate {} effector on joint {}",
                    e.kind(),
                    e.joint
                )));
            }
        }
        Ok(Self { effectors })
    }

    pub fn effectors(&self) -> &[Effector] {
        &self.effectors
    }

    pub fn len(&self) -> usize {
        self.effectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effectors.is_empty()
    }

    pub fn contains(&self, kind: EffectorKind, joint: usize) -> bool {
        self.effectors
            .iter()
            .any(|e| e.kind() == kind && e.joint == joint)
    }

    /// Appends, rejecting a duplicate pair.
    pub fn push(&mut self, e: Effector, joint_count: usize) -> Result<()> {
        e.validate(joint_count)?;
        if self.contains(e.kind(), e.joint) {
            return Err(Error::Input(format!(
                "duplicate {} effector on joint {}",
                e.kind(),
                e.joint
            )));
        }
        self.effectors.push(e);
        Ok(())
    }

    pub(crate) fn effectors_mut(&mut self) -> &mut [Effector] {
        &mut self.effectors
    }
}

/// Shape plus effectors: one solver query.
#[derive(Clone, Debug, PartialEq)]
pub struct IkInput {
    pub effectors: EffectorSet,
    pub shape: ShapeParams,
}

pub fn encode_conditioning(shape: &ShapeParams) -> [f64; CONDITION_DIMS] {
    let mut c = [0.0; CONDITION_DIMS];
    c[..SHAPE_DIMS].copy_from_slice(&shape.betas);
    c[SHAPE_DIMS..SHAPE_DIMS + 3].copy_from_slice(&shape.gender.one_hot());
    c[SHAPE_DIMS + 3] = shape.scale;
    c
}

/// Raw token before the learned projection.
pub fn encode_effector(e: &Effector, shape: &ShapeParams) -> [f64; TOKEN_DIMS] {
    let mut t = [0.0; TOKEN_DIMS];
    t[e.kind().index()] = 1.0;
    t[JOINT_OFFSET + e.joint] = 1.0;
    let payload = &mut t[PAYLOAD_OFFSET..PAYLOAD_OFFSET + PAYLOAD_SLOTS];
    match &e.target {
        Target::Position(p) | Target::LookAt(p) => payload[..3].copy_from_slice(p.as_slice()),
        // first two columns, column-major
        Target::Rotation(r) => payload[3..9].copy_from_slice(&r.as_slice()[..6]),
    }
    t[TOLERANCE_OFFSET] = e.tolerance;
    t[CONDITION_OFFSET..].copy_from_slice(&encode_conditioning(shape));
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::axis_angle;
    use crate::skeleton::Gender;

    #[test]
    fn token_is_51_wide() {
        assert_eq!(TOKEN_DIMS, 51);
        assert_eq!(CONDITION_OFFSET, 37);
    }

    #[test]
    fn position_layout() {
        let e = Effector::position(5, Vec3::new(1.0, 2.0, 3.0));
        let t = encode_effector(&e, &ShapeParams::neutral());
        assert_eq!(t[0], 1.0);
        assert_eq!(t[3 + 5], 1.0);
        assert_eq!(&t[27..30], &[1.0, 2.0, 3.0]);
        assert!(t[30..36].iter().all(|&v| v == 0.0));
        assert_eq!(t[50], 1.0);
    }

    #[test]
    fn rotation_layout_is_first_two_columns() {
        let r = axis_angle(&Vec3::new(0.3, 1.0, -0.2).normalize(), 0.7);
        let t = encode_effector(&Effector::rotation(2, r), &ShapeParams::neutral());
        assert!(t[27..30].iter().all(|&v| v == 0.0));
        let cols = [r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]];
        assert_eq!(&t[30..36], &cols);
    }

    #[test]
    fn betas_only_touch_condition_slots() {
        let e = Effector::look_at(7, Vec3::new(0.1, 0.2, 0.3)).with_tolerance(0.4);
        let a = encode_effector(&e, &ShapeParams::neutral());
        let mut s = ShapeParams::neutral();
        s.betas[3] = 1.5;
        let b = encode_effector(&e, &s);
        for k in 0..TOKEN_DIMS {
            if k != CONDITION_OFFSET + 3 {
                assert_eq!(a[k], b[k], "slot {k}");
            }
        }
        assert_eq!(b[CONDITION_OFFSET + 3], 1.5);
        assert_eq!(a, encode_effector(&e, &ShapeParams::neutral()));
    }

    #[test]
    fn gender_one_hot_in_token() {
        let e = Effector::position(0, Vec3::zeros());
        let s = ShapeParams::new([0.0; 10], Gender::Male, 1.0);
        let t = encode_effector(&e, &s);
        assert_eq!(&t[47..50], &Gender::Male.one_hot());
    }

    #[test]
    fn duplicates_rejected() {
        let e = Effector::position(1, Vec3::zeros());
        assert!(EffectorSet::new(vec![e, e], 24).is_err());
        let r = Effector::rotation(1, Mat3::identity());
        assert_eq!(EffectorSet::new(vec![e, r], 24).unwrap().len(), 2);
    }

    #[test]
    fn invalid_effectors_rejected() {
        let bad_joint = Effector::position(24, Vec3::zeros());
        assert!(EffectorSet::new(vec![bad_joint], 24).is_err());
        let bad_rot = Effector::rotation(0, Mat3::identity() * 2.0);
        assert!(EffectorSet::new(vec![bad_rot], 24).is_err());
        let nan = Effector::position(0, Vec3::new(f64::NAN, 0.0, 0.0));
        assert!(EffectorSet::new(vec![nan], 24).is_err());
        let tol = Effector::position(0, Vec3::zeros()).with_tolerance(1.5);
        assert!(EffectorSet::new(vec![tol], 24).is_err());
    }
}
