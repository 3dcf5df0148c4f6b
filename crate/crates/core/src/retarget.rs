//! Pose transfer between the canonical skeleton and user rigs by local
//! rotation copy, plus shape approximation of user rigs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::Mat3;
use crate::shape_inversion::{extract_features, invert_shape, ShapeBank, ShapeEstimate};
use crate::skeleton::{forward_kinematics, tpose, Pose, ShapeParams, SkeletonTemplate};

/// Partial, injective name correspondence `from → to`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointMap {
    pub map: BTreeMap<String, String>,
}

impl JointMap {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let m = Self {
            map: pairs.into_iter().collect(),
        };
        m.check_injective()?;
        Ok(m)
    }

    /// Maps every joint of `t` to itself.
    pub fn identity(t: &SkeletonTemplate) -> Self {
        Self {
            map: t
                .joints()
                .iter()
                .map(|j| (j.name.clone(), j.name.clone()))
                .collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.check_injective()?;
        Ok(m)
    }

    pub fn inverse(&self) -> Self {
        Self {
            map: self.map.iter().map(|(a, b)| (b.clone(), a.clone())).collect(),
        }
    }

    pub fn get(&self, from: &str) -> Option<&str> {
        self.map.get(from).map(String::as_str)
    }

    fn check_injective(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (from, to) in &self.map {
            if !seen.insert(to) {
                return Err(Error::Input(format!(
                    "joint map is not injective: `{to}` is the image of more than one joint (including `{from}`)"
                )));
            }
        }
        Ok(())
    }

    /// Resolves names to `(from index, to index)` pairs, checking both ends.
    pub fn resolve(
        &self,
        from: &SkeletonTemplate,
        to: &SkeletonTemplate,
    ) -> Result<Vec<(usize, usize)>> {
        self.check_injective()?;
        self.map
            .iter()
            .map(|(a, b)| {
                let i = from
                    .joint_index(a)
                    .ok_or_else(|| Error::MissingJoint(a.clone()))?;
                let k = to
                    .joint_index(b)
                    .ok_or_else(|| Error::MissingJoint(b.clone()))?;
                Ok((i, k))
            })
            .collect()
    }
}

/// A user rig with its correspondence to the canonical skeleton
/// (`user name → canonical name`).
#[derive(Clone, Debug, PartialEq)]
pub struct UserSkeleton {
    pub template: SkeletonTemplate,
    pub map: JointMap,
}

impl UserSkeleton {
    pub fn new(template: SkeletonTemplate, map: JointMap, canonical: &SkeletonTemplate) -> Result<Self> {
        map.resolve(&template, canonical)?;
        let root = canonical.joints().iter().position(|j| j.parent.is_none());
        let root_name = &canonical.joints()[root.expect("valid template has a root")].name;
        if !map.map.values().any(|v| v == root_name) {
            return Err(Error::MissingJoint(root_name.clone()));
        }
        Ok(Self { template, map })
    }

    /// Canonical joint name → index in the user rig.
    pub fn feature_name_map(&self) -> HashMap<String, usize> {
        self.map
            .map
            .iter()
            .filter_map(|(user, canon)| {
                self.template
                    .joint_index(user)
                    .map(|i| (canon.clone(), i))
            })
            .collect()
    }
}

/// Shape parameters whose canonical skeleton best matches the user rig's
/// T-pose features. Gender is neutral.
pub fn approximate_user_skeleton(user: &UserSkeleton, bank: &ShapeBank) -> Result<ShapeEstimate> {
    let rest = ShapeParams::neutral();
    let positions = forward_kinematics(&user.template, &rest, &tpose(&user.template, &rest))?;
    let features = extract_features(&positions.positions, &user.feature_name_map())?;
    invert_shape(bank, &features)
}

/// Vertical (+Y) extent of the T-pose.
pub fn tpose_height(template: &SkeletonTemplate, shape: &ShapeParams) -> f64 {
    let p = forward_kinematics(template, shape, &tpose(template, shape))
        .expect("T-pose matches template")
        .positions;
    let (lo, hi) = p
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.y), hi.max(v.y))
        });
    hi - lo
}

/// Copies local rotations along `map` (`src name → dst name`), fills
/// unmapped destination joints with identity and scales the root position by
/// the T-pose height ratio.
pub fn retarget_pose(
    src: &SkeletonTemplate,
    src_shape: &ShapeParams,
    dst: &SkeletonTemplate,
    dst_shape: &ShapeParams,
    map: &JointMap,
    pose: &Pose,
) -> Result<Pose> {
    pose.validate(src.len())?;
    let pairs = map.resolve(src, dst)?;
    let hs = tpose_height(src, src_shape);
    if !(hs > 0.0) {
        return Err(Error::DegenerateSkeleton(format!(
            "source skeleton `{}` has zero T-pose height",
            src.name()
        )));
    }
    let hd = tpose_height(dst, dst_shape);
    let mut rotations = vec![Mat3::identity(); dst.len()];
    for (i, k) in pairs {
        rotations[k] = pose.rotations[i];
    }
    Ok(Pose {
        root_position: pose.root_position * (hd / hs),
        rotations,
    })
}

/// Mean distance between corresponding mapped joints of two posed rigs,
/// meters. Diagnostic only.
pub fn mapped_position_error(
    src: &SkeletonTemplate,
    src_shape: &ShapeParams,
    src_pose: &Pose,
    dst: &SkeletonTemplate,
    dst_shape: &ShapeParams,
    dst_pose: &Pose,
    map: &JointMap,
) -> Result<f64> {
    let pairs = map.resolve(src, dst)?;
    if pairs.is_empty() {
        return Err(Error::Input("joint map is empty".into()));
    }
    let a = forward_kinematics(src, src_shape, src_pose)?.positions;
    let b = forward_kinematics(dst, dst_shape, dst_pose)?.positions;
    Ok(pairs.iter().map(|&(i, k)| (a[i] - b[k]).norm()).sum::<f64>() / pairs.len() as f64)
}
