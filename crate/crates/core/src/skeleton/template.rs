use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Gender, SHAPE_DIMS};
use crate::error::{Error, Result};
use crate::rotation::Vec3;

pub const CANONICAL_JOINT_COUNT: usize = 24;

const DEFAULT_SKELETON: &str = include_str!("../../assets/default_skeleton.json");

/// Per-joint blend block: meters of offset per unit of each shape coefficient.
pub type ShapeBasisBlock = SMatrix<f64, 3, SHAPE_DIMS>;

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vec3,
    pub forward_axis: Vec3,
}

/// Gender-specific replacement data. Entries left `None` fall back to the
/// neutral template.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GenderVariant {
    pub offsets: Vec<Option<Vec3>>,
    pub shape_basis: Option<Vec<ShapeBasisBlock>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    NoRoot,
    MultipleRoots(Vec<String>),
    DuplicateName(String),
    UnknownParent { joint: String, parent: String },
    Cycle(Vec<String>),
    ParentOrder { joint: String, parent: String },
    NonFiniteOffset(String),
    NonUnitForwardAxis(String),
    BasisShape(String),
    NonFiniteBasis(String),
    JointCount { expected: usize, actual: usize },
    Variant(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoRoot => write!(f, "no root joint"),
            Violation::MultipleRoots(names) => write!(f, "multiple roots: {}", names.join(", ")),
            Violation::DuplicateName(n) => write!(f, "duplicate joint name `{n}`"),
            Violation::UnknownParent { joint, parent } => {
                write!(f, "joint `{joint}` names unknown parent `{parent}`")
            }
            Violation::Cycle(names) => write!(f, "parent cycle through {}", names.join(" -> ")),
            Violation::ParentOrder { joint, parent } => {
                write!(f, "joint `{joint}` precedes its parent `{parent}`")
            }
            Violation::NonFiniteOffset(n) => write!(f, "joint `{n}` has a non-finite offset"),
            Violation::NonUnitForwardAxis(n) => {
                write!(f, "joint `{n}` forward axis is not unit length")
            }
            Violation::BasisShape(msg) => write!(f, "shape basis: {msg}"),
            Violation::NonFiniteBasis(n) => write!(f, "joint `{n}` shape basis is not finite"),
            Violation::JointCount { expected, actual } => {
                write!(f, "expected {expected} joints, found {actual}")
            }
            Violation::Variant(msg) => write!(f, "gender variant: {msg}"),
        }
    }
}

/// Immutable skeleton template: hierarchy, rest offsets, shape blend basis
/// and optional gender variants.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonTemplate {
    name: String,
    joints: Vec<Joint>,
    shape_basis: Vec<ShapeBasisBlock>,
    gender_variants: BTreeMap<Gender, GenderVariant>,
    id: String,
}

impl SkeletonTemplate {
    /// Builds a template and checks its structural invariants (any joint
    /// count).
    pub fn new(
        name: impl Into<String>,
        joints: Vec<Joint>,
        shape_basis: Vec<ShapeBasisBlock>,
        gender_variants: BTreeMap<Gender, GenderVariant>,
    ) -> Result<Self> {
        let mut t = Self {
            name: name.into(),
            joints,
            shape_basis,
            gender_variants,
            id: String::new(),
        };
        let violations = validate_structure(&t);
        if !violations.is_empty() {
            return Err(Error::Skeleton(violations));
        }
        let bytes = serde_json::to_vec(&t.to_doc()).expect("skeleton document serializes");
        let digest = Sha256::digest(&bytes);
        t.id = format!("{}:{}", t.name, &hex::encode(digest)[..16]);
        Ok(t)
    }

    /// The template shipped with the crate: SMPL-like rest offsets with a
    /// synthetic blend basis. `β₁` lengthens the limbs, `β₂` the torso, `β₃`
    /// widens hips and shoulders, `β₄` trades arm length against leg length
    /// and `β₅..β₁₀` are small fixed perturbations.
    pub fn bundled() -> Self {
        let doc: SkeletonDoc =
            serde_json::from_str(DEFAULT_SKELETON).expect("bundled skeleton parses");
        Self::from_doc(doc).expect("bundled skeleton is valid")
    }

    pub fn from_doc(doc: SkeletonDoc) -> Result<Self> {
        if doc.version != 1 {
            return Err(Error::Input(format!(
                "unsupported skeleton version {}",
                doc.version
            )));
        }
        let mut violations = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, j) in doc.joints.iter().enumerate() {
            if index.insert(j.name.as_str(), i).is_some() {
                violations.push(Violation::DuplicateName(j.name.clone()));
            }
        }
        let mut parents = Vec::with_capacity(doc.joints.len());
        for j in &doc.joints {
            match &j.parent {
                None => parents.push(None),
                Some(p) => match index.get(p.as_str()) {
                    Some(&pi) => parents.push(Some(pi)),
                    None => {
                        violations.push(Violation::UnknownParent {
                            joint: j.name.clone(),
                            parent: p.clone(),
                        });
                        parents.push(None);
                    }
                },
            }
        }
        if !violations.is_empty() {
            return Err(Error::Skeleton(violations));
        }

        let joints: Vec<Joint> = doc
            .joints
            .iter()
            .zip(&parents)
            .map(|(j, &parent)| Joint {
                name: j.name.clone(),
                parent,
                offset: Vec3::from(j.offset),
                forward_axis: Vec3::from(j.forward_axis.unwrap_or([0.0, 0.0, 1.0])),
            })
            .collect();
        let n = joints.len();

        let shape_basis = match &doc.shape_basis {
            Some(raw) => parse_basis(raw, n).map_err(|v| Error::Skeleton(vec![v]))?,
            None => vec![ShapeBasisBlock::zeros(); n],
        };

        let mut variants = BTreeMap::new();
        for (gender, vd) in doc.gender_variants.iter().flatten() {
            let mut offsets = vec![None; n];
            for (name, off) in &vd.offsets {
                match index.get(name.as_str()) {
                    Some(&i) => offsets[i] = Some(Vec3::from(*off)),
                    None => violations.push(Violation::Variant(format!(
                        "{gender:?} overrides unknown joint `{name}`"
                    ))),
                }
            }
            let basis = match &vd.shape_basis {
                Some(raw) => match parse_basis(raw, n) {
                    Ok(b) => Some(b),
                    Err(v) => {
                        violations.push(v);
                        None
                    }
                },
                None => None,
            };
            variants.insert(
                *gender,
                GenderVariant {
                    offsets,
                    shape_basis: basis,
                },
            );
        }
        if !violations.is_empty() {
            return Err(Error::Skeleton(violations));
        }
        Self::new(doc.name, joints, shape_basis, variants)
    }

    pub fn to_doc(&self) -> SkeletonDoc {
        let joints = self
            .joints
            .iter()
            .map(|j| JointDoc {
                name: j.name.clone(),
                parent: j.parent.map(|p| self.joints[p].name.clone()),
                offset: j.offset.into(),
                forward_axis: Some(j.forward_axis.into()),
            })
            .collect();
        let variants: BTreeMap<Gender, VariantDoc> = self
            .gender_variants
            .iter()
            .map(|(g, v)| {
                let offsets = v
                    .offsets
                    .iter()
                    .enumerate()
                    .filter_map(|(i, o)| o.map(|o| (self.joints[i].name.clone(), o.into())))
                    .collect();
                let shape_basis = v.shape_basis.as_ref().map(|b| basis_to_raw(b));
                (
                    *g,
                    VariantDoc {
                        offsets,
                        shape_basis,
                    },
                )
            })
            .collect();
        SkeletonDoc {
            version: 1,
            name: self.name.clone(),
            joints,
            shape_basis: Some(basis_to_raw(&self.shape_basis)),
            gender_variants: if variants.is_empty() {
                None
            } else {
                Some(variants)
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Template name plus a content digest; models and shape banks record it
    /// to detect mismatched skeletons.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        self.joints.iter().map(|j| j.parent).collect()
    }

    pub fn shape_basis(&self) -> &[ShapeBasisBlock] {
        &self.shape_basis
    }

    pub fn gender_variants(&self) -> &BTreeMap<Gender, GenderVariant> {
        &self.gender_variants
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn name_map(&self) -> HashMap<String, usize> {
        self.joints
            .iter()
            .enumerate()
            .map(|(i, j)| (j.name.clone(), i))
            .collect()
    }

    pub fn children(&self, joint: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter(move |(_, j)| j.parent == Some(joint))
            .map(|(i, _)| i)
    }

    /// Rest offsets and blend basis with the gender variant substituted.
    pub(crate) fn resolved(&self, gender: Gender) -> (Vec<Vec3>, &[ShapeBasisBlock]) {
        let mut offsets: Vec<Vec3> = self.joints.iter().map(|j| j.offset).collect();
        let mut basis: &[ShapeBasisBlock] = &self.shape_basis;
        if let Some(v) = self.gender_variants.get(&gender) {
            for (o, ov) in offsets.iter_mut().zip(&v.offsets) {
                if let Some(ov) = ov {
                    *o = *ov;
                }
            }
            if let Some(b) = &v.shape_basis {
                basis = b;
            }
        }
        (offsets, basis)
    }
}

/// Structural checks that apply to any skeleton, canonical or user supplied.
pub fn validate_structure(t: &SkeletonTemplate) -> Vec<Violation> {
    let mut out = Vec::new();
    let joints = &t.joints;

    let roots: Vec<String> = joints
        .iter()
        .filter(|j| j.parent.is_none())
        .map(|j| j.name.clone())
        .collect();
    match roots.len() {
        0 => out.push(Violation::NoRoot),
        1 => {}
        _ => out.push(Violation::MultipleRoots(roots)),
    }

    let mut seen = std::collections::HashSet::new();
    for j in joints {
        if !seen.insert(j.name.as_str()) {
            out.push(Violation::DuplicateName(j.name.clone()));
        }
    }

    // Cycle detection by walking parents; any walk longer than the joint
    // count revisits a joint.
    let mut reported = vec![false; joints.len()];
    for start in 0..joints.len() {
        let mut path = vec![start];
        let mut cur = start;
        while let Some(p) = joints[cur].parent {
            if p >= joints.len() {
                break;
            }
            if let Some(pos) = path.iter().position(|&x| x == p) {
                let cycle = &path[pos..];
                if !cycle.iter().any(|&c| reported[c]) {
                    for &c in cycle {
                        reported[c] = true;
                    }
                    let mut names: Vec<String> =
                        cycle.iter().map(|&c| joints[c].name.clone()).collect();
                    names.push(joints[p].name.clone());
                    out.push(Violation::Cycle(names));
                }
                break;
            }
            path.push(p);
            cur = p;
        }
    }

    for (i, j) in joints.iter().enumerate() {
        if let Some(p) = j.parent {
            if p >= joints.len() {
                out.push(Violation::UnknownParent {
                    joint: j.name.clone(),
                    parent: format!("#{p}"),
                });
            } else if p >= i && !reported[i] {
                out.push(Violation::ParentOrder {
                    joint: j.name.clone(),
                    parent: joints[p].name.clone(),
                });
            }
        }
        if !j.offset.iter().all(|x| x.is_finite()) {
            out.push(Violation::NonFiniteOffset(j.name.clone()));
        }
        let n = j.forward_axis.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
            out.push(Violation::NonUnitForwardAxis(j.name.clone()));
        }
    }

    if t.shape_basis.len() != joints.len() {
        out.push(Violation::BasisShape(format!(
            "{} blocks for {} joints",
            t.shape_basis.len(),
            joints.len()
        )));
    } else {
        for (j, b) in joints.iter().zip(&t.shape_basis) {
            if !b.iter().all(|x| x.is_finite()) {
                out.push(Violation::NonFiniteBasis(j.name.clone()));
            }
        }
    }

    for (g, v) in &t.gender_variants {
        if v.offsets.len() != joints.len() {
            out.push(Violation::Variant(format!(
                "{g:?} has {} offset slots for {} joints",
                v.offsets.len(),
                joints.len()
            )));
        }
        if v.offsets.iter().flatten().any(|o| !o.iter().all(|x| x.is_finite())) {
            out.push(Violation::Variant(format!("{g:?} has a non-finite offset")));
        }
        if let Some(b) = &v.shape_basis {
            if b.len() != joints.len() || b.iter().any(|m| !m.iter().all(|x| x.is_finite())) {
                out.push(Violation::Variant(format!("{g:?} shape basis is malformed")));
            }
        }
    }
    out
}

/// Full check for the canonical body template: structure plus the joint
/// count the IK model is built around.
pub fn validate_skeleton(t: &SkeletonTemplate) -> Vec<Violation> {
    let mut out = validate_structure(t);
    if t.len() != CANONICAL_JOINT_COUNT {
        out.push(Violation::JointCount {
            expected: CANONICAL_JOINT_COUNT,
            actual: t.len(),
        });
    }
    out
}

fn read_doc(path: &Path) -> Result<SkeletonDoc> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads a canonical (24-joint) skeleton file.
pub fn load_skeleton(path: impl AsRef<Path>) -> Result<SkeletonTemplate> {
    let t = SkeletonTemplate::from_doc(read_doc(path.as_ref())?)?;
    let violations = validate_skeleton(&t);
    if !violations.is_empty() {
        return Err(Error::Skeleton(violations));
    }
    Ok(t)
}

/// Loads a user character skeleton of any joint count.
pub fn load_user_skeleton(path: impl AsRef<Path>) -> Result<SkeletonTemplate> {
    SkeletonTemplate::from_doc(read_doc(path.as_ref())?)
}

fn parse_basis(raw: &[Vec<Vec<f64>>], joints: usize) -> std::result::Result<Vec<ShapeBasisBlock>, Violation> {
    if raw.len() != joints {
        return Err(Violation::BasisShape(format!(
            "{} blocks for {joints} joints",
            raw.len()
        )));
    }
    raw.iter()
        .enumerate()
        .map(|(j, rows)| {
            if rows.len() != 3 || rows.iter().any(|r| r.len() != SHAPE_DIMS) {
                return Err(Violation::BasisShape(format!(
                    "block {j} is not 3x{SHAPE_DIMS}"
                )));
            }
            Ok(ShapeBasisBlock::from_fn(|r, c| rows[r][c]))
        })
        .collect()
}

fn basis_to_raw(b: &[ShapeBasisBlock]) -> Vec<Vec<Vec<f64>>> {
    b.iter()
        .map(|m| {
            (0..3)
                .map(|r| (0..SHAPE_DIMS).map(|c| m[(r, c)]).collect())
                .collect()
        })
        .collect()
}

/// On-disk skeleton document. Parents are referenced by name, the root has
/// `null`; lengths are meters and +Y is up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonDoc {
    pub version: u32,
    pub name: String,
    pub joints: Vec<JointDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_basis: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender_variants: Option<BTreeMap<Gender, VariantDoc>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointDoc {
    pub name: String,
    pub parent: Option<String>,
    pub offset: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_axis: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantDoc {
    #[serde(default)]
    pub offsets: BTreeMap<String, [f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_basis: Option<Vec<Vec<Vec<f64>>>>,
}
