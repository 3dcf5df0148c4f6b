//! Shape inversion: estimate shape coefficients and global scale for an
//! arbitrary humanoid skeleton from six bone-length features.
//!
//! A bank of random `(ε, s)` draws is pushed through forward kinematics at the
//! T-pose. A query is answered with the Gaussian-kernel weighted mean of the
//! bank parameters, which is the posterior mean under a uniform prior with a
//! kernel density likelihood over features.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::Vec3;
use crate::skeleton::{forward_kinematics, tpose, Gender, ShapeParams, SkeletonTemplate, SHAPE_DIMS};

pub const FEATURE_DIMS: usize = 6;
/// Shape coefficients plus the trailing scale.
pub const PARAM_DIMS: usize = SHAPE_DIMS + 1;
pub const DEFAULT_BANK_SIZE: usize = 20_000;
pub const DEFAULT_KERNEL_WIDTH: f64 = 0.02;
pub const BETA_RANGE: (f64, f64) = (-5.0, 5.0);
pub const SCALE_RANGE: (f64, f64) = (0.2, 2.0);

/// Joint pairs whose distances make up the feature vector, in order.
pub const FEATURE_PAIRS: [(&str, &str); FEATURE_DIMS] = [
    ("right_hip", "right_knee"),
    ("right_knee", "right_ankle"),
    ("head", "right_ankle"),
    ("head", "right_wrist"),
    ("right_shoulder", "right_elbow"),
    ("right_elbow", "right_wrist"),
];

const BANK_MAGIC: &[u8; 4] = b"SSB1";
const UNDERFLOW: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFeatures(pub [f64; FEATURE_DIMS]);

impl SkeletonFeatures {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn distance_sq(&self, other: &[f64; FEATURE_DIMS]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// The joint names the features need, deduplicated, in first-use order.
pub fn required_joints() -> Vec<&'static str> {
    let mut out: Vec<&str> = Vec::new();
    for (a, b) in FEATURE_PAIRS {
        for n in [a, b] {
            if !out.contains(&n) {
                out.push(n);
            }
        }
    }
    out
}

pub fn extract_features(
    positions: &[Vec3],
    name_map: &HashMap<String, usize>,
) -> Result<SkeletonFeatures> {
    let lookup = |name: &str| -> Result<Vec3> {
        let idx = *name_map
            .get(name)
            .ok_or_else(|| Error::MissingJoint(name.to_string()))?;
        positions.get(idx).copied().ok_or(Error::Dimension {
            context: "feature joint index",
            expected: idx + 1,
            actual: positions.len(),
        })
    };
    let mut f = [0.0; FEATURE_DIMS];
    for (k, (a, b)) in FEATURE_PAIRS.iter().enumerate() {
        f[k] = (lookup(a)? - lookup(b)?).norm();
    }
    Ok(SkeletonFeatures(f))
}

/// T-pose features of a template under a shape.
pub fn template_features(
    template: &SkeletonTemplate,
    shape: &ShapeParams,
    name_map: &HashMap<String, usize>,
) -> Result<SkeletonFeatures> {
    let p = forward_kinematics(template, shape, &tpose(template, shape))?;
    extract_features(&p.positions, name_map)
}

/// Monte-Carlo table of `(β̃ = [ε, s], features)` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeBank {
    params: Vec<[f64; PARAM_DIMS]>,
    features: Vec<[f64; FEATURE_DIMS]>,
    kernel_width: f64,
    seed: u64,
    template_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeEstimate {
    pub betas: [f64; SHAPE_DIMS],
    pub scale: f64,
    pub effective_sample_size: f64,
    pub fallback_used: bool,
}

impl ShapeEstimate {
    pub fn to_shape(&self) -> ShapeParams {
        ShapeParams::new(self.betas, Gender::Neutral, self.scale)
    }
}

impl ShapeBank {
    /// Assembles a bank from precomputed rows (mostly for tests and tools).
    pub fn from_rows(
        rows: Vec<([f64; PARAM_DIMS], [f64; FEATURE_DIMS])>,
        kernel_width: f64,
        seed: u64,
        template_id: impl Into<String>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Input("shape bank must be nonempty".into()));
        }
        if !(kernel_width > 0.0 && kernel_width.is_finite()) {
            return Err(Error::Input(format!("kernel width must be positive, got {kernel_width}")));
        }
        let (params, features) = rows.into_iter().unzip();
        Ok(Self {
            params,
            features,
            kernel_width,
            seed,
            template_id: template_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn kernel_width(&self) -> f64 {
        self.kernel_width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn template_id(&self) -> &str {
        &self.template_id
    }

    pub fn params(&self) -> &[[f64; PARAM_DIMS]] {
        &self.params
    }

    pub fn features(&self) -> &[[f64; FEATURE_DIMS]] {
        &self.features
    }

    /// Same rows, different kernel width.
    pub fn with_kernel_width(mut self, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Input(format!("kernel width must be positive, got {h}")));
        }
        self.kernel_width = h;
        Ok(self)
    }

    /// Little-endian: magic, u32 header length, JSON header, then rows of
    /// 11 parameters followed by 6 features as f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = BankHeader {
            n: self.len(),
            h: self.kernel_width,
            seed: self.seed,
            template_id: self.template_id.clone(),
            feature_pair_names: FEATURE_PAIRS
                .iter()
                .map(|(a, b)| [a.to_string(), b.to_string()])
                .collect(),
        };
        let header = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
        w.write_all(BANK_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for (p, f) in self.params.iter().zip(&self.features) {
            for x in p.iter().chain(f) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::BankFormat(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != BANK_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
        let header: BankHeader =
            serde_json::from_slice(&header).map_err(|e| bad(&format!("header: {e}")))?;
        let expected_pairs: Vec<[String; 2]> = FEATURE_PAIRS
            .iter()
            .map(|(a, b)| [a.to_string(), b.to_string()])
            .collect();
        if header.feature_pair_names != expected_pairs {
            return Err(bad("feature pairs differ from this build"));
        }
        let mut rows = Vec::with_capacity(header.n);
        let mut buf = [0u8; 8];
        for _ in 0..header.n {
            let mut p = [0.0; PARAM_DIMS];
            let mut f = [0.0; FEATURE_DIMS];
            for x in p.iter_mut().chain(f.iter_mut()) {
                r.read_exact(&mut buf).map_err(|_| bad("truncated rows"))?;
                *x = f64::from_le_bytes(buf);
            }
            rows.push((p, f));
        }
        Self::from_rows(rows, header.h, header.seed, header.template_id)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[derive(Serialize, Deserialize)]
struct BankHeader {
    n: usize,
    h: f64,
    seed: u64,
    template_id: String,
    feature_pair_names: Vec<[String; 2]>,
}

/// Samples `ε ~ U(-5, 5)¹⁰`, `s ~ U(0.2, 2)` and records T-pose features of
/// the neutral body for each draw.
pub fn build_shape_bank(
    template: &SkeletonTemplate,
    n: usize,
    seed: u64,
    kernel_width: f64,
) -> Result<ShapeBank> {
    if n == 0 {
        return Err(Error::Input("bank size must be at least 1".into()));
    }
    let name_map = template.name_map();
    if let Some(missing) = required_joints().into_iter().find(|j| !name_map.contains_key(*j)) {
        return Err(Error::MissingJoint(missing.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = [0.0; PARAM_DIMS];
        for b in p.iter_mut().take(SHAPE_DIMS) {
            *b = rng.random_range(BETA_RANGE.0..BETA_RANGE.1);
        }
        p[SHAPE_DIMS] = rng.random_range(SCALE_RANGE.0..SCALE_RANGE.1);
        let shape = params_to_shape(&p);
        let f = template_features(template, &shape, &name_map)?;
        rows.push((p, f.0));
    }
    ShapeBank::from_rows(rows, kernel_width, seed, template.id())
}

pub fn params_to_shape(p: &[f64; PARAM_DIMS]) -> ShapeParams {
    let mut betas = [0.0; SHAPE_DIMS];
    betas.copy_from_slice(&p[..SHAPE_DIMS]);
    ShapeParams::new(betas, Gender::Neutral, p[SHAPE_DIMS])
}

/// Kernel-weighted posterior mean of the bank parameters:
/// `β̂ = Σ β̃ᵢ wᵢ / Σ wⱼ`, `wᵢ = exp(-‖f - f̃ᵢ‖² / 2h²)`.
///
/// When every weight underflows the nearest bank entry is returned and
/// flagged instead.
pub fn invert_shape(bank: &ShapeBank, f: &SkeletonFeatures) -> Result<ShapeEstimate> {
    if let Some(k) = f.0.iter().position(|x| !x.is_finite()) {
        return Err(Error::Input(format!("feature {k} is not finite")));
    }
    let inv = 1.0 / (2.0 * bank.kernel_width * bank.kernel_width);
    let d2: Vec<f64> = bank.features.iter().map(|g| f.distance_sq(g)).collect();
    let (nearest, d2_min) = d2
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best });

    // Shifted by the nearest distance for precision; the raw sum is the
    // shifted sum times exp(-d2_min / 2h²).
    let weights: Vec<f64> = d2.iter().map(|d| (-(d - d2_min) * inv).exp()).collect();
    let shifted_sum: f64 = weights.iter().sum();
    let raw_sum = shifted_sum * (-d2_min * inv).exp();

    if !(raw_sum >= UNDERFLOW) {
        let p = bank.params[nearest];
        let mut betas = [0.0; SHAPE_DIMS];
        betas.copy_from_slice(&p[..SHAPE_DIMS]);
        return Ok(ShapeEstimate {
            betas,
            scale: p[SHAPE_DIMS],
            effective_sample_size: 1.0,
            fallback_used: true,
        });
    }

    let mut acc = [0.0; PARAM_DIMS];
    let mut sq = 0.0;
    for (w, p) in weights.iter().zip(&bank.params) {
        let wn = w / shifted_sum;
        sq += wn * wn;
        for (a, x) in acc.iter_mut().zip(p) {
            *a += wn * x;
        }
    }
    let mut betas = [0.0; SHAPE_DIMS];
    betas.copy_from_slice(&acc[..SHAPE_DIMS]);
    Ok(ShapeEstimate {
        betas,
        scale: acc[SHAPE_DIMS],
        effective_sample_size: (1.0 / sq).max(1.0),
        fallback_used: false,
    })
}

/// Normalized kernel weights for a query, or `None` when they underflow.
pub fn kernel_weights(bank: &ShapeBank, f: &SkeletonFeatures) -> Option<Vec<f64>> {
    let inv = 1.0 / (2.0 * bank.kernel_width * bank.kernel_width);
    let w: Vec<f64> = bank
        .features
        .iter()
        .map(|g| (-f.distance_sq(g) * inv).exp())
        .collect();
    let s: f64 = w.iter().sum();
    if !(s >= UNDERFLOW) {
        return None;
    }
    Some(w.into_iter().map(|x| x / s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(p0: f64, f0: f64) -> ([f64; PARAM_DIMS], [f64; FEATURE_DIMS]) {
        let mut p = [p0; PARAM_DIMS];
        p[SHAPE_DIMS] = 1.0 + p0.abs();
        (p, [f0; FEATURE_DIMS])
    }

    #[test]
    fn all_joints_at_origin_give_zero_features() {
        let t = SkeletonTemplate::bundled();
        let f = extract_features(&vec![Vec3::zeros(); 24], &t.name_map()).unwrap();
        assert_eq!(f.0, [0.0; 6]);
    }

    #[test]
    fn features_scale_with_positions() {
        let t = SkeletonTemplate::bundled();
        let s = ShapeParams::neutral();
        let p = forward_kinematics(&t, &s, &tpose(&t, &s)).unwrap();
        let f1 = extract_features(&p.positions, &t.name_map()).unwrap();
        let doubled: Vec<Vec3> = p.positions.iter().map(|x| x * 2.0).collect();
        let f2 = extract_features(&doubled, &t.name_map()).unwrap();
        for k in 0..6 {
            assert!((f2.0[k] - 2.0 * f1.0[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_joint_is_named() {
        let mut m = SkeletonTemplate::bundled().name_map();
        m.remove("head");
        match extract_features(&vec![Vec3::zeros(); 24], &m) {
            Err(Error::MissingJoint(n)) => assert_eq!(n, "head"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_entry_bank_returns_its_atom() {
        let (p, f) = row(0.3, 0.5);
        let bank = ShapeBank::from_rows(vec![(p, f)], 0.02, 0, "t").unwrap();
        let est = invert_shape(&bank, &SkeletonFeatures(f)).unwrap();
        assert_eq!(est.betas.to_vec(), p[..10].to_vec());
        assert_eq!(est.scale, p[10]);
        assert!(!est.fallback_used);
        assert!((est.effective_sample_size - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equidistant_pair_returns_mean() {
        let (pa, _) = row(1.0, 0.0);
        let (pb, _) = row(-3.0, 0.0);
        let bank = ShapeBank::from_rows(vec![(pa, [0.49; 6]), (pb, [0.51; 6])], 0.02, 0, "t").unwrap();
        let est = invert_shape(&bank, &SkeletonFeatures([0.5; 6])).unwrap();
        for k in 0..10 {
            assert!((est.betas[k] - 0.5 * (pa[k] + pb[k])).abs() < 1e-12);
        }
        assert!((est.scale - 0.5 * (pa[10] + pb[10])).abs() < 1e-12);
        assert!((est.effective_sample_size - 2.0).abs() < 1e-9);
    }

    #[test]
    fn far_query_falls_back_to_nearest() {
        let bank =
            ShapeBank::from_rows(vec![row(1.0, 0.1), row(2.0, 0.2)], 0.02, 0, "t").unwrap();
        let est = invert_shape(&bank, &SkeletonFeatures([5.0; 6])).unwrap();
        assert!(est.fallback_used);
        assert_eq!(est.betas[0], 2.0);
    }

    #[test]
    fn non_finite_query_rejected() {
        let bank = ShapeBank::from_rows(vec![row(1.0, 0.1)], 0.02, 0, "t").unwrap();
        assert!(invert_shape(&bank, &SkeletonFeatures([f64::NAN; 6])).is_err());
    }

    #[test]
    fn bank_sampling_ranges_and_exact_features() {
        let t = SkeletonTemplate::bundled();
        let bank = build_shape_bank(&t, 500, 4, DEFAULT_KERNEL_WIDTH).unwrap();
        for (p, f) in bank.params().iter().zip(bank.features()) {
            assert!(p[..10].iter().all(|b| (-5.0..=5.0).contains(b)));
            assert!((0.2..=2.0).contains(&p[10]));
            let again = template_features(&t, &params_to_shape(p), &t.name_map()).unwrap();
            assert_eq!(&again.0, f);
        }
    }

    #[test]
    fn bank_without_feature_joints_is_rejected() {
        let mut doc = SkeletonTemplate::bundled().to_doc();
        doc.joints[15].name = "skull".into();
        doc.gender_variants = None;
        let t = SkeletonTemplate::from_doc(doc).unwrap();
        match build_shape_bank(&t, 10, 0, 0.02) {
            Err(Error::MissingJoint(n)) => assert_eq!(n, "head"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bank_file_round_trip() {
        let t = SkeletonTemplate::bundled();
        let bank = build_shape_bank(&t, 64, 11, 0.02).unwrap();
        let mut buf = Vec::new();
        bank.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SSB1");
        let back = ShapeBank::read_from(&buf[..]).unwrap();
        assert_eq!(bank, back);
        assert!(ShapeBank::read_from(&buf[..buf.len() - 3]).is_err());
    }
}
