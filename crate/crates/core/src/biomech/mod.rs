//! Rigid-segment kinematic chain with a floating base, virtual markers and
//! joint centers.
//!
//! Frames follow the ISB convention: x anterior, y superior, z to the right.
//! Each segment's orientation is its parent's composed with the rotations of
//! its own joints, intrinsically and in declaration order. Offsets of children,
//! markers and joint centers are stored unscaled and multiplied by the
//! segment's scale factor at evaluation time.

mod scale;
mod template;

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::camgeo::{kp, JointCenters3D, N_KEYPOINTS};

pub use scale::{kabsch, scale_model, segment_scale_factors, RigidFit, STANDING_RESIDUAL_MAX};
pub use template::default_template;

/// Joint-angle DoF of the standard model.
pub const N_DOF: usize = 22;
/// Virtual markers of the standard model.
pub const N_MARKERS: usize = 29;
/// Columns of the marker Jacobian for the standard model: base then joints.
pub const N_COLS: usize = 6 + N_DOF;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BiomechError {
    #[error("unknown segment `{0}`")]
    UnknownSegment(String),
    #[error("segment `{0}` is listed before its parent")]
    ParentOrder(String),
    #[error("model must have exactly one root segment, found {0}")]
    RootCount(usize),
    #[error("unknown marker `{0}`")]
    UnknownMarker(String),
    #[error("unknown keypoint `{0}`")]
    UnknownKeypoint(String),
    #[error("expected {expected} DoF, model has {got}")]
    DofCount { expected: usize, got: usize },
    #[error("expected {expected} markers, model has {got}")]
    MarkerCount { expected: usize, got: usize },
    #[error("expected {expected} joint centers, model has {got}")]
    JointCenterCount { expected: usize, got: usize },
    #[error("joint `{joint}` axis has norm {norm}, expected 1")]
    NonUnitAxis { joint: String, norm: f64 },
    #[error("joint `{joint}` limits [{lower}, {upper}] are not increasing")]
    InvertedLimits { joint: String, lower: f64, upper: f64 },
    #[error("mask `{name}`: {reason}")]
    BadMask { name: &'static str, reason: String },
    #[error("scaling pair {a}–{b}: {reason}")]
    BadScalingPair { a: String, b: String, reason: &'static str },
    #[error("fallback rule for `{marker}` has weights summing to {sum}, expected 1")]
    NonAffineFallback { marker: String, sum: f64 },
    #[error("expected length {expected}, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("marker `{0}` is invalid")]
    InvalidMarker(String),
    #[error("segment `{segment}` residual {rms:.4} m after scaling exceeds {limit} m; not a standing pose")]
    NotStanding { segment: String, rms: f64, limit: f64 },
    #[error("joint center `{0}` is missing")]
    MissingJointCenter(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Center,
    Right,
    Left,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub parent: Option<String>,
    /// Origin in the parent frame, before the parent's scale.
    pub offset: [f64; 3],
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// Segment rotated by this DoF.
    pub segment: String,
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
    pub side: Side,
}

/// Point rigidly attached to a segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub name: String,
    pub segment: String,
    pub offset: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FallbackTerm {
    pub kp: String,
    pub w: f64,
}

/// Marker as an affine combination of joint centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FallbackRule {
    pub marker: String,
    pub terms: Vec<FallbackTerm>,
}

/// Two markers on one segment whose distance sets the scale of `segments`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPair {
    pub a: String,
    pub b: String,
    pub segments: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Masks {
    pub lower: Vec<usize>,
    pub upper: Vec<usize>,
}

/// Serialized form of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub segments: Vec<Segment>,
    pub joints: Vec<Joint>,
    pub markers: Vec<Landmark>,
    #[serde(default)]
    pub joint_centers: Vec<Landmark>,
    #[serde(default)]
    pub masks: Masks,
    #[serde(default)]
    pub scaling_pairs: Vec<ScalingPair>,
    #[serde(default)]
    pub fallback: Vec<FallbackRule>,
}

/// A structurally valid model with resolved indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct BiomechModel {
    spec: ModelSpec,
    parent: Vec<Option<usize>>,
    /// `ancestor[s][a]`: segment `a` is `s` or lies on its path to the root.
    ancestor: Vec<Vec<bool>>,
    joints_of: Vec<Vec<usize>>,
    joint_seg: Vec<usize>,
    marker_seg: Vec<usize>,
    jc_seg: Vec<usize>,
    /// Per fallback rule: marker index and `(keypoint, weight)` terms.
    fallback: Vec<(usize, Vec<(usize, f64)>)>,
    pairs: Vec<(usize, usize, Vec<usize>)>,
}

impl TryFrom<ModelSpec> for BiomechModel {
    type Error = BiomechError;
    fn try_from(spec: ModelSpec) -> Result<Self, BiomechError> {
        Self::new(spec)
    }
}

impl From<BiomechModel> for ModelSpec {
    fn from(m: BiomechModel) -> Self {
        m.spec
    }
}

fn find(names: impl Iterator<Item = String>, name: &str) -> Option<usize> {
    names.into_iter().position(|n| n == name)
}

/// Rigid transform: `x ↦ rot·x + pos`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rot: UnitQuaternion<f64>,
    pub pos: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rot: UnitQuaternion::identity(),
            pos: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p + self.pos
    }
}

/// Floating-base pose as `[tx, ty, tz, rx, ry, rz]`, rotation as a rotation vector.
pub type BasePose = [f64; 6];

pub fn base_to_pose(b: &BasePose) -> Pose {
    Pose {
        rot: UnitQuaternion::from_scaled_axis(Vector3::new(b[3], b[4], b[5])),
        pos: Vector3::new(b[0], b[1], b[2]),
    }
}

pub fn pose_to_base(p: &Pose) -> BasePose {
    let r = p.rot.scaled_axis();
    [p.pos.x, p.pos.y, p.pos.z, r.x, r.y, r.z]
}

/// Apply a base increment: translation added, rotation `exp(δω)` applied on the world side.
pub fn apply_base_increment(b: &BasePose, delta: &[f64]) -> BasePose {
    let p = base_to_pose(b);
    let pose = Pose {
        rot: UnitQuaternion::from_scaled_axis(Vector3::new(delta[3], delta[4], delta[5])) * p.rot,
        pos: p.pos + Vector3::new(delta[0], delta[1], delta[2]),
    };
    pose_to_base(&pose)
}

/// Pose of every segment plus, per joint, its world axis and pivot.
#[derive(Clone, Debug)]
pub struct Kinematics {
    pub segments: Vec<Pose>,
    pub joint_axes: Vec<Vector3<f64>>,
    pub joint_pivots: Vec<Vector3<f64>>,
}

/// Joint angles and base pose at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointAngleFrame {
    pub t: f64,
    pub q: Vec<f64>,
    pub base: BasePose,
}

/// Marker positions at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerFrame {
    pub t: f64,
    pub markers: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

impl MarkerFrame {
    pub fn marker(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.markers[i])
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

impl BiomechModel {
    /// Resolve names and check structure; does not impose the 22/29 counts.
    pub fn new(spec: ModelSpec) -> Result<Self, BiomechError> {
        let seg_names = || spec.segments.iter().map(|s| s.name.clone());
        let seg_index = |name: &str| find(seg_names(), name).ok_or_else(|| BiomechError::UnknownSegment(name.into()));

        let mut parent = Vec::with_capacity(spec.segments.len());
        let mut roots = 0;
        for (i, s) in spec.segments.iter().enumerate() {
            match &s.parent {
                None => {
                    roots += 1;
                    parent.push(None);
                }
                Some(p) => {
                    let pi = seg_index(p)?;
                    if pi >= i {
                        return Err(BiomechError::ParentOrder(s.name.clone()));
                    }
                    parent.push(Some(pi));
                }
            }
            let finite = s.offset.iter().all(|v| v.is_finite()) && s.scale.is_finite();
            if !finite {
                return Err(BiomechError::NonFinite("segment"));
            }
        }
        if roots != 1 || parent.first().is_some_and(|p| p.is_some()) {
            return Err(BiomechError::RootCount(roots));
        }
        let n = spec.segments.len();
        let mut ancestor = vec![vec![false; n]; n];
        for s in 0..n {
            let mut cur = Some(s);
            while let Some(c) = cur {
                ancestor[s][c] = true;
                cur = parent[c];
            }
        }

        let mut joints_of = vec![Vec::new(); n];
        let mut joint_seg = Vec::with_capacity(spec.joints.len());
        for (j, joint) in spec.joints.iter().enumerate() {
            let s = seg_index(&joint.segment)?;
            if s == 0 {
                return Err(BiomechError::UnknownSegment(joint.segment.clone()));
            }
            joints_of[s].push(j);
            joint_seg.push(s);
        }
        let marker_seg = spec
            .markers
            .iter()
            .map(|m| seg_index(&m.segment))
            .collect::<Result<Vec<_>, _>>()?;
        let jc_seg = spec
            .joint_centers
            .iter()
            .map(|m| seg_index(&m.segment))
            .collect::<Result<Vec<_>, _>>()?;

        let marker_index = |name: &str| {
            spec.markers
                .iter()
                .position(|m| m.name == name)
                .ok_or_else(|| BiomechError::UnknownMarker(name.into()))
        };
        let mut fallback = Vec::with_capacity(spec.fallback.len());
        for rule in &spec.fallback {
            let mi = marker_index(&rule.marker)?;
            let mut terms = Vec::with_capacity(rule.terms.len());
            for t in &rule.terms {
                let k = kp::NAMES
                    .iter()
                    .position(|n| *n == t.kp)
                    .ok_or_else(|| BiomechError::UnknownKeypoint(t.kp.clone()))?;
                terms.push((k, t.w));
            }
            let sum: f64 = terms.iter().map(|t| t.1).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(BiomechError::NonAffineFallback {
                    marker: rule.marker.clone(),
                    sum,
                });
            }
            fallback.push((mi, terms));
        }

        let mut pairs = Vec::with_capacity(spec.scaling_pairs.len());
        for p in &spec.scaling_pairs {
            let (a, b) = (marker_index(&p.a)?, marker_index(&p.b)?);
            let bad = |reason| BiomechError::BadScalingPair {
                a: p.a.clone(),
                b: p.b.clone(),
                reason,
            };
            if marker_seg[a] != marker_seg[b] {
                return Err(bad("markers must share a segment"));
            }
            let (oa, ob) = (&spec.markers[a].offset, &spec.markers[b].offset);
            let d2: f64 = (0..3).map(|i| (oa[i] - ob[i]) * (oa[i] - ob[i])).sum();
            if d2 < 1e-12 {
                return Err(bad("markers coincide"));
            }
            let segs = p.segments.iter().map(|s| seg_index(s)).collect::<Result<Vec<_>, _>>()?;
            pairs.push((a, b, segs));
        }

        let model = Self {
            parent,
            ancestor,
            joints_of,
            joint_seg,
            marker_seg,
            jc_seg,
            fallback,
            pairs,
            spec,
        };
        for j in &model.spec.joints {
            let norm = Vector3::from_column_slice(&j.axis).norm();
            if !norm.is_finite() || norm < 1e-12 {
                return Err(BiomechError::NonUnitAxis {
                    joint: j.name.clone(),
                    norm,
                });
            }
        }
        Ok(model)
    }

    /// Check the invariants of the standard 22-DoF, 29-marker model.
    pub fn validate_standard(&self) -> Result<(), BiomechError> {
        let s = &self.spec;
        if s.joints.len() != N_DOF {
            return Err(BiomechError::DofCount {
                expected: N_DOF,
                got: s.joints.len(),
            });
        }
        if s.markers.len() != N_MARKERS {
            return Err(BiomechError::MarkerCount {
                expected: N_MARKERS,
                got: s.markers.len(),
            });
        }
        if s.joint_centers.len() != N_KEYPOINTS {
            return Err(BiomechError::JointCenterCount {
                expected: N_KEYPOINTS,
                got: s.joint_centers.len(),
            });
        }
        for (i, jc) in s.joint_centers.iter().enumerate() {
            if jc.name != kp::NAMES[i] {
                return Err(BiomechError::UnknownKeypoint(jc.name.clone()));
            }
        }
        for j in &s.joints {
            let norm = Vector3::from_column_slice(&j.axis).norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(BiomechError::NonUnitAxis {
                    joint: j.name.clone(),
                    norm,
                });
            }
            if !(j.lower < j.upper) {
                return Err(BiomechError::InvertedLimits {
                    joint: j.name.clone(),
                    lower: j.lower,
                    upper: j.upper,
                });
            }
        }
        check_mask("lower", &s.masks.lower, 12)?;
        check_mask("upper", &s.masks.upper, 18)?;
        let mut covered = [false; N_DOF];
        for &i in s.masks.lower.iter().chain(&s.masks.upper) {
            covered[i] = true;
        }
        if !covered.iter().all(|c| *c) {
            return Err(BiomechError::BadMask {
                name: "union",
                reason: "lower ∪ upper must cover all 22 DoF".to_string(),
            });
        }
        Ok(())
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_dof(&self) -> usize {
        self.spec.joints.len()
    }

    pub fn n_markers(&self) -> usize {
        self.spec.markers.len()
    }

    pub fn n_segments(&self) -> usize {
        self.spec.segments.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.spec.joints
    }

    pub fn segments(&self) -> &[Segment] {
        &self.spec.segments
    }

    pub fn markers(&self) -> &[Landmark] {
        &self.spec.markers
    }

    pub fn masks(&self) -> &Masks {
        &self.spec.masks
    }

    pub fn lower_limits(&self) -> Vec<f64> {
        self.spec.joints.iter().map(|j| j.lower).collect()
    }

    pub fn upper_limits(&self) -> Vec<f64> {
        self.spec.joints.iter().map(|j| j.upper).collect()
    }

    pub fn segment_index(&self, name: &str) -> Option<usize> {
        self.spec.segments.iter().position(|s| s.name == name)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.spec.joints.iter().position(|j| j.name == name)
    }

    pub fn marker_index(&self, name: &str) -> Option<usize> {
        self.spec.markers.iter().position(|m| m.name == name)
    }

    pub fn marker_segment(&self, m: usize) -> usize {
        self.marker_seg[m]
    }

    pub fn joint_segment(&self, j: usize) -> usize {
        self.joint_seg[j]
    }

    /// True when joint `j` moves points attached to segment `s`.
    pub fn joint_moves_segment(&self, j: usize, s: usize) -> bool {
        self.ancestor[s][self.joint_seg[j]]
    }

    pub fn scales(&self) -> Vec<f64> {
        self.spec.segments.iter().map(|s| s.scale).collect()
    }

    pub(crate) fn pairs(&self) -> &[(usize, usize, Vec<usize>)] {
        &self.pairs
    }

    pub(crate) fn spec_mut(&mut self) -> &mut ModelSpec {
        &mut self.spec
    }

    /// Fallback rules as `(marker, [(keypoint, weight)])`.
    pub fn fallback_rules(&self) -> &[(usize, Vec<(usize, f64)>)] {
        &self.fallback
    }

    /// Clamp `q` into the joint limits.
    pub fn clamp_q(&self, q: &mut [f64]) {
        for (v, j) in q.iter_mut().zip(&self.spec.joints) {
            *v = v.clamp(j.lower, j.upper);
        }
    }

    pub fn within_limits(&self, q: &[f64], tol: f64) -> bool {
        q.len() == self.n_dof()
            && q.iter()
                .zip(&self.spec.joints)
                .all(|(v, j)| v.is_finite() && *v >= j.lower - tol && *v <= j.upper + tol)
    }

    fn check_q(&self, q: &[f64]) -> Result<(), BiomechError> {
        if q.len() != self.n_dof() {
            return Err(BiomechError::WrongLength {
                expected: self.n_dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Segment poses and joint axes for configuration `(q, base)`.
    pub fn kinematics(&self, q: &[f64], base: &BasePose) -> Result<Kinematics, BiomechError> {
        self.check_q(q)?;
        let n = self.n_segments();
        let mut segments = Vec::with_capacity(n);
        let mut joint_axes = vec![Vector3::zeros(); self.n_dof()];
        let mut joint_pivots = vec![Vector3::zeros(); self.n_dof()];
        for s in 0..n {
            let mut pose = match self.parent[s] {
                None => base_to_pose(base),
                Some(p) => {
                    let pp: &Pose = &segments[p];
                    let off = Vector3::from_column_slice(&self.spec.segments[s].offset) * self.spec.segments[p].scale;
                    Pose {
                        rot: pp.rot,
                        pos: pp.apply(&off),
                    }
                }
            };
            for &j in &self.joints_of[s] {
                let axis = Unit::new_normalize(Vector3::from_column_slice(&self.spec.joints[j].axis));
                joint_axes[j] = pose.rot * axis.into_inner();
                joint_pivots[j] = pose.pos;
                pose.rot *= UnitQuaternion::from_axis_angle(&axis, q[j]);
            }
            segments.push(pose);
        }
        Ok(Kinematics {
            segments,
            joint_axes,
            joint_pivots,
        })
    }

    fn landmark_world(&self, kin: &Kinematics, seg: usize, offset: &[f64; 3]) -> Vector3<f64> {
        let local = Vector3::from_column_slice(offset) * self.spec.segments[seg].scale;
        kin.segments[seg].apply(&local)
    }

    pub fn marker_positions(&self, kin: &Kinematics) -> Vec<Vector3<f64>> {
        self.spec
            .markers
            .iter()
            .zip(&self.marker_seg)
            .map(|(m, &s)| self.landmark_world(kin, s, &m.offset))
            .collect()
    }

    /// Markers for `(q, base)`; all flagged valid.
    pub fn forward_kinematics(&self, q: &[f64], base: &BasePose, t: f64) -> Result<MarkerFrame, BiomechError> {
        let kin = self.kinematics(q, base)?;
        let markers = self.marker_positions(&kin).iter().map(|p| [p.x, p.y, p.z]).collect();
        Ok(MarkerFrame {
            t,
            markers,
            valid: vec![true; self.n_markers()],
        })
    }

    /// The 26 joint centers for `(q, base)`.
    pub fn joint_centers(&self, q: &[f64], base: &BasePose, t: f64) -> Result<JointCenters3D, BiomechError> {
        if self.spec.joint_centers.len() != N_KEYPOINTS {
            return Err(BiomechError::JointCenterCount {
                expected: N_KEYPOINTS,
                got: self.spec.joint_centers.len(),
            });
        }
        let kin = self.kinematics(q, base)?;
        let mut points = [[0.0; 3]; N_KEYPOINTS];
        for (i, jc) in self.spec.joint_centers.iter().enumerate() {
            let p = self.landmark_world(&kin, self.jc_seg[i], &jc.offset);
            points[i] = [p.x, p.y, p.z];
        }
        Ok(JointCenters3D::from_points(t, points))
    }

    /// Geometric Jacobian of all marker coordinates: `3·n_markers × (6 + n_dof)`.
    /// Columns 0–2 are base translation, 3–5 a world-side rotation increment.
    pub fn marker_jacobian(&self, q: &[f64], base: &BasePose) -> Result<DMatrix<f64>, BiomechError> {
        let kin = self.kinematics(q, base)?;
        let markers = self.marker_positions(&kin);
        Ok(self.jacobian_from(&kin, &markers))
    }

    pub(crate) fn jacobian_from(&self, kin: &Kinematics, markers: &[Vector3<f64>]) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(3 * markers.len(), 6 + self.n_dof());
        let root = kin.segments[0].pos;
        for (m, p) in markers.iter().enumerate() {
            let r = 3 * m;
            for k in 0..3 {
                jac[(r + k, k)] = 1.0;
            }
            let d = p - root;
            // e_k × d
            let rot_cols = [Vector3::new(0.0, -d.z, d.y), Vector3::new(d.z, 0.0, -d.x), Vector3::new(-d.y, d.x, 0.0)];
            for (k, c) in rot_cols.iter().enumerate() {
                for i in 0..3 {
                    jac[(r + i, 3 + k)] = c[i];
                }
            }
            let seg = self.marker_seg[m];
            for j in 0..self.n_dof() {
                if !self.joint_moves_segment(j, seg) {
                    continue;
                }
                let c = kin.joint_axes[j].cross(&(p - kin.joint_pivots[j]));
                for i in 0..3 {
                    jac[(r + i, 6 + j)] = c[i];
                }
            }
        }
        jac
    }
}

fn check_mask(name: &'static str, mask: &[usize], size: usize) -> Result<(), BiomechError> {
    if mask.len() != size {
        return Err(BiomechError::BadMask {
            name,
            reason: alloc::format!("expected {size} entries, found {}", mask.len()),
        });
    }
    let mut seen = [false; N_DOF];
    for &i in mask {
        if i >= N_DOF || seen[i] {
            return Err(BiomechError::BadMask {
                name,
                reason: alloc::format!("index {i} out of range or repeated"),
            });
        }
        seen[i] = true;
    }
    Ok(())
}

/// Markers from joint centers via the model's fallback table.
pub fn fallback_markers(model: &BiomechModel, jc: &JointCenters3D) -> Result<MarkerFrame, BiomechError> {
    let n = model.n_markers();
    let mut markers = vec![[0.0; 3]; n];
    let mut valid = vec![false; n];
    for (mi, terms) in model.fallback_rules() {
        let mut p = Vector3::zeros();
        for &(k, w) in terms {
            if !jc.valid[k] {
                return Err(BiomechError::MissingJointCenter(kp::NAMES[k].into()));
            }
            p += jc.point(k) * w;
        }
        markers[*mi] = [p.x, p.y, p.z];
        valid[*mi] = true;
    }
    Ok(MarkerFrame { t: jc.t, markers, valid })
}
