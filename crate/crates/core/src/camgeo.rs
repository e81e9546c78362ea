//! Pinhole cameras with Brown–Conrady distortion and weighted DLT triangulation.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix2x3, Matrix3, Vector2, Vector3};
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Number of 2D keypoints per detection (Halpe-26 layout).
pub const N_KEYPOINTS: usize = 26;

/// Halpe-26 keypoint indices.
pub mod kp {
    pub const NOSE: usize = 0;
    pub const L_EYE: usize = 1;
    pub const R_EYE: usize = 2;
    pub const L_EAR: usize = 3;
    pub const R_EAR: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const R_SHOULDER: usize = 6;
    pub const L_ELBOW: usize = 7;
    pub const R_ELBOW: usize = 8;
    pub const L_WRIST: usize = 9;
    pub const R_WRIST: usize = 10;
    pub const L_HIP: usize = 11;
    pub const R_HIP: usize = 12;
    pub const L_KNEE: usize = 13;
    pub const R_KNEE: usize = 14;
    pub const L_ANKLE: usize = 15;
    pub const R_ANKLE: usize = 16;
    pub const HEAD: usize = 17;
    pub const NECK: usize = 18;
    pub const HIP: usize = 19;
    pub const L_BIG_TOE: usize = 20;
    pub const R_BIG_TOE: usize = 21;
    pub const L_SMALL_TOE: usize = 22;
    pub const R_SMALL_TOE: usize = 23;
    pub const L_HEEL: usize = 24;
    pub const R_HEEL: usize = 25;

    pub const NAMES: [&str; super::N_KEYPOINTS] = [
        "nose", "l_eye", "r_eye", "l_ear", "r_ear", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist",
        "r_wrist", "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle", "head", "neck", "hip", "l_big_toe",
        "r_big_toe", "l_small_toe", "r_small_toe", "l_heel", "r_heel",
    ];
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CamError {
    #[error("camera `{id}`: invalid intrinsics ({reason})")]
    InvalidIntrinsics { id: String, reason: &'static str },
    #[error("camera `{id}`: rotation is not orthonormal (deviation {deviation:.3e}, det {det:.6})")]
    NotOrthonormal { id: String, deviation: f64, det: f64 },
    #[error("camera `{id}`: non-finite parameter")]
    NonFinite { id: String },
    #[error("point is behind the camera (depth {depth:.3e} m)")]
    BehindCamera { depth: f64 },
    #[error("only {have} confident view(s), need at least 2")]
    InsufficientViews { have: usize },
    #[error("viewing rays are parallel; geometry is degenerate")]
    DegenerateGeometry,
    #[error("{cams} cameras but {obs} observations")]
    ObservationCount { cams: usize, obs: usize },
    #[error("frame timestamps differ by {spread:.4} s, tolerance {tolerance:.4} s")]
    TimestampMismatch { spread: f64, tolerance: f64 },
    #[error("no calibration for camera `{0}`")]
    UnknownCamera(String),
    #[error("keypoint confidence {0} outside [0, 1]")]
    BadConfidence(f64),
}

/// One calibrated camera: `x_cam = R·x_world + t`, pixels = `K·distort(x_cam / z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub id: String,
    /// Row-major 3×3 intrinsics.
    pub k: [f64; 9],
    /// Row-major world→camera rotation.
    pub r: [f64; 9],
    pub t: [f64; 3],
    /// `[k1, k2, k3, p1, p2]`.
    pub dist: [f64; 5],
}

/// Rotation tolerance accepted when loading calibration.
pub const ORTHONORMAL_TOL: f64 = 1e-6;
const MIN_DEPTH: f64 = 1e-9;
const UNDISTORT_ITERS: usize = 5;

impl CameraParams {
    pub fn new(id: impl Into<String>, k: [f64; 9], r: [f64; 9], t: [f64; 3], dist: [f64; 5]) -> Result<Self, CamError> {
        let cam = Self {
            id: id.into(),
            k,
            r,
            t,
            dist,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Undistorted pinhole camera with square pixels.
    pub fn pinhole(id: impl Into<String>, f: f64, cx: f64, cy: f64, r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self, CamError> {
        let mut rr = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rr[i * 3 + j] = r[(i, j)];
            }
        }
        Self::new(id, [f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0], rr, [t.x, t.y, t.z], [0.0; 5])
    }

    pub fn validate(&self) -> Result<(), CamError> {
        let all = self.k.iter().chain(&self.r).chain(&self.t).chain(&self.dist);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(CamError::NonFinite { id: self.id.clone() });
        }
        let k = &self.k;
        let bad = |reason| CamError::InvalidIntrinsics {
            id: self.id.clone(),
            reason,
        };
        if k[3] != 0.0 || k[6] != 0.0 || k[7] != 0.0 || k[8] != 1.0 {
            return Err(bad("K must be upper-triangular with K[2][2] = 1"));
        }
        if k[0] <= 0.0 || k[4] <= 0.0 {
            return Err(bad("focal lengths must be positive"));
        }
        let r = self.rotation();
        let deviation = (r * r.transpose() - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if deviation > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(CamError::NotOrthonormal {
                id: self.id.clone(),
                deviation,
                det,
            });
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.k)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.r)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.t)
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// Re-express the camera after the world frame is moved by `x ↦ rot·x + trans`.
    /// Triangulated points then come out mapped by the inverse transform.
    pub fn compose_world(&self, rot: &Matrix3<f64>, trans: &Vector3<f64>) -> Self {
        let r = self.rotation() * rot;
        let t = self.rotation() * trans + self.translation();
        let mut out = self.clone();
        for i in 0..3 {
            for j in 0..3 {
                out.r[i * 3 + j] = r[(i, j)];
            }
            out.t[i] = t[i];
        }
        out
    }

    fn has_distortion(&self) -> bool {
        self.dist.iter().any(|&d| d != 0.0)
    }

    /// Apply lens distortion to normalized coordinates.
    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        let [k1, k2, k3, p1, p2] = self.dist;
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        (
            x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
            y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y,
        )
    }

    fn distort_jacobian(&self, x: f64, y: f64) -> Matrix3<f64> {
        let [k1, k2, k3, p1, p2] = self.dist;
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        let dr = k1 + 2.0 * k2 * r2 + 3.0 * k3 * r2 * r2;
        let (drx, dry) = (2.0 * x * dr, 2.0 * y * dr);
        Matrix3::new(
            radial + x * drx + 2.0 * p1 * y + 6.0 * p2 * x,
            x * dry + 2.0 * p1 * x + 2.0 * p2 * y,
            0.0,
            y * drx + 2.0 * p1 * x + 2.0 * p2 * y,
            radial + y * dry + 6.0 * p1 * y + 2.0 * p2 * x,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Pixel to normalized image coordinates, undoing distortion by fixed-point iteration.
    pub fn undistort(&self, u: f64, v: f64) -> (f64, f64) {
        let k = &self.k;
        let yd = (v - k[5]) / k[4];
        let xd = (u - k[2] - k[1] * yd) / k[0];
        if !self.has_distortion() {
            return (xd, yd);
        }
        let [k1, k2, k3, p1, p2] = self.dist;
        let (mut x, mut y) = (xd, yd);
        for _ in 0..UNDISTORT_ITERS {
            let r2 = x * x + y * y;
            let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
            let dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
            let dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
            x = (xd - dx) / radial;
            y = (yd - dy) / radial;
        }
        (x, y)
    }

    fn pixel_from_normalized(&self, xd: f64, yd: f64) -> Vector2<f64> {
        let k = &self.k;
        Vector2::new(k[0] * xd + k[1] * yd + k[2], k[4] * yd + k[5])
    }

    /// Projection and its 2×3 Jacobian with respect to the world point.
    fn project_with_jacobian(&self, p: &Vector3<f64>) -> Result<(Vector2<f64>, Matrix2x3<f64>), CamError> {
        let pc = self.to_camera(p);
        if pc.z <= MIN_DEPTH {
            return Err(CamError::BehindCamera { depth: pc.z });
        }
        let (x, y) = (pc.x / pc.z, pc.y / pc.z);
        let (xd, yd) = self.distort(x, y);
        let uv = self.pixel_from_normalized(xd, yd);
        let k = &self.k;
        let kk = Matrix2x3::new(k[0], k[1], 0.0, 0.0, k[4], 0.0);
        let iz = 1.0 / pc.z;
        let dn = Matrix3::new(iz, 0.0, -x * iz, 0.0, iz, -y * iz, 0.0, 0.0, 0.0);
        let j = kk * self.distort_jacobian(x, y) * dn * self.rotation();
        Ok((uv, j))
    }
}

/// Project a world point to distorted pixel coordinates.
pub fn project(cam: &CameraParams, point: &Vector3<f64>) -> Result<(f64, f64), CamError> {
    let pc = cam.to_camera(point);
    if pc.z <= MIN_DEPTH {
        return Err(CamError::BehindCamera { depth: pc.z });
    }
    let (xd, yd) = cam.distort(pc.x / pc.z, pc.y / pc.z);
    let uv = cam.pixel_from_normalized(xd, yd);
    Ok((uv.x, uv.y))
}

/// One camera's sighting of a keypoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub u: f64,
    pub v: f64,
    pub conf: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangulationConfig {
    /// Views at or below this confidence are ignored.
    pub min_confidence: f64,
    /// Rays closer than this angle (radians) count as parallel.
    pub parallel_tol: f64,
    /// Camera frame rate; frames must share a timestamp within half a period.
    pub rate_hz: f64,
    /// Frames a missing keypoint may be carried forward.
    pub max_fill: u32,
}

impl Default for TriangulationConfig {
    fn default() -> Self {
        Self {
            min_confidence: 0.3,
            parallel_tol: 1e-6,
            rate_hz: 10.0,
            max_fill: 3,
        }
    }
}

/// Weighted DLT followed by one Gauss–Newton step on the pixel residual.
/// Returns the point and the RMS pixel error over contributing views.
pub fn triangulate(cams: &[CameraParams], obs: &[Observation], cfg: &TriangulationConfig) -> Result<(Vector3<f64>, f64), CamError> {
    if cams.len() != obs.len() {
        return Err(CamError::ObservationCount {
            cams: cams.len(),
            obs: obs.len(),
        });
    }
    let used: Vec<(&CameraParams, &Observation)> = cams
        .iter()
        .zip(obs)
        .filter(|(_, o)| o.conf > cfg.min_confidence && o.u.is_finite() && o.v.is_finite())
        .collect();
    if used.len() < 2 {
        return Err(CamError::InsufficientViews { have: used.len() });
    }

    let mut rays = Vec::with_capacity(used.len());
    let mut a = DMatrix::<f64>::zeros(2 * used.len(), 4);
    for (i, (cam, o)) in used.iter().enumerate() {
        let (x, y) = cam.undistort(o.u, o.v);
        let r = cam.rotation();
        let t = cam.translation();
        rays.push((r.transpose() * Vector3::new(x, y, 1.0)).normalize());
        for c in 0..3 {
            a[(2 * i, c)] = o.conf * (x * r[(2, c)] - r[(0, c)]);
            a[(2 * i + 1, c)] = o.conf * (y * r[(2, c)] - r[(1, c)]);
        }
        a[(2 * i, 3)] = o.conf * (x * t.z - t.x);
        a[(2 * i + 1, 3)] = o.conf * (y * t.z - t.y);
    }
    let mut widest: f64 = 0.0;
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            widest = widest.max(rays[i].cross(&rays[j]).norm().atan2(rays[i].dot(&rays[j])));
        }
    }
    if widest < cfg.parallel_tol {
        return Err(CamError::DegenerateGeometry);
    }

    // Null vector of A via the symmetric 4×4 normal matrix is less accurate
    // than an SVD of A itself.
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or(CamError::DegenerateGeometry)?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &s)| if s < best.1 { (i, s) } else { best });
    let h = vt.row(imin);
    if h[3].abs() < 1e-300 {
        return Err(CamError::DegenerateGeometry);
    }
    let mut p = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);

    let mut jtj = Matrix3::<f64>::zeros();
    let mut jtr = Vector3::<f64>::zeros();
    for (cam, o) in &used {
        let (uv, j) = cam.project_with_jacobian(&p)?;
        let r = Vector2::new(uv.x - o.u, uv.y - o.v) * o.conf;
        let j = j * o.conf;
        jtj += j.transpose() * j;
        jtr += j.transpose() * r;
    }
    if let Some(chol) = jtj.cholesky() {
        p -= chol.solve(&jtr);
    }

    let mut sq = 0.0;
    for (cam, o) in &used {
        let (u, v) = project(cam, &p)?;
        sq += (u - o.u).powi(2) + (v - o.v).powi(2);
    }
    Ok((p, (sq / used.len() as f64).sqrt()))
}

/// 2D detections of one camera at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoints2D {
    pub camera_id: String,
    pub t: f64,
    /// `(u, v, confidence)` per keypoint.
    pub points: [[f64; 3]; N_KEYPOINTS],
}

impl Keypoints2D {
    pub fn validate(&self) -> Result<(), CamError> {
        for p in &self.points {
            if !(0.0..=1.0).contains(&p[2]) {
                return Err(CamError::BadConfidence(p[2]));
            }
        }
        Ok(())
    }
}

/// Triangulated joint centers at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointCenters3D {
    pub t: f64,
    pub points: [[f64; 3]; N_KEYPOINTS],
    /// RMS reprojection error in pixels; 0 for missing points.
    pub reproj_error: [f64; N_KEYPOINTS],
    pub valid: [bool; N_KEYPOINTS],
    /// Points copied forward from an earlier frame.
    pub filled: [bool; N_KEYPOINTS],
}

impl JointCenters3D {
    pub fn from_points(t: f64, points: [[f64; 3]; N_KEYPOINTS]) -> Self {
        Self {
            t,
            points,
            reproj_error: [0.0; N_KEYPOINTS],
            valid: [true; N_KEYPOINTS],
            filled: [false; N_KEYPOINTS],
        }
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.points[i])
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Triangulate all keypoints of one synchronized multi-camera frame.
/// Points without two confident views are marked invalid.
pub fn triangulate_frame(cams: &[CameraParams], frames: &[Keypoints2D], cfg: &TriangulationConfig) -> Result<JointCenters3D, CamError> {
    let tmin = frames.iter().map(|f| f.t).fold(f64::INFINITY, f64::min);
    let tmax = frames.iter().map(|f| f.t).fold(f64::NEG_INFINITY, f64::max);
    let tolerance = 0.5 / cfg.rate_hz;
    if tmax - tmin > tolerance {
        return Err(CamError::TimestampMismatch {
            spread: tmax - tmin,
            tolerance,
        });
    }
    let mut ordered = Vec::with_capacity(frames.len());
    for f in frames {
        f.validate()?;
        let cam = cams
            .iter()
            .find(|c| c.id == f.camera_id)
            .ok_or_else(|| CamError::UnknownCamera(f.camera_id.clone()))?;
        ordered.push((cam.clone(), f));
    }
    let sub_cams: Vec<CameraParams> = ordered.iter().map(|(c, _)| c.clone()).collect();
    let t = frames.iter().map(|f| f.t).sum::<f64>() / frames.len().max(1) as f64;
    let mut out = JointCenters3D {
        t,
        points: [[0.0; 3]; N_KEYPOINTS],
        reproj_error: [0.0; N_KEYPOINTS],
        valid: [false; N_KEYPOINTS],
        filled: [false; N_KEYPOINTS],
    };
    for j in 0..N_KEYPOINTS {
        let obs: Vec<Observation> = ordered
            .iter()
            .map(|(_, f)| Observation {
                u: f.points[j][0],
                v: f.points[j][1],
                conf: f.points[j][2],
            })
            .collect();
        match triangulate(&sub_cams, &obs, cfg) {
            Ok((p, e)) => {
                out.points[j] = [p.x, p.y, p.z];
                out.reproj_error[j] = e;
                out.valid[j] = true;
            }
            Err(CamError::InsufficientViews { .. } | CamError::DegenerateGeometry | CamError::BehindCamera { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Carries missing points forward from the last valid frame for a bounded number of frames.
#[derive(Clone, Debug)]
pub struct GapFiller {
    max_fill: u32,
    last: [Option<[f64; 3]>; N_KEYPOINTS],
    age: [u32; N_KEYPOINTS],
}

impl GapFiller {
    pub fn new(max_fill: u32) -> Self {
        Self {
            max_fill,
            last: [None; N_KEYPOINTS],
            age: [0; N_KEYPOINTS],
        }
    }

    pub fn apply(&mut self, jc: &mut JointCenters3D) {
        for j in 0..N_KEYPOINTS {
            if jc.valid[j] {
                self.last[j] = Some(jc.points[j]);
                self.age[j] = 0;
                continue;
            }
            if let Some(p) = self.last[j] {
                if self.age[j] < self.max_fill {
                    self.age[j] += 1;
                    jc.points[j] = p;
                    jc.valid[j] = true;
                    jc.filled[j] = true;
                    continue;
                }
                self.last[j] = None;
            }
        }
    }
}
