use alloc::vec::Vec;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::SynthError;
use crate::biomech::{fallback_markers, BiomechModel, JointAngleFrame};
use crate::camgeo::{project, CameraParams, JointCenters3D, Keypoints2D, N_KEYPOINTS};
use crate::ik::{IkConfig, IkSession, Unlimited};

/// Rigid motion `x ↦ rot·x + trans`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rot: UnitQuaternion<f64>,
    pub trans: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rot: UnitQuaternion::identity(),
            trans: Vector3::zeros(),
        }
    }

    /// Uniformly distributed rotation, translation uniform in ±`max_shift` per axis.
    pub fn random<R: Rng>(rng: &mut R, max_shift: f64) -> Self {
        let mut c = [0.0; 4];
        loop {
            for v in &mut c {
                *v = rng.sample(StandardNormal);
            }
            if c.iter().map(|v| v * v).sum::<f64>() > 1e-12 {
                break;
            }
        }
        let rot = UnitQuaternion::from_quaternion(Quaternion::new(c[0], c[1], c[2], c[3]));
        let trans = Vector3::new(
            rng.random_range(-max_shift..=max_shift),
            rng.random_range(-max_shift..=max_shift),
            rng.random_range(-max_shift..=max_shift),
        );
        Self { rot, trans }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p + self.trans
    }

    pub fn apply_jcp(&self, jc: &JointCenters3D) -> JointCenters3D {
        let mut out = jc.clone();
        for (o, p) in out.points.iter_mut().zip(&jc.points) {
            let v = self.apply(&Vector3::new(p[0], p[1], p[2]));
            *o = [v.x, v.y, v.z];
        }
        out
    }

    /// Angle of the relative rotation between two transforms.
    pub fn angle_to(&self, other: &Self) -> f64 {
        self.rot.angle_to(&other.rot)
    }
}

/// Maximum translation per axis of the viewpoint transforms (m).
pub const MAX_SHIFT: f64 = 1.0;
/// Minimum pairwise rotation difference within one schedule (rad).
pub const MIN_SEPARATION: f64 = 0.1;

/// `count` seeded transforms whose rotations differ pairwise by more than 0.1 rad.
pub fn transform_schedule(seed: u64, count: usize) -> Vec<RigidTransform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<RigidTransform> = Vec::with_capacity(count);
    while out.len() < count {
        let t = RigidTransform::random(&mut rng, MAX_SHIFT);
        if out.iter().all(|o| o.angle_to(&t) > MIN_SEPARATION) {
            out.push(t);
        }
    }
    out
}

/// Apply one seeded rigid transform to every point of a JCP sequence; `None`
/// selects the identity.
pub fn random_rigid_transform(seq: &[JointCenters3D], seed: Option<u64>) -> (RigidTransform, Vec<JointCenters3D>) {
    let t = match seed {
        Some(s) => RigidTransform::random(&mut ChaCha8Rng::seed_from_u64(s), MAX_SHIFT),
        None => RigidTransform::identity(),
    };
    (t, seq.iter().map(|jc| t.apply_jcp(jc)).collect())
}

fn look_at(id: &str, center: Vector3<f64>, target: Vector3<f64>, f: f64) -> CameraParams {
    let z = (target - center).normalize();
    let x = Vector3::new(0.0, -1.0, 0.0).cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    CameraParams::pinhole(id, f, 960.0, 540.0, r, -(r * center)).expect("orthonormal look-at rotation")
}

/// Two 1920×1080 cameras 3 m in front of the origin, 2 m apart, aimed at hip height.
pub fn default_rig() -> Vec<CameraParams> {
    let target = Vector3::new(0.0, 1.0, 0.0);
    [("left", -1.0), ("right", 1.0)]
        .into_iter()
        .map(|(id, x)| look_at(id, Vector3::new(x, 1.2, 3.0), target, 1400.0))
        .collect()
}

/// Project FK joint centers into every camera; returns one stream per camera.
pub fn render_keypoints(frames: &[JointAngleFrame], model: &BiomechModel, cams: &[CameraParams], noise_px: f64, seed: u64) -> Result<Vec<Vec<Keypoints2D>>, SynthError> {
    if !(noise_px >= 0.0) {
        return Err(SynthError::Config("pixel noise must be non-negative"));
    }
    let normal = Normal::new(0.0, noise_px).map_err(|_| SynthError::Config("pixel noise"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<Keypoints2D>> = cams.iter().map(|_| Vec::with_capacity(frames.len())).collect();
    for f in frames {
        let jc = model.joint_centers(&f.q, &f.base, f.t)?;
        for (cam, stream) in cams.iter().zip(&mut out) {
            let mut points = [[0.0; 3]; N_KEYPOINTS];
            for (p, x) in points.iter_mut().zip(&jc.points) {
                let (u, v) = project(cam, &Vector3::new(x[0], x[1], x[2]))?;
                let (du, dv) = if noise_px > 0.0 { (normal.sample(&mut rng), normal.sample(&mut rng)) } else { (0.0, 0.0) };
                *p = [u + du, v + dv, 1.0];
            }
            stream.push(Keypoints2D {
                camera_id: cam.id.clone(),
                t: f.t,
                points,
            });
        }
    }
    Ok(out)
}

/// Joint angles from a JCP stream: geometric marker fallback, then warm-started IK.
pub fn recover_angles(jcps: &[JointCenters3D], model: &BiomechModel, cfg: &IkConfig) -> Result<Vec<JointAngleFrame>, SynthError> {
    let mut session = IkSession::new(model.clone(), cfg.clone())?;
    jcps.iter()
        .map(|jc| {
            let markers = fallback_markers(model, jc)?;
            Ok(session.solve(&markers, &Unlimited)?.frame)
        })
        .collect()
}
