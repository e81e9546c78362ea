use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use num_traits::Float;

use super::{BiomechError, BiomechModel, MarkerFrame};

/// Largest per-segment RMS residual (m) accepted from a calibration frame.
pub const STANDING_RESIDUAL_MAX: f64 = 0.05;
const SCALE_MIN: f64 = 0.5;
const SCALE_MAX: f64 = 2.0;

/// Rigid transform `x ↦ rot·x + trans`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidFit {
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

/// Weighted least-squares rigid alignment of `src` onto `dst` (Kabsch).
/// Returns `None` when fewer than three points carry weight or they are collinear.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>], w: &[f64]) -> Option<RigidFit> {
    let wsum: f64 = w.iter().sum();
    if src.len() != dst.len() || src.len() != w.len() || w.iter().filter(|v| **v > 0.0).count() < 3 || wsum <= 0.0 {
        return None;
    }
    let mut cs = Vector3::zeros();
    let mut cd = Vector3::zeros();
    for ((s, d), wi) in src.iter().zip(dst).zip(w) {
        cs += s * *wi;
        cd += d * *wi;
    }
    cs /= wsum;
    cd /= wsum;
    let mut h = Matrix3::zeros();
    for ((s, d), wi) in src.iter().zip(dst).zip(w) {
        h += (s - cs) * (d - cd).transpose() * *wi;
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    if sv[1] <= 1e-12 * sv[0].max(1e-300) {
        return None;
    }
    let d = (vt.transpose() * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rot = vt.transpose() * fix * u.transpose();
    Some(RigidFit {
        rot,
        trans: cd - rot * cs,
    })
}

/// Per-segment scales from a standing calibration frame.
///
/// Each scaling pair sets `scale = measured / unscaled template distance`,
/// clamped to `[0.5, 2]`, for its listed segments. The scaled neutral model is
/// then rigidly aligned to the frame; any segment whose marker RMS residual
/// exceeds 5 cm rejects the frame as non-standing.
pub fn scale_model(model: &BiomechModel, standing: &MarkerFrame) -> Result<BiomechModel, BiomechError> {
    let n = model.n_markers();
    if standing.markers.len() != n || standing.valid.len() != n {
        return Err(BiomechError::WrongLength {
            expected: n,
            got: standing.markers.len(),
        });
    }
    for (i, (m, v)) in standing.markers.iter().zip(&standing.valid).enumerate() {
        if !*v || m.iter().any(|x| !x.is_finite()) {
            return Err(BiomechError::InvalidMarker(model.markers()[i].name.clone()));
        }
    }

    let mut scaled = model.clone();
    for (a, b, segs) in model.pairs() {
        let oa = Vector3::from_column_slice(&model.markers()[*a].offset);
        let ob = Vector3::from_column_slice(&model.markers()[*b].offset);
        let measured = (standing.marker(*a) - standing.marker(*b)).norm();
        let s = (measured / (oa - ob).norm()).clamp(SCALE_MIN, SCALE_MAX);
        for &seg in segs {
            scaled.spec_mut().segments[seg].scale = s;
        }
    }

    let zero = vec![0.0; scaled.n_dof()];
    let neutral = scaled.forward_kinematics(&zero, &[0.0; 6], standing.t)?;
    let src: Vec<Vector3<f64>> = (0..n).map(|i| neutral.marker(i)).collect();
    let dst: Vec<Vector3<f64>> = (0..n).map(|i| standing.marker(i)).collect();
    let fit = kabsch(&src, &dst, &vec![1.0; n]).ok_or(BiomechError::NonFinite("calibration alignment"))?;
    let mut sq = vec![0.0; scaled.n_segments()];
    let mut count = vec![0usize; scaled.n_segments()];
    for i in 0..n {
        let r = fit.rot * src[i] + fit.trans - dst[i];
        let s = scaled.marker_segment(i);
        sq[s] += r.norm_squared();
        count[s] += 1;
    }
    for (s, (e, c)) in sq.iter().zip(&count).enumerate() {
        if *c == 0 {
            continue;
        }
        let rms = (e / *c as f64).sqrt();
        if rms > STANDING_RESIDUAL_MAX {
            return Err(BiomechError::NotStanding {
                segment: scaled.segments()[s].name.clone(),
                rms,
                limit: STANDING_RESIDUAL_MAX,
            });
        }
    }
    Ok(scaled)
}

/// Ratio of each segment's scale in `scaled` to that in `reference`.
pub fn segment_scale_factors(reference: &BiomechModel, scaled: &BiomechModel) -> Vec<f64> {
    reference
        .segments()
        .iter()
        .zip(scaled.segments())
        .map(|(a, b)| b.scale / a.scale)
        .collect()
}

impl RigidFit {
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rot))
    }
}
