use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector3;

use super::{BiomechModel, FallbackRule, FallbackTerm, Joint, Landmark, Masks, ModelSpec, ScalingPair, Segment, Side};
use crate::camgeo::kp;

fn seg(name: &str, parent: Option<&str>, offset: [f64; 3]) -> Segment {
    Segment {
        name: name.into(),
        parent: parent.map(Into::into),
        offset,
        scale: 1.0,
    }
}

fn joint(name: &str, segment: &str, axis: [f64; 3], lower: f64, upper: f64, side: Side) -> Joint {
    Joint {
        name: name.into(),
        segment: segment.into(),
        axis,
        lower,
        upper,
        side,
    }
}

fn lm(name: &str, segment: &str, offset: [f64; 3]) -> Landmark {
    Landmark {
        name: name.into(),
        segment: segment.into(),
        offset,
    }
}

fn rule(marker: &str, terms: &[(usize, f64)]) -> FallbackRule {
    FallbackRule {
        marker: marker.into(),
        terms: terms
            .iter()
            .map(|&(k, w)| FallbackTerm {
                kp: kp::NAMES[k].into(),
                w,
            })
            .collect(),
    }
}

/// Side-dependent names and signs; `z` is +1 on the right.
struct Limb {
    tag: &'static str,
    z: f64,
    side: Side,
}

const RIGHT: Limb = Limb {
    tag: "r",
    z: 1.0,
    side: Side::Right,
};
const LEFT: Limb = Limb {
    tag: "l",
    z: -1.0,
    side: Side::Left,
};

fn named(base: &str, l: &Limb) -> String {
    alloc::format!("{base}_{}", l.tag)
}

/// The shipped 22-DoF, 29-marker template (segment lengths of a ~1.75 m adult).
///
/// Marker offsets are derived from the fallback table at the neutral pose, so
/// fallback markers coincide with model markers when `q = 0`.
pub fn default_template() -> BiomechModel {
    let mut segments = vec![
        seg("pelvis", None, [0.0; 3]),
        seg("thorax", Some("pelvis"), [-0.02, 0.10, 0.0]),
        seg("head", Some("thorax"), [0.0, 0.50, 0.0]),
    ];
    for l in [&RIGHT, &LEFT] {
        segments.push(seg(&named("thigh", l), Some("pelvis"), [0.0, 0.0, 0.09 * l.z]));
        segments.push(seg(&named("shank", l), Some(&named("thigh", l)), [0.0, -0.42, 0.0]));
        segments.push(seg(&named("foot", l), Some(&named("shank", l)), [0.0, -0.41, 0.0]));
    }
    for l in [&RIGHT, &LEFT] {
        segments.push(seg(&named("upperarm", l), Some("thorax"), [0.0, 0.40, 0.18 * l.z]));
        segments.push(seg(&named("forearm", l), Some(&named("upperarm", l)), [0.0, -0.30, 0.0]));
    }

    let c = Side::Center;
    let mut joints = vec![
        joint("lumbar_flexion", "thorax", [0.0, 0.0, -1.0], -0.6, 1.4, c),
        joint("lumbar_bending", "thorax", [1.0, 0.0, 0.0], -0.5, 0.5, c),
        joint("lumbar_rotation", "thorax", [0.0, 1.0, 0.0], -0.6, 0.6, c),
        joint("neck_flexion", "head", [0.0, 0.0, -1.0], -0.6, 0.8, c),
    ];
    for l in [&RIGHT, &LEFT] {
        let thigh = named("thigh", l);
        joints.push(joint(&named("hip_flexion", l), &thigh, [0.0, 0.0, 1.0], -0.5, 2.1, l.side));
        joints.push(joint(&named("hip_adduction", l), &thigh, [l.z, 0.0, 0.0], -0.7, 0.4, l.side));
        joints.push(joint(&named("knee_flexion", l), &named("shank", l), [0.0, 0.0, -1.0], 0.0, 2.3, l.side));
        joints.push(joint(&named("ankle_flexion", l), &named("foot", l), [0.0, 0.0, 1.0], -0.7, 0.5, l.side));
    }
    for l in [&RIGHT, &LEFT] {
        let arm = named("upperarm", l);
        let fore = named("forearm", l);
        joints.push(joint(&named("shoulder_flexion", l), &arm, [0.0, 0.0, 1.0], -0.8, 2.6, l.side));
        joints.push(joint(&named("shoulder_abduction", l), &arm, [-l.z, 0.0, 0.0], -0.3, 1.3, l.side));
        joints.push(joint(&named("shoulder_rotation", l), &arm, [0.0, l.z, 0.0], -1.0, 1.0, l.side));
        joints.push(joint(&named("elbow_flexion", l), &fore, [0.0, 0.0, 1.0], 0.0, 2.4, l.side));
        joints.push(joint(&named("pronation", l), &fore, [0.0, l.z, 0.0], -1.2, 1.2, l.side));
    }

    let jc = |k: usize, segment: &str, offset: [f64; 3]| lm(kp::NAMES[k], segment, offset);
    let joint_centers = vec![
        jc(kp::NOSE, "head", [0.11, 0.08, 0.0]),
        jc(kp::L_EYE, "head", [0.09, 0.11, -0.03]),
        jc(kp::R_EYE, "head", [0.09, 0.11, 0.03]),
        jc(kp::L_EAR, "head", [0.0, 0.10, -0.075]),
        jc(kp::R_EAR, "head", [0.0, 0.10, 0.075]),
        jc(kp::L_SHOULDER, "upperarm_l", [0.0; 3]),
        jc(kp::R_SHOULDER, "upperarm_r", [0.0; 3]),
        jc(kp::L_ELBOW, "forearm_l", [0.0; 3]),
        jc(kp::R_ELBOW, "forearm_r", [0.0; 3]),
        jc(kp::L_WRIST, "forearm_l", [0.0, -0.26, 0.0]),
        jc(kp::R_WRIST, "forearm_r", [0.0, -0.26, 0.0]),
        jc(kp::L_HIP, "thigh_l", [0.0; 3]),
        jc(kp::R_HIP, "thigh_r", [0.0; 3]),
        jc(kp::L_KNEE, "shank_l", [0.0; 3]),
        jc(kp::R_KNEE, "shank_r", [0.0; 3]),
        jc(kp::L_ANKLE, "foot_l", [0.0; 3]),
        jc(kp::R_ANKLE, "foot_r", [0.0; 3]),
        jc(kp::HEAD, "head", [0.0, 0.20, 0.0]),
        jc(kp::NECK, "thorax", [0.0, 0.47, 0.0]),
        jc(kp::HIP, "pelvis", [-0.02, 0.07, 0.0]),
        jc(kp::L_BIG_TOE, "foot_l", [0.15, -0.06, 0.025]),
        jc(kp::R_BIG_TOE, "foot_r", [0.15, -0.06, -0.025]),
        jc(kp::L_SMALL_TOE, "foot_l", [0.15, -0.06, -0.035]),
        jc(kp::R_SMALL_TOE, "foot_r", [0.15, -0.06, 0.035]),
        jc(kp::L_HEEL, "foot_l", [-0.05, -0.06, 0.0]),
        jc(kp::R_HEEL, "foot_r", [-0.05, -0.06, 0.0]),
    ];

    // (marker, segment, fallback terms)
    let mut marker_defs: Vec<(String, &str, Vec<(usize, f64)>)> = vec![
        ("RASI".into(), "pelvis", vec![(kp::HIP, 1.0), (kp::R_HIP, 0.6), (kp::L_HIP, -0.6)]),
        ("LASI".into(), "pelvis", vec![(kp::HIP, 1.0), (kp::R_HIP, -0.6), (kp::L_HIP, 0.6)]),
        ("RPSI".into(), "pelvis", vec![(kp::HIP, 2.0), (kp::R_HIP, -0.25), (kp::L_HIP, -0.75)]),
        ("LPSI".into(), "pelvis", vec![(kp::HIP, 2.0), (kp::R_HIP, -0.75), (kp::L_HIP, -0.25)]),
        ("C7".into(), "thorax", vec![(kp::NECK, 1.5), (kp::R_SHOULDER, -0.25), (kp::L_SHOULDER, -0.25)]),
        ("R_SHO".into(), "thorax", vec![(kp::R_SHOULDER, 1.15), (kp::L_SHOULDER, -0.15)]),
        ("L_SHO".into(), "thorax", vec![(kp::L_SHOULDER, 1.15), (kp::R_SHOULDER, -0.15)]),
        (
            "HEAD_FRONT".into(),
            "head",
            vec![(kp::R_EYE, 0.75), (kp::L_EYE, 0.75), (kp::R_EAR, -0.25), (kp::L_EAR, -0.25)],
        ),
        ("HEAD_TOP".into(), "head", vec![(kp::HEAD, 1.2), (kp::R_EAR, -0.1), (kp::L_EAR, -0.1)]),
    ];
    let legs = [
        ("R", "r", kp::R_KNEE, kp::R_ANKLE, kp::R_BIG_TOE, kp::R_SMALL_TOE, kp::R_HEEL),
        ("L", "l", kp::L_KNEE, kp::L_ANKLE, kp::L_BIG_TOE, kp::L_SMALL_TOE, kp::L_HEEL),
    ];
    let shank_names = ["shank_r", "shank_l"];
    let foot_names = ["foot_r", "foot_l"];
    for (i, (p, _, knee, ankle, big, small, heel)) in legs.into_iter().enumerate() {
        // lateral direction comes from the toe spread
        marker_defs.push((alloc::format!("{p}_KNEE_LAT"), shank_names[i], vec![(knee, 1.0), (small, 0.8), (big, -0.8)]));
        marker_defs.push((alloc::format!("{p}_KNEE_MED"), shank_names[i], vec![(knee, 1.0), (small, -0.8), (big, 0.8)]));
        marker_defs.push((alloc::format!("{p}_ANK_LAT"), shank_names[i], vec![(ankle, 1.0), (small, 0.6), (big, -0.6)]));
        marker_defs.push((alloc::format!("{p}_ANK_MED"), shank_names[i], vec![(ankle, 1.0), (small, -0.6), (big, 0.6)]));
        marker_defs.push((alloc::format!("{p}_TOE"), foot_names[i], vec![(big, 0.5), (small, 0.5)]));
        marker_defs.push((alloc::format!("{p}_HEEL"), foot_names[i], vec![(heel, 1.0)]));
    }
    let arms = [
        ("R", "forearm_r", kp::R_ELBOW, kp::R_WRIST, kp::R_SHOULDER, kp::L_SHOULDER),
        ("L", "forearm_l", kp::L_ELBOW, kp::L_WRIST, kp::L_SHOULDER, kp::R_SHOULDER),
    ];
    for (p, fore, elbow, wrist, same, other) in arms {
        marker_defs.push((alloc::format!("{p}_ELB_LAT"), fore, vec![(elbow, 1.0), (same, 0.1), (other, -0.1)]));
        marker_defs.push((alloc::format!("{p}_ELB_MED"), fore, vec![(elbow, 1.0), (same, -0.1), (other, 0.1)]));
        marker_defs.push((alloc::format!("{p}_WR_RAD"), fore, vec![(wrist, 1.0), (same, 0.08), (other, -0.08)]));
        marker_defs.push((alloc::format!("{p}_WR_ULN"), fore, vec![(wrist, 1.0), (same, -0.08), (other, 0.08)]));
    }

    let masks = Masks {
        lower: (0..12).collect(),
        upper: [0, 1, 2, 3, 4, 5, 8, 9].into_iter().chain(12..22).collect(),
    };
    let pair = |a: &str, b: &str, segs: &[&str]| ScalingPair {
        a: a.into(),
        b: b.into(),
        segments: segs.iter().map(|s| s.to_string()).collect(),
    };
    let scaling_pairs = vec![
        pair("RASI", "LASI", &["pelvis"]),
        pair("R_SHO", "L_SHO", &["thorax"]),
        pair("HEAD_FRONT", "HEAD_TOP", &["head"]),
        pair("R_KNEE_LAT", "R_ANK_LAT", &["thigh_r", "shank_r"]),
        pair("L_KNEE_LAT", "L_ANK_LAT", &["thigh_l", "shank_l"]),
        pair("R_TOE", "R_HEEL", &["foot_r"]),
        pair("L_TOE", "L_HEEL", &["foot_l"]),
        pair("R_ELB_LAT", "R_WR_RAD", &["upperarm_r", "forearm_r"]),
        pair("L_ELB_LAT", "L_WR_RAD", &["upperarm_l", "forearm_l"]),
    ];

    let markers: Vec<Landmark> = marker_defs.iter().map(|(n, s, _)| lm(n, s, [0.0; 3])).collect();
    let fallback: Vec<FallbackRule> = marker_defs.iter().map(|(n, _, t)| rule(n, t)).collect();
    let mut spec = ModelSpec {
        segments,
        joints,
        markers,
        joint_centers,
        masks,
        scaling_pairs: Vec::new(),
        fallback,
    };

    // Place markers at their fallback positions in the neutral pose.
    let draft = BiomechModel::new(spec.clone()).expect("template structure");
    let zero = vec![0.0; draft.n_dof()];
    let base = [0.0; 6];
    let kin = draft.kinematics(&zero, &base).expect("template kinematics");
    let jcs = draft.joint_centers(&zero, &base, 0.0).expect("template joint centers");
    for (mi, terms) in draft.fallback_rules() {
        let mut p = Vector3::zeros();
        for &(k, w) in terms {
            p += jcs.point(k) * w;
        }
        let s = draft.marker_segment(*mi);
        let pose = &kin.segments[s];
        let local = pose.rot.inverse() * (p - pose.pos);
        spec.markers[*mi].offset = [local.x, local.y, local.z];
    }
    spec.scaling_pairs = scaling_pairs;
    let model = BiomechModel::new(spec).expect("template structure");
    debug_assert!(model.validate_standard().is_ok());
    model
}
