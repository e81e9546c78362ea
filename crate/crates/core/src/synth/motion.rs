//! Parametric joint-angle patterns per label. Lower-limb labels own the trunk
//! flexion/rotation and leg DoFs plus pelvis height; upper-limb labels own
//! trunk bending, neck and arms.

use core::f64::consts::{PI, TAU};

use num_traits::Float;
use rand::Rng;

use super::N_DOF;

pub(crate) const LUMBAR_FLEX: usize = 0;
pub(crate) const LUMBAR_BEND: usize = 1;
pub(crate) const LUMBAR_ROT: usize = 2;
pub(crate) const NECK: usize = 3;
const LEG_R: usize = 4;
const LEG_L: usize = 8;
const ARM_R: usize = 12;
const ARM_L: usize = 17;
// offsets inside a leg / arm block
const HIP_FLEX: usize = 0;
const HIP_ADD: usize = 1;
const KNEE: usize = 2;
const ANKLE: usize = 3;
pub(crate) const PRONATION: [usize; 2] = [ARM_R + 4, ARM_L + 4];
const SH_FLEX: usize = 0;
const SH_ABD: usize = 1;
const SH_ROT: usize = 2;
const ELBOW: usize = 3;

pub const STANDING_HEIGHT: f64 = 0.95;
const SITTING_HEIGHT: f64 = 0.55;
const SQUAT_HEIGHT: f64 = 0.45;

/// Whether joint `j` is driven by the lower-limb label.
pub(crate) fn lower_owned(j: usize) -> bool {
    matches!(j, LUMBAR_FLEX | LUMBAR_ROT) || (LEG_R..ARM_R).contains(&j)
}

/// Per-segment variation of one label's pattern.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Style {
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
    pub variant: usize,
    pub offset: [f64; N_DOF],
}

impl Style {
    pub(crate) fn draw<R: Rng>(rng: &mut R) -> Self {
        let mut offset = [0.0; N_DOF];
        for o in &mut offset {
            *o = rng.random_range(-0.06..0.06);
        }
        Self {
            amp: rng.random_range(0.85..1.15),
            freq: rng.random_range(0.9..1.1),
            phase: rng.random_range(0.0..TAU),
            variant: rng.random_range(0..4),
            offset,
        }
    }
}

/// Forearm pronation is invisible in joint centers, so every pattern keeps it
/// neutral; the recovered angle could not follow it.
fn static_offsets(q: &mut [f64; N_DOF], s: &Style, dofs: impl Iterator<Item = usize>) {
    for j in dofs.filter(|j| !PRONATION.contains(j)) {
        q[j] += s.offset[j];
    }
}

/// Lower-limb pattern at time `t`: writes the owned DoFs, returns pelvis height.
pub(crate) fn lower_pose(label: u8, t: f64, s: &Style, q: &mut [f64; N_DOF]) -> f64 {
    match label {
        1 => STANDING_HEIGHT,
        2 => {
            let phi = TAU * 0.9 * s.freq * t + s.phase;
            for (leg, shift) in [(LEG_R, 0.0), (LEG_L, PI)] {
                let p = phi + shift;
                q[leg + HIP_FLEX] = 0.45 * s.amp * p.sin();
                q[leg + KNEE] = 0.35 * s.amp * (1.0 + (p - 0.5 * PI).sin());
                q[leg + ANKLE] = 0.15 * s.amp * (p - 0.25 * PI).sin();
            }
            q[LUMBAR_ROT] = 0.1 * s.amp * phi.sin();
            STANDING_HEIGHT - 0.015 * (1.0 - (2.0 * phi).cos())
        }
        3 => {
            q[LUMBAR_FLEX] = 0.15;
            for leg in [LEG_R, LEG_L] {
                q[leg + HIP_FLEX] = 1.5;
                q[leg + HIP_ADD] = -0.1;
                q[leg + KNEE] = 1.5;
            }
            static_offsets(q, s, (0..ARM_R).filter(|&j| lower_owned(j)));
            SITTING_HEIGHT
        }
        4 => {
            q[LUMBAR_FLEX] = 0.5;
            for leg in [LEG_R, LEG_L] {
                q[leg + HIP_FLEX] = 1.9;
                q[leg + HIP_ADD] = -0.2;
                q[leg + KNEE] = 2.1;
                q[leg + ANKLE] = 0.4;
            }
            static_offsets(q, s, (0..ARM_R).filter(|&j| lower_owned(j)));
            SQUAT_HEIGHT
        }
        _ => unreachable!("steady lower label"),
    }
}

fn reach(q: &mut [f64; N_DOF], arm: usize, c: f64) {
    q[arm + SH_FLEX] = 0.2 + 1.0 * c;
    q[arm + SH_ABD] = 0.1;
    q[arm + ELBOW] = 0.2 + 0.6 * (1.0 - c);
}

fn come(q: &mut [f64; N_DOF], arm: usize, wave: f64) {
    q[arm + SH_FLEX] = 1.0;
    q[arm + SH_ABD] = 0.2;
    q[arm + ELBOW] = 1.0 + 0.6 * wave;
}

/// Upper-limb pattern at time `t`: writes the owned DoFs.
pub(crate) fn upper_pose(label: u8, t: f64, s: &Style, q: &mut [f64; N_DOF]) {
    let arms = || (ARM_R..N_DOF).chain([LUMBAR_BEND, NECK]);
    let cycle = 0.5 * s.amp.min(1.0) * (1.0 - (TAU * 0.5 * s.freq * t + s.phase).cos());
    let wave = s.amp.min(1.0) * (TAU * 1.2 * s.freq * t + s.phase).sin();
    match label {
        8 => {
            reach(q, ARM_R, cycle);
            reach(q, ARM_L, cycle);
            q[NECK] = 0.3 * cycle;
        }
        9 => {
            reach(q, ARM_R, cycle);
            q[LUMBAR_BEND] = -0.15 * cycle;
        }
        10 => {
            reach(q, ARM_L, cycle);
            q[LUMBAR_BEND] = 0.15 * cycle;
        }
        11 => {}
        12 => {
            for arm in [ARM_R, ARM_L] {
                q[arm + SH_FLEX] = 0.4;
                q[arm + SH_ABD] = 0.1;
                q[arm + ELBOW] = 1.4;
            }
            static_offsets(q, s, arms());
        }
        13 => come(q, ARM_R, wave),
        14 => come(q, ARM_L, wave),
        15 => {
            come(q, ARM_R, wave);
            come(q, ARM_L, wave);
        }
        16 => {
            q[ARM_R + SH_FLEX] = 1.45;
            q[ARM_R + SH_ABD] = 0.2;
            q[ARM_R + ELBOW] = 0.15;
            static_offsets(q, s, arms());
        }
        17 => {
            for arm in [ARM_R, ARM_L] {
                match s.variant {
                    // hands on hips
                    0 => {
                        q[arm + SH_ABD] = 0.7;
                        q[arm + SH_ROT] = 0.2;
                        q[arm + ELBOW] = 1.7;
                    }
                    // crossed arms
                    1 => {
                        q[arm + SH_FLEX] = 0.6;
                        q[arm + SH_ROT] = -0.3;
                        q[arm + ELBOW] = 2.0;
                    }
                    // hands behind the back
                    2 => {
                        q[arm + SH_FLEX] = -0.5;
                        q[arm + SH_ABD] = 0.1;
                        q[arm + ELBOW] = 0.6;
                    }
                    _ => {}
                }
            }
            if s.variant == 3 {
                // hand on the head
                q[ARM_R + SH_FLEX] = 2.2;
                q[ARM_R + SH_ABD] = 0.4;
                q[ARM_R + ELBOW] = 2.2;
            }
            static_offsets(q, s, arms());
        }
        _ => unreachable!("upper label"),
    }
}
