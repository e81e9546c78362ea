//! Marker-based inverse kinematics: damped Gauss–Newton whose steps are
//! box-constrained QPs, so joint limits hold exactly at every iterate.

mod qp;

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Vector3};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::biomech::{self, apply_base_increment, BasePose, BiomechError, BiomechModel, JointAngleFrame, MarkerFrame, Pose};

pub use qp::{kkt_residual, solve_box_qp, Bound, QpSolution};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IkError {
    #[error("dimension mismatch in QP data")]
    Dimension,
    #[error("bounds inconsistent at {index}: lo {lo} > hi {hi}")]
    InconsistentBounds { index: usize, lo: f64, hi: f64 },
    #[error("QP matrix is not symmetric")]
    NotSymmetric,
    #[error("QP matrix is not positive definite on the free subspace")]
    NotPositiveDefinite,
    #[error("QP active-set iteration limit reached")]
    QpIterationLimit,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("only {have} weighted valid markers, need at least {need}")]
    UnderDetermined { have: usize, need: usize },
    #[error("warm start violates joint limits at DoF {0}")]
    WarmOutOfLimits(usize),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Model(#[from] BiomechError),
}

/// Minimum number of valid, positively weighted markers.
pub const MIN_MARKERS: usize = 6;
const MAX_HALVINGS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IkConfig {
    pub damping: f64,
    pub max_iterations: usize,
    /// Stop when the RMS residual changes by less than this (m).
    pub tol: f64,
    /// Per-frame wall-clock budget (ms), enforced by the caller's [`Budget`].
    pub time_budget_ms: f64,
    /// Per-marker weights; empty means all 1.
    pub weights: Vec<f64>,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            damping: 1e-3,
            max_iterations: 10,
            tol: 1e-5,
            time_budget_ms: 15.0,
            weights: Vec::new(),
        }
    }
}

impl IkConfig {
    pub fn validate(&self) -> Result<(), IkError> {
        if !(self.damping > 0.0) {
            return Err(IkError::Config("damping must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(IkError::Config("at least one iteration"));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(IkError::Config("weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Source of the time-budget decision; the core crate has no clock.
pub trait Budget {
    fn expired(&self) -> bool;
}

/// Budget that never expires.
#[derive(Clone, Copy, Debug, Default)]
pub struct Unlimited;

impl Budget for Unlimited {
    fn expired(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IkSolution {
    pub frame: JointAngleFrame,
    pub residual_rms: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

struct Eval {
    markers: Vec<Vector3<f64>>,
    kin: biomech::Kinematics,
    cost: f64,
}

fn evaluate(model: &BiomechModel, q: &[f64], base: &BasePose, targets: &MarkerFrame, w: &[f64]) -> Result<Eval, IkError> {
    let kin = model.kinematics(q, base)?;
    let markers = model.marker_positions(&kin);
    let cost = markers
        .iter()
        .enumerate()
        .filter(|(i, _)| w[*i] > 0.0)
        .map(|(i, m)| w[i] * w[i] * (targets.marker(i) - m).norm_squared())
        .sum();
    Ok(Eval { markers, kin, cost })
}

/// Fit `(q, base)` to `targets` starting from `warm`.
pub fn solve_frame(model: &BiomechModel, targets: &MarkerFrame, warm: &JointAngleFrame, cfg: &IkConfig, budget: &dyn Budget) -> Result<IkSolution, IkError> {
    cfg.validate()?;
    let n_m = model.n_markers();
    let n_q = model.n_dof();
    if targets.markers.len() != n_m || targets.valid.len() != n_m {
        return Err(BiomechError::WrongLength {
            expected: n_m,
            got: targets.markers.len(),
        }
        .into());
    }
    if !cfg.weights.is_empty() && cfg.weights.len() != n_m {
        return Err(IkError::Config("one weight per marker"));
    }
    let w: Vec<f64> = (0..n_m)
        .map(|i| if targets.valid[i] { cfg.weights.get(i).copied().unwrap_or(1.0) } else { 0.0 })
        .collect();
    let have = w.iter().filter(|v| **v > 0.0).count();
    if have < MIN_MARKERS {
        return Err(IkError::UnderDetermined { have, need: MIN_MARKERS });
    }
    for i in 0..n_m {
        if w[i] > 0.0 && targets.markers[i].iter().any(|v| !v.is_finite()) {
            return Err(IkError::NonFinite("marker target"));
        }
    }
    if warm.q.len() != n_q {
        return Err(BiomechError::WrongLength {
            expected: n_q,
            got: warm.q.len(),
        }
        .into());
    }
    let lower = model.lower_limits();
    let upper = model.upper_limits();
    let mut q = warm.q.clone();
    for j in 0..n_q {
        if !q[j].is_finite() || q[j] < lower[j] - 1e-9 || q[j] > upper[j] + 1e-9 {
            return Err(IkError::WarmOutOfLimits(j));
        }
        q[j] = q[j].clamp(lower[j], upper[j]);
    }
    let mut base = warm.base;
    if base.iter().any(|v| !v.is_finite()) {
        return Err(IkError::NonFinite("warm base pose"));
    }

    let wsq: f64 = w.iter().map(|v| v * v).sum();
    let rms = |cost: f64| (cost / wsq).sqrt();
    let mut cur = evaluate(model, &q, &base, targets, &w)?;
    let mut iterations = 0;
    let mut converged = false;
    let n = 6 + n_q;
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];

    while iterations < cfg.max_iterations {
        if budget.expired() {
            break;
        }
        iterations += 1;
        let jac = model.jacobian_from(&cur.kin, &cur.markers);
        let mut wj = DMatrix::zeros(3 * n_m, n);
        let mut wr = DVector::zeros(3 * n_m);
        for i in (0..n_m).filter(|i| w[*i] > 0.0) {
            let e = targets.marker(i) - cur.markers[i];
            for k in 0..3 {
                wr[3 * i + k] = w[i] * e[k];
                for c in 0..n {
                    wj[(3 * i + k, c)] = w[i] * jac[(3 * i + k, c)];
                }
            }
        }
        let mut h = wj.tr_mul(&wj);
        for c in 0..n {
            h[(c, c)] += cfg.damping;
        }
        // exact symmetry for the QP check
        for a in 0..n {
            for b in 0..a {
                let v = 0.5 * (h[(a, b)] + h[(b, a)]);
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        let g = -wj.tr_mul(&wr);
        for j in 0..n_q {
            lo[6 + j] = lower[j] - q[j];
            hi[6 + j] = upper[j] - q[j];
        }
        let sol = solve_box_qp(&h, &g, &lo, &hi)?;

        let mut accepted = None;
        let mut scale = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let mut q_new = q.clone();
            for j in 0..n_q {
                q_new[j] = match sol.active[6 + j] {
                    Bound::Lower if scale == 1.0 => lower[j],
                    Bound::Upper if scale == 1.0 => upper[j],
                    _ => (q[j] + scale * sol.x[6 + j]).clamp(lower[j], upper[j]),
                };
            }
            let step: Vec<f64> = (0..6).map(|k| scale * sol.x[k]).collect();
            let base_new = apply_base_increment(&base, &step);
            let trial = evaluate(model, &q_new, &base_new, targets, &w)?;
            if trial.cost <= cur.cost {
                accepted = Some((q_new, base_new, trial));
                break;
            }
            scale *= 0.5;
        }
        let Some((q_new, base_new, trial)) = accepted else {
            break;
        };
        let change = (rms(cur.cost) - rms(trial.cost)).abs();
        q = q_new;
        base = base_new;
        cur = trial;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(IkSolution {
        frame: JointAngleFrame { t: targets.t, q, base },
        residual_rms: rms(cur.cost),
        iterations_used: iterations,
        converged,
    })
}

/// Initial base pose from the root-segment markers (Kabsch), joints at zero
/// clamped into their limits.
pub fn initial_guess(model: &BiomechModel, targets: &MarkerFrame) -> JointAngleFrame {
    let mut q = vec![0.0; model.n_dof()];
    model.clamp_q(&mut q);
    let mut base = [0.0; 6];
    if let Ok(kin) = model.kinematics(&q, &[0.0; 6]) {
        let neutral = model.marker_positions(&kin);
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for i in 0..model.n_markers() {
            let ok = model.marker_segment(i) == 0 && targets.valid[i] && targets.markers[i].iter().all(|v| v.is_finite());
            if ok {
                src.push(neutral[i]);
                dst.push(targets.marker(i));
            }
        }
        let w = vec![1.0; src.len()];
        if let Some(fit) = biomech::kabsch(&src, &dst, &w) {
            base = biomech::pose_to_base(&Pose {
                rot: fit.quaternion(),
                pos: fit.trans,
            });
        }
    }
    JointAngleFrame { t: targets.t, q, base }
}

/// Streaming IK that warm-starts each frame from the previous solution.
#[derive(Clone, Debug)]
pub struct IkSession {
    model: BiomechModel,
    cfg: IkConfig,
    warm: Option<JointAngleFrame>,
}

impl IkSession {
    pub fn new(model: BiomechModel, cfg: IkConfig) -> Result<Self, IkError> {
        cfg.validate()?;
        Ok(Self { model, cfg, warm: None })
    }

    pub fn model(&self) -> &BiomechModel {
        &self.model
    }

    pub fn warm(&self) -> Option<&JointAngleFrame> {
        self.warm.as_ref()
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn solve(&mut self, targets: &MarkerFrame, budget: &dyn Budget) -> Result<IkSolution, IkError> {
        let warm = match &self.warm {
            Some(w) => w.clone(),
            None => initial_guess(&self.model, targets),
        };
        let sol = solve_frame(&self.model, targets, &warm, &self.cfg, budget)?;
        self.warm = Some(sol.frame.clone());
        Ok(sol)
    }
}
