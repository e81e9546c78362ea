//! Synthetic labeled corpus: cue scripts, per-label joint-angle patterns with
//! blended transitions and OU noise, sequence-wise splits, rigid viewpoint
//! transforms and keypoint rendering.

mod motion;
mod transform;

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::act::{Head, LabeledSequence};
use crate::biomech::{BiomechModel, JointAngleFrame};

pub use motion::STANDING_HEIGHT;
pub use transform::{default_rig, random_rigid_transform, recover_angles, render_keypoints, transform_schedule, RigidTransform};

use motion::{lower_owned, lower_pose, upper_pose, Style};

pub(crate) const N_DOF: usize = 22;
/// Lower-limb labels that persist between cues.
pub const STEADY_LOWER: [u8; 4] = [1, 2, 3, 4];
pub const STANDING_UP: u8 = 5;
pub const SITTING_DOWN: u8 = 6;
pub const SQUATTING_DOWN: u8 = 7;
pub const MIN_GAP: f64 = 5.0;
pub const MAX_GAP: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("label {0} is not a valid {1} cue label")]
    Label(u8, &'static str),
    #[error("cue {index}: gap {gap} s outside [{MIN_GAP}, {MAX_GAP}]")]
    Gap { index: usize, gap: f64 },
    #[error("cue {0} is not time-ordered or starts before 0")]
    Order(usize),
    #[error("no transition defined from lower label {from} to {to}")]
    Transition { from: u8, to: u8 },
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("need at least {need} trials, have {have}")]
    TooFewTrials { have: usize, need: usize },
    #[error("model must have {N_DOF} joints, has {0}")]
    Model(usize),
    #[error(transparent)]
    Cam(#[from] crate::camgeo::CamError),
    #[error(transparent)]
    Biomech(#[from] crate::biomech::BiomechError),
    #[error(transparent)]
    Ik(#[from] crate::ik::IkError),
}

/// Sampling and noise parameters shared by all generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionConfig {
    pub rate_hz: f64,
    /// Stationary standard deviation of the OU noise (rad).
    pub noise_sigma: f64,
    /// OU correlation time (s).
    pub noise_tau: f64,
    /// Blend duration at each cue (s).
    pub transition: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            rate_hz: 10.0,
            noise_sigma: 0.02,
            noise_tau: 0.5,
            transition: 1.0,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.rate_hz > 0.0) || !self.rate_hz.is_finite() {
            return Err(SynthError::Config("rate must be positive"));
        }
        if !(self.noise_sigma >= 0.0) || !(self.noise_tau > 0.0) {
            return Err(SynthError::Config("noise parameters"));
        }
        if !(self.transition >= 0.0) || self.transition >= MIN_GAP {
            return Err(SynthError::Config("transition must be shorter than the minimum cue gap"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cue {
    pub time: f64,
    pub lower: u8,
    pub upper: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialScript {
    pub duration: f64,
    pub cues: Vec<Cue>,
    pub seed: u64,
}

/// Transitory label shown while moving between two steady lower labels.
pub fn transitory_label(from: u8, to: u8) -> Result<Option<u8>, SynthError> {
    match (from, to) {
        (3 | 4, 1 | 2) => Ok(Some(STANDING_UP)),
        (1 | 2, 3) => Ok(Some(SITTING_DOWN)),
        (1 | 2, 4) => Ok(Some(SQUATTING_DOWN)),
        (a, b) if a == b || matches!((a, b), (1, 2) | (2, 1)) => Ok(None),
        (from, to) => Err(SynthError::Transition { from, to }),
    }
}

impl TrialScript {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(SynthError::Config("duration must be positive"));
        }
        let Some(first) = self.cues.first() else {
            return Err(SynthError::Config("script needs at least one cue"));
        };
        if first.time != 0.0 {
            return Err(SynthError::Order(0));
        }
        for (i, c) in self.cues.iter().enumerate() {
            if !STEADY_LOWER.contains(&c.lower) {
                return Err(SynthError::Label(c.lower, "lower"));
            }
            if !Head::Upper.contains(c.upper) {
                return Err(SynthError::Label(c.upper, "upper"));
            }
            if i > 0 {
                let prev = &self.cues[i - 1];
                let gap = c.time - prev.time;
                if !(gap > 0.0) {
                    return Err(SynthError::Order(i));
                }
                if !(MIN_GAP..=MAX_GAP).contains(&gap) {
                    return Err(SynthError::Gap { index: i, gap });
                }
                transitory_label(prev.lower, c.lower)?;
            }
        }
        Ok(())
    }

    /// Random script with a fresh balancing state.
    pub fn random(seed: u64, duration: f64) -> Self {
        Scheduler::new(seed).script(seed, duration)
    }
}

/// Picks cue labels so that accumulated seconds per label stay level.
#[derive(Clone, Debug)]
pub struct Scheduler {
    rng: ChaCha8Rng,
    lower: [f64; 4],
    upper: [f64; 10],
}

impl Scheduler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            lower: [0.0; 4],
            upper: [0.0; 10],
        }
    }

    fn pick(rng: &mut ChaCha8Rng, acc: &[f64], allowed: impl Fn(usize) -> bool) -> usize {
        let min = (0..acc.len()).filter(|&i| allowed(i)).map(|i| acc[i]).fold(f64::INFINITY, f64::min);
        let ties: Vec<usize> = (0..acc.len()).filter(|&i| allowed(i) && acc[i] <= min + 1e-9).collect();
        ties[rng.random_range(0..ties.len())]
    }

    /// Next trial's script.
    pub fn script(&mut self, seed: u64, duration: f64) -> TrialScript {
        let mut times = vec![0.0];
        loop {
            let next = times[times.len() - 1] + self.rng.random_range(MIN_GAP..=MAX_GAP);
            if next >= duration {
                break;
            }
            times.push(next);
        }
        let mut cues = Vec::with_capacity(times.len());
        let (mut lo, mut up): (Option<usize>, Option<usize>) = (None, None);
        for (k, &t) in times.iter().enumerate() {
            let len = times.get(k + 1).copied().unwrap_or(duration) - t;
            let l = Self::pick(&mut self.rng, &self.lower, |i| match lo {
                None => true,
                // seated and squatting poses always return through standing or walking
                Some(p) if p >= 2 => i < 2,
                Some(p) => i != p,
            });
            let u = Self::pick(&mut self.rng, &self.upper, |i| up != Some(i));
            self.lower[l] += len;
            self.upper[u] += len;
            lo = Some(l);
            up = Some(u);
            cues.push(Cue {
                time: t,
                lower: STEADY_LOWER[l],
                upper: Head::Upper.label_of(u),
            });
        }
        TrialScript { duration, cues, seed }
    }
}

/// Discretized Ornstein–Uhlenbeck noise per DoF.
struct OuNoise {
    x: [f64; N_DOF],
    a: f64,
    b: f64,
}

impl OuNoise {
    fn new<R: Rng>(cfg: &MotionConfig, rng: &mut R) -> Self {
        let a = (-1.0 / (cfg.rate_hz * cfg.noise_tau)).exp();
        let mut x = [0.0; N_DOF];
        for v in &mut x {
            let z: f64 = rng.sample(StandardNormal);
            *v = cfg.noise_sigma * z;
        }
        Self {
            x,
            a,
            b: cfg.noise_sigma * (1.0 - a * a).sqrt(),
        }
    }

    fn next<R: Rng>(&mut self, rng: &mut R) -> [f64; N_DOF] {
        let out = self.x;
        for v in &mut self.x {
            let z: f64 = rng.sample(StandardNormal);
            *v = self.a * *v + self.b * z;
        }
        out
    }
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

fn check_model(model: &BiomechModel) -> Result<(), SynthError> {
    if model.n_dof() != N_DOF {
        return Err(SynthError::Model(model.n_dof()));
    }
    Ok(())
}

fn steady(lower: u8, upper: u8, t: f64, ls: &Style, us: &Style) -> ([f64; N_DOF], f64) {
    let mut ql = [0.0; N_DOF];
    let h = lower_pose(lower, t, ls, &mut ql);
    let mut qu = [0.0; N_DOF];
    upper_pose(upper, t, us, &mut qu);
    let mut q = [0.0; N_DOF];
    for j in 0..N_DOF {
        q[j] = if lower_owned(j) { ql[j] } else { qu[j] };
    }
    (q, h)
}

fn finish_frame(model: &BiomechModel, t: f64, mut q: [f64; N_DOF], height: f64, noise: &[f64; N_DOF]) -> JointAngleFrame {
    for (v, n) in q.iter_mut().zip(noise) {
        *v += n;
    }
    model.clamp_q(&mut q);
    JointAngleFrame {
        t,
        q: q.to_vec(),
        base: [0.0, height, 0.0, 0.0, 0.0, 0.0],
    }
}

/// Steady motion for one label pair.
pub fn generate_motion(lower: u8, upper: u8, duration: f64, model: &BiomechModel, seed: u64, cfg: &MotionConfig) -> Result<Vec<JointAngleFrame>, SynthError> {
    cfg.validate()?;
    check_model(model)?;
    if !STEADY_LOWER.contains(&lower) {
        return Err(SynthError::Label(lower, "lower"));
    }
    if !Head::Upper.contains(upper) {
        return Err(SynthError::Label(upper, "upper"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ls, us) = (Style::draw(&mut rng), Style::draw(&mut rng));
    let mut noise = OuNoise::new(cfg, &mut rng);
    let n = (duration * cfg.rate_hz).round() as usize;
    Ok((0..n)
        .map(|k| {
            let t = k as f64 / cfg.rate_hz;
            let (q, h) = steady(lower, upper, t, &ls, &us);
            finish_frame(model, t, q, h, &noise.next(&mut rng))
        })
        .collect())
}

/// Render a script into a labeled sequence.
pub fn generate_trial(script: &TrialScript, model: &BiomechModel, cfg: &MotionConfig) -> Result<LabeledSequence, SynthError> {
    script.validate()?;
    cfg.validate()?;
    check_model(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let styles: Vec<(Style, Style)> = script.cues.iter().map(|_| (Style::draw(&mut rng), Style::draw(&mut rng))).collect();
    let mut noise = OuNoise::new(cfg, &mut rng);
    let n = (script.duration * cfg.rate_hz).round() as usize;
    let mut seq = LabeledSequence {
        frames: Vec::with_capacity(n),
        lower: Vec::with_capacity(n),
        upper: Vec::with_capacity(n),
    };
    let mut k = 0;
    for i in 0..n {
        let t = i as f64 / cfg.rate_hz;
        while k + 1 < script.cues.len() && script.cues[k + 1].time <= t {
            k += 1;
        }
        let cue = script.cues[k];
        let (ls, us) = &styles[k];
        let (mut q, mut h) = steady(cue.lower, cue.upper, t, ls, us);
        let (mut lo, up) = (cue.lower, cue.upper);
        let since = t - cue.time;
        if k > 0 && since < cfg.transition {
            let prev = script.cues[k - 1];
            let (pls, pus) = &styles[k - 1];
            let (pq, ph) = steady(prev.lower, prev.upper, t, pls, pus);
            let s = smoothstep(since / cfg.transition);
            for j in 0..N_DOF {
                let changed = if lower_owned(j) { prev.lower != cue.lower } else { prev.upper != cue.upper };
                if changed {
                    q[j] = (1.0 - s) * pq[j] + s * q[j];
                }
            }
            if prev.lower != cue.lower {
                h = (1.0 - s) * ph + s * h;
                lo = transitory_label(prev.lower, cue.lower)?.unwrap_or(cue.lower);
            }
        }
        seq.frames.push(finish_frame(model, t, q, h, &noise.next(&mut rng)));
        seq.lower.push(lo);
        seq.upper.push(up);
    }
    Ok(seq)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub trials: usize,
    pub seed: u64,
    pub duration: f64,
    pub motion: MotionConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            trials: 10,
            seed: 0,
            duration: 180.0,
            motion: MotionConfig::default(),
        }
    }
}

/// Scripts for a corpus, balanced jointly across its trials.
pub fn corpus_scripts(cfg: &CorpusConfig) -> Vec<TrialScript> {
    let mut sched = Scheduler::new(cfg.seed);
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    (0..cfg.trials).map(|_| sched.script(seeds.random(), cfg.duration)).collect()
}

pub fn generate_corpus(cfg: &CorpusConfig, model: &BiomechModel) -> Result<Vec<(TrialScript, LabeledSequence)>, SynthError> {
    corpus_scripts(cfg)
        .into_iter()
        .map(|s| {
            let seq = generate_trial(&s, model, &cfg.motion)?;
            Ok((s, seq))
        })
        .collect()
}

/// Trial indices per split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Assign whole trials to train/val/test; each split gets at least one trial.
pub fn split_corpus(n: usize, ratios: [f64; 3], seed: u64) -> Result<Split, SynthError> {
    if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SynthError::Config("split ratios must be positive and sum to 1"));
    }
    if n < 3 {
        return Err(SynthError::TooFewTrials { have: n, need: 3 });
    }
    let n_val = ((ratios[1] * n as f64).round() as usize).max(1);
    let n_test = ((ratios[2] * n as f64).round() as usize).max(1);
    if n_val + n_test >= n {
        return Err(SynthError::TooFewTrials { have: n, need: n_val + n_test + 1 });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n - n_test);
    let val = idx.split_off(idx.len() - n_val);
    let mut s = Split { train: idx, val, test };
    s.train.sort_unstable();
    s.val.sort_unstable();
    s.test.sort_unstable();
    Ok(s)
}
