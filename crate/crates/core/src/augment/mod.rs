//! Joint centers to anatomical markers: a stacked LSTM with loadable weights
//! and the model's affine fallback table.

mod train;

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gemm, sigmoid, AutodiffError};
use crate::biomech::{fallback_markers, BiomechError, BiomechModel, MarkerFrame, N_MARKERS};
use crate::camgeo::{kp, JointCenters3D, N_KEYPOINTS};

pub use train::{initial_weights, lstm_loss, train_augmenter, AugmentPair, AugmentTrainConfig, LstmVars, TrainReport};

pub const INPUT_SIZE: usize = 3 * N_KEYPOINTS;
pub const OUTPUT_SIZE: usize = 3 * N_MARKERS;
/// Keypoint that inputs are centered on and outputs re-anchored to.
pub const ANCHOR: usize = kp::HIP;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("{what}: expected {expected}, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
    #[error("normalization std must be positive and finite")]
    BadStd,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("empty sequence")]
    EmptySequence,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("sequence {index}: {jc} joint-center frames vs {markers} marker frames")]
    PairLength { index: usize, jc: usize, markers: usize },
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Model(#[from] BiomechError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// One LSTM layer. Gate blocks are ordered input, forget, cell, output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    /// `in × 4H`, row-major.
    pub w_ih: Vec<f64>,
    /// `H × 4H`, row-major.
    pub w_hh: Vec<f64>,
    /// `4H`.
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Per-feature statistics; near-constant features get std 1.
    pub fn fit(rows: &[Vec<f64>], n: usize) -> Self {
        let mut mean = vec![0.0; n];
        let mut var = vec![0.0; n];
        if rows.is_empty() {
            return Self::identity(n);
        }
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        let count = rows.len() as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        for r in rows {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(r) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / count).sqrt();
                if s > 1e-8 { s } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights {
    pub hidden: usize,
    pub layers: Vec<LstmLayer>,
    /// `H × 87`, row-major.
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
    pub input_norm: Normalization,
    pub output_norm: Normalization,
}

impl LstmWeights {
    pub const DEFAULT_HIDDEN: usize = 96;
    pub const DEFAULT_LAYERS: usize = 2;

    pub fn zeros(hidden: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let input = if l == 0 { INPUT_SIZE } else { hidden };
                LstmLayer {
                    w_ih: vec![0.0; input * 4 * hidden],
                    w_hh: vec![0.0; hidden * 4 * hidden],
                    bias: vec![0.0; 4 * hidden],
                }
            })
            .collect();
        Self {
            hidden,
            layers,
            w_out: vec![0.0; hidden * OUTPUT_SIZE],
            b_out: vec![0.0; OUTPUT_SIZE],
            input_norm: Normalization::identity(INPUT_SIZE),
            output_norm: Normalization::identity(OUTPUT_SIZE),
        }
    }

    /// Uniform `±1/√H` initialization with forget-gate bias 1.
    pub fn random(hidden: usize, layers: usize, seed: u64) -> Self {
        let mut w = Self::zeros(hidden, layers);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = 1.0 / (hidden as f64).sqrt();
        for layer in &mut w.layers {
            for v in layer.w_ih.iter_mut().chain(layer.w_hh.iter_mut()) {
                *v = rng.random_range(-a..a);
            }
            for v in &mut layer.bias[hidden..2 * hidden] {
                *v = 1.0;
            }
        }
        for v in &mut w.w_out {
            *v = rng.random_range(-a..a);
        }
        w
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.layers.iter().map(|l| l.w_ih.len() + l.w_hh.len() + l.bias.len()).sum::<usize>() + self.w_out.len() + self.b_out.len()
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let h = self.hidden;
        let check = |what, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(AugmentError::Shape { what, expected, got })
            }
        };
        if h == 0 {
            return Err(AugmentError::Shape {
                what: "hidden size",
                expected: 1,
                got: 0,
            });
        }
        if self.layers.is_empty() {
            return Err(AugmentError::Shape {
                what: "layer count",
                expected: 1,
                got: 0,
            });
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { INPUT_SIZE } else { h };
            check("w_ih", input * 4 * h, layer.w_ih.len())?;
            check("w_hh", h * 4 * h, layer.w_hh.len())?;
            check("bias", 4 * h, layer.bias.len())?;
        }
        check("w_out", h * OUTPUT_SIZE, self.w_out.len())?;
        check("b_out", OUTPUT_SIZE, self.b_out.len())?;
        check("input mean", INPUT_SIZE, self.input_norm.mean.len())?;
        check("input std", INPUT_SIZE, self.input_norm.std.len())?;
        check("output mean", OUTPUT_SIZE, self.output_norm.mean.len())?;
        check("output std", OUTPUT_SIZE, self.output_norm.std.len())?;
        let stds = self.input_norm.std.iter().chain(&self.output_norm.std);
        if stds.clone().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(AugmentError::BadStd);
        }
        let all = self
            .layers
            .iter()
            .flat_map(|l| l.w_ih.iter().chain(&l.w_hh).chain(&l.bias))
            .chain(&self.w_out)
            .chain(&self.b_out)
            .chain(&self.input_norm.mean)
            .chain(&self.output_norm.mean);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(AugmentError::NonFinite("weights"));
        }
        Ok(())
    }

    pub fn new_state(&self) -> LstmState {
        LstmState {
            h: vec![vec![0.0; self.hidden]; self.layers.len()],
            c: vec![vec![0.0; self.hidden]; self.layers.len()],
        }
    }

    /// Advance the recurrence by one frame.
    pub fn step(&self, state: &mut LstmState, jc: &JointCenters3D) -> Result<MarkerFrame, AugmentError> {
        let (x, anchor) = centered_input(jc)?;
        let mut input: Vec<f64> = x
            .iter()
            .zip(self.input_norm.mean.iter().zip(&self.input_norm.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let hdim = self.hidden;
        let mut z = vec![0.0; 4 * hdim];
        for (l, layer) in self.layers.iter().enumerate() {
            z.copy_from_slice(&layer.bias);
            gemm(&input, &layer.w_ih, &mut z, 1, input.len(), 4 * hdim, true);
            gemm(&state.h[l], &layer.w_hh, &mut z, 1, hdim, 4 * hdim, true);
            let (h, c) = (&mut state.h[l], &mut state.c[l]);
            for k in 0..hdim {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[hdim + k]);
                let g = z[2 * hdim + k].tanh();
                let o = sigmoid(z[3 * hdim + k]);
                c[k] = f * c[k] + i * g;
                h[k] = o * c[k].tanh();
            }
            input.clone_from(h);
        }
        let mut y = self.b_out.clone();
        gemm(&input, &self.w_out, &mut y, 1, hdim, OUTPUT_SIZE, true);
        let markers = (0..N_MARKERS)
            .map(|m| {
                let mut p = [0.0; 3];
                for (d, v) in p.iter_mut().enumerate() {
                    let i = 3 * m + d;
                    *v = y[i] * self.output_norm.std[i] + self.output_norm.mean[i] + anchor[d];
                }
                p
            })
            .collect();
        Ok(MarkerFrame {
            t: jc.t,
            markers,
            valid: vec![true; N_MARKERS],
        })
    }
}

/// Recurrent state, one `(h, c)` pair per layer; starts at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

/// Joint centers relative to the anchor, flattened, plus the anchor itself.
pub fn centered_input(jc: &JointCenters3D) -> Result<(Vec<f64>, [f64; 3]), AugmentError> {
    if let Some(k) = jc.valid.iter().position(|v| !v) {
        return Err(BiomechError::MissingJointCenter(kp::NAMES[k].into()).into());
    }
    let anchor = jc.points[ANCHOR];
    let mut x = Vec::with_capacity(INPUT_SIZE);
    for p in &jc.points {
        for d in 0..3 {
            x.push(p[d] - anchor[d]);
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AugmentError::NonFinite("joint centers"));
    }
    Ok((x, anchor))
}

/// Markers relative to an anchor, flattened.
pub fn centered_output(m: &MarkerFrame, anchor: &[f64; 3]) -> Result<Vec<f64>, AugmentError> {
    if m.markers.len() != N_MARKERS {
        return Err(AugmentError::Shape {
            what: "marker count",
            expected: N_MARKERS,
            got: m.markers.len(),
        });
    }
    let y: Vec<f64> = m.markers.iter().flat_map(|p| (0..3).map(move |d| p[d] - anchor[d])).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(AugmentError::NonFinite("markers"));
    }
    Ok(y)
}

/// Run the network over a sequence from a zero state.
pub fn lstm_forward(w: &LstmWeights, seq: &[JointCenters3D]) -> Result<Vec<MarkerFrame>, AugmentError> {
    w.validate()?;
    if seq.is_empty() {
        return Err(AugmentError::EmptySequence);
    }
    let mut state = w.new_state();
    seq.iter().map(|jc| w.step(&mut state, jc)).collect()
}

/// Markers from the model's fallback table of joint-center combinations.
pub fn geometric_fallback(model: &BiomechModel, jc: &JointCenters3D) -> Result<MarkerFrame, AugmentError> {
    Ok(fallback_markers(model, jc)?)
}

/// Per-frame augmentation source used by the pipeline.
#[derive(Clone, Debug)]
pub enum Augmenter {
    Fallback(BiomechModel),
    Lstm { weights: LstmWeights, state: LstmState },
}

impl Augmenter {
    pub fn lstm(weights: LstmWeights) -> Result<Self, AugmentError> {
        weights.validate()?;
        let state = weights.new_state();
        Ok(Self::Lstm { weights, state })
    }

    pub fn apply(&mut self, jc: &JointCenters3D) -> Result<MarkerFrame, AugmentError> {
        match self {
            Self::Fallback(model) => geometric_fallback(model, jc),
            Self::Lstm { weights, state } => weights.step(state, jc),
        }
    }

    pub fn reset(&mut self) {
        if let Self::Lstm { weights, state } = self {
            *state = weights.new_state();
        }
    }
}
