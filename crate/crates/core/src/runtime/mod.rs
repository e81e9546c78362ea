//! Online loop: sliding window, per-frame inference on both heads, majority
//! buffer confirmation, and the virtual pen subscriber.

mod pen;

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::act::{ActError, ActModel, Head};
use crate::biomech::JointAngleFrame;

pub use pen::{PenController, PenMode, PenState, BOARD_MAX, BOARD_MIN, DEFAULT_SPEED};

pub const DEFAULT_CAPACITY: usize = 20;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuntimeError {
    #[error("buffer capacity must be at least 1")]
    Capacity,
    #[error("threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("non-finite frame")]
    NonFinite,
    #[error("frame has {got} joint angles, model expects {expected}")]
    FrameWidth { expected: usize, got: usize },
    #[error("{head} model: {reason}")]
    ModelMismatch { head: &'static str, reason: &'static str },
    #[error(transparent)]
    Act(#[from] ActError),
}

/// Ring of recent labels confirming one once it holds a strict majority.
///
/// The comparison is against the full capacity, so a partly filled buffer needs
/// the same absolute count. A confirmed label stays until another label
/// exceeds the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct BufferFilter {
    capacity: usize,
    threshold: f64,
    ring: VecDeque<u8>,
    confirmed: Option<u8>,
}

impl BufferFilter {
    pub fn new(capacity: usize, threshold: f64) -> Result<Self, RuntimeError> {
        if capacity == 0 {
            return Err(RuntimeError::Capacity);
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(RuntimeError::Threshold(threshold));
        }
        Ok(Self {
            capacity,
            threshold,
            ring: VecDeque::with_capacity(capacity),
            confirmed: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn confirmed(&self) -> Option<u8> {
        self.confirmed
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn count(&self, label: u8) -> usize {
        self.ring.iter().filter(|&&l| l == label).count()
    }

    /// Push one raw label and return the (possibly unchanged) confirmation.
    pub fn push(&mut self, label: u8) -> Option<u8> {
        if self.ring.len() == self.capacity {
            self.ring.pop_front();
        }
        self.ring.push_back(label);
        // Only the incoming label can have crossed the threshold.
        if self.confirmed != Some(label) && self.count(label) as f64 > self.threshold * self.capacity as f64 {
            self.confirmed = Some(label);
        }
        self.confirmed
    }

    pub fn reset(&mut self) {
        self.ring.clear();
        self.confirmed = None;
    }
}

/// One per-frame recognition result as broadcast to subscribers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionMessage {
    #[serde(rename = "f")]
    pub frame: u64,
    #[serde(rename = "t")]
    pub timestamp: f64,
    #[serde(rename = "lo")]
    pub lower: u8,
    #[serde(rename = "up")]
    pub upper: u8,
    #[serde(rename = "clo")]
    pub confirmed_lower: Option<u8>,
    #[serde(rename = "cup")]
    pub confirmed_upper: Option<u8>,
}

impl ActionMessage {
    pub fn is_valid(&self) -> bool {
        Head::Lower.contains(self.lower)
            && Head::Upper.contains(self.upper)
            && self.confirmed_lower.map_or(true, |l| Head::Lower.contains(l))
            && self.confirmed_upper.map_or(true, |l| Head::Upper.contains(l))
            && self.timestamp.is_finite()
    }
}

/// Per-head classifier with the joint indices it reads.
#[derive(Clone, Debug)]
pub struct HeadModel {
    pub model: ActModel,
    pub dofs: Vec<usize>,
}

impl HeadModel {
    fn check(&self, head: Head) -> Result<(), RuntimeError> {
        let cfg = self.model.config();
        let mismatch = |reason| RuntimeError::ModelMismatch { head: head.name(), reason };
        if cfg.classes != head.classes() {
            return Err(mismatch("class count differs from its label group"));
        }
        if cfg.input_dim != self.dofs.len() {
            return Err(mismatch("input width differs from its joint mask"));
        }
        Ok(())
    }
}

/// Recognition state for one stream.
#[derive(Clone, Debug)]
pub struct Session {
    lower: HeadModel,
    upper: HeadModel,
    n_dof: usize,
    window: VecDeque<Vec<f64>>,
    buffers: [BufferFilter; 2],
    frame: u64,
}

impl Session {
    pub fn new(lower: HeadModel, upper: HeadModel, n_dof: usize, capacity: usize, threshold: f64) -> Result<Self, RuntimeError> {
        lower.check(Head::Lower)?;
        upper.check(Head::Upper)?;
        if lower.model.config().window != upper.model.config().window {
            return Err(RuntimeError::ModelMismatch {
                head: "upper",
                reason: "window length differs from the lower model",
            });
        }
        if lower.dofs.iter().chain(&upper.dofs).any(|&j| j >= n_dof) {
            return Err(RuntimeError::ModelMismatch {
                head: "lower/upper",
                reason: "joint mask index out of range",
            });
        }
        let buffer = BufferFilter::new(capacity, threshold)?;
        Ok(Self {
            window: VecDeque::with_capacity(lower.model.config().window),
            lower,
            upper,
            n_dof,
            buffers: [buffer.clone(), buffer],
            frame: 0,
        })
    }

    pub fn window_len(&self) -> usize {
        self.lower.model.config().window
    }

    /// Consume one frame and emit the labels for it.
    pub fn step(&mut self, frame: &JointAngleFrame) -> Result<ActionMessage, RuntimeError> {
        if frame.q.len() != self.n_dof {
            return Err(RuntimeError::FrameWidth {
                expected: self.n_dof,
                got: frame.q.len(),
            });
        }
        if !frame.t.is_finite() || frame.q.iter().any(|v| !v.is_finite()) {
            return Err(RuntimeError::NonFinite);
        }
        if self.window.len() == self.window_len() {
            self.window.pop_front();
        }
        self.window.push_back(frame.q.clone());
        let window = self.window.make_contiguous();
        let mut labels = [0u8; 2];
        for (k, (head, hm)) in [(Head::Lower, &self.lower), (Head::Upper, &self.upper)].into_iter().enumerate() {
            let rows: Vec<Vec<f64>> = window.iter().map(|q| hm.dofs.iter().map(|&j| q[j]).collect()).collect();
            labels[k] = head.label_of(hm.model.infer(&rows)?.label);
        }
        let msg = ActionMessage {
            frame: self.frame,
            timestamp: frame.t,
            lower: labels[0],
            upper: labels[1],
            confirmed_lower: self.buffers[0].push(labels[0]),
            confirmed_upper: self.buffers[1].push(labels[1]),
        };
        self.frame += 1;
        Ok(msg)
    }

    pub fn reset(&mut self) {
        self.window.clear();
        for b in &mut self.buffers {
            b.reset();
        }
        self.frame = 0;
    }
}
