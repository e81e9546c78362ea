use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const BOARD_MIN: f64 = 0.0;
pub const BOARD_MAX: f64 = 1.0;
/// Board units per frame in a directional mode.
pub const DEFAULT_SPEED: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PenMode {
    Init,
    PenDown,
    PenRight,
    PenLeft,
    PenBackward,
    PenForward,
    PenPause,
    PenUpClear,
}

impl PenMode {
    /// Command issued by a newly confirmed lower-limb label.
    pub fn from_lower(label: u8) -> Option<PenMode> {
        match label {
            6 => Some(PenMode::PenDown),
            2 => Some(PenMode::PenUpClear),
            _ => None,
        }
    }

    /// Command issued by a newly confirmed upper-limb label. The horizontal
    /// mapping is mirrored: the subject's left arm moves the pen right.
    pub fn from_upper(label: u8) -> Option<PenMode> {
        match label {
            10 => Some(PenMode::PenRight),
            9 => Some(PenMode::PenLeft),
            8 => Some(PenMode::PenBackward),
            15 => Some(PenMode::PenForward),
            16 => Some(PenMode::PenPause),
            _ => None,
        }
    }

    fn velocity(self) -> [f64; 2] {
        match self {
            PenMode::PenRight => [1.0, 0.0],
            PenMode::PenLeft => [-1.0, 0.0],
            PenMode::PenForward => [0.0, 1.0],
            PenMode::PenBackward => [0.0, -1.0],
            _ => [0.0, 0.0],
        }
    }
}

/// Kinematic pen on the unit board.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenState {
    pub mode: PenMode,
    pub pos: [f64; 2],
    pub down: bool,
    /// Ink segments `(from, to)` drawn while the pen was down.
    pub trace: Vec<[[f64; 2]; 2]>,
    pub speed: f64,
}

impl Default for PenState {
    fn default() -> Self {
        Self {
            mode: PenMode::Init,
            pos: [0.5, 0.5],
            down: false,
            trace: Vec::new(),
            speed: DEFAULT_SPEED,
        }
    }
}

impl PenState {
    /// Enter a commanded mode. Position is unchanged.
    pub fn command(&mut self, mode: PenMode) {
        match mode {
            PenMode::PenDown => self.down = true,
            PenMode::PenUpClear => {
                self.down = false;
                self.trace.clear();
            }
            _ => {}
        }
        self.mode = mode;
    }

    /// Apply the label mapping to a confirmed pair; unlisted labels keep the
    /// mode. The lower-limb command is applied last so lifting the pen wins.
    pub fn transition(&mut self, lower: Option<u8>, upper: Option<u8>) {
        if let Some(m) = upper.and_then(PenMode::from_upper) {
            self.command(m);
        }
        if let Some(m) = lower.and_then(PenMode::from_lower) {
            self.command(m);
        }
    }

    /// Advance one frame in the current mode.
    pub fn tick(&mut self) {
        let v = self.mode.velocity();
        let from = self.pos;
        for (p, d) in self.pos.iter_mut().zip(v) {
            *p = (*p + d * self.speed).clamp(BOARD_MIN, BOARD_MAX);
        }
        if self.down && self.pos != from {
            self.trace.push([from, self.pos]);
        }
    }

    /// Number of straight strokes in the trace (runs of equal direction).
    pub fn strokes(&self) -> usize {
        let dir = |s: &[[f64; 2]; 2]| [(s[1][0] - s[0][0]).signum(), (s[1][1] - s[0][1]).signum()];
        let mut n = 0;
        let mut prev: Option<([f64; 2], [f64; 2])> = None;
        for s in &self.trace {
            let d = dir(s);
            match prev {
                Some((pd, end)) if pd == d && end == s[0] => {}
                _ => n += 1,
            }
            prev = Some((d, s[1]));
        }
        n
    }
}

/// Reacts to changes of the confirmed labels in a message stream.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PenController {
    pub pen: PenState,
    last: (Option<u8>, Option<u8>),
    /// Modes entered, in order.
    pub history: Vec<PenMode>,
}

impl PenController {
    pub fn new(pen: PenState) -> Self {
        Self {
            pen,
            last: (None, None),
            history: Vec::new(),
        }
    }

    /// Feed the confirmations of one frame, then move the pen one frame.
    pub fn on_frame(&mut self, confirmed_lower: Option<u8>, confirmed_upper: Option<u8>) -> PenMode {
        let lower = confirmed_lower.filter(|&l| Some(l) != self.last.0);
        let upper = confirmed_upper.filter(|&l| Some(l) != self.last.1);
        self.last = (confirmed_lower, confirmed_upper);
        let before = self.pen.mode;
        self.pen.transition(lower, upper);
        if self.pen.mode != before {
            self.history.push(self.pen.mode);
        }
        self.pen.tick();
        self.pen.mode
    }
}
