//! Causal-masked Transformer classifier over joint-angle windows, its losses
//! and the class-token baseline.

mod train;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};
use crate::biomech::JointAngleFrame;

pub use train::{evaluate_stream, train, Sequence, TrainConfig, TrainHistory, TrainOutcome};

/// Floor applied to probabilities before taking logs in both losses.
pub const PROB_FLOOR: f64 = 1e-12;
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ActError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("window shape: expected {expected_cols} features per frame, got {got}")]
    WindowShape { expected_cols: usize, got: usize },
    #[error("empty window")]
    EmptyWindow,
    #[error("window longer than {max} frames: {got}")]
    WindowTooLong { max: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("sequence {index}: {reason}")]
    BadSequence { index: usize, reason: &'static str },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("non-finite input")]
    NonFinite,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Which modifications of the class-token baseline are enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Per-step labels, causal mask, T-MSE smoothing.
    Sar,
    /// One class token per window, no mask, no smoothing.
    BaselineToken,
    /// Per-step labels and smoothing without the causal mask.
    PerStepNoMask,
    /// Per-step labels and the causal mask without smoothing.
    MaskedNoSmooth,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Sar, Variant::BaselineToken, Variant::PerStepNoMask, Variant::MaskedNoSmooth];

    pub fn masked(self) -> bool {
        matches!(self, Variant::Sar | Variant::MaskedNoSmooth)
    }

    pub fn per_step(self) -> bool {
        self != Variant::BaselineToken
    }

    pub fn smoothed(self) -> bool {
        matches!(self, Variant::Sar | Variant::PerStepNoMask)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sar => "sar",
            Variant::BaselineToken => "baseline-token",
            Variant::PerStepNoMask => "per-step-no-mask",
            Variant::MaskedNoSmooth => "masked-no-smooth",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ActError;
    fn from_str(s: &str) -> Result<Self, ActError> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or(ActError::Config("unknown variant"))
    }
}

/// The two label groups, each with its own classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Lower,
    Upper,
}

impl Head {
    pub const BOTH: [Head; 2] = [Head::Lower, Head::Upper];

    /// Smallest label id of the group.
    pub fn first_label(self) -> u8 {
        match self {
            Head::Lower => 1,
            Head::Upper => 8,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            Head::Lower => 7,
            Head::Upper => 10,
        }
    }

    pub fn contains(self, label: u8) -> bool {
        label >= self.first_label() && ((label - self.first_label()) as usize) < self.classes()
    }

    pub fn class_of(self, label: u8) -> Option<usize> {
        self.contains(label).then(|| (label - self.first_label()) as usize)
    }

    pub fn label_of(self, class: usize) -> u8 {
        self.first_label() + class as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Head::Lower => "lower",
            Head::Upper => "upper",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActConfig {
    pub window: usize,
    pub input_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Hidden width of the feed-forward block inside each encoder layer.
    pub ffn_dim: usize,
    /// Hidden width of the classification MLP.
    pub mlp_dim: usize,
    pub classes: usize,
    pub lambda: f64,
    pub tau: f64,
    pub variant: Variant,
}

impl ActConfig {
    pub fn new(input_dim: usize, classes: usize, variant: Variant) -> Self {
        Self {
            window: 20,
            input_dim,
            layers: 4,
            heads: 1,
            d_model: 64,
            ffn_dim: 64,
            mlp_dim: 256,
            classes,
            lambda: 0.15,
            tau: 4.0,
            variant,
        }
    }

    /// Default configuration for a head given its joint-angle subset size.
    pub fn for_head(head: Head, input_dim: usize, variant: Variant) -> Self {
        Self::new(input_dim, head.classes(), variant)
    }

    pub fn validate(&self) -> Result<(), ActError> {
        if self.window == 0 {
            return Err(ActError::Config("window must be at least 1"));
        }
        if self.input_dim == 0 || self.layers == 0 || self.d_model == 0 || self.ffn_dim == 0 || self.mlp_dim == 0 {
            return Err(ActError::Config("dimensions must be positive"));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(ActError::Config("d_model must be divisible by heads"));
        }
        if self.heads != 1 {
            return Err(ActError::Config("only single-head attention is implemented"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(ActError::Config("lambda must be finite and non-negative"));
        }
        if !(self.tau > 0.0) {
            return Err(ActError::Config("tau must be positive"));
        }
        if self.classes < 2 {
            return Err(ActError::Config("at least two classes"));
        }
        Ok(())
    }

    /// Number of token positions fed to the encoder.
    pub fn tokens(&self) -> usize {
        self.window + usize::from(self.variant == Variant::BaselineToken)
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let per_layer = 4 * (d * d + d) + (d * self.ffn_dim + self.ffn_dim) + (self.ffn_dim * d + d) + 4 * d;
        let cls = if self.variant == Variant::BaselineToken { d } else { 0 };
        self.input_dim * d + self.tokens() * d + cls + self.layers * per_layer + d * self.mlp_dim + self.mlp_dim + self.mlp_dim * self.classes + self.classes
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LayerIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embed: ParamId,
    pos: ParamId,
    cls: Option<ParamId>,
    layers: Vec<LayerIds>,
    head_w1: ParamId,
    head_b1: ParamId,
    head_w2: ParamId,
    head_b2: ParamId,
}

impl Layout {
    fn resolve(cfg: &ActConfig, store: &ParamStore) -> Result<Self, AutodiffError> {
        let id = |n: &str| store.id(n);
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = |n: &str| store.id(&alloc::format!("l{l}.{n}"));
                Ok(LayerIds {
                    wq: p("wq")?,
                    bq: p("bq")?,
                    wk: p("wk")?,
                    bk: p("bk")?,
                    wv: p("wv")?,
                    bv: p("bv")?,
                    wo: p("wo")?,
                    bo: p("bo")?,
                    ln1_g: p("ln1.g")?,
                    ln1_b: p("ln1.b")?,
                    ff1_w: p("ff1.w")?,
                    ff1_b: p("ff1.b")?,
                    ff2_w: p("ff2.w")?,
                    ff2_b: p("ff2.b")?,
                    ln2_g: p("ln2.g")?,
                    ln2_b: p("ln2.b")?,
                })
            })
            .collect::<Result<Vec<_>, AutodiffError>>()?;
        Ok(Self {
            embed: id("embed.w")?,
            pos: id("pos")?,
            cls: if cfg.variant == Variant::BaselineToken { Some(id("cls")?) } else { None },
            layers,
            head_w1: id("head.w1")?,
            head_b1: id("head.b1")?,
            head_w2: id("head.w2")?,
            head_b2: id("head.b2")?,
        })
    }
}

/// Parameter names and shapes in storage order.
pub fn param_shapes(cfg: &ActConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut v: Vec<(String, Vec<usize>)> = vec![("embed.w".into(), vec![cfg.input_dim, d]), ("pos".into(), vec![cfg.tokens(), d])];
    if cfg.variant == Variant::BaselineToken {
        v.push(("cls".into(), vec![1, d]));
    }
    for l in 0..cfg.layers {
        let n = |s: &str| alloc::format!("l{l}.{s}");
        for w in ["q", "k", "v", "o"] {
            v.push((n(&alloc::format!("w{w}")), vec![d, d]));
            v.push((n(&alloc::format!("b{w}")), vec![d]));
        }
        v.push((n("ln1.g"), vec![d]));
        v.push((n("ln1.b"), vec![d]));
        v.push((n("ff1.w"), vec![d, cfg.ffn_dim]));
        v.push((n("ff1.b"), vec![cfg.ffn_dim]));
        v.push((n("ff2.w"), vec![cfg.ffn_dim, d]));
        v.push((n("ff2.b"), vec![d]));
        v.push((n("ln2.g"), vec![d]));
        v.push((n("ln2.b"), vec![d]));
    }
    v.push(("head.w1".into(), vec![d, cfg.mlp_dim]));
    v.push(("head.b1".into(), vec![cfg.mlp_dim]));
    v.push(("head.w2".into(), vec![cfg.mlp_dim, cfg.classes]));
    v.push(("head.b2".into(), vec![cfg.classes]));
    v
}

/// Classifier configuration plus its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ActModel {
    cfg: ActConfig,
    params: ParamStore,
    layout: Layout,
}

impl ActModel {
    /// Glorot-uniform matrices, zero biases, unit layer-norm gains, small positional table.
    pub fn init(cfg: ActConfig, seed: u64) -> Result<Self, ActError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in param_shapes(&cfg) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".g") {
                vec![1.0; n]
            } else if name == "pos" || name == "cls" {
                (0..n).map(|_| rng.random_range(-0.02..0.02)).collect()
            } else if shape.len() == 2 {
                let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..a)).collect()
            } else {
                vec![0.0; n]
            };
            store.add(name, Tensor::new(&shape, data)?);
        }
        Self::from_params(cfg, store)
    }

    /// Wrap an existing parameter store; names and shapes must match `cfg`.
    pub fn from_params(cfg: ActConfig, params: ParamStore) -> Result<Self, ActError> {
        cfg.validate()?;
        let expected = param_shapes(&cfg);
        if expected.len() != params.len() {
            return Err(ActError::Config("parameter count does not match configuration"));
        }
        for (name, shape) in &expected {
            let id = params.id(name)?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(ActError::Config("parameter shape does not match configuration"));
            }
        }
        let layout = Layout::resolve(&cfg, &params)?;
        Ok(Self { cfg, params, layout })
    }

    pub fn config(&self) -> &ActConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Bind all parameters into `g`.
    pub fn bind(&self, g: &mut Graph) -> ActVars {
        let vars = (0..self.params.len()).map(|i| g.param(&self.params, ParamId(i))).collect();
        ActVars { vars }
    }

    /// Graph forward pass for a batch `x: [B, N, input_dim]`. Returns
    /// probabilities `[B, N, C]` (per-step variants) or `[B, 1, C]`.
    pub fn forward(&self, g: &mut Graph, vars: &ActVars, x: Var) -> Result<Var, ActError> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.cfg.input_dim {
            return Err(ActError::WindowShape {
                expected_cols: self.cfg.input_dim,
                got: *shape.last().unwrap_or(&0),
            });
        }
        if shape[1] != self.cfg.window {
            return Err(ActError::Config("batch window length must equal the configured window"));
        }
        let l = &self.layout;
        let v = |id: ParamId| vars.vars[id.0];
        let b = shape[0];
        let d = self.cfg.d_model;
        let mut h = g.matmul(x, v(l.embed))?;
        if let Some(cls) = l.cls {
            let zeros = g.constant(Tensor::zeros(&[b, 1, d]));
            let tok = g.add(zeros, v(cls))?;
            h = g.concat(&[tok, h], 1)?;
        }
        h = g.add(h, v(l.pos))?;
        let mask = self.cfg.variant.masked().then(|| additive_mask(self.cfg.tokens()));
        for li in &l.layers {
            h = encoder_layer(g, h, li, &v, mask.as_ref())?;
        }
        if self.cfg.variant == Variant::BaselineToken {
            h = g.slice(h, 1, 0, 1)?;
        }
        let z = g.matmul(h, v(l.head_w1))?;
        let z = g.add(z, v(l.head_b1))?;
        let z = g.gelu(z);
        let z = g.matmul(z, v(l.head_w2))?;
        let z = g.add(z, v(l.head_b2))?;
        Ok(g.softmax(z))
    }

    /// Probabilities for a batch of full-length windows, row-major `[B, N', C]`.
    pub fn classify_batch(&self, windows: &[&[Vec<f64>]]) -> Result<Tensor, ActError> {
        let n = self.cfg.window;
        let mut data = Vec::with_capacity(windows.len() * n * self.cfg.input_dim);
        for w in windows {
            if w.len() != n {
                return Err(ActError::Config("classify_batch needs full windows"));
            }
            for row in w.iter() {
                if row.len() != self.cfg.input_dim {
                    return Err(ActError::WindowShape {
                        expected_cols: self.cfg.input_dim,
                        got: row.len(),
                    });
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(ActError::NonFinite);
                }
                data.extend_from_slice(row);
            }
        }
        if windows.is_empty() {
            return Err(ActError::EmptyWindow);
        }
        let mut g = Graph::new();
        let vars = self.bind_constant(&mut g);
        let x = g.constant(Tensor::new(&[windows.len(), n, self.cfg.input_dim], data)?);
        let p = self.forward(&mut g, &vars, x)?;
        Ok(g.value(p).clone())
    }

    fn bind_constant(&self, g: &mut Graph) -> ActVars {
        let vars = self.params.iter().map(|(_, _, t)| g.constant(t.clone())).collect();
        ActVars { vars }
    }

    /// Per-position class distribution for one full window (`N × C`, or `1 × C`
    /// for the class-token variant).
    pub fn classify(&self, window: &[Vec<f64>]) -> Result<Tensor, ActError> {
        let p = self.classify_batch(&[window])?;
        let s = p.shape().to_vec();
        Ok(p.reshaped(&[s[1], s[2]])?)
    }

    /// Classify a window of up to `N` frames; shorter prefixes are left-padded
    /// with their first frame.
    pub fn infer(&self, window: &[Vec<f64>]) -> Result<Inference, ActError> {
        let n = self.cfg.window;
        if window.is_empty() {
            return Err(ActError::EmptyWindow);
        }
        if window.len() > n {
            return Err(ActError::WindowTooLong { max: n, got: window.len() });
        }
        let padded = n - window.len();
        let full: Vec<Vec<f64>> = core::iter::repeat(&window[0]).take(padded).chain(window).cloned().collect();
        let probs = self.classify(&full)?;
        let c = self.cfg.classes;
        let rows: Vec<Vec<f64>> = probs.data().chunks(c).map(|r| r.to_vec()).collect();
        let argmax: Vec<usize> = rows.iter().map(|r| argmax(r)).collect();
        let label = *argmax.last().expect("non-empty output");
        Ok(Inference {
            probs: rows,
            argmax,
            label,
            padded,
        })
    }
}

/// Output of [`ActModel::infer`].
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub probs: Vec<Vec<f64>>,
    pub argmax: Vec<usize>,
    /// Class index at the final step.
    pub label: usize,
    /// Number of left-padding frames added.
    pub padded: usize,
}

/// Parameter handles in storage order.
#[derive(Clone, Debug)]
pub struct ActVars {
    pub vars: Vec<Var>,
}

/// First index of the maximum; ties resolve to the lower class.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn encoder_layer(g: &mut Graph, x: Var, l: &LayerIds, v: &dyn Fn(ParamId) -> Var, mask: Option<&Tensor>) -> Result<Var, AutodiffError> {
    let lin = |g: &mut Graph, x: Var, w: ParamId, b: ParamId| -> Result<Var, AutodiffError> {
        let y = g.matmul(x, v(w))?;
        g.add(y, v(b))
    };
    let q = lin(g, x, l.wq, l.bq)?;
    let k = lin(g, x, l.wk, l.bk)?;
    let val = lin(g, x, l.wv, l.bv)?;
    let a = attention(g, q, k, val, mask)?;
    let a = lin(g, a, l.wo, l.bo)?;
    let r = g.add(x, a)?;
    let x = g.layer_norm(r, v(l.ln1_g), v(l.ln1_b), LN_EPS)?;
    let f = lin(g, x, l.ff1_w, l.ff1_b)?;
    let f = g.gelu(f);
    let f = lin(g, f, l.ff2_w, l.ff2_b)?;
    let r = g.add(x, f)?;
    g.layer_norm(r, v(l.ln2_g), v(l.ln2_b), LN_EPS)
}

/// Scaled dot-product attention `softmax(QKᵀ/√d + M)·V` over `[.., T, d]` inputs.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, mask: Option<&Tensor>) -> Result<Var, AutodiffError> {
    let d = g.value(q).last_dim();
    let kt = g.transpose(k)?;
    let s = g.matmul(q, kt)?;
    let mut s = g.scale(s, 1.0 / (d as f64).sqrt());
    if let Some(m) = mask {
        s = g.add_mask(s, m)?;
    }
    let a = g.softmax(s);
    g.matmul(a, v)
}

/// Lower-triangular `T × T` matrix: 1 where `j ≤ i`, else 0.
pub fn causal_mask(t: usize) -> Tensor {
    assert!(t >= 1, "mask size must be positive");
    let data = (0..t * t).map(|k| if k % t <= k / t { 1.0 } else { 0.0 }).collect();
    Tensor::new(&[t, t], data).expect("valid mask shape")
}

/// Additive form of [`causal_mask`]: 0 where allowed, `-inf` elsewhere.
pub fn additive_mask(t: usize) -> Tensor {
    causal_mask(t).map(|m| if m == 1.0 { 0.0 } else { f64::NEG_INFINITY })
}

/// `x_i = W·q_i + pos_i` for a window `[.., N, in]`.
pub fn embed(g: &mut Graph, window: Var, w: Var, pos: Var) -> Result<Var, AutodiffError> {
    let h = g.matmul(window, w)?;
    g.add(h, pos)
}

pub(crate) fn log_probs(g: &mut Graph, probs: Var) -> Var {
    let p = g.clamp_min(probs, PROB_FLOOR);
    g.log(p)
}

/// Mean negative log-likelihood over every row of `probs` (`[.., T, C]`);
/// `labels` holds one class per row.
pub fn loss_cls(g: &mut Graph, probs: Var, labels: &[usize]) -> Result<Var, ActError> {
    let shape = g.value(probs).shape().to_vec();
    let c = *shape.last().expect("rank >= 1");
    let rows = g.value(probs).len() / c;
    if labels.len() != rows {
        return Err(ActError::Config("one label per probability row"));
    }
    let mut onehot = vec![0.0; rows * c];
    for (r, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(ActError::LabelRange { label: y, classes: c });
        }
        onehot[r * c + y] = 1.0;
    }
    let oh = g.constant(Tensor::new(&shape, onehot)?);
    let lp = log_probs(g, probs);
    let picked = g.mul(lp, oh)?;
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0 / rows as f64))
}

/// Truncated squared change of log-probabilities between consecutive steps,
/// previous step detached, normalized by `T·C` (per batch element, then averaged).
pub fn loss_tmse(g: &mut Graph, probs: Var, tau: f64) -> Result<Var, ActError> {
    let (axis, t) = tmse_axis(g, probs)?;
    let lp = log_probs(g, probs);
    let prev = g.slice(lp, axis, 0, t - 1)?;
    let prev = g.detach(prev);
    tmse_against(g, probs, lp, prev, tau)
}

fn tmse_axis(g: &Graph, probs: Var) -> Result<(usize, usize), ActError> {
    let shape = g.value(probs).shape();
    if shape.len() < 2 || shape[shape.len() - 2] < 2 {
        return Err(ActError::Config("T-MSE needs at least two steps"));
    }
    Ok((shape.len() - 2, shape[shape.len() - 2]))
}

/// T-MSE against explicit previous-step log-probabilities `prev` (`[.., T-1, C]`).
pub(crate) fn tmse_against(g: &mut Graph, probs: Var, lp: Var, prev: Var, tau: f64) -> Result<Var, ActError> {
    let (axis, t) = tmse_axis(g, probs)?;
    let total = g.value(probs).len();
    let cur = g.slice(lp, axis, 1, t - 1)?;
    let d = g.sub(cur, prev)?;
    let d = g.abs(d);
    let d = g.clamp_max(d, tau);
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / total as f64))
}

/// `L_cls + λ·L_tmse`; the smoothing term is skipped entirely when `λ = 0`
/// or there is a single step.
pub fn loss_total(g: &mut Graph, probs: Var, labels: &[usize], lambda: f64, tau: f64) -> Result<Var, ActError> {
    let cls = loss_cls(g, probs, labels)?;
    let shape = g.value(probs).shape();
    if lambda == 0.0 || shape.len() < 2 || shape[shape.len() - 2] < 2 {
        return Ok(cls);
    }
    let sm = loss_tmse(g, probs, tau)?;
    let sm = g.scale(sm, lambda);
    Ok(g.add(cls, sm)?)
}

/// Scalar combination used by [`loss_total`].
pub fn combine_losses(cls: f64, tmse: f64, lambda: f64) -> f64 {
    cls + lambda * tmse
}

/// Joint angles and per-frame dual labels for one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub frames: Vec<JointAngleFrame>,
    pub lower: Vec<u8>,
    pub upper: Vec<u8>,
}

impl LabeledSequence {
    pub fn validate(&self) -> Result<(), ActError> {
        if self.frames.len() != self.lower.len() || self.frames.len() != self.upper.len() {
            return Err(ActError::BadSequence {
                index: 0,
                reason: "frame and label counts differ",
            });
        }
        for (&lo, &up) in self.lower.iter().zip(&self.upper) {
            if !Head::Lower.contains(lo) || !Head::Upper.contains(up) {
                return Err(ActError::BadSequence {
                    index: 0,
                    reason: "label outside its group",
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn labels(&self, head: Head) -> &[u8] {
        match head {
            Head::Lower => &self.lower,
            Head::Upper => &self.upper,
        }
    }

    /// Features (selected joint angles) and class indices for one head.
    pub fn head_sequence(&self, head: Head, dofs: &[usize]) -> Result<Sequence, ActError> {
        self.validate()?;
        let x = self.frames.iter().map(|f| dofs.iter().map(|&j| f.q[j]).collect()).collect();
        let y = self
            .labels(head)
            .iter()
            .map(|&l| head.class_of(l).expect("validated label"))
            .collect();
        Ok(Sequence { x, y })
    }
}

#[cfg(test)]
mod tests;
