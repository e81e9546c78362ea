//! Frame-level classification metrics: accuracy, mAP, macro F1, binary
//! (per-slot) accuracy, plus per-category summaries.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("class {class} out of range for {classes} classes")]
    ClassRange { class: usize, classes: usize },
    #[error("non-finite score")]
    NonFinite,
    #[error("need at least {min} trials, got {got}")]
    TooFewTrials { min: usize, got: usize },
}

fn same_len(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::Length(a, b));
    }
    if a == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64, MetricsError> {
    same_len(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Frame order for class `c`: descending score, ties by ascending frame index.
fn ranking(scores: &[Vec<f64>], c: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b][c].total_cmp(&scores[a][c]).then(a.cmp(&b)));
    idx
}

/// Step-wise average precision of class `c`; `None` when it has no positives.
pub fn average_precision(scores: &[Vec<f64>], truth: &[usize], c: usize) -> Option<f64> {
    let positives = truth.iter().filter(|&&t| t == c).count();
    if positives == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, &i) in ranking(scores, c).iter().enumerate() {
        if truth[i] == c {
            hits += 1;
            ap += (hits as f64 / (k + 1) as f64) / positives as f64;
        }
    }
    Some(ap)
}

fn check_scores(scores: &[Vec<f64>], truth: &[usize]) -> Result<usize, MetricsError> {
    same_len(scores.len(), truth.len())?;
    let c = scores[0].len();
    if scores.iter().any(|r| r.len() != c) {
        return Err(MetricsError::Length(scores[0].len(), c));
    }
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    if let Some(&class) = truth.iter().find(|&&t| t >= c) {
        return Err(MetricsError::ClassRange { class, classes: c });
    }
    Ok(c)
}

/// Per-class AP (`None` for classes absent from `truth`).
pub fn per_class_ap(scores: &[Vec<f64>], truth: &[usize]) -> Result<Vec<Option<f64>>, MetricsError> {
    let c = check_scores(scores, truth)?;
    Ok((0..c).map(|k| average_precision(scores, truth, k)).collect())
}

/// Mean AP over the classes present in `truth`.
pub fn mean_average_precision(scores: &[Vec<f64>], truth: &[usize]) -> Result<f64, MetricsError> {
    let aps: Vec<f64> = per_class_ap(scores, truth)?.into_iter().flatten().collect();
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// `(precision, recall, f1)` per class from the confusion counts.
pub fn per_class_prf(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<(f64, f64, f64)>, MetricsError> {
    same_len(pred.len(), truth.len())?;
    if let Some(&class) = pred.iter().chain(truth).find(|&&x| x >= classes) {
        return Err(MetricsError::ClassRange { class, classes });
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fneg = vec![0usize; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    Ok((0..classes).map(|c| prf(tp[c], fp[c], fneg[c])).collect())
}

pub(crate) fn prf(tp: usize, fp: usize, fneg: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Unweighted mean of per-class F1 over all `classes`.
pub fn macro_f1(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64, MetricsError> {
    let table = per_class_prf(pred, truth, classes)?;
    Ok(table.iter().map(|t| t.2).sum::<f64>() / classes as f64)
}

/// Per-slot match rate over `(lower, upper)` pairs.
pub fn binary_accuracy<T: PartialEq>(pred: &[(T, T)], truth: &[(T, T)]) -> Result<f64, MetricsError> {
    same_len(pred.len(), truth.len())?;
    let slots: usize = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| usize::from(p.0 == t.0) + usize::from(p.1 == t.1))
        .sum();
    Ok(slots as f64 / (2 * pred.len()) as f64)
}

/// Frames where both slots are correct.
pub fn combined_accuracy<T: PartialEq>(pred: &[(T, T)], truth: &[(T, T)]) -> Result<f64, MetricsError> {
    accuracy(pred, truth)
}

/// Median of inverse latencies (seconds); requires at least 10 samples.
pub fn fps_from_latencies(latencies: &[f64]) -> Result<f64, MetricsError> {
    if latencies.len() < MIN_FPS_TRIALS {
        return Err(MetricsError::TooFewTrials {
            min: MIN_FPS_TRIALS,
            got: latencies.len(),
        });
    }
    let mut inv: Vec<f64> = latencies.iter().map(|l| 1.0 / l).collect();
    inv.sort_by(f64::total_cmp);
    let n = inv.len();
    Ok(if n % 2 == 1 { inv[n / 2] } else { 0.5 * (inv[n / 2 - 1] + inv[n / 2]) })
}

pub const MIN_FPS_TRIALS: usize = 10;

/// Label categories of the action inventory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Motions,
    Transitory,
    Ordering,
    Background,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Motions, Category::Transitory, Category::Ordering, Category::Background];

    pub fn of(label: u8) -> Option<Category> {
        match label {
            1..=4 => Some(Category::Motions),
            5..=7 => Some(Category::Transitory),
            8..=16 => Some(Category::Ordering),
            17 => Some(Category::Background),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub label: u8,
    pub ap: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub acc: f64,
    pub map: f64,
    pub f1_macro: f64,
    pub classes: Vec<ClassRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Both labels correct.
    pub acc: f64,
    /// Mean of the two heads' mAP.
    pub map: f64,
    /// Macro F1 over all labels of both heads.
    pub f1_macro: f64,
    pub binary_acc: f64,
    pub lower: HeadReport,
    pub upper: HeadReport,
    /// Mean F1 of the labels in each category (categories without support omitted).
    pub category_f1: Vec<(Category, f64)>,
    pub fps: f64,
    pub frames: usize,
}

/// Scores, predictions and ground truth of one head, classes as indices.
#[derive(Clone, Copy, Debug)]
pub struct HeadData<'a> {
    pub first_label: u8,
    pub scores: &'a [Vec<f64>],
    pub pred: &'a [usize],
    pub truth: &'a [usize],
}

fn head_report(h: &HeadData<'_>) -> Result<(HeadReport, Vec<(f64, bool)>), MetricsError> {
    let classes = h.scores.first().map_or(0, |r| r.len());
    let aps = per_class_ap(h.scores, h.truth)?;
    let prf = per_class_prf(h.pred, h.truth, classes)?;
    let mut rows = Vec::with_capacity(classes);
    let mut f1s = Vec::with_capacity(classes);
    for c in 0..classes {
        let support = h.truth.iter().filter(|&&t| t == c).count();
        rows.push(ClassRow {
            label: h.first_label + c as u8,
            ap: aps[c],
            precision: prf[c].0,
            recall: prf[c].1,
            f1: prf[c].2,
            support,
        });
        f1s.push((prf[c].2, support > 0));
    }
    let present: Vec<f64> = aps.iter().flatten().copied().collect();
    Ok((
        HeadReport {
            acc: accuracy(h.pred, h.truth)?,
            map: present.iter().sum::<f64>() / present.len() as f64,
            f1_macro: prf.iter().map(|t| t.2).sum::<f64>() / classes as f64,
            classes: rows,
        },
        f1s,
    ))
}

/// Assemble the full report from both heads.
pub fn evaluate(lower: HeadData<'_>, upper: HeadData<'_>, fps: f64) -> Result<EvalReport, MetricsError> {
    same_len(lower.pred.len(), upper.pred.len())?;
    let (lo, lo_f1) = head_report(&lower)?;
    let (up, up_f1) = head_report(&upper)?;
    let pairs = |p: &[usize], q: &[usize]| -> Vec<(usize, usize)> { p.iter().copied().zip(q.iter().copied()).collect() };
    let pred = pairs(lower.pred, upper.pred);
    let truth = pairs(lower.truth, upper.truth);
    let all_f1: Vec<f64> = lo_f1.iter().chain(&up_f1).map(|x| x.0).collect();
    let mut category_f1 = Vec::new();
    for cat in Category::ALL {
        let mut vals = Vec::new();
        for (row, (f1, present)) in lo.classes.iter().zip(&lo_f1).chain(up.classes.iter().zip(&up_f1)) {
            if Category::of(row.label) == Some(cat) && *present {
                vals.push(*f1);
            }
        }
        if !vals.is_empty() {
            category_f1.push((cat, vals.iter().sum::<f64>() / vals.len() as f64));
        }
    }
    Ok(EvalReport {
        acc: combined_accuracy(&pred, &truth)?,
        map: 0.5 * (lo.map + up.map),
        f1_macro: all_f1.iter().sum::<f64>() / all_f1.len() as f64,
        binary_acc: binary_accuracy(&pred, &truth)?,
        lower: lo,
        upper: up,
        category_f1,
        fps,
        frames: pred.len(),
    })
}
