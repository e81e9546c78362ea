use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::IkError;

/// Which bound, if any, a variable rests on at the solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    Free,
    Lower,
    Upper,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub active: Vec<Bound>,
    pub iterations: usize,
    /// `‖x − clamp(x − (Hx + g), lo, hi)‖∞`.
    pub kkt_residual: f64,
}

const FEAS_TOL: f64 = 1e-12;

/// Projected-gradient optimality residual of `x`.
pub fn kkt_residual(h: &DMatrix<f64>, g: &DVector<f64>, lo: &[f64], hi: &[f64], x: &DVector<f64>) -> f64 {
    let grad = h * x + g;
    (0..x.len())
        .map(|i| (x[i] - (x[i] - grad[i]).clamp(lo[i], hi[i])).abs())
        .fold(0.0, f64::max)
}

/// Minimize `½xᵀHx + gᵀx` subject to `lo ≤ x ≤ hi` with a primal active-set method.
///
/// `H` must be symmetric positive definite on every free subspace visited
/// (guaranteed when it is positive definite). Variables on an active bound are
/// set to that bound exactly. Infinite bounds are allowed.
pub fn solve_box_qp(h: &DMatrix<f64>, g: &DVector<f64>, lo: &[f64], hi: &[f64]) -> Result<QpSolution, IkError> {
    let n = g.len();
    if h.nrows() != n || h.ncols() != n || lo.len() != n || hi.len() != n {
        return Err(IkError::Dimension);
    }
    if h.iter().chain(g.iter()).any(|v| !v.is_finite()) {
        return Err(IkError::NonFinite("qp data"));
    }
    for i in 0..n {
        if lo[i].is_nan() || hi[i].is_nan() || lo[i] > hi[i] {
            return Err(IkError::InconsistentBounds { index: i, lo: lo[i], hi: hi[i] });
        }
        for j in 0..i {
            if (h[(i, j)] - h[(j, i)]).abs() > 1e-9 * (1.0 + h[(i, j)].abs()) {
                return Err(IkError::NotSymmetric);
            }
        }
    }

    let mut active = vec![Bound::Free; n];
    let mut x = DVector::zeros(n);
    for i in 0..n {
        if lo[i] == hi[i] || 0.0 < lo[i] {
            active[i] = Bound::Lower;
            x[i] = lo[i];
        } else if 0.0 > hi[i] {
            active[i] = Bound::Upper;
            x[i] = hi[i];
        }
    }

    let max_iter = 10 * n + 50;
    for it in 1..=max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| active[i] == Bound::Free).collect();
        let target = subproblem(h, g, &x, &free)?;
        let step: Vec<f64> = free.iter().zip(target.iter()).map(|(&i, t)| t - x[i]).collect();

        // largest feasible fraction along the step
        let mut alpha = 1.0;
        let mut blocking = None;
        for (k, &i) in free.iter().enumerate() {
            let p = step[k];
            let limit = if p < 0.0 && lo[i].is_finite() {
                (lo[i] - x[i]) / p
            } else if p > 0.0 && hi[i].is_finite() {
                (hi[i] - x[i]) / p
            } else {
                continue;
            };
            if limit < alpha {
                alpha = limit.max(0.0);
                blocking = Some((i, if p < 0.0 { Bound::Lower } else { Bound::Upper }));
            }
        }
        for (k, &i) in free.iter().enumerate() {
            x[i] += alpha * step[k];
            x[i] = x[i].clamp(lo[i], hi[i]);
        }

        if let Some((i, b)) = blocking {
            active[i] = b;
            x[i] = if b == Bound::Lower { lo[i] } else { hi[i] };
            continue;
        }

        // Free subproblem solved; release the bound with the most negative multiplier.
        let grad = h * &x + g;
        let mut worst = None;
        let mut worst_val = -FEAS_TOL;
        for i in 0..n {
            let mult = match active[i] {
                Bound::Free => continue,
                _ if lo[i] == hi[i] => continue,
                Bound::Lower => grad[i],
                Bound::Upper => -grad[i],
            };
            if mult < worst_val {
                worst_val = mult;
                worst = Some(i);
            }
        }
        match worst {
            Some(i) => active[i] = Bound::Free,
            None => {
                let kkt = kkt_residual(h, g, lo, hi, &x);
                return Ok(QpSolution {
                    x,
                    active,
                    iterations: it,
                    kkt_residual: kkt,
                });
            }
        }
    }
    Err(IkError::QpIterationLimit)
}

/// Minimizer over the free variables with the others held fixed.
fn subproblem(h: &DMatrix<f64>, g: &DVector<f64>, x: &DVector<f64>, free: &[usize]) -> Result<DVector<f64>, IkError> {
    let nf = free.len();
    if nf == 0 {
        return Ok(DVector::zeros(0));
    }
    let n = g.len();
    let mut hff = DMatrix::zeros(nf, nf);
    let mut rhs = DVector::zeros(nf);
    let mut is_free = vec![false; n];
    for &i in free {
        is_free[i] = true;
    }
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            hff[(a, b)] = h[(i, j)];
        }
        let mut r = -g[i];
        for j in 0..n {
            if !is_free[j] {
                r -= h[(i, j)] * x[j];
            }
        }
        rhs[a] = r;
    }
    let chol = hff.cholesky().ok_or(IkError::NotPositiveDefinite)?;
    Ok(chol.solve(&rhs))
}
