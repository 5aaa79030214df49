//! Sequential minimal optimization for the box- and equality-constrained
//! SVM dual
//!
//! ```text
//! min ½ αᵀ Q α − 1ᵀα   s.t. yᵀα = 0, 0 ≤ α ≤ C,   Q_ij = y_i y_j K_ij
//! ```
//!
//! using second-order working set selection.

use crate::error::{Error, Result};
use crate::numeric::SquareMatrix;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// `Qα − 1`.
    pub gradient: Vec<f64>,
    /// Offset: decision is `Σ α_i y_i K(x_i, x) − rho`.
    pub rho: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Maximal violating pair gap at exit.
    pub violation: f64,
}

impl DualSolution {
    pub fn bias(&self) -> f64 {
        -self.rho
    }
}

/// `½ αᵀ Q α − 1ᵀα` evaluated directly.
pub fn dual_objective(kernel: &SquareMatrix, y: &[f64], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        let row = kernel.row(i);
        let mut s = 0.0;
        for j in 0..n {
            s += alpha[j] * y[j] * row[j];
        }
        quad += alpha[i] * y[i] * s;
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

/// Solves the dual on `kernel` (which already contains any ridge term).
/// `warm` must be feasible when given.
pub fn solve_dual(kernel: &SquareMatrix, y: &[f64], c: f64, tol: f64, warm: Option<&[f64]>) -> Result<DualSolution> {
    let n = y.len();
    if kernel.n() != n {
        return Err(Error::DimensionMismatch(format!("kernel is {}×{0}, labels {n}", kernel.n())));
    }
    if !y.iter().any(|&v| v > 0.0) || !y.iter().any(|&v| v < 0.0) {
        return Err(Error::OneClass);
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("box constraint C must be positive, got {c}")));
    }
    let q = |i: usize, j: usize| y[i] * y[j] * kernel.get(i, j);

    let mut alpha = match warm {
        Some(a) => a.iter().map(|&v| v.clamp(0.0, c)).collect(),
        None => vec![0.0; n],
    };
    let mut gradient = vec![-1.0; n];
    for j in 0..n {
        if alpha[j] != 0.0 {
            for i in 0..n {
                gradient[i] += q(i, j) * alpha[j];
            }
        }
    }

    let up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let max_iterations = (100 * n).max(10_000_000);
    let mut iterations = 0;
    let mut violation;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) {
                let v = -y[t] * gradient[t];
                if v >= gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        if i_sel != usize::MAX {
            let kii = kernel.get(i_sel, i_sel);
            for t in 0..n {
                if !low(alpha[t], y[t]) {
                    continue;
                }
                let yg = y[t] * gradient[t];
                gmax2 = gmax2.max(yg);
                let b = gmax + yg;
                if b > 0.0 {
                    let mut a = kii + kernel.get(t, t) - 2.0 * kernel.get(i_sel, t);
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let v = -(b * b) / a;
                    if v <= obj_min {
                        obj_min = v;
                        j_sel = t;
                    }
                }
            }
        }
        violation = gmax + gmax2;
        if violation < tol || j_sel == usize::MAX || i_sel == usize::MAX {
            break;
        }
        if iterations >= max_iterations {
            log::warn!("SMO stopped after {iterations} iterations with violation {violation:e}");
            break;
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-gradient[i] - gradient[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (gradient[i] - gradient[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            gradient[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    let rho = compute_rho(&alpha, &gradient, y, c);
    let objective = 0.5 * alpha.iter().zip(&gradient).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    Ok(DualSolution {
        alpha,
        gradient,
        rho,
        objective,
        iterations,
        violation,
    })
}

fn compute_rho(alpha: &[f64], gradient: &[f64], y: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free) = (0.0, 0usize);
    for t in 0..alpha.len() {
        let yg = y[t] * gradient[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    if free > 0 {
        free_sum / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// Largest deviation of `y_i f(x_i)` from 1 over free support vectors,
/// where `f` uses the training kernel (ridge included).
pub fn free_margin_residual(kernel: &SquareMatrix, y: &[f64], c: f64, sol: &DualSolution) -> f64 {
    let n = y.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        let a = sol.alpha[i];
        if a > 0.0 && a < c {
            let f: f64 = (0..n).map(|j| sol.alpha[j] * y[j] * kernel.get(i, j)).sum::<f64>() - sol.rho;
            worst = worst.max((y[i] * f - 1.0).abs());
        }
    }
    worst
}
