use serde::{Deserialize, Serialize};

use crate::numeric::{chi2_dist, dot, SquareMatrix};

/// Configured base kernel of a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    Linear,
    /// `exp(−χ²(x, y) / A)` with A the mean χ² distance on training data.
    Chi2,
}

/// Base kernel with its bandwidth resolved on training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Chi2 { bandwidth: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Chi2 { bandwidth } => (-chi2_dist(a, b) / bandwidth).exp(),
        }
    }

    /// Resolves `kind` on a training sample; χ² bandwidth is the mean
    /// distance over pairs `i < j`, scaled by `scale`.
    pub fn fit(kind: KernelKind, rows: &[&[f64]], scale: f64) -> Kernel {
        match kind {
            KernelKind::Linear => Kernel::Linear,
            KernelKind::Chi2 => Kernel::Chi2 {
                bandwidth: mean_chi2(rows) * scale,
            },
        }
    }

    pub fn gram(&self, rows: &[&[f64]]) -> SquareMatrix {
        SquareMatrix::symmetric_from_fn(rows.len(), |i, j| self.eval(rows[i], rows[j]))
    }
}

pub fn mean_chi2(rows: &[&[f64]]) -> f64 {
    let n = rows.len();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            total += chi2_dist(rows[i], rows[j]);
            pairs += 1;
        }
    }
    let mean = if pairs > 0 { total / pairs as f64 } else { 0.0 };
    if mean > 0.0 {
        mean
    } else {
        1.0
    }
}
