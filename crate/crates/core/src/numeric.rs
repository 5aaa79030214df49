//! Small dense helpers shared by the encoders and solvers.

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// χ² distance `Σ (x_i − y_i)² / (x_i + y_i + ε)` with ε = 1e-10.
#[inline]
pub fn chi2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d / (x + y + 1e-10)
        })
        .sum()
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = f(i, j);
            }
        }
        m
    }

    /// Fills a symmetric matrix evaluating `f` on the upper triangle only.
    pub fn symmetric_from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m.data[i * n + j] = v;
                m.data[j * n + i] = v;
            }
        }
        m
    }

    pub fn from_rows(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n);
        SquareMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SquareMatrix {
            n: self.n,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn max_abs_diag(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).abs()).fold(0.0, f64::max)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Smallest residual pivot of a diagonally pivoted Cholesky factorization.
    ///
    /// The factorization stops once every remaining pivot is at most `tol`;
    /// a returned value below `-tol` certifies the matrix is not PSD.
    pub fn min_cholesky_pivot(&self, tol: f64) -> f64 {
        let n = self.n;
        let mut diag: Vec<f64> = (0..n).map(|i| self.get(i, i)).collect();
        let mut factors: Vec<Vec<f64>> = Vec::new();
        let mut active: Vec<usize> = (0..n).collect();
        loop {
            let Some((pos, &p)) = active
                .iter()
                .enumerate()
                .max_by(|a, b| diag[*a.1].total_cmp(&diag[*b.1]).then(b.1.cmp(a.1)))
            else {
                return 0.0;
            };
            if diag[p] <= tol {
                return active.iter().map(|&i| diag[i]).fold(f64::INFINITY, f64::min);
            }
            active.swap_remove(pos);
            let pivot = diag[p].sqrt();
            let mut column = vec![0.0; n];
            for &i in &active {
                let mut v = self.get(i, p);
                for f in &factors {
                    v -= f[i] * f[p];
                }
                column[i] = v / pivot;
            }
            column[p] = pivot;
            for &i in &active {
                diag[i] -= column[i] * column[i];
            }
            factors.push(column);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivot_detects_indefinite() {
        let psd = SquareMatrix::from_rows(2, vec![1.0, 1.0, 1.0, 1.0]);
        assert!(psd.min_cholesky_pivot(1e-10) >= -1e-10);
        let indefinite = SquareMatrix::from_rows(2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(indefinite.min_cholesky_pivot(1e-10) < -1.0);
        let neg = SquareMatrix::from_rows(1, vec![-0.5]);
        assert!(neg.min_cholesky_pivot(1e-10) <= -0.5);
    }

    #[test]
    fn chi2_of_identical_is_zero() {
        assert_eq!(chi2_dist(&[0.2, 0.0, 0.8], &[0.2, 0.0, 0.8]), 0.0);
        assert!((chi2_dist(&[1.0, 0.0], &[0.0, 1.0]) - 2.0).abs() < 1e-9);
    }
}
