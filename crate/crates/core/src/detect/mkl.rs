//! Multiple-kernel SVM: the dual on `Σ β_m K_m + γI` with the kernel
//! weights `β` on the probability simplex.
//!
//! Training alternates an SMO solve for `α` at fixed `β` with a projected
//! reduced-gradient step on `β`. The tracked objective is the optimal SVM
//! value at the current weights, `J(β) = −min_α (½ αᵀQ(β)α − 1ᵀα)`, which is
//! convex in `β`; every accepted step lowers it.

use serde::{Deserialize, Serialize};

use crate::detect::smo::{solve_dual, DualSolution};
use crate::error::{Error, Result};
use crate::numeric::SquareMatrix;

pub const DEFAULT_GAMMA: f64 = 0.01;
pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ALTERNATIONS: usize = 20;
const PSD_TOL: f64 = 1e-8;
const MAX_BACKTRACKS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_alternations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_TOL,
            max_alternations: DEFAULT_MAX_ALTERNATIONS,
        }
    }
}

/// Gram matrices, ±1 labels, box constraint and ridge.
#[derive(Debug, Clone)]
pub struct DetectorTrainingProblem {
    pub grams: Vec<SquareMatrix>,
    pub labels: Vec<f64>,
    pub c: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct MklSolution {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub bias: f64,
    /// `J(β)` at the returned weights.
    pub objective: f64,
    /// `J` after every accepted alternation, starting from uniform weights.
    pub trace: Vec<f64>,
    pub dual: DualSolution,
}

impl MklSolution {
    /// Value of the written dual `½ αᵀ(Σ β_m K_m + γI)α − 1ᵀα`.
    pub fn dual_objective(&self) -> f64 {
        self.dual.objective
    }
}

impl DetectorTrainingProblem {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.grams.is_empty() {
            return Err(Error::InvalidArgument("no kernels".into()));
        }
        if self.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidArgument("labels must be ±1".into()));
        }
        if !self.labels.contains(&1.0) || !self.labels.contains(&-1.0) {
            return Err(Error::OneClass);
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidArgument("ridge γ must be non-negative".into()));
        }
        for (m, k) in self.grams.iter().enumerate() {
            if k.n() != n {
                return Err(Error::DimensionMismatch(format!("kernel {m} is {}×{0}, labels {n}", k.n())));
            }
            let scale = k.max_abs_diag().max(1.0);
            let asym = k.max_asymmetry();
            if asym > PSD_TOL * scale {
                return Err(Error::NotPsd { kernel: m, value: asym });
            }
            let pivot = k.min_cholesky_pivot(PSD_TOL * scale);
            if pivot < -PSD_TOL * scale {
                return Err(Error::NotPsd { kernel: m, value: pivot });
            }
        }
        Ok(())
    }

    /// `Σ β_m K_m + γI`.
    pub fn combined(&self, beta: &[f64]) -> SquareMatrix {
        let n = self.labels.len();
        let mut out = SquareMatrix::zeros(n);
        for (k, &b) in self.grams.iter().zip(beta) {
            if b == 0.0 {
                continue;
            }
            for i in 0..n {
                for j in 0..n {
                    out.set(i, j, out.get(i, j) + b * k.get(i, j));
                }
            }
        }
        for i in 0..n {
            out.set(i, i, out.get(i, i) + self.gamma);
        }
        out
    }

    pub fn solve_fixed_beta(&self, beta: &[f64], tol: f64, warm: Option<&[f64]>) -> Result<DualSolution> {
        solve_dual(&self.combined(beta), &self.labels, self.c, tol, warm)
    }

    /// `∂J/∂β_m = −½ αᵀ Y K_m Y α`.
    fn beta_gradient(&self, alpha: &[f64]) -> Vec<f64> {
        let n = alpha.len();
        let signed: Vec<f64> = alpha.iter().zip(&self.labels).map(|(a, y)| a * y).collect();
        self.grams
            .iter()
            .map(|k| {
                let mut quad = 0.0;
                for i in 0..n {
                    if signed[i] == 0.0 {
                        continue;
                    }
                    let row = k.row(i);
                    quad += signed[i] * (0..n).map(|j| row[j] * signed[j]).sum::<f64>();
                }
                -0.5 * quad
            })
            .collect()
    }
}

/// Euclidean projection onto `{β : Σβ = 1, β ≥ 0}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    let total: f64 = out.iter().sum();
    for x in &mut out {
        *x /= total;
    }
    out
}

/// Alternating MK-SVM training from uniform kernel weights.
pub fn train_mklsvm(problem: &DetectorTrainingProblem, options: SolverOptions) -> Result<MklSolution> {
    problem.validate()?;
    let m = problem.grams.len();
    let mut beta = vec![1.0 / m as f64; m];
    let mut dual = problem.solve_fixed_beta(&beta, options.tol, None)?;
    let mut objective = -dual.objective;
    let mut trace = vec![objective];

    for _ in 0..options.max_alternations {
        if m == 1 {
            break;
        }
        let grad = problem.beta_gradient(&dual.alpha);
        let (lo, hi) = grad
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &g| (lo.min(g), hi.max(g)));
        let spread = hi - lo;
        if spread <= 1e-14 * (1.0 + objective.abs()) {
            break;
        }
        let mut step = 1.0 / spread;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let stepped: Vec<f64> = beta.iter().zip(&grad).map(|(b, g)| b - step * g).collect();
            let candidate = project_simplex(&stepped);
            if candidate.iter().zip(&beta).all(|(a, b)| (a - b).abs() < 1e-15) {
                break;
            }
            let trial = problem.solve_fixed_beta(&candidate, options.tol, Some(&dual.alpha))?;
            if -trial.objective <= objective {
                accepted = Some((candidate, trial));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, trial)) = accepted else {
            break;
        };
        let improvement = objective + trial.objective;
        beta = candidate;
        dual = trial;
        objective = -dual.objective;
        trace.push(objective);
        if improvement < options.tol * objective.abs().max(1.0) {
            break;
        }
    }

    Ok(MklSolution {
        alpha: dual.alpha.clone(),
        beta,
        bias: dual.bias(),
        objective,
        trace,
        dual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_gram(xs: &[Vec<f64>]) -> SquareMatrix {
        SquareMatrix::symmetric_from_fn(xs.len(), |i, j| crate::numeric::dot(&xs[i], &xs[j]))
    }

    fn random_problem(seed: u64, n: usize, m: usize) -> DetectorTrainingProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        labels.rotate_left(rng.random_range(0..n));
        let grams = (0..m)
            .map(|_| {
                let d = rng.random_range(1..4);
                let xs: Vec<Vec<f64>> = labels
                    .iter()
                    .map(|&y| (0..d).map(|_| rng.random_range(-1.0..1.0) + 0.5 * y * rng.random::<f64>()).collect())
                    .collect();
                linear_gram(&xs)
            })
            .collect();
        DetectorTrainingProblem {
            grams,
            labels,
            c: 1.0,
            gamma: DEFAULT_GAMMA,
        }
    }

    #[test]
    fn identical_kernels_match_single_kernel() {
        let p = random_problem(4, 12, 1);
        let single = train_mklsvm(&p, SolverOptions { tol: 1e-8, ..Default::default() }).unwrap();
        let doubled = DetectorTrainingProblem {
            grams: vec![p.grams[0].clone(), p.grams[0].clone()],
            ..p.clone()
        };
        let both = train_mklsvm(&doubled, SolverOptions { tol: 1e-8, ..Default::default() }).unwrap();
        assert!((single.objective - both.objective).abs() < 1e-7);
        for beta in [[0.3, 0.7], [1.0, 0.0]] {
            let d = doubled.solve_fixed_beta(&beta, 1e-10, None).unwrap();
            assert!((d.objective + single.objective).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_indefinite_and_one_class() {
        let mut p = random_problem(1, 6, 2);
        p.grams[1] = SquareMatrix::from_fn(6, |i, j| if i == j { -1.0 } else { 0.0 });
        assert!(matches!(train_mklsvm(&p, SolverOptions::default()), Err(Error::NotPsd { kernel: 1, .. })));
        let mut q = random_problem(1, 6, 1);
        q.labels = vec![1.0; 6];
        assert!(matches!(train_mklsvm(&q, SolverOptions::default()), Err(Error::OneClass)));
    }

    #[test]
    fn prefers_the_informative_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let labels: Vec<f64> = (0..30).map(|i| if i < 15 { 1.0 } else { -1.0 }).collect();
        let good: Vec<Vec<f64>> = labels.iter().map(|&y| vec![y * 2.0 + rng.random_range(-0.3..0.3)]).collect();
        let noise: Vec<Vec<f64>> = labels.iter().map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let p = DetectorTrainingProblem {
            grams: vec![linear_gram(&noise), linear_gram(&good)],
            labels,
            c: 1.0,
            gamma: DEFAULT_GAMMA,
        };
        let sol = train_mklsvm(&p, SolverOptions::default()).unwrap();
        assert!(sol.beta[1] > 0.9, "{:?}", sol.beta);
        assert!(sol.trace.len() > 1);
    }

    proptest! {
        #[test]
        fn simplex_projection(v in proptest::collection::vec(-5.0f64..5.0, 1..6)) {
            let p = project_simplex(&v);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            let again = project_simplex(&p);
            for (a, b) in p.iter().zip(&again) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn alternation_is_monotone_and_stays_on_simplex(seed in 0u64..60, n in 4usize..16, m in 2usize..4) {
            let p = random_problem(seed, n, m);
            let sol = train_mklsvm(&p, SolverOptions::default()).unwrap();
            for w in sol.trace.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            prop_assert!((sol.beta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(sol.beta.iter().all(|&b| b >= 0.0));
            let c = p.c;
            prop_assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
            let balance: f64 = sol.alpha.iter().zip(&p.labels).map(|(a, y)| a * y).sum();
            prop_assert!(balance.abs() < 1e-6);
        }
    }
}
