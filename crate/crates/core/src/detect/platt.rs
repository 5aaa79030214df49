//! Platt sigmoid calibration, `P(y = 1 | f) = 1 / (1 + exp(A·f + B))`,
//! fitted by Newton's method with backtracking on the regularized-target
//! log-likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platt {
    pub a: f64,
    pub b: f64,
}

impl Platt {
    pub fn probability(&self, decision: f64) -> f64 {
        let z = self.a * decision + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

/// Platt's smoothed targets `(N₊+1)/(N₊+2)` and `1/(N₋+2)`.
pub fn smoothed_targets(labels: &[bool]) -> Vec<f64> {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    labels.iter().map(|&l| if l { hi } else { lo }).collect()
}

/// Negative log-likelihood of `(a, b)` against smoothed targets.
pub fn negative_log_likelihood(decisions: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    decisions
        .iter()
        .zip(targets)
        .map(|(&f, &t)| {
            let z = a * f + b;
            if z >= 0.0 {
                t * z + (1.0 + (-z).exp()).ln()
            } else {
                (t - 1.0) * z + (1.0 + z.exp()).ln()
            }
        })
        .sum()
}

pub fn fit_platt(decisions: &[f64], labels: &[bool]) -> Result<Platt> {
    if decisions.len() != labels.len() {
        return Err(Error::DimensionMismatch("decisions and labels differ in length".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::OneClass);
    }
    let neg = labels.len() - pos;
    let targets = smoothed_targets(labels);

    const MAX_ITER: usize = 100;
    const MIN_STEP: f64 = 1e-10;
    const SIGMA: f64 = 1e-12;
    const EPS: f64 = 1e-5;

    let mut a = 0.0;
    let mut b = ((neg as f64 + 1.0) / (pos as f64 + 1.0)).ln();
    let mut fval = negative_log_likelihood(decisions, &targets, a, b);
    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&f, &t) in decisions.iter().zip(&targets) {
            let z = a * f + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < EPS && g2.abs() < EPS {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = negative_log_likelihood(decisions, &targets, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    Ok(Platt { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separated_scores_keep_their_order() {
        let d = [-3.0, -2.0, -1.5, 1.0, 2.0, 4.0];
        let l = [false, false, false, true, true, true];
        let p = fit_platt(&d, &l).unwrap();
        assert!(p.a < 0.0);
        let probs: Vec<f64> = d.iter().map(|&f| p.probability(f)).collect();
        for w in probs.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!(probs[..3].iter().all(|&q| q <= 0.5));
        assert!(probs[3..].iter().all(|&q| q >= 0.5));
        assert!(probs.iter().all(|&q| q > 0.0 && q < 1.0));
    }

    #[test]
    fn constant_scores_calibrate_to_constant() {
        let d = [0.3; 8];
        let l = [true, false, false, true, false, false, false, false];
        let p = fit_platt(&d, &l).unwrap();
        let first = p.probability(0.3);
        assert!(d.iter().all(|&f| p.probability(f) == first));
    }

    #[test]
    fn one_class_is_rejected() {
        assert!(matches!(fit_platt(&[1.0, 2.0], &[true, true]), Err(Error::OneClass)));
    }

    /// Shuffled labels: the fitted sigmoid is flat near the prevalence, and
    /// no point of a fine grid has a better likelihood.
    #[test]
    fn shuffled_labels_match_direct_likelihood_maximization() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let decisions: Vec<f64> = (0..100).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<bool> = (0..100).map(|i| i < 30).collect();
        let p = fit_platt(&decisions, &labels).unwrap();
        let targets = smoothed_targets(&labels);
        let fitted = negative_log_likelihood(&decisions, &targets, p.a, p.b);
        let mut best = f64::INFINITY;
        for ia in -200..=200 {
            for ib in -200..=200 {
                let (a, b) = (ia as f64 * 0.01, ib as f64 * 0.02);
                best = best.min(negative_log_likelihood(&decisions, &targets, a, b));
            }
        }
        assert!(fitted <= best + 1e-6, "fitted {fitted} vs grid {best}");
        let mean: f64 = decisions.iter().map(|&f| p.probability(f)).sum::<f64>() / 100.0;
        assert!((mean - 0.3).abs() < 0.05, "mean calibrated score {mean}");
        assert!(decisions.iter().all(|&f| (p.probability(f) - 0.3).abs() < 0.2));
    }
}
