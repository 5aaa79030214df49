use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::sq_dist;

pub const MAX_ITERATIONS: usize = 100;
pub const RELATIVE_TOLERANCE: f64 = 1e-4;

/// Visual vocabulary for one descriptor channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub channel: String,
    pub k: usize,
    pub dim: usize,
    /// Row-major `k × dim`.
    pub centers: Vec<f64>,
    pub train_seed: u64,
    /// Soft-assignment bandwidth: mean distance from the training
    /// descriptors to their nearest center.
    pub sigma: f64,
}

impl Codebook {
    pub fn center(&self, index: usize) -> &[f64] {
        &self.centers[index * self.dim..(index + 1) * self.dim]
    }

    /// Index and squared distance of the closest center (lowest index on ties).
    pub fn nearest(&self, v: &[f64]) -> (usize, f64) {
        nearest(&self.centers, self.dim, v)
    }

    pub fn inertia(&self, data: &[f64]) -> f64 {
        data.chunks_exact(self.dim).map(|v| self.nearest(v).1).sum()
    }
}

fn nearest(centers: &[f64], dim: usize, v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (index, c) in centers.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (index, d);
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding.
///
/// `data` is row-major with `dim` columns. Deterministic given the input
/// order and `seed`.
pub fn train_codebook(channel: &str, data: &[f64], dim: usize, k: usize, seed: u64) -> Result<Codebook> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch(format!(
            "{} values do not form rows of width {dim}",
            data.len()
        )));
    }
    let rows: Vec<&[f64]> = data.chunks_exact(dim).collect();
    let mut seen = HashSet::new();
    let distinct: Vec<&[f64]> = rows
        .iter()
        .copied()
        .filter(|r| seen.insert(r.iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
        .collect();
    if k == 0 || distinct.len() < k {
        return Err(Error::TooFewDistinct {
            k,
            distinct: distinct.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(&distinct, dim, k, &mut rng);

    let mut previous = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let assignment: Vec<(usize, f64)> = rows.par_iter().map(|r| nearest(&centers, dim, r)).collect();
        let inertia: f64 = assignment.iter().map(|a| a.1).sum();

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (row, &(c, _)) in rows.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in centers[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s / counts[c] as f64;
                }
            }
        }
        // Empty clusters take the point farthest from its current center.
        for c in 0..k {
            if counts[c] == 0 {
                let (far, _) = assignment
                    .iter()
                    .enumerate()
                    .fold((0, -1.0), |best, (i, &(_, d))| if d > best.1 { (i, d) } else { best });
                centers[c * dim..(c + 1) * dim].copy_from_slice(rows[far]);
            }
        }

        let converged = previous.is_finite()
            && (previous - inertia).abs() <= RELATIVE_TOLERANCE * previous.max(f64::MIN_POSITIVE);
        previous = inertia;
        if converged {
            break;
        }
    }

    let mean_distance = rows
        .iter()
        .map(|r| nearest(&centers, dim, r).1.sqrt())
        .sum::<f64>()
        / rows.len() as f64;
    let sigma = if mean_distance > 0.0 {
        mean_distance
    } else {
        fallback_sigma(&centers, dim)
    };
    Ok(Codebook {
        channel: channel.to_string(),
        k,
        dim,
        centers,
        train_seed: seed,
        sigma,
    })
}

fn seed_centers(distinct: &[&[f64]], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..distinct.len());
    centers.extend_from_slice(distinct[first]);
    let mut d2: Vec<f64> = distinct.iter().map(|p| sq_dist(p, distinct[first])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        // Every not-yet-chosen distinct point has positive weight.
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            if target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let chosen = distinct[pick];
        centers.extend_from_slice(chosen);
        for (slot, p) in d2.iter_mut().zip(distinct) {
            *slot = slot.min(sq_dist(p, chosen));
        }
    }
    centers
}

fn fallback_sigma(centers: &[f64], dim: usize) -> f64 {
    let k = centers.len() / dim;
    if k < 2 {
        return 1.0;
    }
    let mut total = 0.0;
    for i in 0..k {
        let ci = &centers[i * dim..(i + 1) * dim];
        let nearest_other = (0..k)
            .filter(|&j| j != i)
            .map(|j| sq_dist(ci, &centers[j * dim..(j + 1) * dim]))
            .fold(f64::INFINITY, f64::min);
        total += nearest_other.sqrt();
    }
    let mean = total / k as f64;
    if mean > 0.0 {
        mean
    } else {
        1.0
    }
}
