//! Training-image selection by multi-feature kernel density confidence.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::FeatureSet;
use crate::error::{Error, Result};
use crate::numeric::sq_dist;

#[derive(Debug, Clone)]
pub struct PoolMember {
    pub image_id: String,
    pub features: Arc<FeatureSet>,
}

/// Images tagged with one concept, with per-channel kernel radii.
#[derive(Debug, Clone)]
pub struct ConceptImagePool {
    pub concept: String,
    pub members: Vec<PoolMember>,
    pub sigma: Vec<f64>,
    /// Channels whose pairwise distances were all zero; σ fell back to 1.
    pub degenerate_channels: Vec<usize>,
}

impl ConceptImagePool {
    pub fn new(concept: impl Into<String>, members: Vec<PoolMember>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        check_channels(&members)?;
        let channels = members[0].features.len();
        let mut sigma = Vec::with_capacity(channels);
        let mut degenerate = Vec::new();
        for m in 0..channels {
            match channel_sigma(&members, m) {
                Ok(s) => sigma.push(s),
                Err(Error::DegenerateSigma { .. }) => {
                    degenerate.push(m);
                    sigma.push(1.0);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(ConceptImagePool {
            concept: concept.into(),
            members,
            sigma,
            degenerate_channels: degenerate,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.sigma.len()
    }
}

fn check_channels(members: &[PoolMember]) -> Result<()> {
    let first = &members[0].features;
    for member in members {
        let fs = &member.features;
        if fs.len() != first.len()
            || fs
                .channels
                .iter()
                .zip(&first.channels)
                .any(|(a, b)| a.values.len() != b.values.len())
        {
            return Err(Error::DimensionMismatch(format!(
                "image `{}` channel layout differs from `{}`",
                member.image_id, members[0].image_id
            )));
        }
    }
    Ok(())
}

/// Mean L2 distance over unordered pairs `i < j` in channel `m`.
pub fn channel_sigma(members: &[PoolMember], m: usize) -> Result<f64> {
    let n = members.len();
    if n < 2 {
        return Err(Error::DegenerateSigma { channel: m });
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += sq_dist(members[i].features.channel(m), members[j].features.channel(m)).sqrt();
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mean = total / pairs;
    if mean > 0.0 {
        Ok(mean)
    } else {
        Err(Error::DegenerateSigma { channel: m })
    }
}

/// Per-channel σ_m of a pool; errors on the first degenerate channel.
pub fn compute_sigma(members: &[PoolMember]) -> Result<Vec<f64>> {
    if members.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    check_channels(members)?;
    (0..members[0].features.len())
        .map(|m| channel_sigma(members, m))
        .collect()
}

/// `p(c|i) = 1/(M·N) Σ_j Σ_m exp(−‖f_m^i − f_m^j‖² / σ_m²)`.
pub fn kde_confidence(pool: &ConceptImagePool, i: usize) -> f64 {
    let n = pool.len();
    let channels = pool.channels();
    let target = &pool.members[i].features;
    let mut total = 0.0;
    for member in &pool.members {
        for m in 0..channels {
            let d2 = sq_dist(target.channel(m), member.features.channel(m));
            total += (-d2 / (pool.sigma[m] * pool.sigma[m])).exp();
        }
    }
    total / (channels * n) as f64
}

/// Confidence of every pool member, sharing each pairwise distance.
pub fn kde_scores(pool: &ConceptImagePool) -> Vec<f64> {
    let n = pool.len();
    let channels = pool.channels();
    let mut sums = vec![0.0; n];
    for m in 0..channels {
        let s2 = pool.sigma[m] * pool.sigma[m];
        let mut kernel = vec![0.0; n * n];
        for i in 0..n {
            kernel[i * n + i] = 1.0;
            for j in (i + 1)..n {
                let d2 = sq_dist(pool.members[i].features.channel(m), pool.members[j].features.channel(m));
                let k = (-d2 / s2).exp();
                kernel[i * n + j] = k;
                kernel[j * n + i] = k;
            }
        }
        for i in 0..n {
            sums[i] += kernel[i * n..(i + 1) * n].iter().sum::<f64>();
        }
    }
    sums.iter().map(|s| s / (channels * n) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub image_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeImage {
    pub image_id: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub concept: String,
    pub positives: Vec<ScoredImage>,
    pub negatives: Vec<NegativeImage>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositiveStrategy {
    /// Highest kernel density confidence.
    #[default]
    Kde,
    /// Uniform random sample of the pool; the unfiltered baseline.
    Random,
}

/// Top-`s` images by KDE confidence, ties broken by image id.
pub fn top_positives(pool: &ConceptImagePool, s: usize) -> Vec<ScoredImage> {
    let scores = kde_scores(pool);
    let mut ranked: Vec<ScoredImage> = pool
        .members
        .iter()
        .zip(scores)
        .map(|(m, score)| ScoredImage {
            image_id: m.image_id.clone(),
            score,
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.image_id.cmp(&b.image_id)));
    ranked.truncate(s);
    ranked
}

/// Seeded uniform sample of `s` pool images, scored but unranked.
pub fn random_positives(pool: &ConceptImagePool, s: usize, seed: u64) -> Vec<ScoredImage> {
    let scores = kde_scores(pool);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_9051);
    let mut picked: Vec<usize> = sample(&mut rng, pool.len(), s.min(pool.len())).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| ScoredImage {
            image_id: pool.members[i].image_id.clone(),
            score: scores[i],
        })
        .collect()
}

/// Positives from `pool`, plus `t` negatives sampled uniformly without
/// replacement from the other pools (excluding images of this pool).
pub fn select_training_set(
    pool: &ConceptImagePool,
    other_pools: &[&ConceptImagePool],
    s: usize,
    t: usize,
    seed: u64,
    strategy: PositiveStrategy,
) -> Result<SelectionResult> {
    let positives = match strategy {
        PositiveStrategy::Kde => top_positives(pool, s),
        PositiveStrategy::Random => random_positives(pool, s, seed),
    };
    let own: HashSet<&str> = pool.members.iter().map(|m| m.image_id.as_str()).collect();
    let mut seen = HashSet::new();
    let mut candidates: Vec<NegativeImage> = Vec::new();
    for other in other_pools {
        for member in &other.members {
            if !own.contains(member.image_id.as_str()) && seen.insert(member.image_id.as_str()) {
                candidates.push(NegativeImage {
                    image_id: member.image_id.clone(),
                    source: other.concept.clone(),
                });
            }
        }
    }
    if candidates.len() < t {
        return Err(Error::InsufficientNegatives {
            available: candidates.len(),
            requested: t,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, candidates.len(), t).into_vec();
    picked.sort_unstable();
    let negatives = picked.into_iter().map(|i| candidates[i].clone()).collect();
    Ok(SelectionResult {
        concept: pool.concept.clone(),
        positives,
        negatives,
        seed,
    })
}
