use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::model::{decisions, fit_uncalibrated, shuffled, DetectorConfig};
use crate::error::{Error, Result};
use crate::metrics::scored_ap;
use crate::select::PoolMember;

pub const DEFAULT_CV_AP_THRESHOLD: f64 = 0.8;
pub const DEFAULT_MIN_TRAINING_IMAGES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualnessReport {
    pub concept: String,
    pub cv_ap: f64,
    pub pass: bool,
    pub training_image_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualnessConfig {
    pub cv_ap_threshold: f64,
    pub min_training_images: usize,
    pub detector: DetectorConfig,
}

impl Default for VisualnessConfig {
    fn default() -> Self {
        VisualnessConfig {
            cv_ap_threshold: DEFAULT_CV_AP_THRESHOLD,
            min_training_images: DEFAULT_MIN_TRAINING_IMAGES,
            detector: DetectorConfig::default(),
        }
    }
}

/// Stratified 2-fold split of `n` items: fold membership per item.
fn two_folds(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut fold = vec![0; n];
    for (rank, i) in shuffled(n, rng).into_iter().enumerate() {
        fold[i] = rank % 2;
    }
    fold
}

/// 2-fold cross-validated AP of a detector separating `positives` from an
/// equal-size seeded sample of `negative_candidates`.
pub fn verify_visualness(
    concept: &str,
    positives: &[PoolMember],
    negative_candidates: &[PoolMember],
    config: &VisualnessConfig,
    seed: u64,
) -> Result<VisualnessReport> {
    if positives.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "concept `{concept}` needs at least 2 images, has {}",
            positives.len()
        )));
    }
    if negative_candidates.len() < positives.len() {
        return Err(Error::InsufficientNegatives {
            available: negative_candidates.len(),
            requested: positives.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, negative_candidates.len(), positives.len()).into_vec();
    picked.sort_unstable();
    let negatives: Vec<&PoolMember> = picked.iter().map(|&i| &negative_candidates[i]).collect();

    let pos_fold = two_folds(positives.len(), &mut rng);
    let neg_fold = two_folds(negatives.len(), &mut rng);

    let mut aps = Vec::with_capacity(2);
    for held in 0..2 {
        let mut train = Vec::new();
        let mut train_y = Vec::new();
        let mut test = Vec::new();
        let mut test_y = Vec::new();
        for (i, p) in positives.iter().enumerate() {
            if pos_fold[i] == held {
                test.push(p);
                test_y.push(true);
            } else {
                train.push(p);
                train_y.push(1.0);
            }
        }
        for (i, &n) in negatives.iter().enumerate() {
            if neg_fold[i] == held {
                test.push(n);
                test_y.push(false);
            } else {
                train.push(n);
                train_y.push(-1.0);
            }
        }
        let (model, _) = fit_uncalibrated(concept, &train, &train_y, &config.detector)?;
        let scores = decisions(&model, &test)?;
        aps.push(scored_ap(&scores, &test_y)?);
    }
    let cv_ap = aps.iter().sum::<f64>() / aps.len() as f64;
    Ok(report(concept, cv_ap, positives.len(), config))
}

/// Applies the AP threshold and the minimum-image rule.
pub fn report(concept: &str, cv_ap: f64, training_image_count: usize, config: &VisualnessConfig) -> VisualnessReport {
    VisualnessReport {
        concept: concept.to_string(),
        cv_ap,
        pass: cv_ap > config.cv_ap_threshold && training_image_count >= config.min_training_images,
        training_image_count,
    }
}
