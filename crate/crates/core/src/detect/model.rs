use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::kernel::{Kernel, KernelKind};
use crate::detect::mkl::{train_mklsvm, DetectorTrainingProblem, MklSolution, SolverOptions};
use crate::detect::platt::{fit_platt, Platt};
use crate::encode::formats::{put_f32s, put_u32, LeReader};
use crate::encode::FeatureSet;
use crate::error::{Error, Result};
use crate::select::PoolMember;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub c: f64,
    pub gamma: f64,
    pub solver: SolverOptions,
    /// Fraction of each class held out for calibration.
    pub holdout_fraction: f64,
    /// Base kernel per channel; missing entries default to linear.
    pub kernels: Vec<KernelKind>,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            c: crate::detect::mkl::DEFAULT_C,
            gamma: crate::detect::mkl::DEFAULT_GAMMA,
            solver: SolverOptions::default(),
            holdout_fraction: 0.2,
            kernels: Vec::new(),
            seed: 0,
        }
    }
}

impl DetectorConfig {
    fn kernel_kind(&self, channel: usize) -> KernelKind {
        self.kernels.get(channel).copied().unwrap_or_default()
    }
}

/// Trained concept detector with Platt-calibrated output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub concept: String,
    pub channels: Vec<String>,
    pub dims: Vec<usize>,
    pub kernels: Vec<Kernel>,
    pub beta: Vec<f64>,
    pub bias: f64,
    pub platt: Platt,
    pub support_ids: Vec<String>,
    pub support_labels: Vec<i8>,
    #[serde(skip)]
    pub alpha: Vec<f32>,
    /// Per channel, row-major support vectors; only kept for non-linear kernels.
    #[serde(skip)]
    pub support_vectors: Vec<Vec<f32>>,
    /// Per channel primal weights; only kept for linear kernels.
    #[serde(skip)]
    pub weights: Vec<Vec<f32>>,
}

impl DetectorModel {
    pub fn check_channels(&self, features: &FeatureSet) -> Result<()> {
        if features.len() != self.channels.len() {
            return Err(Error::ChannelMismatch(format!(
                "model `{}` has {} channels, features have {}",
                self.concept,
                self.channels.len(),
                features.len()
            )));
        }
        for (m, ch) in features.channels.iter().enumerate() {
            if ch.name != self.channels[m] || ch.values.len() != self.dims[m] {
                return Err(Error::ChannelMismatch(format!(
                    "model `{}` channel {m} is `{}` ({}), features have `{}` ({})",
                    self.concept,
                    self.channels[m],
                    self.dims[m],
                    ch.name,
                    ch.values.len()
                )));
            }
        }
        Ok(())
    }

    /// `Σ_m β_m Σ_i α_i y_i k_m(x_i, x) + bias`.
    pub fn decision(&self, features: &FeatureSet) -> Result<f64> {
        self.check_channels(features)?;
        let mut raw = self.bias;
        for m in 0..self.channels.len() {
            if self.beta[m] == 0.0 {
                continue;
            }
            let x = features.channel(m);
            let value = match self.kernels[m] {
                Kernel::Linear => self.weights[m].iter().zip(x).map(|(&w, v)| f64::from(w) * v).sum::<f64>(),
                kernel => {
                    let dim = self.dims[m];
                    let mut row = vec![0.0; dim];
                    let mut total = 0.0;
                    for (i, sv) in self.support_vectors[m].chunks_exact(dim).enumerate() {
                        for (dst, &s) in row.iter_mut().zip(sv) {
                            *dst = f64::from(s);
                        }
                        total += f64::from(self.alpha[i]) * f64::from(self.support_labels[i]) * kernel.eval(&row, x);
                    }
                    total
                }
            };
            raw += self.beta[m] * value;
        }
        Ok(raw)
    }

    /// Calibrated concept score in (0, 1).
    pub fn score(&self, features: &FeatureSet) -> Result<f64> {
        Ok(self.platt.probability(self.decision(features)?))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(self)?;
        let mut out = Vec::with_capacity(8 + header.len());
        out.extend_from_slice(b"CBDM");
        put_u32(&mut out, header.len() as u32);
        out.extend_from_slice(&header);
        put_f32s(&mut out, self.alpha.iter().copied());
        for m in 0..self.channels.len() {
            match self.kernels[m] {
                Kernel::Linear => put_f32s(&mut out, self.weights[m].iter().copied()),
                _ => put_f32s(&mut out, self.support_vectors[m].iter().copied()),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = LeReader::new("CBDM", bytes);
        r.magic(b"CBDM")?;
        let len = r.u32()? as usize;
        let mut model: DetectorModel = serde_json::from_slice(r.take(len)?)?;
        let n = model.support_ids.len();
        if model.support_labels.len() != n
            || model.kernels.len() != model.channels.len()
            || model.dims.len() != model.channels.len()
            || model.beta.len() != model.channels.len()
        {
            return Err(Error::format("CBDM", "inconsistent header"));
        }
        model.alpha = r.f32s(n)?;
        model.weights = vec![Vec::new(); model.channels.len()];
        model.support_vectors = vec![Vec::new(); model.channels.len()];
        for m in 0..model.channels.len() {
            match model.kernels[m] {
                Kernel::Linear => model.weights[m] = r.f32s(model.dims[m])?,
                _ => model.support_vectors[m] = r.f32s(n * model.dims[m])?,
            }
        }
        r.finish()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Builds the problem for `samples` and trains the uncalibrated detector.
pub fn fit_uncalibrated(
    concept: &str,
    samples: &[&PoolMember],
    labels: &[f64],
    config: &DetectorConfig,
) -> Result<(DetectorModel, MklSolution)> {
    let first = samples.first().ok_or(Error::EmptyCorpus)?;
    let channels: Vec<String> = first.features.channels.iter().map(|c| c.name.clone()).collect();
    let dims: Vec<usize> = first.features.channels.iter().map(|c| c.values.len()).collect();
    for s in samples {
        if s.features.channel_names() != channels.iter().map(String::as_str).collect::<Vec<_>>()
            || s.features.channels.iter().map(|c| c.values.len()).collect::<Vec<_>>() != dims
        {
            return Err(Error::ChannelMismatch(format!("image `{}` differs in channel layout", s.image_id)));
        }
    }
    let mut kernels = Vec::with_capacity(channels.len());
    let mut grams = Vec::with_capacity(channels.len());
    for m in 0..channels.len() {
        let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.channel(m)).collect();
        let kernel = Kernel::fit(config.kernel_kind(m), &rows, 1.0);
        grams.push(kernel.gram(&rows));
        kernels.push(kernel);
    }
    let problem = DetectorTrainingProblem {
        grams,
        labels: labels.to_vec(),
        c: config.c,
        gamma: config.gamma,
    };
    let solution = train_mklsvm(&problem, config.solver)?;

    let support: Vec<usize> = (0..samples.len()).filter(|&i| solution.alpha[i] > 0.0).collect();
    let alpha: Vec<f32> = support.iter().map(|&i| solution.alpha[i] as f32).collect();
    let support_labels: Vec<i8> = support.iter().map(|&i| labels[i] as i8).collect();
    let mut weights = vec![Vec::new(); channels.len()];
    let mut support_vectors = vec![Vec::new(); channels.len()];
    for m in 0..channels.len() {
        match kernels[m] {
            Kernel::Linear => {
                let mut w = vec![0.0f64; dims[m]];
                for (k, &i) in support.iter().enumerate() {
                    let coef = f64::from(alpha[k]) * f64::from(support_labels[k]);
                    for (wj, xj) in w.iter_mut().zip(samples[i].features.channel(m)) {
                        *wj += coef * xj;
                    }
                }
                weights[m] = w.into_iter().map(|v| v as f32).collect();
            }
            _ => {
                support_vectors[m] = support
                    .iter()
                    .flat_map(|&i| samples[i].features.channel(m).iter().map(|&v| v as f32))
                    .collect();
            }
        }
    }
    let model = DetectorModel {
        concept: concept.to_string(),
        channels,
        dims,
        kernels,
        beta: solution.beta.clone(),
        bias: solution.bias,
        platt: Platt { a: -1.0, b: 0.0 },
        support_ids: support.iter().map(|&i| samples[i].image_id.clone()).collect(),
        support_labels,
        alpha,
        support_vectors,
        weights,
    };
    Ok((model, solution))
}

/// Seeded stratified split: `(train, held out)` index lists per class.
fn holdout_split(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let held = ((n as f64) * fraction).round() as usize;
    let held = held.min(n.saturating_sub(1));
    let (h, t) = idx.split_at(held);
    let (mut t, mut h) = (t.to_vec(), h.to_vec());
    t.sort_unstable();
    h.sort_unstable();
    (t, h)
}

/// Trains a calibrated detector: the MK-SVM is fit on a stratified
/// `1 − holdout_fraction` share of the images, and the Platt sigmoid on the
/// held-out share. Classes too small to split calibrate on training scores.
pub fn train_detector(
    concept: &str,
    positives: &[PoolMember],
    negatives: &[PoolMember],
    config: &DetectorConfig,
) -> Result<DetectorModel> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::OneClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (pos_train, pos_held) = holdout_split(positives.len(), config.holdout_fraction, &mut rng);
    let (neg_train, neg_held) = holdout_split(negatives.len(), config.holdout_fraction, &mut rng);

    let mut samples: Vec<&PoolMember> = Vec::new();
    let mut labels = Vec::new();
    for &i in &pos_train {
        samples.push(&positives[i]);
        labels.push(1.0);
    }
    for &i in &neg_train {
        samples.push(&negatives[i]);
        labels.push(-1.0);
    }
    let (mut model, _) = fit_uncalibrated(concept, &samples, &labels, config)?;

    let (calibration, cal_labels): (Vec<&PoolMember>, Vec<bool>) = if pos_held.is_empty() || neg_held.is_empty() {
        (samples.clone(), labels.iter().map(|&y| y > 0.0).collect())
    } else {
        pos_held
            .iter()
            .map(|&i| (&positives[i], true))
            .chain(neg_held.iter().map(|&i| (&negatives[i], false)))
            .unzip()
    };
    let decisions = calibration
        .iter()
        .map(|s| model.decision(&s.features))
        .collect::<Result<Vec<f64>>>()?;
    model.platt = fit_platt(&decisions, &cal_labels)?;
    Ok(model)
}

/// Decision values of `samples` under `model`, in input order.
pub fn decisions(model: &DetectorModel, samples: &[&PoolMember]) -> Result<Vec<f64>> {
    samples.iter().map(|s| model.decision(&s.features)).collect()
}

pub(crate) fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::ChannelFeatures;
    use crate::numeric::dot;
    use std::sync::Arc;

    fn dot_f32(w: &[f32], x: &[f64]) -> f64 {
        let w: Vec<f64> = w.iter().map(|&v| f64::from(v)).collect();
        dot(&w, x)
    }

    fn image(id: &str, channels: &[Vec<f64>]) -> PoolMember {
        PoolMember {
            image_id: id.into(),
            features: Arc::new(FeatureSet {
                channels: channels
                    .iter()
                    .enumerate()
                    .map(|(m, v)| ChannelFeatures {
                        name: format!("ch{m}"),
                        values: v.clone(),
                    })
                    .collect(),
            }),
        }
    }

    #[test]
    fn toy_model_scores_support_vector_above_half() {
        let pos = [image("p", &[vec![1.0]])];
        let neg = [image("n", &[vec![-1.0]])];
        let config = DetectorConfig {
            c: 10.0,
            gamma: 0.0,
            holdout_fraction: 0.0,
            ..Default::default()
        };
        let model = train_detector("toy", &pos, &neg, &config).unwrap();
        let raw = model.decision(&pos[0].features).unwrap();
        assert!((raw - 1.0).abs() < 1e-6);
        assert!((model.decision(&neg[0].features).unwrap() + 1.0).abs() < 1e-6);
        assert!(model.score(&pos[0].features).unwrap() > 0.5);
        assert_eq!(model.score(&pos[0].features).unwrap(), model.score(&pos[0].features).unwrap());
    }

    #[test]
    fn one_hot_beta_matches_single_kernel_model() {
        let mut model = DetectorModel {
            concept: "c".into(),
            channels: vec!["ch0".into(), "ch1".into()],
            dims: vec![2, 2],
            kernels: vec![Kernel::Linear, Kernel::Chi2 { bandwidth: 0.7 }],
            beta: vec![0.0, 1.0],
            bias: 0.1,
            platt: Platt { a: -2.0, b: 0.3 },
            support_ids: vec!["a".into(), "b".into()],
            support_labels: vec![1, -1],
            alpha: vec![0.5, 0.5],
            support_vectors: vec![vec![], vec![0.2, 0.8, 0.6, 0.4]],
            weights: vec![vec![3.0, -1.0], vec![]],
        };
        let x = image("x", &[vec![0.9, 0.1], vec![0.3, 0.7]]);
        let k = Kernel::Chi2 { bandwidth: 0.7 };
        let sv = |i: usize| -> Vec<f64> { model.support_vectors[1][i * 2..i * 2 + 2].iter().map(|&v| f64::from(v)).collect() };
        let single = 0.5 * k.eval(&sv(0), x.features.channel(1)) - 0.5 * k.eval(&sv(1), x.features.channel(1)) + 0.1;
        assert!((model.decision(&x.features).unwrap() - single).abs() < 1e-12);
        model.beta = vec![1.0, 0.0];
        assert!((model.decision(&x.features).unwrap() - (dot_f32(&[3.0, -1.0], &[0.9, 0.1]) + 0.1)).abs() < 1e-12);
        let back = DetectorModel::from_bytes(&model.to_bytes().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let pos = [image("p", &[vec![1.0, 0.0]]), image("p2", &[vec![0.9, 0.1]])];
        let neg = [image("n", &[vec![0.0, 1.0]]), image("n2", &[vec![0.1, 0.9]])];
        let model = train_detector("c", &pos, &neg, &DetectorConfig::default()).unwrap();
        let wrong = image("w", &[vec![1.0, 0.0, 0.0]]);
        assert!(matches!(model.decision(&wrong.features), Err(Error::ChannelMismatch(_))));
    }
}
