use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect::mkl::{DEFAULT_C, DEFAULT_GAMMA, DEFAULT_MAX_ALTERNATIONS, DEFAULT_TOL};
use crate::detect::{DetectorConfig, KernelKind, SolverOptions, VisualnessConfig};
use crate::error::{Error, Result};
use crate::select::PositiveStrategy;

/// Where negatives for the visualness check come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    /// Any corpus image lacking the concept.
    #[default]
    Global,
    /// Images of the same event lacking the concept.
    Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub codebook: u64,
    pub select: u64,
    pub verify: u64,
    pub train: u64,
    pub detect: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            codebook: 11,
            select: 23,
            verify: 37,
            train: 41,
            detect: 53,
        }
    }
}

/// Input files; relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub hierarchy: PathBuf,
    pub images: PathBuf,
    pub stopwords: PathBuf,
    pub meaningless_words: PathBuf,
    pub lemmas: PathBuf,
    pub vocabulary: PathBuf,
    pub similarity: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub videos_train: Option<PathBuf>,
    pub videos_test: PathBuf,
    pub test_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Positive training images per concept.
    pub s: usize,
    /// Negative training images per concept.
    pub t: usize,
    pub gamma: f64,
    pub c: f64,
    /// Concepts selected per query.
    pub n: usize,
    /// Frames sampled per video.
    pub m: usize,
    pub top_k_tags: usize,
    pub cv_ap_threshold: f64,
    pub min_training_images: usize,
    pub codebook_k: usize,
    pub soft_k: usize,
    /// Descriptors per channel fed to k-means; 0 uses every patch.
    pub codebook_sample: usize,
    pub solver_tol: f64,
    pub max_alternations: usize,
    pub calibration_holdout: f64,
    pub kernels: Vec<KernelKind>,
    pub positive_strategy: PositiveStrategy,
    pub visualness_negatives: NegativeSource,
    pub event_folds: usize,
    pub recount_k: usize,
    pub channels: Vec<String>,
    pub seeds: Seeds,
    pub paths: Paths,
    /// Worker threads; 0 lets the pool decide. Never affects outputs.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            s: 100,
            t: 1000,
            gamma: DEFAULT_GAMMA,
            c: DEFAULT_C,
            n: 100,
            m: 20,
            top_k_tags: 100,
            cv_ap_threshold: 0.8,
            min_training_images: 100,
            codebook_k: 1000,
            soft_k: crate::encode::DEFAULT_SOFT_K,
            codebook_sample: 200_000,
            solver_tol: DEFAULT_TOL,
            max_alternations: DEFAULT_MAX_ALTERNATIONS,
            calibration_holdout: 0.2,
            kernels: Vec::new(),
            positive_strategy: PositiveStrategy::Kde,
            visualness_negatives: NegativeSource::Global,
            event_folds: 2,
            recount_k: 5,
            channels: vec!["gray-patch".into(), "color-hist".into()],
            seeds: Seeds::default(),
            paths: Paths::default(),
            workers: 0,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config and resolves its paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig = serde_json::from_str(&text)?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        config.resolve_paths(&base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for path in [
            &mut p.hierarchy,
            &mut p.images,
            &mut p.stopwords,
            &mut p.meaningless_words,
            &mut p.lemmas,
            &mut p.vocabulary,
            &mut p.similarity,
            &mut p.videos_test,
        ] {
            fix(path);
        }
        for path in [&mut p.embeddings, &mut p.videos_train, &mut p.test_labels].into_iter().flatten() {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::InvalidArgument(format!("`{name}` must be positive")))
            } else {
                Ok(())
            }
        };
        positive("s", self.s)?;
        positive("n", self.n)?;
        positive("m", self.m)?;
        positive("codebook_k", self.codebook_k)?;
        positive("soft_k", self.soft_k)?;
        positive("event_folds", self.event_folds)?;
        if !(self.c > 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::InvalidArgument("`c` must be positive and `gamma` non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.calibration_holdout) {
            return Err(Error::InvalidArgument("`calibration_holdout` must lie in [0, 1)".into()));
        }
        if self.channels.is_empty() {
            return Err(Error::InvalidArgument("at least one channel is required".into()));
        }
        Ok(())
    }

    pub fn detector_config(&self, seed: u64) -> DetectorConfig {
        DetectorConfig {
            c: self.c,
            gamma: self.gamma,
            solver: SolverOptions {
                tol: self.solver_tol,
                max_alternations: self.max_alternations,
            },
            holdout_fraction: self.calibration_holdout,
            kernels: self.kernels.clone(),
            seed,
        }
    }

    pub fn visualness_config(&self) -> VisualnessConfig {
        VisualnessConfig {
            cv_ap_threshold: self.cv_ap_threshold,
            min_training_images: self.min_training_images,
            detector: self.detector_config(self.seeds.verify),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
