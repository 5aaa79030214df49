//! Concept detectors: multiple-kernel SVM training, Platt calibration,
//! scoring and the visualness gate.

pub mod kernel;
pub mod mkl;
pub mod model;
pub mod platt;
pub mod smo;
pub mod visualness;

pub use kernel::{Kernel, KernelKind};
pub use mkl::{train_mklsvm, DetectorTrainingProblem, MklSolution, SolverOptions};
pub use model::{train_detector, DetectorConfig, DetectorModel};
pub use platt::{fit_platt, Platt};
pub use visualness::{verify_visualness, VisualnessConfig, VisualnessReport};
