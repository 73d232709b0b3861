//! Ensemble classification with evidence-theory fusion.
//!
//! A pool of base classifiers is trained, each classifier's output is turned
//! into a mass function over the class frame, and the masses are fused with
//! Dempster's and Yager's rules of combination. The conflict produced during
//! fusion serves as an epistemic uncertainty signal, which drives pool
//! diagnostics ([`uncertainty`]) and out-of-distribution detection
//! ([`ensemble`]).
//!
//! Module map:
//!
//! - [`evidence`]: frames, mass vectors, combination rules, power-set oracle
//! - [`transform`]: classifier output to mass vector
//! - [`classifier`]: built-in base classifiers, training and validation weights
//! - [`selection`]: performance, expert-area and diversity based pool selection
//! - [`uncertainty`]: batch uncertainty quantification
//! - [`ensemble`]: fused prediction, threshold calibration and anomaly detection
//! - [`data`], [`metrics`], [`experiment`]: ingestion, scoring and orchestration

pub mod classifier;
pub mod data;
pub mod ensemble;
pub mod evidence;
pub mod experiment;
pub mod metrics;
pub mod parallel;
pub mod selection;
pub mod transform;
pub mod uncertainty;

pub use classifier::{ClassifierSpec, ModelParams, OutputMode, PerformanceMatrix, TrainedClassifier};
pub use ensemble::{AnomalyDecision, AnomalyThresholds, Branch, EnsembleDecision, EnsembleModel, Prediction};
pub use evidence::{Frame, FusionResult, MassVector, Rule};
pub use parallel::Execution;
pub use selection::SelectionConfig;
pub use transform::{ConfidenceWeights, SensitivityFactor};
pub use uncertainty::{UqConfig, UqTrace};

/// Label code used for samples flagged as anomalous.
pub const ANOMALY_CODE: i64 = -1;

/// Deterministic generator for one independent stream of a seeded run.
///
/// Parallel loops give every item its own stream so results do not depend
/// on scheduling.
pub fn seeded_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
