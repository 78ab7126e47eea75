//! Transferability scoring of pre-trained models by closed-form evolution
//! of initial classifier logits, with per-class NTK convergence rates.

pub mod config;
pub mod error;
pub mod evolution;
pub mod features;
pub mod head;
pub mod linalg;
pub mod logits;
pub mod metrics;
pub mod ntk;
pub mod oracle;
pub mod scoring;
pub mod svm;
pub mod synthetic;
pub mod zoo;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use evolution::{evolve, calibrate_time_scale, EvolutionCoefficients, EvolvedLogits, TimeScale};
pub use features::{read_feature_file, split_by_class, write_feature_file, ClassIndexMap, FeatureSet};
pub use head::{init_head, Activation, MlpHead};
pub use logits::LogitMatrix;
pub use metrics::{evaluate, GroundTruth, Metric, RankingEval};
pub use ntk::{class_ntk, ClassNtk};
pub use scoring::{cross_entropy, score_model, TransferReport};
pub use svm::{compute_log_init, fit_ovr_svm, OvrSvmModel, SvmConfig};
pub use zoo::{rank_zoo, run_lowdata, LowDataReport, ZooReport};
