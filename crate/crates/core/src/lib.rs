//! Off-policy learning for factored action spaces where some actions never
//! appear in the log.

pub mod data;
pub mod dataset_io;
pub mod env;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod features;
pub mod linalg;
pub mod math;
pub mod metrics;
pub mod policy;
pub mod qmodel;
pub mod rng;
pub mod trainer;

pub use data::{ActionPartition, LoggedDataset, LoggedRow};
pub use dataset_io::{
    build_semi_synth_env, load_real, read_logged_csv, write_logged_csv, RealDatasetSpec, SemiSynthEnv,
};
pub use env::{build_env, generate_log, EnvOracle, Environment, SynthConfig};
pub use error::{Error, Result};
pub use estimators::{EstimatorKind, GradientEstimate, Objective};
pub use experiment::{ExperimentConfig, Method, ResultRow, Runner};
pub use features::{
    encode, enumerate_actions, ActionFeatures, ActionIndicator, ActionSpace, FeatureScheme, IndicatorMode,
};
pub use linalg::{pinv, pinv_symmetric, DenseMatrix};
pub use metrics::{evaluate, EvalSet, MetricsReport};
pub use policy::{ActionDistribution, Argmax, PolicyParams, UniformPolicy};
pub use qmodel::{QModel, QModelKind};
pub use trainer::{train, tune_kappa, TrainConfig};
