//! Branching Monte Carlo datasets for the two-factor Black-Karasinski short
//! rate model, and two one-step-ahead quantile predictors: a closed-form
//! method-of-moments map and a single-hidden-layer perceptron.

pub mod analytics;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod kv;
pub mod mlp;
pub mod mom;
pub mod par;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod sim;

pub use analytics::{derive_g2, mean_s, phi, theta, var_s, G2Stats};
pub use dataset::PercentileDataset;
pub use error::{Error, Result};
pub use eval::{
    cross_section, evaluate, rmse_by_timestep, run_experiment, stochastic_error, EvalReport, ExperimentSpec,
    MomPredictor, NnPredictor, Predictor, StandardizedData,
};
pub use mlp::{nn_predict, train, InputActivation, MlpModel, TrainConfig, TrainOutcome, TrainingPairs};
pub use mom::{mom_predict, DriftMode, Standardizer};
pub use par::Exec;
pub use pipeline::{cmd_evaluate, cmd_generate, cmd_run, cmd_train, RunConfig, Which};
pub use params::{EtaSource, ModelParams, TimeGrid};
pub use sim::{condense_percentiles, euler_step, generate_dataset, simulate_scenario, NodeState, SimConfig};
