//! Spatial generalized linear mixed models with basis-expanded random
//! effects, fitted by semi-implicit variational inference or by MCMC
//! (adaptive random-walk Metropolis and Hamiltonian Monte Carlo), plus the
//! simulation and evaluation utilities around them.

pub mod error;
pub mod eval;
mod linalg;
pub mod mcmc;
pub mod model;
pub mod nn;
pub mod sivi;
pub mod spatial;

pub use error::{Result, SglmmError};
pub use eval::{auc, predict, rmspe, summarize, Histogram, ParamSummary, PosteriorSummary, PredictionSet};
pub use mcmc::{batch_means_se, ess, hmc_fit, mh_fit, ChainOutput, HmcConfig, MhConfig};
pub use model::{Family, FixedParams, ModelSpec, ParamLayout, ParameterVector, PriorSpec, Slot};
pub use sivi::{
    draw_posterior, fit_sivi, fit_sivi_from, CondScales, FitResult, PosteriorDraws, SiviConfig,
    StopReason,
};
pub use spatial::{
    simulate_dataset, BasisSystem, CovarianceMatrix, Location2D, MaternParams, PriorCovMode,
    SpatialDataset, SyntheticScenario, TruthRecord,
};
