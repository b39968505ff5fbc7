//! Markov chain Monte Carlo baselines targeting the model's log joint:
//! adaptive component-wise random-walk Metropolis-Hastings and Hamiltonian
//! Monte Carlo, plus chain diagnostics (effective sample size and batch-means
//! standard errors).

pub mod diag;
pub mod hmc;
pub mod mh;

pub use diag::{batch_means_se, ess};
pub use hmc::{hamiltonian, hmc_fit, leapfrog};
pub use mh::mh_fit;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SglmmError};
use crate::model::{Family, ModelSpec};
use crate::sivi::PosteriorDraws;

/// Configuration of the component-wise random-walk sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhConfig {
    pub iters: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in sweep.
    pub thin: usize,
    /// Per-coordinate initial proposal standard deviations; `None` means 0.1
    /// for every coordinate.
    pub init_step_sds: Option<Vec<f64>>,
    /// Adapt the proposal scales during burn-in.
    pub adapt: bool,
    /// Acceptance rate the adaptation steers toward.
    pub adapt_target: f64,
    pub seed: u64,
}

impl Default for MhConfig {
    fn default() -> Self {
        MhConfig {
            iters: 100_000,
            burn_in: 20_000,
            thin: 10,
            init_step_sds: None,
            adapt: true,
            adapt_target: 0.234,
            seed: 0,
        }
    }
}

impl MhConfig {
    /// `dim` is the packed model dimension, needed to check the step-sd list.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.burn_in >= self.iters {
            return Err(SglmmError::InvalidArgument(format!(
                "mh.burn_in ({}) must be smaller than mh.iters ({})",
                self.burn_in, self.iters
            )));
        }
        if self.thin == 0 {
            return Err(SglmmError::InvalidArgument("mh.thin must be at least 1".into()));
        }
        if !(self.adapt_target > 0.0 && self.adapt_target < 1.0) {
            return Err(SglmmError::InvalidArgument(format!(
                "mh.adapt_target must lie in (0, 1) (got {})",
                self.adapt_target
            )));
        }
        if let Some(sds) = &self.init_step_sds {
            if sds.len() != dim {
                return Err(SglmmError::InvalidArgument(format!(
                    "mh.init_step_sds has length {}, model dimension is {dim}",
                    sds.len()
                )));
            }
            if sds.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
                return Err(SglmmError::InvalidArgument(
                    "mh.init_step_sds entries must be positive and finite".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn kept_draws(&self) -> usize {
        (self.iters - self.burn_in) / self.thin
    }
}

/// Configuration of the Hamiltonian sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcConfig {
    pub iters: usize,
    /// Step-size adaptation iterations; draws before this are discarded.
    pub warmup: usize,
    pub leapfrog_steps: usize,
    pub init_step_size: f64,
    /// Diagonal of the momentum covariance; `None` means identity.
    pub mass_diag: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            iters: 2000,
            warmup: 500,
            leapfrog_steps: 20,
            init_step_size: 0.01,
            mass_diag: None,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.warmup >= self.iters {
            return Err(SglmmError::InvalidArgument(format!(
                "hmc.warmup ({}) must be smaller than hmc.iters ({})",
                self.warmup, self.iters
            )));
        }
        if self.leapfrog_steps == 0 {
            return Err(SglmmError::InvalidArgument("hmc.leapfrog_steps must be at least 1".into()));
        }
        if !(self.init_step_size.is_finite() && self.init_step_size > 0.0) {
            return Err(SglmmError::InvalidArgument(format!(
                "hmc.init_step_size must be positive (got {})",
                self.init_step_size
            )));
        }
        if let Some(mass) = &self.mass_diag {
            if mass.len() != dim {
                return Err(SglmmError::InvalidArgument(format!(
                    "hmc.mass_diag has length {}, model dimension is {dim}",
                    mass.len()
                )));
            }
            if mass.iter().any(|&m| !(m.is_finite() && m > 0.0)) {
                return Err(SglmmError::InvalidArgument(
                    "hmc.mass_diag entries must be positive and finite".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn kept_draws(&self) -> usize {
        self.iters - self.warmup
    }
}

/// Output of one sampler run.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Kept draws, one packed parameter vector per row.
    pub samples: DMatrix<f64>,
    /// Fraction of accepted proposals after burn-in/warmup.
    pub accept_rate: f64,
    pub walltime_s: f64,
    /// Per-coordinate effective sample size of the kept draws (NaN when
    /// fewer than 10 draws were kept).
    pub ess: DVector<f64>,
    /// Trajectories rejected for exceeding the energy-error threshold
    /// (always 0 for the random-walk sampler).
    pub n_divergent: usize,
}

impl ChainOutput {
    pub fn n_draws(&self) -> usize {
        self.samples.nrows()
    }

    /// Reinterpret the kept draws as posterior draws of the given model.
    pub fn into_posterior_draws(self, model: &ModelSpec) -> PosteriorDraws {
        PosteriorDraws { samples: self.samples, family: model.family, layout: model.layout }
    }
}

/// Prior-centered start shared by both samplers: regression and basis
/// coefficients at zero, transformed scale parameters at their prior means
/// (for the negative-binomial shape, the log of the prior mean).
pub fn initial_point(model: &ModelSpec) -> DVector<f64> {
    let layout = &model.layout;
    let mut theta = DVector::zeros(layout.dim());
    if let Some(idx) = layout.sigma2_index() {
        theta[idx] = model.priors.sigma_mean;
    }
    if let Some(idx) = layout.gamma_index() {
        theta[idx] = match model.family {
            Family::Gaussian => model.priors.tau_mean.expect("validated gaussian priors"),
            Family::Negbin => {
                let a = model.priors.kappa_shape.expect("validated negbin priors");
                let b = model.priors.kappa_rate.expect("validated negbin priors");
                (a / b).ln()
            }
            Family::Gamma => model.priors.alpha_mean.expect("validated gamma priors"),
            _ => unreachable!("families without an extra parameter have no gamma slot"),
        };
    }
    theta
}

/// Per-coordinate ESS of the kept draws, or NaN columns when the chain is too
/// short for the estimator.
pub(crate) fn ess_or_nan(samples: &DMatrix<f64>) -> DVector<f64> {
    if samples.nrows() >= 10 {
        ess(samples).unwrap_or_else(|_| DVector::from_element(samples.ncols(), f64::NAN))
    } else {
        DVector::from_element(samples.ncols(), f64::NAN)
    }
}
