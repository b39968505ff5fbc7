//! Command implementations behind the CLI surface.

pub mod compare;
pub mod fit;
pub mod predict;
pub mod simulate;

use std::path::Path;

use nalgebra::DMatrix;
use sglmm_core::spatial::{
    build_covariance, default_jitter, leading_eigenbasis, BasisSystem, PriorCovMode,
    SpatialDataset,
};
use sglmm_core::{Family, FixedParams, ModelSpec, PriorSpec};

use crate::config::{resolve_priors, ModelConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::read_data_csv;

/// Everything a fit or prediction needs from the data + model config: the
/// dataset (with the intercept column applied), the full-domain basis, and
/// the training-rows model.
pub struct ModelBundle {
    pub dataset: SpatialDataset,
    pub basis: BasisSystem,
    pub model: ModelSpec,
    pub family: Family,
    pub priors: PriorSpec,
}

pub fn parse_prior_cov_mode(s: &str) -> CliResult<PriorCovMode> {
    match s {
        "identity" => Ok(PriorCovMode::Identity),
        "eigenvalue" => Ok(PriorCovMode::EigenvalueDiagonal),
        other => Err(CliError::Config(format!(
            "model.prior_cov must be 'identity' or 'eigenvalue' (got '{other}')"
        ))),
    }
}

/// Prepend an all-ones column when the model asks for an intercept.
pub fn apply_intercept(x: &DMatrix<f64>, intercept: bool) -> DMatrix<f64> {
    if !intercept {
        return x.clone();
    }
    let n = x.nrows();
    let p = x.ncols();
    DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

/// Load the dataset, build the full-domain eigenbasis, resolve priors (echoed
/// back into `config`), and assemble the training model.
pub fn build_model_bundle(config: &mut RunConfig, data_path: &Path) -> CliResult<ModelBundle> {
    let model_cfg: ModelConfig = config
        .model
        .clone()
        .ok_or_else(|| CliError::Config("a [model] section is required".into()))?;
    let family = model_cfg.family()?;
    let mut dataset = read_data_csv(data_path, family)?;
    dataset.x = apply_intercept(&dataset.x, model_cfg.intercept);

    let mode = parse_prior_cov_mode(&model_cfg.prior_cov)?;
    let matern = model_cfg.matern();
    let cov = build_covariance(&dataset.locations, &matern, default_jitter(matern.marg_var))?;
    let basis = leading_eigenbasis(&cov, model_cfg.m, mode)?;

    let priors = resolve_priors(&mut config.priors, family, dataset.p())?;
    let fixed = FixedParams { sigma2: model_cfg.fixed_sigma2, extra: model_cfg.fixed_extra };
    let model = ModelSpec::from_training(&dataset, &basis, family, priors.clone(), fixed)?;
    Ok(ModelBundle { dataset, basis, model, family, priors })
}

/// Parameters whose histograms are emitted: everything except the
/// high-dimensional basis-coefficient block.
pub fn histogram_params(names: &[String]) -> Vec<usize> {
    names
        .iter()
        .enumerate()
        .filter(|(_, n)| !n.starts_with("delta_"))
        .map(|(i, _)| i)
        .collect()
}
