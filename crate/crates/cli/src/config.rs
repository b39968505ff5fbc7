//! Run configuration: a sectioned JSON object with strict key checking,
//! default resolution, and a metadata echo that reproduces the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sglmm_core::spatial::{MaternParams, SyntheticScenario};
use sglmm_core::{Family, HmcConfig, MhConfig, PriorSpec, SiviConfig};

use crate::error::{io_err, CliError, CliResult};

/// Environment variable that overrides the config seed.
pub const SEED_ENV_VAR: &str = "SIVI_SEED";

fn default_posterior_draws() -> usize {
    4000
}

/// Top-level run configuration. Unknown keys anywhere are rejected; every
/// value that a run actually used is echoed (defaults resolved) into the
/// run's `metadata.json`, which is itself accepted by `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; overrides the per-section seeds and is overridden in
    /// turn by the SIVI_SEED environment variable.
    #[serde(default)]
    pub seed: u64,
    /// Draws sampled from a fitted variational mixing network.
    #[serde(default = "default_posterior_draws")]
    pub n_posterior_draws: usize,
    /// Run the three compare fits in parallel threads (walltimes contend).
    #[serde(default)]
    pub parallel: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    /// Input dataset CSV (fit, predict, compare).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    /// Input draws CSV (predict).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<PriorsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sivi: Option<SiviConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mh: Option<MhConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hmc: Option<HmcConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            n_posterior_draws: default_posterior_draws(),
            parallel: false,
            out_dir: None,
            data: None,
            draws: None,
            scenario: None,
            model: None,
            priors: None,
            sivi: None,
            mh: None,
            hmc: None,
        }
    }
}

fn default_nu() -> f64 {
    0.5
}
fn default_range() -> f64 {
    0.1
}
fn default_marg_var() -> f64 {
    1.0
}
fn default_beta_true() -> Vec<f64> {
    vec![1.0, 0.5]
}
fn default_n_train() -> usize {
    1600
}
fn default_n_test() -> usize {
    400
}
fn default_m() -> usize {
    20
}
fn default_prior_cov() -> String {
    "eigenvalue".to_string()
}

/// Synthetic-data block: family, Matérn kernel, true coefficients, split
/// sizes. The generator seed is the global `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub family: String,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_range")]
    pub range: f64,
    #[serde(default = "default_marg_var")]
    pub marg_var: f64,
    #[serde(default = "default_beta_true")]
    pub beta_true: Vec<f64>,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    /// True extra response parameter (tau^2 / kappa / alpha, natural scale);
    /// resolved to the family default when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_param_true: Option<f64>,
}

impl ScenarioConfig {
    /// Resolve into a generative scenario, filling the family-default extra
    /// parameter back into `self` so the metadata echo is fully explicit.
    pub fn resolve(&mut self, seed: u64) -> CliResult<SyntheticScenario> {
        let family = Family::parse(&self.family)?;
        if family.has_extra_param() && self.extra_param_true.is_none() {
            self.extra_param_true = family.default_extra_param();
        }
        let scenario = SyntheticScenario {
            family,
            matern: MaternParams { nu: self.nu, range: self.range, marg_var: self.marg_var },
            beta_true: nalgebra::DVector::from_vec(self.beta_true.clone()),
            n_train: self.n_train,
            n_test: self.n_test,
            extra_param_true: self.extra_param_true,
            seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Model block: response family, basis size, kernel used to build the basis,
/// and which variance-type parameters are held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: String,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_range")]
    pub range: f64,
    #[serde(default = "default_marg_var")]
    pub marg_var: f64,
    /// Prior covariance of the basis coefficients: "eigenvalue" (diagonal of
    /// leading eigenvalues) or "identity".
    #[serde(default = "default_prior_cov")]
    pub prior_cov: String,
    /// Prepend an all-ones intercept column to the covariates.
    #[serde(default)]
    pub intercept: bool,
    /// Hold sigma^2 fixed at this natural-scale value instead of sampling it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_sigma2: Option<f64>,
    /// Hold the extra response parameter fixed (natural scale).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_extra: Option<f64>,
}

impl ModelConfig {
    pub fn family(&self) -> CliResult<Family> {
        Ok(Family::parse(&self.family)?)
    }

    pub fn matern(&self) -> MaternParams {
        MaternParams { nu: self.nu, range: self.range, marg_var: self.marg_var }
    }
}

/// Prior block. When the block is present, the keys for the active family's
/// extra parameter are required; when the whole block is absent, the
/// library's weakly-informative defaults apply throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PriorsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_shape: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_var: Option<f64>,
}

/// Resolve the prior block into a full `PriorSpec` for `p` coefficients,
/// rewriting the block in place so the echo carries every effective value.
///
/// Keys that do not apply to the family are rejected; the family's own
/// extra-parameter keys are required whenever the block was given explicitly.
pub fn resolve_priors(
    section: &mut Option<PriorsConfig>,
    family: Family,
    p: usize,
) -> CliResult<PriorSpec> {
    let explicit = section.is_some();
    let mut block = section.clone().unwrap_or_default();
    let mut spec = PriorSpec::default_for(family, p);

    // Reject keys that this family never reads.
    let inapplicable: &[(&str, bool)] = &[
        ("tau_mean", block.tau_mean.is_some() && family != Family::Gaussian),
        ("tau_var", block.tau_var.is_some() && family != Family::Gaussian),
        ("kappa_shape", block.kappa_shape.is_some() && family != Family::Negbin),
        ("kappa_rate", block.kappa_rate.is_some() && family != Family::Negbin),
        ("alpha_mean", block.alpha_mean.is_some() && family != Family::Gamma),
        ("alpha_var", block.alpha_var.is_some() && family != Family::Gamma),
    ];
    for (key, bad) in inapplicable {
        if *bad {
            return Err(CliError::Config(format!(
                "priors.{key} does not apply to family {}",
                family.name()
            )));
        }
    }

    if let Some(v) = block.beta_mean {
        spec.beta_mean = nalgebra::DVector::from_element(p, v);
    }
    if let Some(v) = block.beta_var {
        spec.beta_var = nalgebra::DVector::from_element(p, v);
    }
    if let Some(v) = block.sigma_mean {
        spec.sigma_mean = v;
    }
    if let Some(v) = block.sigma_var {
        spec.sigma_var = v;
    }

    // An explicit prior block must pin the extra-parameter prior itself.
    let require = |key: &str, given: Option<f64>, default: Option<f64>| -> CliResult<Option<f64>> {
        if explicit && given.is_none() {
            return Err(CliError::Config(format!(
                "priors.{key} is required for family {}",
                family.name()
            )));
        }
        Ok(given.or(default))
    };
    match family {
        Family::Gaussian => {
            spec.tau_mean = require("tau_mean", block.tau_mean, spec.tau_mean)?;
            spec.tau_var = require("tau_var", block.tau_var, spec.tau_var)?;
            block.tau_mean = spec.tau_mean;
            block.tau_var = spec.tau_var;
        }
        Family::Negbin => {
            spec.kappa_shape = require("kappa_shape", block.kappa_shape, spec.kappa_shape)?;
            spec.kappa_rate = require("kappa_rate", block.kappa_rate, spec.kappa_rate)?;
            block.kappa_shape = spec.kappa_shape;
            block.kappa_rate = spec.kappa_rate;
        }
        Family::Gamma => {
            spec.alpha_mean = require("alpha_mean", block.alpha_mean, spec.alpha_mean)?;
            spec.alpha_var = require("alpha_var", block.alpha_var, spec.alpha_var)?;
            block.alpha_mean = spec.alpha_mean;
            block.alpha_var = spec.alpha_var;
        }
        Family::Poisson | Family::Bernoulli => {}
    }

    // Echo the generic keys with their effective values. Per-coordinate beta
    // priors are uniform here, so scalars echo faithfully.
    block.beta_mean = Some(block.beta_mean.unwrap_or(0.0));
    block.beta_var = Some(block.beta_var.unwrap_or(100.0));
    block.sigma_mean = Some(spec.sigma_mean);
    block.sigma_var = Some(spec.sigma_var);
    *section = Some(block);
    Ok(spec)
}

/// Metadata echo written beside every run's outputs; `--config` accepts this
/// file directly and reruns the embedded configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub version: String,
    pub config: RunConfig,
}

/// Load a config file, accepting either a bare `RunConfig` object or a
/// `metadata.json` echo (whose `config` field is then used). Applies the
/// SIVI_SEED environment override.
pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let config_value = match value {
        serde_json::Value::Object(ref obj)
            if obj.contains_key("config") && obj.contains_key("command") =>
        {
            obj["config"].clone()
        }
        other => other,
    };
    let mut config: RunConfig = serde_json::from_value(config_value)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Ok(raw) = std::env::var(SEED_ENV_VAR) {
        config.seed = raw.parse::<u64>().map_err(|_| {
            CliError::Config(format!(
                "{SEED_ENV_VAR} must be an unsigned integer (got '{raw}')"
            ))
        })?;
    }
    Ok(config)
}

/// Output directory: the --out flag wins, then the config, then the current
/// directory. The flag is deliberately not echoed into metadata — it places
/// artifacts, it does not shape them.
pub fn resolve_out_dir(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &config.out_dir {
        return PathBuf::from(p);
    }
    PathBuf::from(".")
}

/// Create the output directory if needed.
pub fn ensure_out_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}
