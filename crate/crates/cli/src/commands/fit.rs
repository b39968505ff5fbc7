//! `sglmm fit`: fit the model to the training rows by SIVI, random-walk
//! Metropolis-Hastings, or Hamiltonian Monte Carlo, and write the draw/trace
//! artifacts.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sglmm_core::eval::summarize;
use sglmm_core::nn::MlpMixer;
use sglmm_core::sivi::{draw_posterior, fit_sivi, PosteriorDraws, StopReason};
use sglmm_core::{hmc_fit, mh_fit, ModelSpec};

use crate::config::{Metadata, RunConfig};
use crate::error::{io_err, CliError, CliResult};
use crate::io::{
    write_draws_csv, write_histogram_csv, write_json, write_summary_csv, write_trace_csv,
};
use crate::Method;

use super::{build_model_bundle, histogram_params};

/// Fit-loop diagnostics (walltimes cover the fit loop only, not I/O).
#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum Diagnostics {
    Sivi {
        method: String,
        walltime_s: f64,
        iters_run: usize,
        stop_reason: StopReason,
        final_elbo: f64,
        n_posterior_draws: usize,
    },
    Chain {
        method: String,
        walltime_s: f64,
        accept_rate: f64,
        ess: Vec<f64>,
        n_divergent: usize,
    },
}

impl Diagnostics {
    /// Seconds spent inside the fit loop.
    pub fn walltime_s(&self) -> f64 {
        match self {
            Diagnostics::Sivi { walltime_s, .. } | Diagnostics::Chain { walltime_s, .. } => {
                *walltime_s
            }
        }
    }
}

/// Everything a fit produces, before any file is written.
pub struct FitOutcome {
    pub draws: PosteriorDraws,
    pub diagnostics: Diagnostics,
    /// Per-iteration (elbo, cumulative walltime) traces; SIVI only.
    pub trace: Option<(Vec<f64>, Vec<f64>)>,
    /// Fitted mixing network; SIVI only.
    pub net: Option<MlpMixer>,
}

/// Offset applied to the global seed for the stream that samples posterior
/// draws from a fitted mixing network, keeping it distinct from the
/// optimizer's stream.
pub const POSTERIOR_DRAW_SEED_OFFSET: u64 = 1;

/// Fit by the chosen method; shared by `fit` and `compare`.
pub fn fit_by_method(
    config: &RunConfig,
    model: &ModelSpec,
    method: Method,
) -> CliResult<FitOutcome> {
    match method {
        Method::Sivi => {
            let sc = config.sivi.clone().unwrap_or_default();
            let fit = fit_sivi(model, &sc)?;
            let mut rng =
                ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(POSTERIOR_DRAW_SEED_OFFSET));
            let draws = draw_posterior(&fit, &sc, model, config.n_posterior_draws, &mut rng)?;
            let diagnostics = Diagnostics::Sivi {
                method: "sivi".into(),
                walltime_s: fit.walltime_s,
                iters_run: fit.iters_run,
                stop_reason: fit.stop_reason,
                final_elbo: *fit.elbo_trace.last().unwrap_or(&f64::NAN),
                n_posterior_draws: config.n_posterior_draws,
            };
            Ok(FitOutcome {
                draws,
                diagnostics,
                trace: Some((fit.elbo_trace, fit.walltime_trace)),
                net: Some(fit.net),
            })
        }
        Method::Mh => {
            let mc = config.mh.clone().unwrap_or_default();
            let chain = mh_fit(model, &mc)?;
            let diagnostics = Diagnostics::Chain {
                method: "mh".into(),
                walltime_s: chain.walltime_s,
                accept_rate: chain.accept_rate,
                ess: chain.ess.iter().copied().collect(),
                n_divergent: chain.n_divergent,
            };
            Ok(FitOutcome {
                draws: chain.into_posterior_draws(model),
                diagnostics,
                trace: None,
                net: None,
            })
        }
        Method::Hmc => {
            let hc = config.hmc.clone().unwrap_or_default();
            let chain = hmc_fit(model, &hc)?;
            let diagnostics = Diagnostics::Chain {
                method: "hmc".into(),
                walltime_s: chain.walltime_s,
                accept_rate: chain.accept_rate,
                ess: chain.ess.iter().copied().collect(),
                n_divergent: chain.n_divergent,
            };
            Ok(FitOutcome {
                draws: chain.into_posterior_draws(model),
                diagnostics,
                trace: None,
                net: None,
            })
        }
    }
}

/// Fill the method's config section with resolved defaults and the global
/// seed so the metadata echo is complete and reruns are exact.
pub fn sync_method_section(config: &mut RunConfig, method: Method) {
    match method {
        Method::Sivi => {
            let mut sc = config.sivi.clone().unwrap_or_default();
            sc.seed = config.seed;
            config.sivi = Some(sc);
        }
        Method::Mh => {
            let mut mc = config.mh.clone().unwrap_or_default();
            mc.seed = config.seed;
            config.mh = Some(mc);
        }
        Method::Hmc => {
            let mut hc = config.hmc.clone().unwrap_or_default();
            hc.seed = config.seed;
            config.hmc = Some(hc);
        }
    }
}

/// Write the draw matrix plus summary/histogram artifacts shared by every
/// method.
pub fn write_draw_artifacts(
    out_dir: &Path,
    names: &[String],
    draws: &PosteriorDraws,
) -> CliResult<()> {
    write_draws_csv(&out_dir.join("draws.csv"), names, &draws.samples)?;
    let summary = summarize(draws)?;
    write_summary_csv(&out_dir.join("summary.csv"), &summary)?;
    for idx in histogram_params(names) {
        let h = &summary.histograms[idx];
        write_histogram_csv(&out_dir.join(format!("hist_{}.csv", h.name)), h)?;
    }
    Ok(())
}

/// Run the fit command.
pub fn run(mut config: RunConfig, method: Method, out_dir: &Path) -> CliResult<()> {
    let data_path = config
        .data
        .clone()
        .ok_or_else(|| CliError::Config("fit requires a 'data' path".into()))?;
    sync_method_section(&mut config, method);
    let bundle = build_model_bundle(&mut config, data_path.as_ref())?;

    let outcome = fit_by_method(&config, &bundle.model, method)?;

    let names = bundle.model.param_names();
    write_draw_artifacts(out_dir, &names, &outcome.draws)?;
    if let Some((elbo, wall)) = &outcome.trace {
        write_trace_csv(&out_dir.join("trace.csv"), elbo, wall)?;
    }
    if let Some(net) = &outcome.net {
        let path = out_dir.join("mixing_net.bin");
        let mut w = BufWriter::new(File::create(&path).map_err(|e| io_err(&path, e))?);
        net.write_checkpoint(&mut w).map_err(|e| io_err(&path, e))?;
    }
    write_json(&out_dir.join("diagnostics.json"), &outcome.diagnostics)?;
    write_json(
        &out_dir.join("metadata.json"),
        &Metadata {
            command: "fit".into(),
            method: Some(method.name().into()),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
        },
    )?;
    Ok(())
}
