//! `sglmm compare`: fit all three methods on the same dataset, score their
//! held-out predictions, and tabulate metric, walltime, and speedup.

use std::path::{Path, PathBuf};

use sglmm_core::eval::predict;
use sglmm_core::spatial::simulate_dataset;

use crate::config::{Metadata, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{write_comparison_csv, write_data_csv, write_json, ComparisonRow};
use crate::Method;

use super::build_model_bundle;
use super::fit::{fit_by_method, sync_method_section, FitOutcome};
use super::predict::score_predictions;

const METHODS: [Method; 3] = [Method::Sivi, Method::Mh, Method::Hmc];

/// Require an explicit config section for every method being compared, so a
/// comparison never silently runs on unreviewed defaults.
fn require_method_sections(config: &RunConfig) -> CliResult<()> {
    let missing: &str = if config.sivi.is_none() {
        "sivi"
    } else if config.mh.is_none() {
        "mh"
    } else if config.hmc.is_none() {
        "hmc"
    } else {
        return Ok(());
    };
    Err(CliError::Config(format!(
        "compare requires an explicit [{missing}] section"
    )))
}

/// Locate the dataset: an existing 'data' path wins; otherwise a [scenario]
/// section is simulated and written to `<out>/data.csv`. The scenario (with
/// its resolved seed) stays in the metadata echo, so a rerun regenerates the
/// same dataset bit for bit.
fn resolve_dataset(config: &mut RunConfig, out_dir: &Path) -> CliResult<PathBuf> {
    if let Some(p) = &config.data {
        return Ok(PathBuf::from(p));
    }
    let scenario_cfg = config.scenario.as_mut().ok_or_else(|| {
        CliError::Config("compare needs either a 'data' path or a [scenario] section".into())
    })?;
    let scenario = scenario_cfg.resolve(config.seed)?;
    let (dataset, _truth) = simulate_dataset(&scenario)?;
    let path = out_dir.join("data.csv");
    write_data_csv(&path, &dataset)?;
    Ok(path)
}

/// Run the compare command.
pub fn run(mut config: RunConfig, out_dir: &Path) -> CliResult<()> {
    require_method_sections(&config)?;
    for method in METHODS {
        sync_method_section(&mut config, method);
    }
    let data_path = resolve_dataset(&mut config, out_dir)?;
    let bundle = build_model_bundle(&mut config, &data_path)?;

    let outcomes: Vec<FitOutcome> = if config.parallel {
        let cfg = &config;
        let model = &bundle.model;
        let results: Vec<CliResult<FitOutcome>> = std::thread::scope(|s| {
            let handles: Vec<_> = METHODS
                .iter()
                .map(|&m| s.spawn(move || fit_by_method(cfg, model, m)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fit thread panicked"))
                .collect()
        });
        results.into_iter().collect::<CliResult<Vec<_>>>()?
    } else {
        METHODS
            .iter()
            .map(|&m| fit_by_method(&config, &bundle.model, m))
            .collect::<CliResult<Vec<_>>>()?
    };

    let test_idx = &bundle.dataset.test_idx;
    if test_idx.is_empty() {
        return Err(CliError::Data("the data file has no test rows to compare on".into()));
    }
    let x_test = bundle.dataset.x_rows(test_idx);
    let phi_test = bundle.basis.phi_rows(test_idx);
    let z_test = bundle.dataset.z_rows(test_idx);

    let mut rows = Vec::with_capacity(5);
    let mut walltimes = [0.0f64; 3];
    for (i, (method, outcome)) in METHODS.iter().zip(&outcomes).enumerate() {
        let preds = predict(&outcome.draws, &x_test, &phi_test, false)?;
        let (metric, value) = score_predictions(bundle.family, &z_test, &preds.point_pred)?;
        walltimes[i] = outcome.diagnostics.walltime_s();
        rows.push(ComparisonRow {
            method: method.name().into(),
            metric: metric.into(),
            value: Some(value),
            walltime_s: Some(walltimes[i]),
            speedup: None,
        });
    }
    for (i, name) in [(1usize, "mh/sivi"), (2usize, "hmc/sivi")] {
        rows.push(ComparisonRow {
            method: name.into(),
            metric: "speedup".into(),
            value: None,
            walltime_s: None,
            speedup: Some(walltimes[i] / walltimes[0]),
        });
    }

    write_comparison_csv(&out_dir.join("comparison.csv"), &rows)?;
    write_json(
        &out_dir.join("metadata.json"),
        &Metadata {
            command: "compare".into(),
            method: None,
            version: env!("CARGO_PKG_VERSION").into(),
            config,
        },
    )?;
    Ok(())
}
