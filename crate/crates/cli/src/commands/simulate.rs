//! `sglmm simulate`: draw one synthetic dataset and write it with its truth.

use std::path::Path;

use sglmm_core::spatial::simulate_dataset;

use crate::config::{Metadata, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{write_data_csv, write_json, write_truth_csv};

/// Run the simulate command; returns the paths written.
pub fn run(mut config: RunConfig, out_dir: &Path) -> CliResult<()> {
    let scenario_cfg = config
        .scenario
        .as_mut()
        .ok_or_else(|| CliError::Config("simulate requires a [scenario] section".into()))?;
    let scenario = scenario_cfg.resolve(config.seed)?;
    let (dataset, truth) = simulate_dataset(&scenario)?;

    write_data_csv(&out_dir.join("data.csv"), &dataset)?;
    write_truth_csv(&out_dir.join("truth.csv"), &truth, scenario.family)?;
    write_json(
        &out_dir.join("metadata.json"),
        &Metadata {
            command: "simulate".into(),
            method: None,
            version: env!("CARGO_PKG_VERSION").into(),
            config,
        },
    )?;
    Ok(())
}
