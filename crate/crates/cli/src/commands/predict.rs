//! `sglmm predict`: score a saved draw matrix against the held-out rows of a
//! data file and write predictions plus the family's headline metric.

use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;
use sglmm_core::eval::{auc, predict, rmspe};
use sglmm_core::sivi::PosteriorDraws;
use sglmm_core::Family;

use crate::config::{Metadata, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{read_draws_csv, write_json, write_predictions_csv};
use crate::Method;

use super::build_model_bundle;

/// Headline predictive metric plus the scoring walltime (I/O excluded).
#[derive(Debug, Serialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmspe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub walltime_s: f64,
}

/// The family's headline metric: AUC for binary responses, RMSPE otherwise.
pub fn score_predictions(
    family: Family,
    z_test: &DVector<f64>,
    point_pred: &DVector<f64>,
) -> CliResult<(&'static str, f64)> {
    match family {
        Family::Bernoulli => Ok(("auc", auc(z_test, point_pred)?)),
        _ => Ok(("rmspe", rmspe(z_test, point_pred)?)),
    }
}

/// Run the predict command.
pub fn run(mut config: RunConfig, method: Option<Method>, out_dir: &Path) -> CliResult<()> {
    let data_path = config
        .data
        .clone()
        .ok_or_else(|| CliError::Config("predict requires a 'data' path".into()))?;
    let draws_path = config
        .draws
        .clone()
        .ok_or_else(|| CliError::Config("predict requires a 'draws' path".into()))?;
    let bundle = build_model_bundle(&mut config, data_path.as_ref())?;

    let expected_names = bundle.model.param_names();
    let (names, samples) = read_draws_csv(draws_path.as_ref())?;
    if names != expected_names {
        return Err(CliError::Data(format!(
            "draws file columns [{}] do not match the model's parameters [{}]",
            names.join(", "),
            expected_names.join(", ")
        )));
    }
    let draws = PosteriorDraws { samples, family: bundle.family, layout: bundle.model.layout };

    let test_idx = &bundle.dataset.test_idx;
    if test_idx.is_empty() {
        return Err(CliError::Data("the data file has no test rows to predict".into()));
    }
    let x_test = bundle.dataset.x_rows(test_idx);
    let phi_test = bundle.basis.phi_rows(test_idx);
    let z_test = bundle.dataset.z_rows(test_idx);

    let start = Instant::now();
    let preds = predict(&draws, &x_test, &phi_test, false)?;
    let (metric_name, metric_value) = score_predictions(bundle.family, &z_test, &preds.point_pred)?;
    let walltime_s = start.elapsed().as_secs_f64();

    write_predictions_csv(
        &out_dir.join("predictions.csv"),
        test_idx,
        &z_test,
        &preds.point_pred,
    )?;
    let report = MetricsReport {
        method: method.map(|m| m.name().into()),
        rmspe: (metric_name == "rmspe").then_some(metric_value),
        auc: (metric_name == "auc").then_some(metric_value),
        walltime_s,
    };
    write_json(&out_dir.join("metrics.json"), &report)?;
    write_json(
        &out_dir.join("metadata.json"),
        &Metadata {
            command: "predict".into(),
            method: method.map(|m| m.name().into()),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
        },
    )?;
    Ok(())
}
