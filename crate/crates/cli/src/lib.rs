//! Library side of the `sglmm` binary: config loading, file formats, and the
//! command implementations, exposed so integration tests can drive them
//! directly.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

/// Inference method selector shared by the `fit`/`predict`/`compare` flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Sivi,
    Mh,
    Hmc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sivi => "sivi",
            Method::Mh => "mh",
            Method::Hmc => "hmc",
        }
    }

    pub fn parse(s: &str) -> crate::error::CliResult<Method> {
        match s {
            "sivi" => Ok(Method::Sivi),
            "mh" => Ok(Method::Mh),
            "hmc" => Ok(Method::Hmc),
            other => Err(crate::error::CliError::Config(format!(
                "method must be sivi, mh, or hmc (got '{other}')"
            ))),
        }
    }
}
