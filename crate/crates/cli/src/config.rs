//! Run configurations, as read from JSON or assembled from flags.

use std::path::PathBuf;
use std::sync::OnceLock;

use betadyn::quenched::{CMethod, NoiseModel};
use betadyn::BetaSystem;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::exit::CliError;

pub const CONFIG_SCHEMA: &str = include_str!("../../../schemas/config.schema.json");
pub const REPORT_SCHEMA: &str = include_str!("../../../schemas/report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub command: Command,
    /// Directory for `report.json` and the CSV step functions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Significand bits for orbit diagnostics; 53 or less means plain
    /// double precision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    Density {
        system: BetaSystem,
        tol: f64,
    },
    Bounds {
        system: BetaSystem,
        tol: f64,
    },
    Response {
        beta0: f64,
        beta1: f64,
        p: f64,
        tol: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fd_eps: Option<f64>,
    },
    Quenched {
        model: NoiseModel,
        method: CMethod,
        /// Number of sampled points `ω`.
        samples: usize,
        seed: u64,
        /// Depth of the fiber densities and of the functional residual.
        depth: usize,
        #[serde(default)]
        equivariance: bool,
    },
    Expand {
        /// Slopes along the forward path, repeated periodically.
        path: Vec<f64>,
        x: f64,
        depth: usize,
    },
    VerifyUlam {
        system: BetaSystem,
        bins: usize,
        #[serde(default = "default_ulam_tol")]
        tol: f64,
        #[serde(default = "default_exact_tol")]
        exact_tol: f64,
    },
    VerifyMc {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        system: Option<BetaSystem>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<NoiseModel>,
        orbits: usize,
        steps: usize,
        burn_in: usize,
        bins: usize,
        seed: u64,
        #[serde(default = "default_exact_tol")]
        exact_tol: f64,
    },
}

fn default_ulam_tol() -> f64 {
    1e-13
}

fn default_exact_tol() -> f64 {
    1e-10
}

fn schema_validator(
    text: &'static str,
    cell: &'static OnceLock<jsonschema::Validator>,
) -> &'static jsonschema::Validator {
    cell.get_or_init(|| {
        let schema: Value = serde_json::from_str(text).expect("bundled schema is valid JSON");
        jsonschema::validator_for(&schema).expect("bundled schema compiles")
    })
}

/// Checks `value` against a bundled schema, collecting every violation.
fn check_schema(
    value: &Value,
    text: &'static str,
    cell: &'static OnceLock<jsonschema::Validator>,
) -> Result<(), Vec<String>> {
    let errors: Vec<String> = schema_validator(text, cell)
        .iter_errors(value)
        .map(|e| format!("{}: {}", e.instance_path(), e))
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

pub fn validate_config_json(value: &Value) -> Result<(), Vec<String>> {
    static CELL: OnceLock<jsonschema::Validator> = OnceLock::new();
    check_schema(value, CONFIG_SCHEMA, &CELL)
}

pub fn validate_report_json(value: &Value) -> Result<(), Vec<String>> {
    static CELL: OnceLock<jsonschema::Validator> = OnceLock::new();
    check_schema(value, REPORT_SCHEMA, &CELL)
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            out_dir: None,
            precision: None,
        }
    }

    /// Parses a JSON config after validating it against the config schema.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| CliError::Usage(format!("config is not JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, CliError> {
        validate_config_json(&value).map_err(|errs| {
            CliError::Usage(format!("config rejected by schema: {}", errs.join("; ")))
        })?;
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Runs the same schema check on a config built from flags.
    pub fn validate(&self) -> Result<(), CliError> {
        let value = serde_json::to_value(self).map_err(|e| CliError::Usage(e.to_string()))?;
        validate_config_json(&value).map_err(|errs| {
            CliError::Usage(format!("config rejected by schema: {}", errs.join("; ")))
        })?;
        if let Command::VerifyMc { system, model, .. } = &self.command {
            if system.is_some() == model.is_some() {
                return Err(CliError::Usage(
                    "verify-mc needs exactly one of system and model".into(),
                ));
            }
        }
        if let Command::Expand { path, .. } = &self.command {
            if path.is_empty() {
                return Err(CliError::Usage("expand needs a non-empty path".into()));
            }
        }
        Ok(())
    }
}

/// Reads a system given inline as JSON, as `beta:prob,beta:prob`, or as a
/// path to a JSON file.
pub fn parse_system(arg: &str) -> Result<BetaSystem, CliError> {
    let text = inline_or_file(arg)?;
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("system: {e}")));
    }
    let atoms = text
        .split(',')
        .map(|pair| {
            let (b, p) = pair
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("expected beta:prob, got {pair:?}")))?;
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::Usage(format!("{s:?}: {e}")))
            };
            Ok((num(b)?, num(p)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(BetaSystem::new(atoms)?)
}

pub fn parse_model(arg: &str) -> Result<NoiseModel, CliError> {
    let text = inline_or_file(arg)?;
    let model: NoiseModel =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("model: {e}")))?;
    model.validate()?;
    Ok(model)
}

fn inline_or_file(arg: &str) -> Result<String, CliError> {
    let t = arg.trim_start();
    if t.starts_with('{') || t.contains(':') {
        return Ok(arg.to_string());
    }
    std::fs::read_to_string(arg).map_err(|e| CliError::Io {
        path: arg.into(),
        source: e,
    })
}
