use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use supnorm_gof::model::{Permutation, RateVector, SampleSize, SimplexVector};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Poisson,
    Multinomial,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Poisson => "poisson",
            Model::Multinomial => "multinomial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NullSpec {
    model: Option<Model>,
    rates: Option<Vec<f64>>,
    probs: Option<Vec<f64>>,
    n: Option<f64>,
}

/// A validated null, sorted, with the permutation back to the user's labels.
#[derive(Debug, Clone)]
pub enum Null {
    Poisson {
        mu: RateVector,
        perm: Permutation,
    },
    Multinomial {
        q0: SimplexVector,
        n: SampleSize,
        perm: Permutation,
    },
}

impl Null {
    pub fn model(&self) -> Model {
        match self {
            Null::Poisson { .. } => Model::Poisson,
            Null::Multinomial { .. } => Model::Multinomial,
        }
    }

    pub fn perm(&self) -> &Permutation {
        match self {
            Null::Poisson { perm, .. } | Null::Multinomial { perm, .. } => perm,
        }
    }

    pub fn len(&self) -> usize {
        self.perm().order.len()
    }
}

/// `--null` accepts a path or an inline JSON object.
fn read_null_text(arg: &str) -> Result<String, CliError> {
    if arg.trim_start().starts_with('{') {
        return Ok(arg.to_string());
    }
    fs::read_to_string(arg).map_err(|e| CliError::config("null_spec", format!("cannot read '{arg}': {e}")))
}

pub fn load_null(arg: Option<&str>, model_flag: Option<Model>) -> Result<Null, CliError> {
    let arg = arg.ok_or_else(|| CliError::config("null_spec", "missing --null"))?;
    let text = read_null_text(arg)?;
    let spec: NullSpec =
        serde_json::from_str(&text).map_err(|e| CliError::config("null_spec", format!("invalid JSON: {e}")))?;
    let model = match (spec.model, model_flag) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::config(
                "model",
                format!("--model {} disagrees with null_spec.model {}", b.as_str(), a.as_str()),
            ))
        }
        (Some(m), _) | (None, Some(m)) => m,
        (None, None) => return Err(CliError::config("null_spec.model", "missing (or pass --model)")),
    };
    match model {
        Model::Poisson => {
            if spec.probs.is_some() || spec.n.is_some() {
                return Err(CliError::config("null_spec", "a poisson null takes 'rates' only"));
            }
            let rates = spec.rates.ok_or_else(|| CliError::config("null_spec.rates", "missing"))?;
            let (mu, perm) =
                RateVector::from_unsorted(rates).map_err(|e| CliError::config("null_spec.rates", e.to_string()))?;
            Ok(Null::Poisson { mu, perm })
        }
        Model::Multinomial => {
            if spec.rates.is_some() {
                return Err(CliError::config("null_spec", "a multinomial null takes 'probs' and 'n'"));
            }
            let probs = spec.probs.ok_or_else(|| CliError::config("null_spec.probs", "missing"))?;
            let n = spec.n.ok_or_else(|| CliError::config("null_spec.n", "missing"))?;
            let n = SampleSize::new(n).map_err(|e| CliError::config("null_spec.n", e.to_string()))?;
            let (q0, perm) =
                SimplexVector::from_unsorted(probs).map_err(|e| CliError::config("null_spec.probs", e.to_string()))?;
            Ok(Null::Multinomial { q0, n, perm })
        }
    }
}

pub fn check_eta(eta: f64) -> Result<f64, CliError> {
    if eta > 0.0 && eta < 1.0 {
        Ok(eta)
    } else {
        Err(CliError::config("eta", format!("must lie in (0, 1), got {eta}")))
    }
}

pub fn check_positive(field: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::config(field, format!("must be positive and finite, got {v}")))
    }
}

pub fn check_trials(trials: u64) -> Result<u64, CliError> {
    if trials >= supnorm_gof::risk::MIN_TRIALS {
        Ok(trials)
    } else {
        Err(CliError::config(
            "trials",
            format!("must be at least {}, got {trials}", supnorm_gof::risk::MIN_TRIALS),
        ))
    }
}

pub fn parse_xi_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let grid = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::config("xi_grid", format!("'{s}': {e}")))?;
    if grid.is_empty() || grid.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(CliError::config("xi_grid", "values must be positive and finite"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::config("xi_grid", "values must be strictly increasing"));
    }
    Ok(grid)
}

pub fn require_data(path: Option<&Path>) -> Result<PathBuf, CliError> {
    path.map(Path::to_path_buf)
        .ok_or_else(|| CliError::config("data_path", "missing --data (required in test mode)"))
}
