//! Versioned model files.
//!
//! A model file is JSON with a fixed top level:
//! `{format_version, model_kind, m, intercept, theta, extras}`. The shape of
//! `extras` depends on `model_kind`. Numbers are written by `serde_json`,
//! which round-trips every finite `f64` exactly.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flipping::{FlipMatrix, FlippingFit};
use crate::prefilter::PrefilterFit;
use crate::robust::{RobustFit, ThetaPenalty};
use crate::solver::GlmFit;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Standard,
    Robust,
    Flipping,
    Prefilter,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Standard => "standard",
            ModelKind::Robust => "robust",
            ModelKind::Flipping => "flipping",
            ModelKind::Prefilter => "prefilter",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(ModelKind::Standard),
            "robust" => Ok(ModelKind::Robust),
            "flipping" => Ok(ModelKind::Flipping),
            "prefilter" => Ok(ModelKind::Prefilter),
            other => Err(Error::InvalidArgument(format!(
                "unknown model kind '{other}' (expected standard, robust, flipping or prefilter)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardExtras {
    pub penalty: ThetaPenalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustExtras {
    pub lambda: f64,
    pub theta_penalty: ThetaPenalty,
    /// Training-row shifts. Kept for auditing only; prediction ignores them.
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlippingExtras {
    pub sigma2: Option<f64>,
    /// `gamma_matrix[a][b]` = P(observed b | true a).
    pub gamma_matrix: Vec<Vec<f64>>,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub n_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefilterExtras {
    pub k: usize,
    pub penalty: ThetaPenalty,
    pub discarded: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Extras {
    Standard(StandardExtras),
    Robust(RobustExtras),
    Flipping(FlippingExtras),
    Prefilter(PrefilterExtras),
}

impl Extras {
    pub fn kind(&self) -> ModelKind {
        match self {
            Extras::Standard(_) => ModelKind::Standard,
            Extras::Robust(_) => ModelKind::Robust,
            Extras::Flipping(_) => ModelKind::Flipping,
            Extras::Prefilter(_) => ModelKind::Prefilter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub m: usize,
    pub intercept: f64,
    pub theta: Vec<f64>,
    pub extras: Extras,
}

#[derive(Serialize, Deserialize)]
struct Raw {
    format_version: u32,
    model_kind: ModelKind,
    m: usize,
    intercept: f64,
    theta: Vec<f64>,
    extras: serde_json::Value,
}

fn json_err(e: serde_json::Error) -> Error {
    Error::ModelFile(e.to_string())
}

impl ModelFile {
    pub fn from_standard(fit: &GlmFit, penalty: ThetaPenalty) -> Self {
        Self::with_extras(fit, Extras::Standard(StandardExtras { penalty }))
    }

    pub fn from_robust(fit: &RobustFit) -> Self {
        Self::with_extras(
            &fit.theta,
            Extras::Robust(RobustExtras {
                lambda: fit.lambda,
                theta_penalty: fit.theta_penalty,
                gamma: fit.gamma.clone(),
            }),
        )
    }

    pub fn from_flipping(fit: &FlippingFit, sigma2: Option<f64>) -> Self {
        Self::with_extras(
            &fit.theta,
            Extras::Flipping(FlippingExtras {
                sigma2,
                gamma_matrix: fit.gamma_matrix.rows(),
                loglik_trace: fit.loglik_trace.clone(),
                converged: fit.converged,
                n_iterations: fit.n_iterations,
            }),
        )
    }

    pub fn from_prefilter(fit: &PrefilterFit, penalty: ThetaPenalty) -> Self {
        Self::with_extras(
            &fit.theta,
            Extras::Prefilter(PrefilterExtras {
                k: fit.k,
                penalty,
                discarded: fit.discarded.clone(),
            }),
        )
    }

    fn with_extras(fit: &GlmFit, extras: Extras) -> Self {
        Self {
            m: fit.coefficients.len(),
            intercept: fit.intercept,
            theta: fit.coefficients.clone(),
            extras,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.extras.kind()
    }

    /// The linear model used for prediction.
    pub fn glm(&self) -> GlmFit {
        GlmFit::from_parameters(self.intercept, self.theta.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != self.m {
            return Err(Error::ModelFile(format!(
                "m = {} but theta has {} entries",
                self.m,
                self.theta.len()
            )));
        }
        if !self.intercept.is_finite() || self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::ModelFile("non-finite parameter".into()));
        }
        match &self.extras {
            Extras::Flipping(x) => {
                FlipMatrix::from_rows(&x.gamma_matrix).map_err(|e| Error::ModelFile(format!("gamma_matrix: {e}")))?;
            }
            Extras::Robust(x) if !(x.lambda > 0.0) => {
                return Err(Error::ModelFile(format!("lambda must be positive, got {}", x.lambda)));
            }
            Extras::Prefilter(x) if x.k == 0 => return Err(Error::ModelFile("k must be at least 1".into())),
            _ => {}
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let extras = match &self.extras {
            Extras::Standard(x) => serde_json::to_value(x),
            Extras::Robust(x) => serde_json::to_value(x),
            Extras::Flipping(x) => serde_json::to_value(x),
            Extras::Prefilter(x) => serde_json::to_value(x),
        }
        .map_err(json_err)?;
        let raw = Raw {
            format_version: FORMAT_VERSION,
            model_kind: self.kind(),
            m: self.m,
            intercept: self.intercept,
            theta: self.theta.clone(),
            extras,
        };
        let mut text = serde_json::to_string_pretty(&raw).map_err(json_err)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Raw = serde_json::from_str(text).map_err(json_err)?;
        if raw.format_version != FORMAT_VERSION {
            return Err(Error::ModelFile(format!(
                "unsupported format_version {} (this build reads {FORMAT_VERSION})",
                raw.format_version
            )));
        }
        let extras = match raw.model_kind {
            ModelKind::Standard => Extras::Standard(serde_json::from_value(raw.extras).map_err(json_err)?),
            ModelKind::Robust => Extras::Robust(serde_json::from_value(raw.extras).map_err(json_err)?),
            ModelKind::Flipping => Extras::Flipping(serde_json::from_value(raw.extras).map_err(json_err)?),
            ModelKind::Prefilter => Extras::Prefilter(serde_json::from_value(raw.extras).map_err(json_err)?),
        };
        let model = Self {
            m: raw.m,
            intercept: raw.intercept,
            theta: raw.theta,
            extras,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}
