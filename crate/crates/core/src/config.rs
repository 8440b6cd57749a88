//! Strict JSON problem configuration.
//!
//! Unknown keys are rejected everywhere, matrices are row-major nested
//! arrays, and every default is materialised so that it can be echoed back
//! into reports.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{Problem, SolverOptions, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::geometry::ModelSet;
use crate::linalg;
use crate::noise::NoiseModel;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("dimension mismatch at `{path}`: expected {expected}, got {got}")]
    Dimension {
        path: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid value at `{path}`: {reason}")]
    Invalid { path: String, reason: String },
    #[error(transparent)]
    Model(#[from] crate::error::Error),
}

impl ConfigError {
    fn dims(path: impl Into<String>, expected: usize, got: usize) -> Self {
        ConfigError::Dimension {
            path: path.into(),
            expected,
            got,
        }
    }

    fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

impl From<serde_json::Error> for ConfigError {
    fn from(e: serde_json::Error) -> Self {
        ConfigError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSetConfig {
    Ellipsoid { a: Vec<Vec<f64>> },
    Box { tau: f64 },
    Approximability { v: Vec<Vec<f64>>, epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Laplace,
    Uniform,
    Rademacher,
    Correlated,
}

/// `kind` names the law; a `mixing` matrix turns any isotropic kind into
/// correlated noise. `kind = "correlated"` additionally requires `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<NoiseKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing: Option<Vec<Vec<f64>>>,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl From<SolverConfig> for SolverOptions {
    fn from(c: SolverConfig) -> Self {
        SolverOptions {
            tol: c.tol,
            max_iter: c.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema_version: u32,
    pub n: usize,
    pub m: usize,
    pub lambda: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub model_set: ModelSetConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub mc: McConfig,
}

/// Strict parse plus structural validation.
pub fn parse_config(text: &str) -> Result<ProblemConfig, ConfigError> {
    let config: ProblemConfig = serde_json::from_str(text)?;
    config.validate()?;
    Ok(config)
}

fn check_matrix(rows: &[Vec<f64>], path: &str, nrows: usize, ncols: usize) -> Result<(), ConfigError> {
    if rows.len() != nrows {
        return Err(ConfigError::dims(path, nrows, rows.len()));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(ConfigError::dims(format!("{path}[{i}]"), ncols, row.len()));
        }
    }
    Ok(())
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let (n, m) = (self.n, self.m);
        if n == 0 {
            return Err(ConfigError::invalid("n", "must be positive"));
        }
        if m == 0 {
            return Err(ConfigError::invalid("m", "must be positive"));
        }
        check_matrix(&self.lambda, "lambda", m, n)?;
        if self.q.len() != n {
            return Err(ConfigError::dims("q", n, self.q.len()));
        }
        match &self.model_set {
            ModelSetConfig::Ellipsoid { a } => check_matrix(a, "model_set.a", n, n)?,
            ModelSetConfig::Box { .. } => {}
            ModelSetConfig::Approximability { v, .. } => {
                let k = v.first().map_or(0, Vec::len);
                check_matrix(v, "model_set.v", n, k)?;
            }
        }
        let noise = &self.noise;
        if let Some(nm) = noise.m {
            if nm != m {
                return Err(ConfigError::dims("noise.m", m, nm));
            }
        }
        let base = match (noise.kind, noise.base) {
            (NoiseKind::Correlated, Some(NoiseKind::Correlated)) => {
                return Err(ConfigError::invalid("noise.base", "must be an isotropic kind"))
            }
            (NoiseKind::Correlated, Some(b)) => {
                if noise.mixing.is_none() {
                    return Err(ConfigError::invalid("noise.mixing", "required for correlated noise"));
                }
                b
            }
            (NoiseKind::Correlated, None) => {
                return Err(ConfigError::invalid("noise.base", "required for correlated noise"))
            }
            (_, Some(_)) => {
                return Err(ConfigError::invalid("noise.base", "only allowed with kind \"correlated\""))
            }
            (k, None) => k,
        };
        if base == NoiseKind::Rademacher && m != 1 {
            return Err(ConfigError::dims("m", 1, m));
        }
        if let Some(mix) = &noise.mixing {
            check_matrix(mix, "noise.mixing", m, m)?;
        }
        if !(self.solver.tol > 0.0) {
            return Err(ConfigError::invalid("solver.tol", "must be positive"));
        }
        if self.mc.samples < 2 {
            return Err(ConfigError::invalid("mc.samples", "need at least two samples"));
        }
        Ok(())
    }

    pub fn noise_model(&self) -> Result<NoiseModel, ConfigError> {
        let noise = &self.noise;
        let kind = noise.base.unwrap_or(noise.kind);
        let (sigma, m) = (noise.sigma, self.m);
        let base = match kind {
            NoiseKind::Gaussian => NoiseModel::GaussianIso { sigma, m },
            NoiseKind::Laplace => NoiseModel::LaplaceIid { sigma, m },
            NoiseKind::Uniform => NoiseModel::UniformCube { sigma, m },
            NoiseKind::Rademacher => NoiseModel::Rademacher { sigma },
            NoiseKind::Correlated => unreachable!("rejected by validate"),
        };
        let model = match &noise.mixing {
            Some(rows) => NoiseModel::correlated(base, linalg::matrix_from_rows(rows, "noise.mixing")?)?,
            None => base,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn model_set(&self) -> Result<ModelSet, ConfigError> {
        Ok(match &self.model_set {
            ModelSetConfig::Ellipsoid { a } => ModelSet::ellipsoid(linalg::matrix_from_rows(a, "model_set.a")?)?,
            ModelSetConfig::Box { tau } => ModelSet::cube(self.n, *tau)?,
            ModelSetConfig::Approximability { v, epsilon } => {
                ModelSet::approximability(linalg::matrix_from_rows(v, "model_set.v")?, *epsilon)?
            }
        })
    }

    pub fn problem(&self) -> Result<Problem, ConfigError> {
        self.validate()?;
        let lambda = linalg::matrix_from_rows(&self.lambda, "lambda")?;
        Ok(Problem::new(
            lambda,
            DVector::from_column_slice(&self.q),
            self.model_set()?,
            self.noise_model()?,
        )?)
    }

    pub fn solver_options(&self) -> SolverOptions {
        self.solver.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1, "n": 1, "m": 1,
        "lambda": [[1.0]], "q": [1.0],
        "model_set": {"kind": "box", "tau": 1.0},
        "noise": {"kind": "gaussian", "sigma": 1.0}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.solver.tol, 1e-6);
        assert_eq!(c.solver.max_iter, 5000);
        assert_eq!(c.mc.samples, 100_000);
        assert_eq!(c.mc.seed, 0);
        let echoed = serde_json::to_value(&c).unwrap();
        assert_eq!(echoed["solver"]["max_iter"], 5000);
        assert_eq!(echoed["mc"]["samples"], 100_000);
        c.problem().unwrap();
    }

    #[test]
    fn lambda_shape_error_names_field() {
        let text = r#"{
            "schema_version": 1, "n": 2, "m": 2,
            "lambda": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], "q": [1.0, 0.0],
            "model_set": {"kind": "box", "tau": 1.0},
            "noise": {"kind": "gaussian", "sigma": 1.0}
        }"#;
        let err = parse_config(text).unwrap_err();
        assert!(matches!(err, ConfigError::Dimension { .. }));
        assert!(err.to_string().contains("lambda"), "{err}");
    }

    #[test]
    fn unknown_key_rejected_by_name() {
        let text = MINIMAL.replace("\"sigma\": 1.0", "\"sigma\": 1.0, \"sigma_sq\": 1.0");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("sigma_sq"), "{err}");

        let nested = MINIMAL.replace("\"tau\": 1.0", "\"tau\": 1.0, \"radius\": 2.0");
        assert!(parse_config(&nested).unwrap_err().to_string().contains("radius"));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_config("{\n  \"n\": 1,\n  oops\n}").unwrap_err();
        match err {
            ConfigError::Syntax { line, column, .. } => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn correlated_noise_needs_base_and_mixing() {
        let base = MINIMAL.replace(
            r#""noise": {"kind": "gaussian", "sigma": 1.0}"#,
            r#""noise": {"kind": "correlated", "sigma": 1.0, "mixing": [[2.0]]}"#,
        );
        assert!(parse_config(&base).unwrap_err().to_string().contains("noise.base"));
        let ok = MINIMAL.replace(
            r#""noise": {"kind": "gaussian", "sigma": 1.0}"#,
            r#""noise": {"kind": "correlated", "base": "laplace", "sigma": 1.0, "mixing": [[2.0]]}"#,
        );
        let c = parse_config(&ok).unwrap();
        let noise = c.noise_model().unwrap();
        assert_eq!(noise.kind(), "correlated");
        assert_eq!(noise.covariance()[(0, 0)], 4.0);
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let text = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(parse_config(&text).unwrap_err().to_string().contains("schema_version"));
    }
}
