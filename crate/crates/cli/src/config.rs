use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use switchflow::quadrature::CompositeParams;
use switchflow::special_flow::{Roof, Rotation};
use switchflow::{FieldPair, QuadratureSpec, Rule1d, SpecialFlowSpec, SwitchingLaw};

/// Anything wrong with the configuration file or its values.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureKind {
    #[default]
    Composite,
    /// Gauss-Laguerre with `m` nodes per axis.
    Laguerre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartDensity {
    Uniform,
    Perturbed,
    Indicator,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fields: FieldPair,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::grid_n")]
    pub grid_n: usize,
    #[serde(default = "defaults::m")]
    pub m: usize,
    #[serde(default)]
    pub quadrature: QuadratureKind,
    #[serde(default)]
    pub law: SwitchingLaw,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub simulate: SimulateParams,
    #[serde(default)]
    pub solve: SolveParams,
    #[serde(default)]
    pub verify: VerifyParams,
    #[serde(default)]
    pub smoothing: SmoothingParams,
    #[serde(default)]
    pub special_flow: SpecialFlowParams,
    #[serde(default)]
    pub transversality: TransversalityParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateParams {
    pub n_switches: usize,
    pub n_trajectories: usize,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            n_switches: 100_000,
            n_trajectories: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveParams {
    pub tol: f64,
    pub max_iter: usize,
    pub start: StartDensity,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            start: StartDensity::Perturbed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyParams {
    pub samples: usize,
    pub max_time: f64,
    pub identity_tol: f64,
    pub gradient_grid_n: usize,
    pub gradient_rel_tol: f64,
    /// Also run the indicator-function gradient check on the fine rule; slow.
    pub rough: bool,
    pub jacobian_t_max: usize,
    pub jacobian_grid: usize,
    pub det_slack: f64,
    pub growth_exponent_max: f64,
    pub special_flow_samples: usize,
    pub shear_fd_tol: f64,
    pub crossing_margin: f64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            samples: 100,
            max_time: 3.0,
            identity_tol: 1e-5,
            gradient_grid_n: 64,
            gradient_rel_tol: 1e-2,
            rough: false,
            jacobian_t_max: 100,
            jacobian_grid: 16,
            det_slack: 0.05,
            growth_exponent_max: 1.2,
            special_flow_samples: 10_000,
            shear_fd_tol: 1e-5,
            crossing_margin: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingParams {
    pub start: StartDensity,
    pub applications: usize,
    /// Use panels of width `2 / grid_n` so the rule resolves cell-scale jumps.
    pub rough_rule: bool,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self {
            start: StartDensity::Indicator,
            applications: 2,
            rough_rule: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecialFlowParams {
    pub spec: SpecialFlowSpec,
    pub t_max: usize,
    pub n_samples: usize,
    pub growth_exponent_max: f64,
}

impl Default for SpecialFlowParams {
    fn default() -> Self {
        Self {
            spec: SpecialFlowSpec::new(Rotation::Golden, Roof::sinusoid(1.0, 0.3)).expect("valid default roof"),
            t_max: 200,
            n_samples: 64,
            growth_exponent_max: 1.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransversalityParams {
    pub resolution: usize,
    pub threshold: f64,
}

impl Default for TransversalityParams {
    fn default() -> Self {
        Self {
            resolution: 256,
            threshold: switchflow::fields::DEFAULT_TRANSVERSALITY_THRESHOLD,
        }
    }
}

mod defaults {
    pub fn lambda() -> f64 {
        1.0
    }
    pub fn grid_n() -> usize {
        64
    }
    pub fn m() -> usize {
        32
    }
    pub fn seed() -> u64 {
        42
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError(msg));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.grid_n < 4 {
            return fail(format!("grid_n must be at least 4, got {}", self.grid_n));
        }
        if self.m == 0 {
            return fail("m must be positive".into());
        }
        if !(self.solve.tol >= 0.0) || self.solve.max_iter == 0 {
            return fail("solve.tol must be non-negative and solve.max_iter positive".into());
        }
        if self.simulate.n_trajectories == 0 || self.simulate.n_switches == 0 {
            return fail("simulate.n_switches and simulate.n_trajectories must be positive".into());
        }
        if self.smoothing.applications > switchflow::transfer::MAX_SMOOTHING_APPLICATIONS {
            return fail(format!(
                "smoothing.applications must be at most {}",
                switchflow::transfer::MAX_SMOOTHING_APPLICATIONS
            ));
        }
        if self.transversality.resolution < 16 {
            return fail("transversality.resolution must be at least 16".into());
        }
        if self.verify.gradient_grid_n < 4 || self.verify.jacobian_grid == 0 || self.verify.jacobian_t_max == 0 {
            return fail("verify grid sizes and jacobian_t_max must be positive".into());
        }
        self.rule().map(|_| ())
    }

    pub fn quadrature_spec(&self) -> QuadratureSpec {
        match self.quadrature {
            QuadratureKind::Composite => QuadratureSpec::default(),
            QuadratureKind::Laguerre => QuadratureSpec::Laguerre { order: self.m },
        }
    }

    pub fn rule(&self) -> Result<Rule1d, ConfigError> {
        self.quadrature_spec()
            .build(&self.law, self.lambda)
            .map_err(|e| ConfigError(format!("quadrature: {e}")))
    }

    /// Composite rule with cell-scale panels for an `n x n` grid.
    pub fn rough_rule(&self, n: usize) -> Result<Rule1d, ConfigError> {
        QuadratureSpec::Composite(CompositeParams::for_rough(n))
            .build(&self.law, self.lambda)
            .map_err(|e| ConfigError(format!("quadrature: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"fields": {"u0": {"kind": "constant", "v": [1.0, 0.5]}, "u1": {"kind": "constant", "v": [0.0, 1.0]}}}"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!((cfg.lambda, cfg.grid_n, cfg.m, cfg.seed), (1.0, 64, 32, 42));
        assert_eq!(cfg.quadrature, QuadratureKind::Composite);
        assert_eq!(cfg.solve.max_iter, 200);
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        let err = ExperimentConfig::from_json(r#"{"lambda": 1.0}"#).unwrap_err();
        assert!(err.0.contains("fields"), "{err}");
        let extra = MINIMAL.replacen('{', r#"{"lamda": 2.0, "#, 1);
        assert!(ExperimentConfig::from_json(&extra).unwrap_err().0.contains("lamda"));
        let nested = MINIMAL.replacen('{', r#"{"solve": {"tolerance": 1}, "#, 1);
        assert!(ExperimentConfig::from_json(&nested).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        for patch in [r#""lambda": -1.0"#, r#""grid_n": 2"#, r#""smoothing": {"applications": 9}"#] {
            let text = MINIMAL.replacen('{', &format!("{{{patch}, "), 1);
            assert!(ExperimentConfig::from_json(&text).is_err(), "{patch}");
        }
    }
}
