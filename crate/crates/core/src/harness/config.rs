use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, Observable, ProbeH};
use crate::geometry::{ManifoldSpec, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Raw horizontal paths, dumped as JSONL.
    Simulate,
    Grad,
    Hess,
    Loggrad,
    Loghess,
    /// Mean of the Girsanov density, which should be 1.
    Girsanov,
    Varadhan,
    CutoffDiag,
    VariationProbe,
    ExitSurrogate,
}

impl ExperimentKind {
    pub fn is_estimate(self) -> bool {
        matches!(
            self,
            ExperimentKind::Grad
                | ExperimentKind::Hess
                | ExperimentKind::Loggrad
                | ExperimentKind::Loghess
                | ExperimentKind::Girsanov
        )
    }
}

/// Tolerances of acceptance-tagged checks. A check runs only when its key is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    /// |value − oracle| ≤ z_max·stderr.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_stderr: Option<f64>,
    /// Deviation columns strictly decreasing as t decreases.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decreasing: Option<bool>,
    /// Bound on the log deviation at the last grid point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_max: Option<f64>,
    /// Probe tolerances, as multiples of |v|.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_tol: Option<f64>,
    /// Moment stderr over mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_stderr_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ftc_max: Option<f64>,
    /// Study: |value − reference| ≤ this many stderr at the finest grid point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_max_stderr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyAxis {
    T,
    Steps,
    Paths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub axis: StudyAxis,
    pub grid: Vec<f64>,
    /// Axis value of a self-consistency reference run (for example steps = 512).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

/// One experiment, read from a TOML file. Points are global coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub manifold: ManifoldSpec,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Artifact directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<Observable>,
    /// Girsanov perturbation size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_h: Option<ProbeH>,
    /// Cut-off diagnostics: start points of the moment table and its exponents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starts: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment_ks: Option<Vec<i32>>,
    /// Paths whose cut-off trace is written out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_paths: Option<usize>,
    /// Exit surrogate: half-width of the interval (−a, a).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    /// Write one JSONL object per path.
    #[serde(default)]
    pub dump_paths: bool,
    #[serde(default)]
    pub check: CheckSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySpec>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, manifold: ManifoldSpec) -> Self {
        Self {
            kind,
            manifold,
            seed: 0,
            workers: None,
            out: None,
            x: None,
            v: None,
            y: None,
            t: None,
            paths: None,
            steps: None,
            m: None,
            antithetic: false,
            refine: None,
            observable: None,
            epsilon: None,
            t_grid: None,
            eps_grid: None,
            probe_h: None,
            starts: None,
            moment_ks: None,
            trace_paths: None,
            half_width: None,
            dump_paths: false,
            check: CheckSpec::default(),
            study: None,
        }
    }

    /// Parse TOML; schema violations name the offending field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("config", e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "config".into() } else { path }, e.into_inner().to_string())
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn point(&self, field: &str) -> Result<Vector> {
        let v = match field {
            "x" => &self.x,
            "v" => &self.v,
            "y" => &self.y,
            _ => return Err(Error::config(field, "not a point field")),
        };
        v.as_ref()
            .map(|c| Vector::from_column_slice(c))
            .ok_or_else(|| Error::config(field, "required for this experiment"))
    }

    pub fn require<T: Copy>(value: Option<T>, field: &str) -> Result<T> {
        value.ok_or_else(|| Error::config(field, "required for this experiment"))
    }

    pub fn estimator(&self) -> Result<EstimatorConfig> {
        let mut cfg = EstimatorConfig::new(
            Self::require(self.t, "t")?,
            Self::require(self.paths, "paths")?,
            Self::require(self.steps, "steps")?,
            self.seed,
        );
        cfg.m = self.m;
        cfg.antithetic = self.antithetic;
        cfg.refine = self.refine.unwrap_or(1);
        if cfg.refine == 0 {
            return Err(Error::config("refine", "must be at least 1"));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRAD: &str = r#"
kind = "grad"
seed = 3
x = [0.0, 0.0]
v = [1.0, 0.0]
t = 0.5
paths = 1000
steps = 16
manifold = { kind = "euclidean", params = { dim = 2 } }
observable = { kind = "sin_plus_square" }
check = { z_max = 3.0 }
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(GRAD).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Grad);
        assert_eq!(cfg.observable, Some(Observable::SinPlusSquare));
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn schema_errors_carry_field_path() {
        let bad = GRAD.replace("kind = \"euclidean\"", "kind = \"torus\"");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "manifold.kind"),
            other => panic!("{other:?}"),
        }
        let extra = format!("{GRAD}\nbogus = 1\n");
        assert!(matches!(ExperimentConfig::from_toml(&extra), Err(Error::Config { .. })));
        let typo = GRAD.replace("z_max", "zmax");
        match ExperimentConfig::from_toml(&typo) {
            Err(Error::Config { field, .. }) => assert!(field.starts_with("check"), "{field}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_fields_are_config_errors() {
        let cfg = ExperimentConfig::new(ExperimentKind::Grad, ManifoldSpec::euclidean(2));
        assert!(matches!(cfg.estimator(), Err(Error::Config { field, .. }) if field == "t"));
        assert!(cfg.point("x").is_err());
    }
}
