use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ConformalPlane, Euclidean, Hyperbolic, ManifoldChart, Sphere2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    Euclidean,
    Sphere2,
    Hyperbolic2,
    Hyperbolic3,
    ConformalPlane,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldParams {
    /// Dimension of the euclidean model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
}

/// `{kind, params}` selection of a catalog manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    #[serde(default)]
    pub params: ManifoldParams,
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind) -> Self {
        Self {
            kind,
            params: ManifoldParams::default(),
        }
    }

    pub fn euclidean(n: usize) -> Self {
        Self {
            kind: ManifoldKind::Euclidean,
            params: ManifoldParams {
                dim: Some(n),
                ..Default::default()
            },
        }
    }

    /// Parse a bare kind name such as `sphere2` or `euclidean:3`.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let kind: ManifoldKind = serde_json::from_value(serde_json::Value::String(name.to_string()))
            .map_err(|_| Error::config("manifold.kind", format!("unknown manifold kind `{name}`")))?;
        let mut spec = Self::new(kind);
        if let Some(arg) = arg {
            if kind != ManifoldKind::Euclidean {
                return Err(Error::config("manifold", format!("`{name}` takes no inline argument")));
            }
            let n = arg
                .parse()
                .map_err(|_| Error::config("manifold.params.dim", format!("bad dimension `{arg}`")))?;
            spec.params.dim = Some(n);
        }
        Ok(spec)
    }

    pub fn build(&self) -> Result<Arc<dyn ManifoldChart>> {
        let p = &self.params;
        Ok(match self.kind {
            ManifoldKind::Euclidean => {
                let n = p.dim.unwrap_or(2);
                if n == 0 {
                    return Err(Error::config("manifold.params.dim", "must be positive"));
                }
                Arc::new(Euclidean { n })
            }
            ManifoldKind::Sphere2 => Arc::new(Sphere2),
            ManifoldKind::Hyperbolic2 => Arc::new(Hyperbolic::new(2)?),
            ManifoldKind::Hyperbolic3 => Arc::new(Hyperbolic::new(3)?),
            ManifoldKind::ConformalPlane => Arc::new(ConformalPlane::new(
                p.amplitude.unwrap_or(0.5),
                p.radius.unwrap_or(1.0),
                p.center.unwrap_or([0.0, 0.0]),
            )?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_kinds() {
        assert_eq!(ManifoldSpec::parse("sphere2").unwrap().kind, ManifoldKind::Sphere2);
        assert_eq!(ManifoldSpec::parse("euclidean:3").unwrap().params.dim, Some(3));
        assert!(ManifoldSpec::parse("torus").is_err());
        assert!(ManifoldSpec::parse("sphere2:3").is_err());
    }

    #[test]
    fn deserializes_kind_and_params() {
        let spec: ManifoldSpec =
            serde_json::from_str(r#"{"kind":"conformal_plane","params":{"amplitude":0.3}}"#).unwrap();
        assert_eq!(spec.kind, ManifoldKind::ConformalPlane);
        assert_eq!(spec.params.amplitude, Some(0.3));
        let bare: ManifoldSpec = serde_json::from_str(r#"{"kind":"hyperbolic3"}"#).unwrap();
        assert_eq!(bare.build().unwrap().dim(), 3);
        assert!(serde_json::from_str::<ManifoldSpec>(r#"{"kind":"klein"}"#).is_err());
    }
}
