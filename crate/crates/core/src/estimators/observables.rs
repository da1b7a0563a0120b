//! Test functions f for the semigroup estimators, with closed-form values of
//! ⟨∇P_tf, v⟩ and ∇²P_tf(v,v) where they exist.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ManifoldChart, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable {
    Constant { value: f64 },
    /// ⟨a, z⟩ in global coordinates.
    Linear { coeffs: Vec<f64> },
    /// z_i.
    Coordinate { index: usize },
    /// z_i².
    Square { index: usize },
    /// sin z₁ + z₂².
    SinPlusSquare,
}

impl Observable {
    pub fn validate(&self, global_dim: usize) -> Result<()> {
        let bad = match self {
            Observable::Linear { coeffs } => coeffs.len() != global_dim,
            Observable::Coordinate { index } | Observable::Square { index } => *index >= global_dim,
            Observable::SinPlusSquare => global_dim < 2,
            Observable::Constant { .. } => false,
        };
        if bad {
            return Err(Error::config("observable", format!("does not fit {global_dim} global coordinates")));
        }
        Ok(())
    }

    pub fn eval(&self, p: &Vector) -> f64 {
        match self {
            Observable::Constant { value } => *value,
            Observable::Linear { coeffs } => coeffs.iter().zip(p.iter()).map(|(a, z)| a * z).sum(),
            Observable::Coordinate { index } => p[*index],
            Observable::Square { index } => p[*index] * p[*index],
            Observable::SinPlusSquare => p[0].sin() + p[1] * p[1],
        }
    }

    fn coefficients(&self, len: usize) -> Option<Vector> {
        match self {
            Observable::Linear { coeffs } => Some(Vector::from_column_slice(coeffs)),
            Observable::Coordinate { index } => {
                let mut a = Vector::zeros(len);
                a[*index] = 1.0;
                Some(a)
            }
            _ => None,
        }
    }

    /// (⟨∇P_tf(x), v⟩, ∇²P_tf(x)(v,v)) where a closed form is known.
    pub fn oracle(&self, chart: &dyn ManifoldChart, x: &Vector, v: &Vector, t: f64) -> Option<(f64, f64)> {
        if let Observable::Constant { .. } = self {
            return Some((0.0, 0.0));
        }
        match chart.name() {
            "euclidean" => match self {
                Observable::Linear { .. } | Observable::Coordinate { .. } => {
                    Some((self.coefficients(x.len())?.dot(v), 0.0))
                }
                Observable::Square { index } => Some((2.0 * x[*index] * v[*index], 2.0 * v[*index] * v[*index])),
                Observable::SinPlusSquare => {
                    let decay = (-t / 2.0).exp();
                    Some((
                        decay * x[0].cos() * v[0] + 2.0 * x[1] * v[1],
                        -decay * x[0].sin() * v[0] * v[0] + 2.0 * v[1] * v[1],
                    ))
                }
                Observable::Constant { .. } => unreachable!(),
            },
            // Restrictions of linear functions are degree-1 harmonics: P_tf = e^{−t}f
            // and Hess f = −f·g on the unit sphere.
            "sphere2" => {
                let a = self.coefficients(3)?;
                let decay = (-t).exp();
                Some((decay * a.dot(v), -decay * a.dot(x) * v.norm_squared()))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Euclidean;

    #[test]
    fn parses_tagged_form() {
        let o: Observable = serde_json::from_str(r#"{"kind":"square","index":0}"#).unwrap();
        assert_eq!(o, Observable::Square { index: 0 });
        let o: Observable = serde_json::from_str(r#"{"kind":"sin_plus_square"}"#).unwrap();
        assert_eq!(o.eval(&Vector::from_vec(vec![0.0, 2.0])), 4.0);
        assert!(o.validate(1).is_err());
    }

    #[test]
    fn flat_oracle_values() {
        let x = Vector::zeros(2);
        let v = Vector::from_vec(vec![1.0, 0.0]);
        let o = Observable::Square { index: 0 };
        assert_eq!(o.oracle(&Euclidean { n: 2 }, &x, &v, 0.5), Some((0.0, 2.0)));
        let (g, _) = Observable::SinPlusSquare.oracle(&Euclidean { n: 2 }, &x, &v, 0.5).unwrap();
        assert!((g - (-0.25f64).exp()).abs() < 1e-15);
    }
}
