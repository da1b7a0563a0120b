//! Closed-form and series heat kernels on the model spaces, small-time
//! (Varadhan) deviations, and the interval Dirichlet surrogate.

pub mod dirichlet;
pub mod kernels;

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

pub use dirichlet::{dirichlet_surrogate_1d, exit_probability, mc_exit_frequency, DirichletValues, ExitFrequency};
pub use kernels::{
    EuclideanKernel, Hyperbolic2Kernel, Hyperbolic3Kernel, RadialKernel, RadialValues, SphereKernel, SPHERE_MIN_T,
};

use crate::error::{Error, Result};
use crate::geometry::{r_cot, ManifoldChart, Matrix, Vector};

/// Distance beyond which sphere rows carry the cut-locus warning.
pub const CUT_LOCUS_MARGIN: f64 = 0.2;

/// Kernel of a catalog manifold, if it has one.
pub fn oracle_for(chart: &dyn ManifoldChart) -> Result<Arc<dyn RadialKernel>> {
    Ok(match chart.name() {
        "euclidean" => Arc::new(EuclideanKernel { n: chart.dim() }),
        "sphere2" => Arc::new(SphereKernel::default()),
        "hyperbolic2" => Arc::new(Hyperbolic2Kernel::default()),
        "hyperbolic3" => Arc::new(Hyperbolic3Kernel),
        other => return Err(Error::UnsupportedManifold(other.to_string())),
    })
}

/// Kernel values at (t, x, y) with x and y in global coordinates.
#[derive(Debug, Clone)]
pub struct OracleValues {
    pub t: f64,
    pub distance: f64,
    pub log_p: f64,
    /// ∇ₓ log p as a global tangent vector.
    pub grad_log_p: Vector,
    /// ∇ₓ² log p as a bilinear form on global tangent vectors.
    pub hess_log_p: Matrix,
    pub radial: RadialValues,
    /// |t log((2πt)^{n/2}p) + d²/2|.
    pub vlog: f64,
    /// |t∇log p + ∇(d²/2)|.
    pub vgrad: f64,
    /// Operator norm of t∇²log p + ∇²(d²/2).
    pub vhess: f64,
    pub cut_locus_warning: bool,
}

impl OracleValues {
    pub fn to_json(&self) -> Value {
        let rows: Vec<Vec<f64>> = self.hess_log_p.row_iter().map(|r| r.iter().copied().collect()).collect();
        json!({
            "t": self.t,
            "distance": self.distance,
            "log_p": self.log_p,
            "grad_log_p": self.grad_log_p.as_slice(),
            "hess_log_p": rows,
            "cut_locus_warning": self.cut_locus_warning,
        })
    }

    /// ⟨∇log p, v⟩ for a global tangent vector v.
    pub fn grad_dot(&self, chart: &dyn ManifoldChart, x: &Vector, v: &Vector) -> f64 {
        (v.transpose() * chart.global_metric(x) * &self.grad_log_p)[(0, 0)]
    }

    /// ∇²log p(v, v).
    pub fn hess_vv(&self, v: &Vector) -> f64 {
        (v.transpose() * &self.hess_log_p * v)[(0, 0)]
    }
}

pub fn evaluate(chart: &dyn ManifoldChart, kernel: &dyn RadialKernel, t: f64, x: &Vector, y: &Vector) -> Result<OracleValues> {
    chart.chart_from_global(x)?;
    chart.chart_from_global(y)?;
    let r = chart
        .distance(x, y)
        .ok_or_else(|| Error::UnsupportedManifold(chart.name().to_string()))?;
    let rv = kernel.radial(t, r)?;
    let (a, b) = (rv.grad_ratio, rv.hess_radial);
    let g = chart.global_metric(x);
    let (grad, hess, transverse) = if r < 1e-12 {
        (Vector::zeros(x.len()), &g * (b / t), 1.0)
    } else {
        let unit = chart
            .distance_gradient(x, y)
            .ok_or_else(|| Error::UnsupportedManifold(chart.name().to_string()))?;
        let rct = r_cot(kernel.curvature(), r);
        let nu = &g * &unit;
        let radial = &nu * nu.transpose();
        let hess = (&radial * b + (&g - &radial) * (a * rct)) / t;
        (unit * (a * r / t), hess, rct)
    };
    let vhess = if kernel.dim() >= 2 {
        (b + 1.0).abs().max(((a + 1.0) * transverse).abs())
    } else {
        (b + 1.0).abs()
    };
    Ok(OracleValues {
        t,
        distance: r,
        log_p: rv.log_p,
        grad_log_p: grad,
        hess_log_p: hess,
        radial: rv,
        vlog: rv.varadhan_log.abs(),
        vgrad: ((a + 1.0) * r).abs(),
        vhess,
        cut_locus_warning: kernel.curvature() > 0.0 && r > PI - CUT_LOCUS_MARGIN,
    })
}

/// Oracle values on a catalog manifold.
pub fn oracle_eval(chart: &dyn ManifoldChart, t: f64, x: &Vector, y: &Vector) -> Result<OracleValues> {
    let kernel = oracle_for(chart)?;
    evaluate(chart, kernel.as_ref(), t, x, y)
}

pub fn kernel_euclidean(n: usize, t: f64, x: &Vector, y: &Vector) -> Result<OracleValues> {
    evaluate(&crate::geometry::Euclidean { n }, &EuclideanKernel { n }, t, x, y)
}

pub fn kernel_sphere2(t: f64, x: &Vector, y: &Vector, l_max: Option<usize>) -> Result<OracleValues> {
    evaluate(&crate::geometry::Sphere2, &SphereKernel { l_max }, t, x, y)
}

pub fn kernel_hyperbolic(dim: usize, t: f64, x: &Vector, y: &Vector) -> Result<OracleValues> {
    let chart = crate::geometry::Hyperbolic::new(dim)?;
    let kernel = oracle_for(&chart)?;
    evaluate(&chart, kernel.as_ref(), t, x, y)
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct VaradhanRow {
    pub t: f64,
    pub vlog: f64,
    pub vgrad: f64,
    pub vhess: f64,
    pub warn: bool,
}

pub fn varadhan_report(chart: &dyn ManifoldChart, x: &Vector, y: &Vector, t_grid: &[f64]) -> Result<Vec<VaradhanRow>> {
    let kernel = oracle_for(chart)?;
    t_grid
        .iter()
        .map(|&t| {
            let v = evaluate(chart, kernel.as_ref(), t, x, y)?;
            Ok(VaradhanRow {
                t,
                vlog: v.vlog,
                vgrad: v.vgrad,
                vhess: v.vhess,
                warn: v.cut_locus_warning,
            })
        })
        .collect()
}

/// True when every column decreases strictly down the rows.
pub fn strictly_decreasing(rows: &[VaradhanRow]) -> bool {
    rows.windows(2)
        .all(|w| w[1].vlog < w[0].vlog && w[1].vgrad < w[0].vgrad && w[1].vhess < w[0].vhess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Euclidean, Hyperbolic, Sphere2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_point(theta: f64, phi: f64) -> Vector {
        Vector::from_vec(vec![theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()])
    }

    fn random_pair(chart: &dyn ManifoldChart, rng: &mut ChaCha8Rng) -> (Vector, Vector) {
        match chart.name() {
            "sphere2" => (
                sphere_point(rng.random_range(0.1..3.0), rng.random_range(0.0..6.28)),
                sphere_point(rng.random_range(0.1..3.0), rng.random_range(0.0..6.28)),
            ),
            _ => {
                let n = chart.dim();
                let bound = if chart.name().starts_with("hyperbolic") { 0.5 } else { 2.0 };
                let mut draw = || Vector::from_fn(n, |_, _| rng.random_range(-bound..bound));
                (draw(), draw())
            }
        }
    }

    fn charts() -> Vec<Box<dyn ManifoldChart>> {
        vec![
            Box::new(Euclidean { n: 2 }),
            Box::new(Sphere2),
            Box::new(Hyperbolic::new(2).unwrap()),
            Box::new(Hyperbolic::new(3).unwrap()),
        ]
    }

    #[test]
    fn symmetry_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for chart in charts() {
            for _ in 0..100 {
                let (x, y) = random_pair(chart.as_ref(), &mut rng);
                let a = oracle_eval(chart.as_ref(), 0.3, &x, &y).unwrap().log_p;
                let b = oracle_eval(chart.as_ref(), 0.3, &y, &x).unwrap().log_p;
                assert!((a.exp() - b.exp()).abs() <= 1e-10 * a.exp());
            }
        }
    }

    #[test]
    fn euclidean_is_exact() {
        let x = Vector::from_vec(vec![0.3, -1.0]);
        let y = Vector::from_vec(vec![1.0, 0.5]);
        for &t in &[0.05, 0.5, 3.0] {
            let v = kernel_euclidean(2, t, &x, &y).unwrap();
            let scaled = &v.grad_log_p * t + (&x - &y);
            assert_eq!(scaled.amax(), 0.0);
            let id = &v.hess_log_p * t + Matrix::identity(2, 2);
            assert_eq!(id.amax(), 0.0);
            assert_eq!((v.vlog, v.vgrad, v.vhess), (0.0, 0.0, 0.0));
        }
    }

    /// Directional derivatives along geodesics (sphere) or chart lines with
    /// the Christoffel correction (ball models).
    #[test]
    fn gradient_and_hessian_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for chart in charts() {
            for _ in 0..10 {
                let (x, y) = random_pair(chart.as_ref(), &mut rng);
                let t = 0.4;
                let v = oracle_eval(chart.as_ref(), t, &x, &y).unwrap();
                let (w, curve): (Vector, Box<dyn Fn(f64) -> Vector>) = if chart.name() == "sphere2" {
                    let raw = Vector::from_vec(vec![0.3, -0.5, 0.8]);
                    let w = &raw - &x * x.dot(&raw);
                    let w = &w / w.norm();
                    let (xc, wc) = (x.clone(), w.clone());
                    (w, Box::new(move |e: f64| &xc * e.cos() + &wc * e.sin()))
                } else {
                    let w = Vector::from_fn(x.len(), |i, _| 0.4 + 0.3 * i as f64);
                    let (xc, wc) = (x.clone(), w.clone());
                    (w, Box::new(move |e: f64| &xc + &wc * e))
                };
                let f = |e: f64| oracle_eval(chart.as_ref(), t, &curve(e), &y).unwrap().log_p;
                let h = 1e-4;
                let d1 = (f(h) - f(-h)) / (2.0 * h);
                let an1 = v.grad_dot(chart.as_ref(), &x, &w);
                assert!((d1 - an1).abs() <= 1e-6 * an1.abs().max(1.0), "{}: {d1} vs {an1} at {x} {y}", chart.name());
                let mut d2 = (f(h) - 2.0 * v.log_p + f(-h)) / (h * h);
                if chart.name() != "sphere2" {
                    let accel = chart.christoffel_contract(&x, &w, &w);
                    d2 -= v.grad_dot(chart.as_ref(), &x, &accel);
                }
                let an2 = v.hess_vv(&w);
                assert!((d2 - an2).abs() <= 1e-4 * an2.abs().max(1.0), "{}: {d2} vs {an2} at {x} {y}", chart.name());
            }
        }
    }

    #[test]
    fn varadhan_tables() {
        let eu = Euclidean { n: 3 };
        let rows = varadhan_report(&eu, &Vector::zeros(3), &Vector::from_vec(vec![1.0, 0.0, 0.0]), &[0.4, 0.1]).unwrap();
        assert!(rows.iter().all(|r| r.vlog == 0.0 && r.vgrad == 0.0 && r.vhess == 0.0));

        let grid = [0.4, 0.2, 0.1, 0.05];
        let h3 = Hyperbolic::new(3).unwrap();
        let r0 = (0.5f64).tanh();
        let y = Vector::from_vec(vec![r0, 0.0, 0.0]);
        let rows = varadhan_report(&h3, &Vector::zeros(3), &y, &grid).unwrap();
        assert!(strictly_decreasing(&rows), "{rows:?}");
        assert!(rows[3].vlog < 0.05);

        let rows = varadhan_report(&Sphere2, &sphere_point(0.0, 0.0), &sphere_point(1.0, 0.0), &grid).unwrap();
        assert!(strictly_decreasing(&rows), "{rows:?}");
        assert!(rows.iter().all(|r| !r.warn));
        let far = varadhan_report(&Sphere2, &sphere_point(0.0, 0.0), &sphere_point(3.0, 0.0), &[0.3]).unwrap();
        assert!(far[0].warn);
    }

    #[test]
    fn log_hessian_trend_on_hyperbolic_plane() {
        let h2 = Hyperbolic::new(2).unwrap();
        let at = |d: f64, t: f64| {
            let y = Vector::from_vec(vec![(d / 2.0).tanh(), 0.0]);
            oracle_eval(&h2, t, &Vector::zeros(2), &y).unwrap().vhess
        };
        assert!(at(0.3, 0.1) < at(0.6, 0.4));
    }

    #[test]
    fn unsupported_manifold() {
        let c = crate::geometry::ConformalPlane::new(0.5, 1.0, [0.0, 0.0]).unwrap();
        assert!(matches!(oracle_for(&c), Err(Error::UnsupportedManifold(_))));
    }
}
