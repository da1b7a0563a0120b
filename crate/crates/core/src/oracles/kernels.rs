//! Radial heat kernels of the model spaces under the ½Δ convention.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature;

/// Kernel data at distance r, in forms that stay finite as t ↓ 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialValues {
    pub log_p: f64,
    /// F′ and F″ for F(r) = log p(t, r).
    pub dlog: f64,
    pub d2log: f64,
    /// t·log((2πt)^{n/2}·p) + r²/2.
    pub varadhan_log: f64,
    /// t·F′/r, continued to r = 0 by t·F″(0).
    pub grad_ratio: f64,
    /// t·F″.
    pub hess_radial: f64,
}

impl RadialValues {
    fn assemble(t: f64, r: f64, log_p: f64, dlog: f64, d2log: f64, varadhan_log: f64) -> Self {
        let grad_ratio = if r < 1e-7 { t * d2log } else { t * dlog / r };
        Self {
            log_p,
            dlog,
            d2log,
            varadhan_log,
            grad_ratio,
            hess_radial: t * d2log,
        }
    }
}

/// A heat kernel depending only on the geodesic distance.
pub trait RadialKernel: Send + Sync {
    fn dim(&self) -> usize;

    /// Constant sectional curvature of the model.
    fn curvature(&self) -> f64;

    fn radial(&self, t: f64, r: f64) -> Result<RadialValues>;

    fn log_p(&self, t: f64, r: f64) -> Result<f64> {
        Ok(self.radial(t, r)?.log_p)
    }

    /// Heat-equation residual |∂ₜp − ½Δp|/p at (t, r), with the time
    /// derivative from a fourth-order central difference.
    fn heat_residual(&self, t: f64, r: f64) -> Result<f64> {
        let h = 1e-3 * t;
        let lp = |s: f64| self.radial(s, r).map(|v| v.log_p);
        let dt = (-lp(t + 2.0 * h)? + 8.0 * lp(t + h)? - 8.0 * lp(t - h)? + lp(t - 2.0 * h)?) / (12.0 * h);
        let v = self.radial(t, r)?;
        let n = self.dim() as f64;
        let k = self.curvature();
        // (n−1)·ct_κ(r)·F′, with ct_κ(r)/r → 1/r² handled by the r → 0 limit.
        let transverse = if r < 1e-7 {
            (n - 1.0) * v.d2log
        } else {
            (n - 1.0) * crate::geometry::r_cot(k, r) / r * v.dlog
        };
        let lap = v.d2log + v.dlog * v.dlog + transverse;
        Ok((dt - 0.5 * lap).abs())
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("heat kernel time must be positive, got {t}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct EuclideanKernel {
    pub n: usize,
}

impl RadialKernel for EuclideanKernel {
    fn dim(&self) -> usize {
        self.n
    }

    fn curvature(&self) -> f64 {
        0.0
    }

    fn radial(&self, t: f64, r: f64) -> Result<RadialValues> {
        check_time(t)?;
        let n = self.n as f64;
        Ok(RadialValues {
            log_p: -0.5 * n * (2.0 * PI * t).ln() - r * r / (2.0 * t),
            dlog: -r / t,
            d2log: -1.0 / t,
            varadhan_log: 0.0,
            grad_ratio: -1.0,
            hess_radial: -1.0,
        })
    }
}

/// Smallest time at which the Legendre series is used.
pub const SPHERE_MIN_T: f64 = 0.05;

/// Legendre series on the unit S².
#[derive(Debug, Clone, Copy, Default)]
pub struct SphereKernel {
    /// Fixed truncation; chosen from t and r when absent.
    pub l_max: Option<usize>,
}

impl SphereKernel {
    pub fn truncation(t: f64, r: f64) -> usize {
        let budget = 40.0 + r * r / (2.0 * t) + (2.0 * PI * t).ln().abs();
        let mut l = 1usize;
        loop {
            let lf = l as f64;
            if lf * (lf + 1.0) * t / 2.0 > budget + 5.0 * (lf + 1.0).ln() || l >= 20_000 {
                return l;
            }
            l += 1;
        }
    }

    /// p, ∂ᵣp and ∂ᵣ²p.
    pub fn series(&self, t: f64, r: f64) -> Result<(f64, f64, f64)> {
        check_time(t)?;
        if t < SPHERE_MIN_T {
            return Err(Error::Regime(format!(
                "sphere kernel series needs t >= {SPHERE_MIN_T}, got {t}"
            )));
        }
        let l_max = self.l_max.unwrap_or_else(|| Self::truncation(t, r));
        let z = r.cos();
        let sin = r.sin();
        let (mut p_prev, mut p_cur) = (1.0, z);
        let (mut d_prev, mut d_cur) = (0.0, 1.0);
        let (mut dd_prev, mut dd_cur) = (0.0, 0.0);
        let coeff = |l: usize| {
            let lf = l as f64;
            (2.0 * lf + 1.0) / (4.0 * PI) * (-lf * (lf + 1.0) * t / 2.0).exp()
        };
        let mut s0 = coeff(0);
        let (mut s1, mut s2) = (0.0, 0.0);
        for l in 1..=l_max {
            let c = coeff(l);
            s0 += c * p_cur;
            s1 += c * d_cur;
            s2 += c * dd_cur;
            let lf = l as f64;
            let p_next = ((2.0 * lf + 1.0) * z * p_cur - lf * p_prev) / (lf + 1.0);
            let d_next = d_prev + (2.0 * lf + 1.0) * p_cur;
            let dd_next = dd_prev + (2.0 * lf + 1.0) * d_cur;
            (p_prev, p_cur) = (p_cur, p_next);
            (d_prev, d_cur) = (d_cur, d_next);
            (dd_prev, dd_cur) = (dd_cur, dd_next);
        }
        Ok((s0, -sin * s1, -z * s1 + sin * sin * s2))
    }
}

impl RadialKernel for SphereKernel {
    fn dim(&self) -> usize {
        2
    }

    fn curvature(&self) -> f64 {
        1.0
    }

    fn radial(&self, t: f64, r: f64) -> Result<RadialValues> {
        let (p, dp, ddp) = self.series(t, r)?;
        if !(p > 0.0) {
            return Err(Error::Numeric(format!("sphere kernel series lost positivity at t={t}, r={r}")));
        }
        let dlog = dp / p;
        let d2log = ddp / p - dlog * dlog;
        let log_p = p.ln();
        let varadhan_log = t * (log_p + (2.0 * PI * t).ln()) + r * r / 2.0;
        Ok(RadialValues::assemble(t, r, log_p, dlog, d2log, varadhan_log))
    }
}

/// Closed-form kernel on H³.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hyperbolic3Kernel;

impl RadialKernel for Hyperbolic3Kernel {
    fn dim(&self) -> usize {
        3
    }

    fn curvature(&self) -> f64 {
        -1.0
    }

    fn radial(&self, t: f64, r: f64) -> Result<RadialValues> {
        check_time(t)?;
        // log(r/sinh r), 1/r − coth r and −1/r² + 1/sinh² r with series near 0.
        let (log_ratio, first, second) = if r < 1e-3 {
            let r2 = r * r;
            (-r2 / 6.0 + r2 * r2 / 180.0, -r / 3.0 + r * r2 / 45.0, -1.0 / 3.0 + r2 / 15.0)
        } else {
            let sh = r.sinh();
            ((r / sh).ln(), 1.0 / r - 1.0 / r.tanh(), -1.0 / (r * r) + 1.0 / (sh * sh))
        };
        let log_p = -1.5 * (2.0 * PI * t).ln() + log_ratio - r * r / (2.0 * t) - t / 2.0;
        let dlog = first - r / t;
        let d2log = second - 1.0 / t;
        let grad_ratio = if r < 1e-3 {
            let r2 = r * r;
            -1.0 + t * (-1.0 / 3.0 + r2 / 45.0)
        } else {
            -1.0 + t * first / r
        };
        Ok(RadialValues {
            log_p,
            dlog,
            d2log,
            varadhan_log: t * log_ratio - t * t / 2.0,
            grad_ratio,
            hess_radial: t * d2log,
        })
    }
}

/// s/sinh s and the next two functions of the chain H ↦ H′/sinh, as even
/// power series near 0.
fn sinh_chain(s: f64) -> (f64, f64, f64) {
    const A: [f64; 7] = [
        1.0,
        -1.0 / 6.0,
        7.0 / 360.0,
        -31.0 / 15120.0,
        127.0 / 604800.0,
        -73.0 / 3421440.0,
        1414477.0 / 653837184000.0,
    ];
    const B: [f64; 7] = [
        -1.0 / 3.0,
        2.0 / 15.0,
        -2.0 / 63.0,
        4.0 / 675.0,
        -2.0 / 2079.0,
        2764.0 / 19348875.0,
        -4.0 / 200475.0,
    ];
    const C: [f64; 7] = [
        4.0 / 15.0,
        -6.0 / 35.0,
        13.0 / 210.0,
        -1153.0 / 69300.0,
        187619.0 / 50450400.0,
        -3325549.0 / 4540536000.0,
        121835513.0 / 926269344000.0,
    ];
    if s < 0.2 {
        let s2 = s * s;
        let horner = |c: &[f64; 7]| c.iter().rev().fold(0.0, |acc, &k| acc * s2 + k);
        return (horner(&A), horner(&B), horner(&C));
    }
    let sh = s.sinh();
    let ch = s.cosh();
    let a = s / sh;
    let b = (sh - s * ch) / (sh * sh * sh);
    let c = (-s * sh * sh - 3.0 * ch * sh + 3.0 * s * ch * ch) / sh.powi(5);
    (a, b, c)
}

/// sinh(x)/x.
fn sinhc(x: f64) -> f64 {
    if x < 1e-4 {
        1.0 + x * x / 6.0
    } else {
        x.sinh() / x
    }
}

/// H² kernel from its Abel-type integral representation
/// p(t,r) = √2·e^{−t/8}/(2πt)^{3/2}·∫ᵣ^∞ s·e^{−s²/2t}/√(cosh s − cosh r) ds.
///
/// Writing the integral as B[H₀](r) with B[H](r) = ∫ᵣ^∞ H(s) sinh s/√(cosh s − cosh r) ds
/// and H₀ = (s/sinh s)e^{−s²/2t}, the identity ∂ᵣB[H] = sinh r·B[H′/sinh] gives
/// both r-derivatives as integrals of the same shape.
#[derive(Debug, Clone, Copy)]
pub struct Hyperbolic2Kernel {
    pub tol: f64,
}

impl Default for Hyperbolic2Kernel {
    fn default() -> Self {
        Self { tol: 1e-13 }
    }
}

impl Hyperbolic2Kernel {
    /// B[H₀], B[H₁], B[H₂] scaled by e^{r²/2t}.
    pub fn transforms(&self, t: f64, r: f64) -> Result<[f64; 3]> {
        self.transforms_upto(t, r, 3)
    }

    fn transforms_upto(&self, t: f64, r: f64, count: usize) -> Result<[f64; 3]> {
        check_time(t)?;
        let s_max = t + (t * t + r * r + 120.0 * t).sqrt();
        let u_max = (s_max - r).max(1e-3).sqrt();
        let mut out = [0.0; 3];
        for (i, slot) in out.iter_mut().enumerate().take(count) {
            let f = |u: f64| {
                let u2 = u * u;
                let s = r + u2;
                let (a, b, c) = sinh_chain(s);
                let h = match i {
                    0 => a,
                    1 => b - a * a / t,
                    _ => c - 3.0 * a * b / t + a * a * a / (t * t),
                };
                let decay = (-u2 * (2.0 * r + u2) / (2.0 * t)).exp();
                let root = ((r + u2 / 2.0).sinh() * sinhc(u2 / 2.0)).sqrt();
                // √(cosh s − cosh r) = u·root, cancelled against ds = 2u du.
                if root == 0.0 {
                    return 0.0;
                }
                2.0 * h * decay * s.sinh() / root
            };
            let rough = quadrature::gl16().composite(|u| f(u).abs(), 0.0, u_max, 16);
            *slot = quadrature::adaptive(&f, 0.0, u_max, self.tol * rough.max(1e-300))?;
        }
        Ok(out)
    }
}

impl Hyperbolic2Kernel {
    /// log((2πt)·p) + r²/2t from the scaled B[H₀].
    fn log_reduced(t: f64, b0: f64) -> f64 {
        0.5 * 2f64.ln() - t / 8.0 - 0.5 * (2.0 * PI * t).ln() + b0.ln()
    }
}

impl RadialKernel for Hyperbolic2Kernel {
    fn log_p(&self, t: f64, r: f64) -> Result<f64> {
        let [b0, _, _] = self.transforms_upto(t, r, 1)?;
        if !(b0 > 0.0) {
            return Err(Error::Numeric(format!("hyperbolic2 kernel integral vanished at t={t}, r={r}")));
        }
        Ok(Self::log_reduced(t, b0) - (2.0 * PI * t).ln() - r * r / (2.0 * t))
    }

    fn dim(&self) -> usize {
        2
    }

    fn curvature(&self) -> f64 {
        -1.0
    }

    fn radial(&self, t: f64, r: f64) -> Result<RadialValues> {
        let [b0, b1, b2] = self.transforms(t, r)?;
        if !(b0 > 0.0) {
            return Err(Error::Numeric(format!("hyperbolic2 kernel integral vanished at t={t}, r={r}")));
        }
        let log_reduced = Self::log_reduced(t, b0);
        let log_p = log_reduced - (2.0 * PI * t).ln() - r * r / (2.0 * t);
        let sh = r.sinh();
        let dlog = sh * b1 / b0;
        let d2log = (r.cosh() * b1 + sh * sh * b2) / b0 - dlog * dlog;
        let grad_ratio = if r < 1e-7 { t * b1 / b0 } else { t * dlog / r };
        Ok(RadialValues {
            log_p,
            dlog,
            d2log,
            varadhan_log: t * log_reduced,
            grad_ratio,
            hess_radial: t * d2log,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernels() -> Vec<Box<dyn RadialKernel>> {
        vec![
            Box::new(EuclideanKernel { n: 2 }),
            Box::new(EuclideanKernel { n: 3 }),
            Box::new(SphereKernel::default()),
            Box::new(Hyperbolic3Kernel),
            Box::new(Hyperbolic2Kernel::default()),
        ]
    }

    #[test]
    fn heat_equation_residuals() {
        for k in kernels() {
            for &(t, r) in &[(0.1, 0.3), (0.3, 1.0), (0.5, 2.0), (1.0, 0.0), (0.2, 1.5)] {
                let res = k.heat_residual(t, r).unwrap();
                // Residual of log p, i.e. relative to p.
                assert!(res < 1e-6, "dim {} curv {} t={t} r={r}: {res}", k.dim(), k.curvature());
            }
        }
    }

    #[test]
    fn hyperbolic3_tight_residual() {
        assert!(Hyperbolic3Kernel.heat_residual(0.3, 1.0).unwrap() < 1e-8);
    }

    #[test]
    fn hyperbolic3_origin_limit() {
        let t = 0.4;
        let v = Hyperbolic3Kernel.radial(t, 0.0).unwrap();
        assert!((v.log_p - (-1.5 * (2.0 * PI * t).ln() - t / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn radial_derivatives_match_differences() {
        for k in kernels() {
            for &(t, r) in &[(0.2, 0.7), (0.5, 1.3)] {
                let v = k.radial(t, r).unwrap();
                let h = 1e-4;
                let lp = |x: f64| k.radial(t, x).unwrap().log_p;
                let d1 = (lp(r + h) - lp(r - h)) / (2.0 * h);
                let d2 = (lp(r + h) - 2.0 * v.log_p + lp(r - h)) / (h * h);
                assert!((d1 - v.dlog).abs() <= 1e-6 * v.dlog.abs().max(1.0), "{d1} vs {}", v.dlog);
                assert!((d2 - v.d2log).abs() <= 1e-4 * v.d2log.abs().max(1.0), "{d2} vs {}", v.d2log);
            }
        }
    }

    #[test]
    fn sphere_normalization_and_first_moment() {
        let k = SphereKernel::default();
        let gl = quadrature::GaussLegendre::new(64);
        for &t in &[0.1, 0.5, 1.0] {
            let p = |r: f64| k.series(t, r).unwrap().0;
            let mass = gl.composite(|r| p(r) * 2.0 * PI * r.sin(), 0.0, PI, 8);
            assert!((mass - 1.0).abs() < 1e-10, "t={t}: {mass}");
            let cos = gl.composite(|r| p(r) * r.cos() * 2.0 * PI * r.sin(), 0.0, PI, 8);
            assert!((cos - (-t).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn hyperbolic2_normalization() {
        let k = Hyperbolic2Kernel::default();
        let t = 0.3;
        let p = |r: f64| k.radial(t, r).unwrap().log_p.exp();
        let mass = quadrature::adaptive(&|r| p(r) * 2.0 * PI * r.sinh(), 0.0, 8.0, 1e-13).unwrap();
        assert!((mass - 1.0).abs() < 1e-10, "{mass}");
    }

    #[test]
    fn euclidean_normalization_1d() {
        let k = EuclideanKernel { n: 1 };
        let t = 0.3;
        let mass = quadrature::adaptive(&|y| k.radial(t, y.abs()).unwrap().log_p.exp(), -10.0, 10.0, 1e-14).unwrap();
        assert!((mass - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sphere_regime_error() {
        assert!(matches!(SphereKernel::default().radial(0.01, 1.0), Err(Error::Regime(_))));
    }

    #[test]
    fn small_time_kernel_bound() {
        for k in kernels() {
            for &t in &[0.05, 0.07, 0.1] {
                for &r in &[1.0, 1.5, 2.5] {
                    assert!(k.radial(t, r).unwrap().log_p <= 0.0);
                }
            }
        }
    }

    #[test]
    fn varadhan_log_trends_to_zero() {
        let mut prev = f64::INFINITY;
        for &t in &[0.4, 0.2, 0.1, 0.05] {
            let v = Hyperbolic3Kernel.radial(t, 1.0).unwrap().varadhan_log.abs();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 0.05);
    }
}
