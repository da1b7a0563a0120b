//! Path functionals driven by a Cameron–Martin direction h.
//!
//! Along a path with frames U_s:
//! - Γ(s) = ∫₀ˢ R_U(∘dB, h), midpoint sums;
//! - Θ(s) = h′ + ½ric_U(h);
//! - Λ(s) = Γh′ + ½U⁻¹∇Ric♯(Uh,Uh) − ½Γ ric_U(h) + ½ric_U(Γh), left-point snapshot;
//! - Γ⁽²⁾(s) = ∫U⁻¹∇R(Uh,U∘dB,Uh) − ∫[Γ, R_U(∘dB,h)] + ∫R_U(dh, h) + ∫R_U(∘dB, Γh).
//!
//! Integrals against dB use left-point sums. The Hessian weight is
//! I = (∫⟨Θ,dB⟩)² − ∫⟨Λ,dB⟩ − ∫|Θ|²ds.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::frame_sde::PathRecord;
use crate::geometry::{FrameTensors, ManifoldChart, Matrix, Vector};

/// An adapted ℝⁿ-valued process with absolutely continuous paths.
pub trait AdmissibleH: Sync {
    fn value(&self, s: f64) -> Vector;
    fn derivative(&self, s: f64) -> Vector;
    /// h ≡ 0 from this time on.
    fn support_end(&self) -> f64;
    /// Number of grid nodes the process was built on, if tied to a grid.
    fn grid_len(&self) -> Option<usize> {
        None
    }
    fn node_value(&self, _k: usize, s: f64) -> Vector {
        self.value(s)
    }
    fn node_derivative(&self, _k: usize, s: f64) -> Vector {
        self.derivative(s)
    }
}

/// h(s) = (1 − s/end)⁺·w.
#[derive(Debug, Clone)]
pub struct LinearH {
    pub w: Vector,
    pub end: f64,
}

impl AdmissibleH for LinearH {
    fn value(&self, s: f64) -> Vector {
        &self.w * (1.0 - s / self.end).max(0.0)
    }

    fn derivative(&self, s: f64) -> Vector {
        if s < self.end {
            &self.w * (-1.0 / self.end)
        } else {
            Vector::zeros(self.w.len())
        }
    }

    fn support_end(&self) -> f64 {
        self.end
    }
}

/// h(s) = w on [0, end), zero after.
#[derive(Debug, Clone)]
pub struct ConstantH {
    pub w: Vector,
    pub end: f64,
}

impl AdmissibleH for ConstantH {
    fn value(&self, s: f64) -> Vector {
        if s <= self.end {
            self.w.clone()
        } else {
            Vector::zeros(self.w.len())
        }
    }

    fn derivative(&self, _s: f64) -> Vector {
        Vector::zeros(self.w.len())
    }

    fn support_end(&self) -> f64 {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AccumOptions {
    /// Accumulate Γ, Λ and the Λ integrals.
    pub second_order: bool,
    /// Accumulate Γ⁽²⁾.
    pub gamma2: bool,
    /// Keep node-wise histories.
    pub record: bool,
}

impl AccumOptions {
    pub fn first_order() -> Self {
        Self::default()
    }

    pub fn second_order() -> Self {
        Self {
            second_order: true,
            ..Self::default()
        }
    }

    pub fn full() -> Self {
        Self {
            second_order: true,
            gamma2: true,
            record: true,
        }
    }
}

/// Final values of the path functionals.
#[derive(Debug, Clone, Serialize)]
pub struct WeightAccumulator {
    #[serde(skip)]
    pub gamma: Matrix,
    #[serde(skip)]
    pub gamma2: Matrix,
    #[serde(skip)]
    pub theta: Vector,
    pub int_theta_db: f64,
    pub int_lambda_db: f64,
    pub int_theta_sq: f64,
    pub int_theta_lambda: f64,
    pub int_lambda_sq: f64,
}

impl WeightAccumulator {
    fn new(n: usize) -> Self {
        Self {
            gamma: Matrix::zeros(n, n),
            gamma2: Matrix::zeros(n, n),
            theta: Vector::zeros(n),
            int_theta_db: 0.0,
            int_lambda_db: 0.0,
            int_theta_sq: 0.0,
            int_theta_lambda: 0.0,
            int_lambda_sq: 0.0,
        }
    }

    /// I = (∫⟨Θ,dB⟩)² − ∫⟨Λ,dB⟩ − ∫|Θ|²ds.
    pub fn hessian_weight(&self) -> f64 {
        self.int_theta_db * self.int_theta_db - self.int_lambda_db - self.int_theta_sq
    }

    /// log Mᵉ = −∫⟨εΘ + (ε²/2)Λ, dB⟩ − (ε²/2)∫|Θ + (ε/2)Λ|²ds.
    pub fn girsanov_log(&self, eps: f64) -> f64 {
        let e2 = eps * eps;
        let quad = self.int_theta_sq + eps * self.int_theta_lambda + 0.25 * e2 * self.int_lambda_sq;
        -eps * self.int_theta_db - 0.5 * e2 * self.int_lambda_db - 0.5 * e2 * quad
    }

    pub fn girsanov_density(&self, eps: f64) -> f64 {
        if eps == 0.0 {
            return 1.0;
        }
        self.girsanov_log(eps).exp()
    }
}

/// Node-wise histories of the functionals.
#[derive(Debug, Clone, Default)]
pub struct FunctionalTrace {
    pub h: Vec<Vector>,
    pub gamma: Vec<Matrix>,
    pub gamma2: Vec<Matrix>,
    pub theta: Vec<Vector>,
    pub lambda: Vec<Vector>,
    /// ∫Γh′ds over each step.
    pub phi_step: Vec<Vector>,
}

/// Λ from its four terms at one node.
pub fn lambda_at(t: &FrameTensors, gamma: &Matrix, h: &Vector, dh: &Vector) -> Vector {
    gamma * dh + t.grad_ric(h) * 0.5 - gamma * t.ric(h) * 0.5 + t.ric(&(gamma * h)) * 0.5
}

/// Stratonovich integrand of Γ⁽²⁾ against a Brownian increment.
fn gamma2_integrand(t: &FrameTensors, gamma: &Matrix, h: &Vector, db: &Vector) -> Matrix {
    let r = t.curvature_op(db, h);
    t.grad_curvature_op(h, db, h) - (gamma * &r - &r * gamma) + t.curvature_op(db, &(gamma * h))
}

pub fn accumulate(
    chart: &dyn ManifoldChart,
    path: &PathRecord,
    h: &dyn AdmissibleH,
    opts: AccumOptions,
) -> Result<(WeightAccumulator, Option<FunctionalTrace>)> {
    let nodes = path.times.len();
    if let Some(len) = h.grid_len() {
        if len != nodes {
            return Err(Error::config("h", format!("h built on {len} nodes, path has {nodes}")));
        }
    }
    let n = chart.dim();
    let ds = path.ds();
    let mut acc = WeightAccumulator::new(n);
    let mut trace = opts.record.then(FunctionalTrace::default);
    let support = h.support_end();
    let second = opts.second_order || opts.gamma2;

    let tensors = |k: usize| chart.frame_tensors(&path.states[k].x, &path.states[k].u);
    let mut t_cur = tensors(0);
    let mut h_cur = h.node_value(0, path.times[0]);
    let mut dh_cur = h.node_derivative(0, path.times[0]);
    let mut gamma = Matrix::zeros(n, n);
    let mut gamma2 = Matrix::zeros(n, n);

    for k in 0..path.steps() {
        let s_next = path.times[k + 1];
        let db = &path.db[k];
        let theta = &dh_cur + t_cur.ric(&h_cur) * 0.5;
        acc.int_theta_db += theta.dot(db);
        acc.int_theta_sq += theta.norm_squared() * ds;
        let mut lambda = None;
        if second {
            let l = lambda_at(&t_cur, &gamma, &h_cur, &dh_cur);
            acc.int_lambda_db += l.dot(db);
            acc.int_theta_lambda += theta.dot(&l) * ds;
            acc.int_lambda_sq += l.norm_squared() * ds;
            lambda = Some(l);
        }
        if let Some(tr) = trace.as_mut() {
            tr.h.push(h_cur.clone());
            tr.gamma.push(gamma.clone());
            tr.gamma2.push(gamma2.clone());
            tr.theta.push(theta.clone());
            tr.lambda.push(lambda.clone().unwrap_or_else(|| Vector::zeros(n)));
        }
        acc.theta = theta;

        let beyond = path.times[k] >= support && h_cur.iter().all(|v| *v == 0.0);
        if beyond && trace.is_none() {
            // h vanishes from here on: Θ = Λ = 0 and Γ, Γ⁽²⁾ are frozen.
            break;
        }
        let h_next = h.node_value(k + 1, s_next);
        let dh_next = h.node_derivative(k + 1, s_next);
        if second && !beyond {
            let t_next = tensors(k + 1);
            let r0 = t_cur.curvature_op(db, &h_cur);
            let r1 = t_next.curvature_op(db, &h_next);
            let gamma_next = &gamma + (r0 + r1) * 0.5;
            let step_h = &h_next - &h_cur;
            let phi = (&gamma * &step_h + &gamma_next * &step_h) * 0.5;
            if opts.gamma2 {
                let a0 = gamma2_integrand(&t_cur, &gamma, &h_cur, db);
                let a1 = gamma2_integrand(&t_next, &gamma_next, &h_next, db);
                let dh_term = t_cur.curvature_op(&step_h, &h_cur) + t_next.curvature_op(&step_h, &h_next);
                gamma2 += (a0 + a1 + dh_term) * 0.5;
            }
            if let Some(tr) = trace.as_mut() {
                tr.phi_step.push(phi);
            }
            gamma = gamma_next;
            t_cur = t_next;
        } else {
            if let Some(tr) = trace.as_mut() {
                tr.phi_step.push(Vector::zeros(n));
            }
            if !beyond {
                t_cur = tensors(k + 1);
            }
        }
        h_cur = h_next;
        dh_cur = dh_next;
    }
    if let Some(tr) = trace.as_mut() {
        // Close the histories at the terminal node.
        while tr.h.len() < nodes {
            tr.h.push(h_cur.clone());
            tr.gamma.push(gamma.clone());
            tr.gamma2.push(gamma2.clone());
            let theta = &dh_cur + t_cur.ric(&h_cur) * 0.5;
            tr.lambda.push(if second { lambda_at(&t_cur, &gamma, &h_cur, &dh_cur) } else { Vector::zeros(n) });
            tr.theta.push(theta);
        }
    }
    acc.gamma = gamma;
    acc.gamma2 = gamma2;
    Ok((acc, trace))
}

/// Γ at every node.
pub fn accumulate_gamma(chart: &dyn ManifoldChart, path: &PathRecord, h: &dyn AdmissibleH) -> Result<Vec<Matrix>> {
    let opts = AccumOptions {
        second_order: true,
        gamma2: false,
        record: true,
    };
    Ok(accumulate(chart, path, h, opts)?.1.expect("recorded").gamma)
}

/// Γ⁽²⁾ at every node.
pub fn accumulate_gamma2(chart: &dyn ManifoldChart, path: &PathRecord, h: &dyn AdmissibleH) -> Result<Vec<Matrix>> {
    Ok(accumulate(chart, path, h, AccumOptions::full())?.1.expect("recorded").gamma2)
}

/// Θ/Λ integrals over the whole path.
pub fn accumulate_theta_lambda(chart: &dyn ManifoldChart, path: &PathRecord, h: &dyn AdmissibleH) -> Result<WeightAccumulator> {
    Ok(accumulate(chart, path, h, AccumOptions::second_order())?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame_sde::{simulate_horizontal, FrameState, SimConfig};
    use crate::geometry::{ConformalPlane, Euclidean, Hyperbolic, Sphere2};
    use crate::rng::StreamId;

    fn antisym(m: &Matrix) -> f64 {
        (m + m.transpose()).amax()
    }

    fn run(chart: &dyn ManifoldChart, p: Vec<f64>, t: f64, steps: usize, seed: u64) -> PathRecord {
        let start = FrameState::at(chart, &Vector::from_vec(p), None).unwrap();
        simulate_horizontal(chart, &start, &SimConfig::new(t, steps), StreamId::new(seed, 0)).unwrap()
    }

    #[test]
    fn euclidean_degenerates_exactly() {
        let chart = Euclidean { n: 2 };
        let path = run(&chart, vec![0.0, 0.0], 1.0, 40, 1);
        let h = LinearH {
            w: Vector::from_vec(vec![1.0, -2.0]),
            end: 1.0,
        };
        let (acc, tr) = accumulate(&chart, &path, &h, AccumOptions::full()).unwrap();
        assert_eq!(acc.int_lambda_db, 0.0);
        assert_eq!(acc.gamma2.amax(), 0.0);
        assert_eq!(acc.gamma.amax(), 0.0);
        let tr = tr.unwrap();
        assert!(tr.theta.iter().take(40).all(|t| (t - &h.w * -1.0).amax() < 1e-15));
        assert!((acc.int_theta_sq - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_lambda_reduces_to_gamma_hprime() {
        let path = run(&Sphere2, vec![0.0, 0.6, -0.8], 0.5, 64, 2);
        let h = LinearH {
            w: Vector::from_vec(vec![0.3, 0.7]),
            end: 0.5,
        };
        let tr = accumulate(&Sphere2, &path, &h, AccumOptions::full()).unwrap().1.unwrap();
        for k in 0..64 {
            let dh = h.derivative(path.times[k]);
            assert!((&tr.lambda[k] - &tr.gamma[k] * dh).amax() < 1e-12);
            let expected_theta = &h.derivative(path.times[k]) + &tr.h[k] * 0.5;
            assert!((&tr.theta[k] - expected_theta).amax() < 1e-14);
        }
    }

    #[test]
    fn gamma_and_gamma2_antisymmetric() {
        let charts: Vec<(Box<dyn ManifoldChart>, Vec<f64>)> = vec![
            (Box::new(Sphere2), vec![0.0, 0.0, -1.0]),
            (Box::new(Hyperbolic::new(3).unwrap()), vec![0.1, 0.0, 0.2]),
            (Box::new(ConformalPlane::new(0.5, 1.0, [0.0, 0.0]).unwrap()), vec![0.2, -0.1]),
        ];
        for (chart, p) in charts {
            let n = chart.dim();
            let path = run(chart.as_ref(), p, 0.5, 50, 3);
            let h = LinearH {
                w: Vector::from_fn(n, |i, _| 1.0 + i as f64),
                end: 0.5,
            };
            let tr = accumulate(chart.as_ref(), &path, &h, AccumOptions::full()).unwrap().1.unwrap();
            for (g, g2) in tr.gamma.iter().zip(&tr.gamma2) {
                assert!(antisym(g) <= 1e-10);
                assert!(antisym(g2) <= 1e-10);
            }
            assert!(tr.gamma2.last().unwrap().amax() > 0.0);
        }
    }

    #[test]
    fn zero_h_gives_zero_functionals() {
        let path = run(&Sphere2, vec![0.0, 0.0, -1.0], 0.5, 30, 4);
        let h = ConstantH {
            w: Vector::zeros(2),
            end: 0.5,
        };
        let (acc, _) = accumulate(&Sphere2, &path, &h, AccumOptions::full()).unwrap();
        assert_eq!(acc.gamma.amax(), 0.0);
        assert_eq!(acc.gamma2.amax(), 0.0);
        assert_eq!(acc.hessian_weight(), 0.0);
    }

    #[test]
    fn girsanov_reductions() {
        let chart = Euclidean { n: 1 };
        let path = run(&chart, vec![0.0], 1.0, 20, 5);
        let h = LinearH {
            w: Vector::from_vec(vec![1.0]),
            end: 1.0,
        };
        let acc = accumulate_theta_lambda(&chart, &path, &h).unwrap();
        assert_eq!(acc.girsanov_density(0.0), 1.0);
        let b: f64 = path.db.iter().map(|d| d[0]).sum();
        // Θ = h′ = −1, so M = exp(εB_1 − ε²/2).
        let eps = 0.3;
        assert!((acc.girsanov_density(eps) - (eps * b - eps * eps / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn support_truncates_accumulation() {
        let path = run(&Sphere2, vec![0.0, 0.0, -1.0], 1.0, 40, 6);
        let h = LinearH {
            w: Vector::from_vec(vec![1.0, 0.0]),
            end: 0.5,
        };
        let tr = accumulate(&Sphere2, &path, &h, AccumOptions::full()).unwrap().1.unwrap();
        let (acc, _) = accumulate(&Sphere2, &path, &h, AccumOptions::second_order()).unwrap();
        for k in 21..41 {
            assert_eq!(tr.theta[k].amax(), 0.0);
            assert_eq!(tr.gamma[k], tr.gamma[20]);
        }
        assert_eq!(acc.gamma, tr.gamma[20]);
    }
}
