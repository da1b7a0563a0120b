//! Manifold abstraction and the model catalog.
//!
//! Sign conventions: R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z, so a space of
//! constant curvature κ has R(X,Y)Z = κ(⟨Y,Z⟩X − ⟨X,Z⟩Y) and Ric = (n−1)κ g.
//! Frame-relative operators are matrices acting on ℝⁿ: the curvature operator
//! of a frame U is e ↦ U⁻¹R(Ue₁,Ue₂)Ue, i.e. entry (α,β) = ⟨R(Ue₁,Ue₂)Ue_β, Ue_α⟩.
//!
//! Local geometry (metric, Christoffels, curvature) lives in chart coordinates.
//! Points handed to observables, oracles and the exhaustion function are in
//! global coordinates: ambient ℝ³ for the sphere, chart coordinates elsewhere.

mod catalog;
mod conformal;
mod models;

pub use catalog::{ManifoldKind, ManifoldParams, ManifoldSpec};
pub use models::{ConformalPlane, Euclidean, Hyperbolic, Sphere2};

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Tolerance used when validating frames passed in by callers.
pub const FRAME_TOL: f64 = 1e-8;

/// Connection coefficients, `get(k, i, j)` = Γᵏᵢⱼ.
#[derive(Debug, Clone)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }

    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.data[(k * self.n + i) * self.n + j] = v;
    }

    /// The vector Γ(a,b)ᵏ = Σ Γᵏᵢⱼ aⁱ bʲ.
    pub fn contract(&self, a: &Vector, b: &Vector) -> Vector {
        let n = self.n;
        Vector::from_fn(n, |k, _| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += self.get(k, i, j) * a[i] * b[j];
                }
            }
            s
        })
    }
}

/// Chart placement for manifolds covered by a family of isometric charts.
#[derive(Debug, Clone, PartialEq)]
pub enum Pose {
    Fixed,
    /// Sphere charts: global point = rotation · inverse stereographic(x).
    Rotated(Matrix3<f64>),
}

/// Curvature data at one point expressed in an orthonormal frame.
#[derive(Debug, Clone)]
pub enum FrameTensors {
    /// R = K·(g∧g) with K varying; `dk[a]` = dK(Ueₐ).
    ScalarCurvature { n: usize, k: f64, dk: Vector },
    /// Full tensors in the frame.
    /// `riem[((a*n+b)*n+c)*n+d]` = ⟨R(eₐ,e_b)e_c, e_d⟩,
    /// `grad_riem[(((a*n+b)*n+c)*n+d)*n+e]` = ⟨(∇_{eₐ}R)(e_b,e_c)e_d, e_e⟩,
    /// `grad_ric[(a*n+b)*n+c]` = ⟨(∇_{eₐ}Ric♯)e_b, e_c⟩.
    General {
        n: usize,
        riem: Vec<f64>,
        ric: Matrix,
        grad_riem: Vec<f64>,
        grad_ric: Vec<f64>,
    },
}

impl FrameTensors {
    pub fn dim(&self) -> usize {
        match self {
            FrameTensors::ScalarCurvature { n, .. } | FrameTensors::General { n, .. } => *n,
        }
    }

    /// The antisymmetric matrix R_U(a,b).
    pub fn curvature_op(&self, a: &Vector, b: &Vector) -> Matrix {
        match self {
            FrameTensors::ScalarCurvature { k, .. } => (a * b.transpose() - b * a.transpose()) * *k,
            FrameTensors::General { n, riem, .. } => {
                let n = *n;
                let mut m = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        let w = a[i] * b[j];
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..n {
                            for d in 0..n {
                                m[(d, c)] += w * riem[((i * n + j) * n + c) * n + d];
                            }
                        }
                    }
                }
                m
            }
        }
    }

    /// ric_U(e) = U⁻¹Ric♯(Ue).
    pub fn ric(&self, e: &Vector) -> Vector {
        match self {
            FrameTensors::ScalarCurvature { n, k, .. } => e * ((*n as f64 - 1.0) * k),
            FrameTensors::General { ric, .. } => ric * e,
        }
    }

    /// U⁻¹(∇_{Uh}Ric♯)(Uh).
    pub fn grad_ric(&self, h: &Vector) -> Vector {
        match self {
            FrameTensors::ScalarCurvature { n, dk, .. } => h * ((*n as f64 - 1.0) * dk.dot(h)),
            FrameTensors::General { n, grad_ric, .. } => {
                let n = *n;
                Vector::from_fn(n, |c, _| {
                    let mut s = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            s += h[a] * h[b] * grad_ric[(a * n + b) * n + c];
                        }
                    }
                    s
                })
            }
        }
    }

    /// The matrix U⁻¹(∇_{Uh}R)(Ua, Ub)U.
    pub fn grad_curvature_op(&self, h: &Vector, a: &Vector, b: &Vector) -> Matrix {
        match self {
            FrameTensors::ScalarCurvature { dk, .. } => {
                (a * b.transpose() - b * a.transpose()) * dk.dot(h)
            }
            FrameTensors::General { n, grad_riem, .. } => {
                let n = *n;
                let mut m = Matrix::zeros(n, n);
                for p in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            let w = h[p] * a[i] * b[j];
                            if w == 0.0 {
                                continue;
                            }
                            for c in 0..n {
                                for d in 0..n {
                                    m[(d, c)] +=
                                        w * grad_riem[(((p * n + i) * n + j) * n + c) * n + d];
                                }
                            }
                        }
                    }
                }
                m
            }
        }
    }
}

/// A Riemannian manifold described in coordinates.
pub trait ManifoldChart: Send + Sync {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// Length of global coordinate vectors.
    fn global_dim(&self) -> usize {
        self.dim()
    }

    fn metric(&self, x: &Vector) -> Matrix;

    fn christoffel(&self, x: &Vector) -> Christoffel;

    /// Γ(a,b) contracted; models override this with closed forms.
    fn christoffel_contract(&self, x: &Vector, a: &Vector, b: &Vector) -> Vector {
        self.christoffel(x).contract(a, b)
    }

    /// R(a,b)c in chart coordinates.
    fn riemann(&self, x: &Vector, a: &Vector, b: &Vector, c: &Vector) -> Vector;

    /// Ric♯(a).
    fn ricci(&self, x: &Vector, a: &Vector) -> Vector;

    /// (∇_a Ric♯)(b).
    fn grad_ricci(&self, x: &Vector, a: &Vector, b: &Vector) -> Vector;

    /// (∇_a R)(b,c)d.
    fn grad_riemann(&self, x: &Vector, a: &Vector, b: &Vector, c: &Vector, d: &Vector) -> Vector;

    /// Curvature data in the frame `u` at `x`.
    fn frame_tensors(&self, x: &Vector, u: &Matrix) -> FrameTensors {
        general_frame_tensors(self, x, u)
    }

    /// Whether `x` lies in the chart's coordinate domain.
    fn in_chart(&self, _x: &Vector) -> bool {
        true
    }

    /// Chart change that brings `x` back near the chart origin, if the model
    /// needs one at `x`. Returns the new coordinates, frame and pose.
    fn recenter(&self, _x: &Vector, _u: &Matrix, _pose: &Pose, _force: bool) -> Option<(Vector, Matrix, Pose)> {
        None
    }

    fn to_global(&self, x: &Vector, _pose: &Pose) -> Vector {
        x.clone()
    }

    /// Chart tangent vector at `x` to a global tangent vector.
    fn push_vector(&self, _x: &Vector, _pose: &Pose, v: &Vector) -> Vector {
        v.clone()
    }

    /// Chart coordinates and pose for a global point.
    fn chart_from_global(&self, p: &Vector) -> Result<(Vector, Pose)> {
        check_len("x", p, self.global_dim())?;
        if !self.in_chart(p) {
            return Err(Error::Domain(format!("point {:?} outside the chart", p.as_slice())));
        }
        Ok((p.clone(), Pose::Fixed))
    }

    /// Coordinates of a global point in the chart placed at `pose`.
    fn chart_coords(&self, p: &Vector, _pose: &Pose) -> Vector {
        p.clone()
    }

    /// Global tangent vector to a chart tangent vector at `x`.
    fn pull_vector(&self, _x: &Vector, _pose: &Pose, w: &Vector) -> Vector {
        w.clone()
    }

    /// Bilinear form of the metric on global tangent vectors at `p`.
    fn global_metric(&self, p: &Vector) -> Matrix {
        self.metric(p)
    }

    /// Reference point o of the exhaustion function, in global coordinates.
    fn origin(&self) -> Vector {
        Vector::zeros(self.global_dim())
    }

    /// Smooth exhaustion ĥd at a global point.
    fn exhaustion(&self, p: &Vector) -> f64;

    /// Metric gradient of ĥd as a global tangent vector.
    fn exhaustion_grad(&self, p: &Vector) -> Vector;

    /// Constant sectional curvature, when the model has one.
    fn constant_curvature(&self) -> Option<f64> {
        None
    }

    /// Geodesic distance between global points (model manifolds only).
    fn distance(&self, _p: &Vector, _q: &Vector) -> Option<f64> {
        None
    }

    /// Unit gradient ∇ₚd(p,q) as a global tangent vector, `None` at p = q or
    /// where the model has no closed form.
    fn distance_gradient(&self, _p: &Vector, _q: &Vector) -> Option<Vector> {
        None
    }

    /// ∇ₚ(d²(p,q)/2).
    fn grad_half_dist_sq(&self, p: &Vector, q: &Vector) -> Option<Vector> {
        let r = self.distance(p, q)?;
        if r == 0.0 {
            return Some(Vector::zeros(p.len()));
        }
        Some(self.distance_gradient(p, q)? * r)
    }

    /// ∇ₚ²(d²(p,q)/2) as a bilinear form on global tangent vectors.
    fn hess_half_dist_sq(&self, p: &Vector, q: &Vector) -> Option<Matrix> {
        let kappa = self.constant_curvature()?;
        let r = self.distance(p, q)?;
        let g = self.global_metric(p);
        if r == 0.0 {
            return Some(g);
        }
        let nu = &g * self.distance_gradient(p, q)?;
        let radial = &nu * nu.transpose();
        Some(&radial + (&g - &radial) * r_cot(kappa, r))
    }
}

/// r·ct_κ(r): the transverse eigenvalue of Hess(d²/2) at distance r.
pub fn r_cot(kappa: f64, r: f64) -> f64 {
    let z = kappa * r * r;
    if z.abs() < 1e-4 {
        1.0 - z / 3.0 - z * z / 45.0
    } else if kappa > 0.0 {
        let s = kappa.sqrt() * r;
        s / s.tan()
    } else {
        let s = (-kappa).sqrt() * r;
        s / s.tanh()
    }
}

fn check_len(field: &str, v: &Vector, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::config(field, format!("expected {n} components, got {}", v.len())));
    }
    Ok(())
}

/// ‖UᵀgU − I‖∞.
pub fn frame_deviation(g: &Matrix, u: &Matrix) -> f64 {
    let n = u.ncols();
    let gram = u.transpose() * g * u;
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    dev
}

pub fn check_frame(chart: &dyn ManifoldChart, x: &Vector, u: &Matrix) -> Result<()> {
    let dev = frame_deviation(&chart.metric(x), u);
    if !(dev <= FRAME_TOL) {
        return Err(Error::InvalidFrame { deviation: dev });
    }
    Ok(())
}

/// Modified Gram–Schmidt with respect to the inner product `g`.
pub fn gram_schmidt(g: &Matrix, u: &mut Matrix) {
    let n = u.ncols();
    for j in 0..n {
        for i in 0..j {
            let ci = u.column(i).clone_owned();
            let proj = (ci.transpose() * g * u.column(j))[(0, 0)];
            let mut cj = u.column_mut(j);
            cj.axpy(-proj, &ci, 1.0);
        }
        let cj = u.column(j).clone_owned();
        let norm = (cj.transpose() * g * &cj)[(0, 0)].sqrt();
        u.column_mut(j).scale_mut(1.0 / norm);
    }
}

/// A g-orthonormal frame at `x` obtained from the coordinate basis.
pub fn standard_frame(chart: &dyn ManifoldChart, x: &Vector) -> Matrix {
    let mut u = Matrix::identity(chart.dim(), chart.dim());
    gram_schmidt(&chart.metric(x), &mut u);
    u
}

pub fn frame_curvature_op(chart: &dyn ManifoldChart, x: &Vector, u: &Matrix, e1: &Vector, e2: &Vector) -> Result<Matrix> {
    check_frame(chart, x, u)?;
    Ok(chart.frame_tensors(x, u).curvature_op(e1, e2))
}

pub fn frame_ricci_op(chart: &dyn ManifoldChart, x: &Vector, u: &Matrix, e: &Vector) -> Result<Vector> {
    check_frame(chart, x, u)?;
    Ok(chart.frame_tensors(x, u).ric(e))
}

pub fn grad_ricci_op(chart: &dyn ManifoldChart, x: &Vector, u: &Matrix, e: &Vector) -> Result<Vector> {
    check_frame(chart, x, u)?;
    Ok(chart.frame_tensors(x, u).grad_ric(e))
}

/// Membership in D_m = {ĥd < m} for a global point.
pub fn in_exhaustion_domain(chart: &dyn ManifoldChart, p: &Vector, m: u32) -> bool {
    chart.exhaustion(p) < m as f64
}

/// Frame tensors assembled from the chart-level accessors.
pub fn general_frame_tensors<C: ManifoldChart + ?Sized>(chart: &C, x: &Vector, u: &Matrix) -> FrameTensors {
    let n = chart.dim();
    let g = chart.metric(x);
    let cols: Vec<Vector> = (0..n).map(|i| u.column(i).clone_owned()).collect();
    let inner = |a: &Vector, b: &Vector| (a.transpose() * &g * b)[(0, 0)];
    let mut riem = vec![0.0; n * n * n * n];
    let mut grad_riem = vec![0.0; n * n * n * n * n];
    let mut grad_ric = vec![0.0; n * n * n];
    let mut ric = Matrix::zeros(n, n);
    for a in 0..n {
        let ra = chart.ricci(x, &cols[a]);
        for c in 0..n {
            ric[(c, a)] = inner(&ra, &cols[c]);
        }
        for b in 0..n {
            let grb = chart.grad_ricci(x, &cols[a], &cols[b]);
            for c in 0..n {
                grad_ric[(a * n + b) * n + c] = inner(&grb, &cols[c]);
            }
            for c in 0..n {
                let r = chart.riemann(x, &cols[a], &cols[b], &cols[c]);
                for d in 0..n {
                    riem[((a * n + b) * n + c) * n + d] = inner(&r, &cols[d]);
                }
                for d in 0..n {
                    let gr = chart.grad_riemann(x, &cols[a], &cols[b], &cols[c], &cols[d]);
                    for e in 0..n {
                        grad_riem[(((a * n + b) * n + c) * n + d) * n + e] = inner(&gr, &cols[e]);
                    }
                }
            }
        }
    }
    FrameTensors::General {
        n,
        riem,
        ric,
        grad_riem,
        grad_ric,
    }
}
