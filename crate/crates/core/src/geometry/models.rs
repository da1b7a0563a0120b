use nalgebra::{Matrix3, Vector3};

use super::conformal;
use super::{Christoffel, FrameTensors, ManifoldChart, Matrix, Pose, Vector};
use crate::error::{Error, Result};

/// Chart radius beyond which the sphere chart is recentered.
pub const SPHERE_RECENTER_RADIUS: f64 = 1.5;

fn scalar_curvature_exhaustion(d: f64) -> f64 {
    0.5 * (d * d + 1.0).sqrt()
}

/// Flat ℝⁿ.
#[derive(Debug, Clone)]
pub struct Euclidean {
    pub n: usize,
}

impl ManifoldChart for Euclidean {
    fn name(&self) -> &'static str {
        "euclidean"
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn metric(&self, _x: &Vector) -> Matrix {
        Matrix::identity(self.n, self.n)
    }

    fn christoffel(&self, _x: &Vector) -> Christoffel {
        Christoffel::zeros(self.n)
    }

    fn christoffel_contract(&self, _x: &Vector, _a: &Vector, _b: &Vector) -> Vector {
        Vector::zeros(self.n)
    }

    fn riemann(&self, _x: &Vector, _a: &Vector, _b: &Vector, _c: &Vector) -> Vector {
        Vector::zeros(self.n)
    }

    fn ricci(&self, _x: &Vector, _a: &Vector) -> Vector {
        Vector::zeros(self.n)
    }

    fn grad_ricci(&self, _x: &Vector, _a: &Vector, _b: &Vector) -> Vector {
        Vector::zeros(self.n)
    }

    fn grad_riemann(&self, _x: &Vector, _a: &Vector, _b: &Vector, _c: &Vector, _d: &Vector) -> Vector {
        Vector::zeros(self.n)
    }

    fn frame_tensors(&self, _x: &Vector, u: &Matrix) -> FrameTensors {
        conformal::frame_tensors(u, 0.0, None)
    }

    fn exhaustion(&self, p: &Vector) -> f64 {
        scalar_curvature_exhaustion(p.norm())
    }

    fn exhaustion_grad(&self, p: &Vector) -> Vector {
        p / (2.0 * (p.norm_squared() + 1.0).sqrt())
    }

    fn constant_curvature(&self) -> Option<f64> {
        Some(0.0)
    }

    fn distance(&self, p: &Vector, q: &Vector) -> Option<f64> {
        Some((p - q).norm())
    }

    fn distance_gradient(&self, p: &Vector, q: &Vector) -> Option<Vector> {
        let d = p - q;
        let r = d.norm();
        (r > 0.0).then(|| d / r)
    }

    fn grad_half_dist_sq(&self, p: &Vector, q: &Vector) -> Option<Vector> {
        Some(p - q)
    }

    fn hess_half_dist_sq(&self, p: &Vector, _q: &Vector) -> Option<Matrix> {
        Some(Matrix::identity(p.len(), p.len()))
    }
}

/// Unit sphere S² in stereographic charts (projection from the north pole,
/// chart origin at the south pole), recentered by rotations.
#[derive(Debug, Clone, Default)]
pub struct Sphere2;

const SOUTH: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

fn stereo_inverse(x: &Vector) -> Vector3<f64> {
    let r2 = x.norm_squared();
    let w = 1.0 + r2;
    Vector3::new(2.0 * x[0] / w, 2.0 * x[1] / w, (r2 - 1.0) / w)
}

/// Jacobian of the inverse stereographic map, 3×2.
fn stereo_jacobian(x: &Vector) -> nalgebra::Matrix3x2<f64> {
    let w = 1.0 + x.norm_squared();
    let w2 = w * w;
    let mut j = nalgebra::Matrix3x2::zeros();
    for c in 0..2 {
        for r in 0..2 {
            let delta = if r == c { 1.0 } else { 0.0 };
            j[(r, c)] = 2.0 * delta / w - 4.0 * x[r] * x[c] / w2;
        }
        j[(2, c)] = 4.0 * x[c] / w2;
    }
    j
}

fn cross_matrix(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A rotation taking the unit vector `a` to the unit vector `b`.
fn rotation_between(a: &Vector3<f64>, b: &Vector3<f64>) -> Matrix3<f64> {
    let c = a.dot(b);
    if c < -0.5 {
        // Go through −a, which is reachable by a half turn about any axis ⟂ a.
        let axis = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let perp = (axis - a * a.dot(&axis)).normalize();
        let half_turn = perp * perp.transpose() * 2.0 - Matrix3::identity();
        return rotation_between(&-a, b) * half_turn;
    }
    let v = a.cross(b);
    let k = cross_matrix(&v);
    Matrix3::identity() + k + k * k / (1.0 + c)
}

fn pose_rotation(pose: &Pose) -> Matrix3<f64> {
    match pose {
        Pose::Fixed => Matrix3::identity(),
        Pose::Rotated(q) => *q,
    }
}

fn to_vec3(p: &Vector) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

fn from_vec3(p: &Vector3<f64>) -> Vector {
    Vector::from_column_slice(p.as_slice())
}

impl Sphere2 {
    fn grad_phi(x: &Vector) -> Vector {
        x * (-2.0 / (1.0 + x.norm_squared()))
    }

    fn scale(x: &Vector) -> f64 {
        let l = 2.0 / (1.0 + x.norm_squared());
        l * l
    }
}

impl ManifoldChart for Sphere2 {
    fn name(&self) -> &'static str {
        "sphere2"
    }

    fn dim(&self) -> usize {
        2
    }

    fn global_dim(&self) -> usize {
        3
    }

    fn metric(&self, x: &Vector) -> Matrix {
        Matrix::identity(2, 2) * Self::scale(x)
    }

    fn christoffel(&self, x: &Vector) -> Christoffel {
        conformal::christoffel(&Self::grad_phi(x))
    }

    fn christoffel_contract(&self, x: &Vector, a: &Vector, b: &Vector) -> Vector {
        conformal::christoffel_contract(&Self::grad_phi(x), a, b)
    }

    fn riemann(&self, x: &Vector, a: &Vector, b: &Vector, c: &Vector) -> Vector {
        conformal::riemann(Self::scale(x), 1.0, a, b, c)
    }

    fn ricci(&self, _x: &Vector, a: &Vector) -> Vector {
        a.clone()
    }

    fn grad_ricci(&self, _x: &Vector, _a: &Vector, _b: &Vector) -> Vector {
        Vector::zeros(2)
    }

    fn grad_riemann(&self, _x: &Vector, _a: &Vector, _b: &Vector, _c: &Vector, _d: &Vector) -> Vector {
        Vector::zeros(2)
    }

    fn frame_tensors(&self, _x: &Vector, u: &Matrix) -> FrameTensors {
        conformal::frame_tensors(u, 1.0, None)
    }

    fn recenter(&self, x: &Vector, u: &Matrix, pose: &Pose, force: bool) -> Option<(Vector, Matrix, Pose)> {
        if !force && x.norm() <= SPHERE_RECENTER_RADIUS {
            return None;
        }
        let q = pose_rotation(pose);
        let p = (q * stereo_inverse(x)).normalize();
        let ambient = q * stereo_jacobian(x) * nalgebra::Matrix2::from_iterator(u.iter().copied());
        let q_new = rotation_between(&SOUTH, &p);
        let local = q_new.transpose() * ambient;
        // At the chart origin the Jacobian is 2·[I; 0] and the metric is 4·I.
        let u_new = Matrix::from_fn(2, 2, |r, c| local[(r, c)] / 2.0);
        Some((Vector::zeros(2), u_new, Pose::Rotated(q_new)))
    }

    fn to_global(&self, x: &Vector, pose: &Pose) -> Vector {
        from_vec3(&(pose_rotation(pose) * stereo_inverse(x)))
    }

    fn push_vector(&self, x: &Vector, pose: &Pose, v: &Vector) -> Vector {
        let w = pose_rotation(pose) * stereo_jacobian(x) * nalgebra::Vector2::new(v[0], v[1]);
        from_vec3(&w)
    }

    fn chart_from_global(&self, p: &Vector) -> Result<(Vector, Pose)> {
        if p.len() != 3 {
            return Err(Error::config("x", format!("sphere2 points have 3 ambient components, got {}", p.len())));
        }
        let p3 = to_vec3(p);
        if (p3.norm() - 1.0).abs() > 1e-8 {
            return Err(Error::Domain(format!("point {:?} is not on the unit sphere", p.as_slice())));
        }
        Ok((Vector::zeros(2), Pose::Rotated(rotation_between(&SOUTH, &p3.normalize()))))
    }

    fn chart_coords(&self, p: &Vector, pose: &Pose) -> Vector {
        let q = pose_rotation(pose).transpose() * to_vec3(p);
        Vector::from_vec(vec![q.x / (1.0 - q.z), q.y / (1.0 - q.z)])
    }

    fn pull_vector(&self, x: &Vector, pose: &Pose, w: &Vector) -> Vector {
        let j = stereo_jacobian(x);
        let local = j.transpose() * pose_rotation(pose).transpose() * to_vec3(w);
        Vector::from_column_slice(local.as_slice()) / Self::scale(x)
    }

    fn global_metric(&self, p: &Vector) -> Matrix {
        Matrix::identity(3, 3) - p * p.transpose()
    }

    fn origin(&self) -> Vector {
        from_vec3(&SOUTH)
    }

    /// ½√(c²+1) with c the chord distance to the south pole: smooth on all of
    /// S², within ½ of d/2, and with gradient norm at most ½.
    fn exhaustion(&self, p: &Vector) -> f64 {
        let c2 = (to_vec3(p) - SOUTH).norm_squared();
        0.5 * (c2 + 1.0).sqrt()
    }

    fn exhaustion_grad(&self, p: &Vector) -> Vector {
        let p3 = to_vec3(p);
        let c2 = (p3 - SOUTH).norm_squared();
        let tangent = SOUTH - p3 * p3.dot(&SOUTH);
        from_vec3(&(-tangent / (2.0 * (c2 + 1.0).sqrt())))
    }

    fn constant_curvature(&self) -> Option<f64> {
        Some(1.0)
    }

    fn distance(&self, p: &Vector, q: &Vector) -> Option<f64> {
        let (a, b) = (to_vec3(p), to_vec3(q));
        Some(a.cross(&b).norm().atan2(a.dot(&b)))
    }

    fn distance_gradient(&self, p: &Vector, q: &Vector) -> Option<Vector> {
        let (a, b) = (to_vec3(p), to_vec3(q));
        let t = b - a * a.dot(&b);
        let norm = t.norm();
        (norm > 1e-300).then(|| from_vec3(&(-t / norm)))
    }
}

/// Hyperbolic space of dimension 2 or 3 in the Poincaré ball chart.
#[derive(Debug, Clone)]
pub struct Hyperbolic {
    pub n: usize,
}

impl Hyperbolic {
    pub fn new(n: usize) -> Result<Self> {
        if !(2..=3).contains(&n) {
            return Err(Error::config("manifold.params.dim", "hyperbolic models support dim 2 or 3"));
        }
        Ok(Self { n })
    }

    fn grad_phi(x: &Vector) -> Vector {
        x * (2.0 / (1.0 - x.norm_squared()))
    }

    fn scale(x: &Vector) -> f64 {
        let l = 2.0 / (1.0 - x.norm_squared());
        l * l
    }
}

impl ManifoldChart for Hyperbolic {
    fn name(&self) -> &'static str {
        if self.n == 2 {
            "hyperbolic2"
        } else {
            "hyperbolic3"
        }
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn metric(&self, x: &Vector) -> Matrix {
        Matrix::identity(self.n, self.n) * Self::scale(x)
    }

    fn christoffel(&self, x: &Vector) -> Christoffel {
        conformal::christoffel(&Self::grad_phi(x))
    }

    fn christoffel_contract(&self, x: &Vector, a: &Vector, b: &Vector) -> Vector {
        conformal::christoffel_contract(&Self::grad_phi(x), a, b)
    }

    fn riemann(&self, x: &Vector, a: &Vector, b: &Vector, c: &Vector) -> Vector {
        conformal::riemann(Self::scale(x), -1.0, a, b, c)
    }

    fn ricci(&self, _x: &Vector, a: &Vector) -> Vector {
        a * -(self.n as f64 - 1.0)
    }

    fn grad_ricci(&self, _x: &Vector, _a: &Vector, _b: &Vector) -> Vector {
        Vector::zeros(self.n)
    }

    fn grad_riemann(&self, _x: &Vector, _a: &Vector, _b: &Vector, _c: &Vector, _d: &Vector) -> Vector {
        Vector::zeros(self.n)
    }

    fn frame_tensors(&self, _x: &Vector, u: &Matrix) -> FrameTensors {
        conformal::frame_tensors(u, -1.0, None)
    }

    fn in_chart(&self, x: &Vector) -> bool {
        x.norm_squared() < 1.0
    }

    fn global_metric(&self, p: &Vector) -> Matrix {
        self.metric(p)
    }

    fn exhaustion(&self, p: &Vector) -> f64 {
        scalar_curvature_exhaustion(2.0 * p.norm().atanh())
    }

    fn exhaustion_grad(&self, p: &Vector) -> Vector {
        let r = p.norm();
        if r == 0.0 {
            return Vector::zeros(self.n);
        }
        let d = 2.0 * r.atanh();
        p * (d / (2.0 * (d * d + 1.0).sqrt() * d.sinh()))
    }

    fn constant_curvature(&self) -> Option<f64> {
        Some(-1.0)
    }

    fn distance(&self, p: &Vector, q: &Vector) -> Option<f64> {
        let alpha = 1.0 - p.norm_squared();
        let beta = 1.0 - q.norm_squared();
        Some(2.0 * ((p - q).norm() / (alpha * beta).sqrt()).asinh())
    }

    fn distance_gradient(&self, p: &Vector, q: &Vector) -> Option<Vector> {
        let d = self.distance(p, q)?;
        if d == 0.0 {
            return None;
        }
        let alpha = 1.0 - p.norm_squared();
        let beta = 1.0 - q.norm_squared();
        let diff = p - q;
        let a2 = diff.norm_squared();
        Some((diff * alpha + p * a2) / (beta * d.sinh()))
    }
}

/// ℝ² with metric e^{2φ}δ, φ = amplitude·ψ(|x−c|²/ρ²) and
/// ψ(s) = exp(1 − 1/(1−s)) on s < 1, zero beyond.
#[derive(Debug, Clone)]
pub struct ConformalPlane {
    pub amplitude: f64,
    pub radius: f64,
    pub center: [f64; 2],
}

/// ψ and its first three derivatives.
fn bump_profile(s: f64) -> [f64; 4] {
    if s >= 1.0 || 1.0 - s < 1e-3 {
        return [0.0; 4];
    }
    let w = 1.0 / (1.0 - s);
    let psi = (1.0 - w).exp();
    let w2 = w * w;
    let w3 = w2 * w;
    let w4 = w2 * w2;
    [
        psi,
        -w2 * psi,
        psi * (w4 - 2.0 * w3),
        psi * (-w4 * w2 + 6.0 * w4 * w - 6.0 * w4),
    ]
}

/// φ, ∇φ, K, ∇K at one point.
#[derive(Debug, Clone)]
pub struct ConformalJet {
    pub phi: f64,
    pub grad_phi: Vector,
    pub curvature: f64,
    pub grad_curvature: Vector,
}

impl ConformalPlane {
    pub fn new(amplitude: f64, radius: f64, center: [f64; 2]) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::config("manifold.params.radius", "must be positive"));
        }
        if !(amplitude > -0.5) {
            return Err(Error::config("manifold.params.amplitude", "must exceed -0.5"));
        }
        Ok(Self {
            amplitude,
            radius,
            center,
        })
    }

    pub fn jet(&self, x: &Vector) -> ConformalJet {
        let rho2 = self.radius * self.radius;
        let dx = Vector::from_vec(vec![x[0] - self.center[0], x[1] - self.center[1]]);
        let s = dx.norm_squared() / rho2;
        let [p0, p1, p2, p3] = bump_profile(s);
        let a = self.amplitude;
        let ds = &dx * (2.0 / rho2);
        let phi = a * p0;
        let grad_phi = &ds * (a * p1);
        let lap = 4.0 * a / rho2 * (p2 * s + p1);
        let grad_lap = &ds * (4.0 * a / rho2 * (p3 * s + 2.0 * p2));
        let e = (-2.0 * phi).exp();
        ConformalJet {
            phi,
            curvature: -e * lap,
            grad_curvature: (&grad_phi * (2.0 * lap) - grad_lap) * e,
            grad_phi,
        }
    }
}

impl ManifoldChart for ConformalPlane {
    fn name(&self) -> &'static str {
        "conformal_plane"
    }

    fn dim(&self) -> usize {
        2
    }

    fn metric(&self, x: &Vector) -> Matrix {
        Matrix::identity(2, 2) * (2.0 * self.jet(x).phi).exp()
    }

    fn christoffel(&self, x: &Vector) -> Christoffel {
        conformal::christoffel(&self.jet(x).grad_phi)
    }

    fn christoffel_contract(&self, x: &Vector, a: &Vector, b: &Vector) -> Vector {
        conformal::christoffel_contract(&self.jet(x).grad_phi, a, b)
    }

    fn riemann(&self, x: &Vector, a: &Vector, b: &Vector, c: &Vector) -> Vector {
        let j = self.jet(x);
        conformal::riemann((2.0 * j.phi).exp(), j.curvature, a, b, c)
    }

    fn ricci(&self, x: &Vector, a: &Vector) -> Vector {
        a * self.jet(x).curvature
    }

    fn grad_ricci(&self, x: &Vector, a: &Vector, b: &Vector) -> Vector {
        b * self.jet(x).grad_curvature.dot(a)
    }

    fn grad_riemann(&self, x: &Vector, a: &Vector, b: &Vector, c: &Vector, d: &Vector) -> Vector {
        let j = self.jet(x);
        let dk = j.grad_curvature.dot(a);
        conformal::riemann((2.0 * j.phi).exp(), dk, b, c, d)
    }

    fn frame_tensors(&self, x: &Vector, u: &Matrix) -> FrameTensors {
        let j = self.jet(x);
        conformal::frame_tensors(u, j.curvature, Some(&j.grad_curvature))
    }

    fn exhaustion(&self, p: &Vector) -> f64 {
        scalar_curvature_exhaustion(p.norm())
    }

    fn exhaustion_grad(&self, p: &Vector) -> Vector {
        let e = (-2.0 * self.jet(p).phi).exp();
        p * (e / (2.0 * (p.norm_squared() + 1.0).sqrt()))
    }
}
