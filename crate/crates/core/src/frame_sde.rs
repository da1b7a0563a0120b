//! Horizontal Brownian motion in the orthonormal frame bundle and the
//! perturbed flow used by the variation identities.
//!
//! In chart coordinates the horizontal SDE reads dx = U∘dB and
//! dUᵃᵢ = −Γᵃ_bc Uᵇᵢ∘dxᶜ. Each step is a Heun predictor–corrector followed by
//! metric Gram–Schmidt. Exit times from D_m are recorded at grid resolution.

use nalgebra::linalg::SVD;

use crate::error::{Error, Result};
use crate::geometry::{check_frame, gram_schmidt, standard_frame, ManifoldChart, Matrix, Pose, Vector};
use crate::rng::{NoiseSource, StreamId};

/// A point together with an orthonormal frame at it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameState {
    pub x: Vector,
    pub u: Matrix,
    pub pose: Pose,
    pub chart_epoch: u32,
}

impl FrameState {
    /// Start state at a global point; the frame comes from the chart's
    /// coordinate basis unless `frame` (global tangent vectors as columns) is given.
    pub fn at(chart: &dyn ManifoldChart, p: &Vector, frame: Option<&Matrix>) -> Result<Self> {
        let (x, pose) = chart.chart_from_global(p)?;
        let u = match frame {
            None => standard_frame(chart, &x),
            Some(f) => {
                let n = chart.dim();
                if f.ncols() != n || f.nrows() != chart.global_dim() {
                    return Err(Error::config("frame", format!("expected {}x{n}", chart.global_dim())));
                }
                let mut u = Matrix::zeros(n, n);
                for i in 0..n {
                    u.set_column(i, &chart.pull_vector(&x, &pose, &f.column(i).clone_owned()));
                }
                check_frame(chart, &x, &u)?;
                u
            }
        };
        Ok(Self { x, u, pose, chart_epoch: 0 })
    }

    pub fn global(&self, chart: &dyn ManifoldChart) -> Vector {
        chart.to_global(&self.x, &self.pose)
    }

    /// U⁻¹v for a global tangent vector v at the state's point.
    pub fn frame_coords(&self, chart: &dyn ManifoldChart, v: &Vector) -> Vector {
        let local = chart.pull_vector(&self.x, &self.pose, v);
        self.u.transpose() * chart.metric(&self.x) * local
    }

    /// Global tangent vector Ue for frame coordinates e.
    pub fn push_frame(&self, chart: &dyn ManifoldChart, e: &Vector) -> Vector {
        chart.push_vector(&self.x, &self.pose, &(&self.u * e))
    }

    /// Rotate the frame: U ↦ U·Q.
    pub fn rotated(&self, q: &Matrix) -> Self {
        Self {
            u: &self.u * q,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitRecord {
    pub m: u32,
    /// First grid node whose point lies outside D_m.
    pub node: Option<usize>,
}

/// A discretized trajectory.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub states: Vec<FrameState>,
    /// Global coordinates of each node.
    pub globals: Vec<Vector>,
    /// Driving increments, one per step.
    pub db: Vec<Vector>,
    pub exit_times: Vec<ExitRecord>,
    pub alive: bool,
    pub stream: StreamId,
}

impl PathRecord {
    pub fn steps(&self) -> usize {
        self.db.len()
    }

    pub fn ds(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn terminal(&self) -> &Vector {
        self.globals.last().expect("nonempty path")
    }

    pub fn exit_node(&self, m: u32) -> Option<usize> {
        self.exit_times.iter().find(|e| e.m == m).and_then(|e| e.node)
    }

    pub fn exit_time(&self, m: u32) -> Option<f64> {
        self.exit_node(m).map(|k| self.times[k])
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub t: f64,
    pub steps: usize,
    /// Unit normals summed per step; see [`NoiseSource`].
    pub refine: u32,
    pub antithetic: bool,
    /// Exhaustion levels m whose exit times are tracked.
    pub track_m: Vec<u32>,
    /// Diagnostic switch; off only to measure frame drift.
    pub reorthonormalize: bool,
    /// Force a chart recentering every this many steps.
    pub recenter_every: Option<usize>,
}

impl SimConfig {
    pub fn new(t: f64, steps: usize) -> Self {
        Self {
            t,
            steps,
            refine: 1,
            antithetic: false,
            track_m: Vec::new(),
            reorthonormalize: true,
            recenter_every: None,
        }
    }

    pub fn with_track(mut self, m: &[u32]) -> Self {
        self.track_m = m.to_vec();
        self
    }

    fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(Error::config("t", "must be positive"));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        let ds = self.t / self.steps as f64;
        (0..=self.steps).map(|k| if k == self.steps { self.t } else { k as f64 * ds }).collect()
    }
}

/// Tangent of the horizontal flow: (U·d, −Γ(Uᵢ, U·d) for each column).
fn horizontal_field(chart: &dyn ManifoldChart, x: &Vector, u: &Matrix, d: &Vector) -> (Vector, Matrix) {
    let dx = u * d;
    let n = u.ncols();
    let mut du = Matrix::zeros(x.len(), n);
    for i in 0..n {
        let col = u.column(i).clone_owned();
        du.set_column(i, &-chart.christoffel_contract(x, &col, &dx));
    }
    (dx, du)
}

/// One Heun step of the horizontal SDE driven by the increment `d`.
pub fn heun_step(chart: &dyn ManifoldChart, x: &Vector, u: &Matrix, d: &Vector) -> (Vector, Matrix) {
    let (dx0, du0) = horizontal_field(chart, x, u, d);
    let xp = x + &dx0;
    let up = u + &du0;
    let (dx1, du1) = horizontal_field(chart, &xp, &up, d);
    (x + (dx0 + dx1) * 0.5, u + (du0 + du1) * 0.5)
}

/// Integrate the horizontal SDE along given increments.
pub fn integrate_increments(
    chart: &dyn ManifoldChart,
    start: &FrameState,
    times: Vec<f64>,
    increments: Vec<Vector>,
    cfg: &SimConfig,
    stream: StreamId,
) -> Result<PathRecord> {
    let mut state = start.clone();
    let mut states = Vec::with_capacity(increments.len() + 1);
    let mut globals = Vec::with_capacity(increments.len() + 1);
    let mut exits: Vec<ExitRecord> = cfg.track_m.iter().map(|&m| ExitRecord { m, node: None }).collect();
    let record_exits = |k: usize, p: &Vector, exits: &mut Vec<ExitRecord>| {
        if exits.is_empty() {
            return;
        }
        let level = chart.exhaustion(p);
        for e in exits.iter_mut() {
            if e.node.is_none() && level >= e.m as f64 {
                e.node = Some(k);
            }
        }
    };
    let g0 = state.global(chart);
    record_exits(0, &g0, &mut exits);
    globals.push(g0);
    states.push(state.clone());
    for (k, d) in increments.iter().enumerate() {
        let (x, mut u) = heun_step(chart, &state.x, &state.u, d);
        if !x.iter().all(|v| v.is_finite()) || !chart.in_chart(&x) {
            return Err(Error::ChartEscape { radius: x.norm() });
        }
        if cfg.reorthonormalize {
            gram_schmidt(&chart.metric(&x), &mut u);
        }
        state.x = x;
        state.u = u;
        let force = cfg.recenter_every.is_some_and(|e| e > 0 && (k + 1) % e == 0);
        if let Some((x, u, pose)) = chart.recenter(&state.x, &state.u, &state.pose, force) {
            state.x = x;
            state.u = u;
            state.pose = pose;
            state.chart_epoch += 1;
        }
        let g = state.global(chart);
        record_exits(k + 1, &g, &mut exits);
        globals.push(g);
        states.push(state.clone());
    }
    Ok(PathRecord {
        times,
        states,
        globals,
        db: increments,
        exit_times: exits,
        alive: true,
        stream,
    })
}

/// Draw the Brownian increments of one path.
pub fn draw_increments(n: usize, cfg: &SimConfig, stream: StreamId) -> Vec<Vector> {
    let ds = cfg.t / cfg.steps as f64;
    let mut noise = NoiseSource::new(stream, cfg.refine, cfg.antithetic);
    let mut buf = vec![0.0; n];
    (0..cfg.steps)
        .map(|_| {
            noise.increment(ds, &mut buf);
            Vector::from_column_slice(&buf)
        })
        .collect()
}

pub fn simulate_horizontal(chart: &dyn ManifoldChart, start: &FrameState, cfg: &SimConfig, stream: StreamId) -> Result<PathRecord> {
    cfg.validate()?;
    check_frame(chart, &start.x, &start.u)?;
    let increments = draw_increments(chart.dim(), cfg, stream);
    integrate_increments(chart, start, cfg.times(), increments, cfg, stream)
}

/// Geodesic ξ(ε) from the state's point with initial velocity `v` (chart
/// vector), carrying the frame by parallel transport. RK4 in the chart.
pub fn geodesic_transport(chart: &dyn ManifoldChart, start: &FrameState, v: &Vector, eps: f64) -> FrameState {
    if eps == 0.0 {
        return start.clone();
    }
    let substeps = 256;
    let h = eps.abs() / substeps as f64;
    let n = chart.dim();
    let sign = eps.signum();
    // state: x, velocity, frame columns
    let rhs = |x: &Vector, vel: &Vector, u: &Matrix| -> (Vector, Vector, Matrix) {
        let acc = -chart.christoffel_contract(x, vel, vel);
        let mut du = Matrix::zeros(n, n);
        for i in 0..n {
            du.set_column(i, &-chart.christoffel_contract(x, &u.column(i).clone_owned(), vel));
        }
        (vel.clone(), acc, du)
    };
    let mut x = start.x.clone();
    let mut vel = v * sign;
    let mut u = start.u.clone();
    for _ in 0..substeps {
        let (k1x, k1v, k1u) = rhs(&x, &vel, &u);
        let (k2x, k2v, k2u) = rhs(&(&x + &k1x * (h / 2.0)), &(&vel + &k1v * (h / 2.0)), &(&u + &k1u * (h / 2.0)));
        let (k3x, k3v, k3u) = rhs(&(&x + &k2x * (h / 2.0)), &(&vel + &k2v * (h / 2.0)), &(&u + &k2u * (h / 2.0)));
        let (k4x, k4v, k4u) = rhs(&(&x + &k3x * h), &(&vel + &k3v * h), &(&u + &k3u * h));
        x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        vel += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        u += (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (h / 6.0);
    }
    gram_schmidt(&chart.metric(&x), &mut u);
    FrameState {
        x,
        u,
        pose: start.pose.clone(),
        chart_epoch: start.chart_epoch,
    }
}

/// Per-node data of the ε = 0 baseline that drives the perturbed flow.
#[derive(Debug, Clone)]
pub struct PerturbationPlan {
    /// h at each node, frame coordinates.
    pub h: Vec<Vector>,
    /// Γ at each node.
    pub gamma: Vec<Matrix>,
    /// Γ⁽²⁾ at each node.
    pub gamma2: Vec<Matrix>,
    /// Φ = Γh′ integrated over each step.
    pub phi_step: Vec<Vector>,
}

/// Matrix exponential of an antisymmetric matrix, projected back to SO(n).
fn rotation_exp(a: &Matrix) -> Matrix {
    let e = a.clone().exp();
    let svd = SVD::new(e, true, true);
    svd.u.unwrap() * svd.v_t.unwrap()
}

/// Integrate dUᵉ = H(Uᵉ)∘(Gᵉ∘dBᵉ) with Bᵉ = B + ε∫h′ + (ε²/2)∫Φ and
/// Gᵉ = exp(−εΓ − (ε²/2)Γ⁽²⁾), from the frame ξ(ε) parallel along the
/// geodesic with initial velocity `v_chart`.
pub fn simulate_perturbed(
    chart: &dyn ManifoldChart,
    base: &PathRecord,
    plan: &PerturbationPlan,
    v_chart: &Vector,
    eps: f64,
    cfg: &SimConfig,
) -> Result<PathRecord> {
    if !(eps.abs() < 1.0) {
        return Err(Error::config("epsilon", "must lie in (-1, 1)"));
    }
    let k_steps = base.steps();
    if plan.h.len() != k_steps + 1 || plan.gamma.len() != k_steps + 1 || plan.phi_step.len() != k_steps {
        return Err(Error::config("h_path", "plan and path grids differ"));
    }
    let start = geodesic_transport(chart, &base.states[0], v_chart, eps);
    if eps == 0.0 {
        return integrate_increments(chart, &start, base.times.clone(), base.db.clone(), cfg, base.stream);
    }
    let g: Vec<Matrix> = plan
        .gamma
        .iter()
        .zip(&plan.gamma2)
        .map(|(g1, g2)| rotation_exp(&(g1 * -eps - g2 * (eps * eps / 2.0))))
        .collect();
    let increments: Vec<Vector> = (0..k_steps)
        .map(|k| {
            let db_eps = &base.db[k] + (&plan.h[k + 1] - &plan.h[k]) * eps + &plan.phi_step[k] * (eps * eps / 2.0);
            (&g[k] + &g[k + 1]) * 0.5 * db_eps
        })
        .collect();
    integrate_increments(chart, &start, base.times.clone(), increments, cfg, base.stream)
}
