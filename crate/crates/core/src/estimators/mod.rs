//! Monte Carlo estimators of ⟨∇P_tf, v⟩ and ∇²P_tf(v,v) with the localized
//! Cameron–Martin direction h(s) = ((t−2s)/t)⁺·l_m(s)·U₀⁻¹v, and of the
//! scaled log-kernel derivatives t⟨∇log p, v⟩ and t∇²log p(v,v) by
//! conditioning at time t/2 on manifolds with an oracle kernel.

pub mod observables;
pub mod probe;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use observables::Observable;
pub use probe::{variation_probe, ProbeConfig, ProbeReport, ProbeH};

use crate::cutoff::{build_cutoff, localized_h};
use crate::error::{Error, Result};
use crate::frame_sde::{simulate_horizontal, FrameState, PathRecord, SimConfig};
use crate::functionals::{accumulate, AccumOptions, WeightAccumulator};
use crate::geometry::{ManifoldChart, Matrix, Vector};
use crate::oracles::{self, RadialKernel};
use crate::rng::StreamId;
use crate::stats::{sample_stats, SampleStats};

/// Paths whose log-ratio falls below this contribute 0.
pub const LOG_RATIO_FLOOR: f64 = -700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub t: f64,
    pub paths: usize,
    pub steps: usize,
    /// Exhaustion level of the cut-off; chosen from the points when absent.
    #[serde(default)]
    pub m: Option<u32>,
    pub seed: u64,
    /// Pair every path with its reflection −B and average the pair.
    #[serde(default)]
    pub antithetic: bool,
    /// Unit normals summed per step, so `steps = K, refine = 2` shares the noise of
    /// `steps = 2K, refine = 1`.
    #[serde(default = "one")]
    pub refine: u32,
}

fn one() -> u32 {
    1
}

impl EstimatorConfig {
    pub fn new(t: f64, paths: usize, steps: usize, seed: u64) -> Self {
        Self {
            t,
            paths,
            steps,
            m: None,
            seed,
            antithetic: false,
            refine: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.paths < 2 {
            return Err(Error::Statistics(format!("need at least 2 paths, got {}", self.paths)));
        }
        if !(self.t > 0.0) {
            return Err(Error::config("t", "must be positive"));
        }
        if self.steps < 1 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        Ok(())
    }
}

/// Start point, direction and (for log derivatives) target point, all in
/// global coordinates. `frame` overrides the chart's default start frame.
#[derive(Debug, Clone)]
pub struct Problem {
    pub x: Vector,
    pub v: Vector,
    pub y: Option<Vector>,
    pub frame: Option<Matrix>,
}

impl Problem {
    pub fn new(x: Vector, v: Vector) -> Self {
        Self { x, v, y: None, frame: None }
    }

    pub fn with_target(mut self, y: Vector) -> Self {
        self.y = Some(y);
        self
    }

    pub fn with_frame(mut self, frame: Matrix) -> Self {
        self.frame = Some(frame);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Grad,
    Hess,
    Loggrad,
    Loghess,
    Girsanov,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateSummary {
    pub quantity: Quantity,
    pub manifold: String,
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub t: f64,
    pub steps: usize,
    pub m: u32,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<f64>,
}

impl EstimateSummary {
    /// |value − oracle| / stderr.
    pub fn z_score(&self) -> Option<f64> {
        self.oracle.map(|o| (self.value - o).abs() / self.stderr)
    }

    pub fn within(&self, k: f64) -> bool {
        self.oracle.is_some_and(|o| (self.value - o).abs() <= k * self.stderr)
    }
}

/// Per-path scalars, for JSONL dumps.
#[derive(Debug, Clone, Serialize)]
pub struct PathSample {
    pub seed: u64,
    pub stream: u64,
    pub f: f64,
    pub int_theta_db: f64,
    pub int_lambda_db: f64,
    pub int_theta_sq: f64,
    pub hessian_weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_ratio: Option<f64>,
    pub sample: f64,
    /// Second sample used by the assembled log-Hessian.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub summary: EstimateSummary,
    pub samples: Vec<PathSample>,
}

/// Smallest m with every point inside D_{m−2}, and m ≥ 2.
pub fn default_m(chart: &dyn ManifoldChart, points: &[&Vector]) -> u32 {
    let top = points.iter().map(|p| chart.exhaustion(p)).fold(0.0, f64::max);
    (top.floor() as u32 + 3).max(2)
}

fn pick_m(chart: &dyn ManifoldChart, cfg: &EstimatorConfig, points: &[&Vector]) -> Result<u32> {
    let m = cfg.m.unwrap_or_else(|| default_m(chart, points));
    if m < 2 {
        return Err(Error::config("m", "must be at least 2"));
    }
    if chart.exhaustion(points[0]) >= m as f64 - 1.0 {
        return Err(Error::config("m", format!("start point lies outside D_{}", m - 1)));
    }
    Ok(m)
}

/// One path with its functionals for h = ((t_h−2s)/t_h)⁺·l_m·w.
fn weighted_path(
    chart: &dyn ManifoldChart,
    start: &FrameState,
    sim: &SimConfig,
    m: u32,
    t_h: f64,
    w: &Vector,
    stream: StreamId,
    opts: AccumOptions,
) -> Result<(PathRecord, WeightAccumulator)> {
    let path = simulate_horizontal(chart, start, sim, stream)?;
    let trace = build_cutoff(chart, &path, m)?;
    let h = localized_h(Arc::new(trace), t_h, w.clone());
    let (acc, _) = accumulate(chart, &path, &h, opts)?;
    Ok((path, acc))
}

struct Setup {
    start: FrameState,
    w: Vector,
    m: u32,
}

fn setup(chart: &dyn ManifoldChart, problem: &Problem, cfg: &EstimatorConfig) -> Result<Setup> {
    cfg.validate()?;
    let mut points = vec![&problem.x];
    if let Some(y) = &problem.y {
        points.push(y);
    }
    let m = pick_m(chart, cfg, &points)?;
    let start = FrameState::at(chart, &problem.x, problem.frame.as_ref())?;
    if problem.v.len() != chart.global_dim() {
        return Err(Error::config("v", format!("expected {} components", chart.global_dim())));
    }
    let w = start.frame_coords(chart, &problem.v);
    Ok(Setup { start, w, m })
}

/// Run `per_path` over all streams (pairing antithetic copies) in parallel.
fn run_paths<F>(cfg: &EstimatorConfig, per_path: F) -> Result<Vec<PathSample>>
where
    F: Fn(StreamId, bool) -> Result<PathSample> + Sync,
{
    (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| {
            let id = StreamId::new(cfg.seed, i);
            let mut s = per_path(id, false)?;
            if cfg.antithetic {
                let r = per_path(id, true)?;
                s.sample = 0.5 * (s.sample + r.sample);
                s.aux = s.aux.zip(r.aux).map(|(a, b)| 0.5 * (a + b));
            }
            Ok(s)
        })
        .collect()
}

fn sim_config(cfg: &EstimatorConfig, horizon: f64, m: u32, antithetic: bool) -> SimConfig {
    let mut sim = SimConfig::new(horizon, cfg.steps).with_track(&[m - 1, m]);
    sim.antithetic = antithetic;
    sim.refine = cfg.refine;
    sim
}

fn summarize(
    quantity: Quantity,
    chart: &dyn ManifoldChart,
    cfg: &EstimatorConfig,
    m: u32,
    stats: SampleStats,
    oracle: Option<f64>,
    samples: Vec<PathSample>,
) -> Estimate {
    Estimate {
        summary: EstimateSummary {
            quantity,
            manifold: chart.name().to_string(),
            value: stats.mean,
            stderr: stats.stderr,
            n_paths: stats.n,
            t: cfg.t,
            steps: cfg.steps,
            m,
            seed: cfg.seed,
            oracle,
        },
        samples,
    }
}

fn stats_of(samples: &[PathSample]) -> Result<SampleStats> {
    let xs: Vec<f64> = samples.iter().map(|s| s.sample).collect();
    sample_stats(&xs)
}

fn base_sample(id: StreamId, f: f64, acc: &WeightAccumulator, sample: f64) -> PathSample {
    PathSample {
        seed: id.seed,
        stream: id.stream,
        f,
        int_theta_db: acc.int_theta_db,
        int_lambda_db: acc.int_lambda_db,
        int_theta_sq: acc.int_theta_sq,
        hessian_weight: acc.hessian_weight(),
        log_ratio: None,
        sample,
        aux: None,
    }
}

/// ⟨∇P_tf(x), v⟩ = −E[f(X_t)∫₀^{t/2}⟨Θ, dB⟩].
pub fn estimate_gradient(chart: &dyn ManifoldChart, problem: &Problem, f: &Observable, cfg: &EstimatorConfig) -> Result<Estimate> {
    f.validate(chart.global_dim())?;
    let Setup { start, w, m } = setup(chart, problem, cfg)?;
    let samples = run_paths(cfg, |id, anti| {
        let sim = sim_config(cfg, cfg.t, m, anti);
        let (path, acc) = weighted_path(chart, &start, &sim, m, cfg.t, &w, id, AccumOptions::first_order())?;
        let fx = f.eval(path.terminal());
        Ok(base_sample(id, fx, &acc, -fx * acc.int_theta_db))
    })?;
    let oracle = f.oracle(chart, &problem.x, &problem.v, cfg.t).map(|o| o.0);
    Ok(summarize(Quantity::Grad, chart, cfg, m, stats_of(&samples)?, oracle, samples))
}

/// ∇²P_tf(x)(v,v) = E[f(X_t)·I(t/2, X, v)].
pub fn estimate_hessian(chart: &dyn ManifoldChart, problem: &Problem, f: &Observable, cfg: &EstimatorConfig) -> Result<Estimate> {
    f.validate(chart.global_dim())?;
    let Setup { start, w, m } = setup(chart, problem, cfg)?;
    let samples = run_paths(cfg, |id, anti| {
        let sim = sim_config(cfg, cfg.t, m, anti);
        let (path, acc) = weighted_path(chart, &start, &sim, m, cfg.t, &w, id, AccumOptions::second_order())?;
        let fx = f.eval(path.terminal());
        Ok(base_sample(id, fx, &acc, fx * acc.hessian_weight()))
    })?;
    let oracle = f.oracle(chart, &problem.x, &problem.v, cfg.t).map(|o| o.1);
    Ok(summarize(Quantity::Hess, chart, cfg, m, stats_of(&samples)?, oracle, samples))
}

struct Conditioning {
    kernel: Arc<dyn RadialKernel>,
    y: Vector,
    log_p_full: f64,
}

fn conditioning(chart: &dyn ManifoldChart, problem: &Problem, cfg: &EstimatorConfig) -> Result<Conditioning> {
    let kernel = oracles::oracle_for(chart)?;
    let y = problem
        .y
        .clone()
        .ok_or_else(|| Error::config("y", "log-kernel estimators need a target point"))?;
    let log_p_full = oracles::evaluate(chart, kernel.as_ref(), cfg.t, &problem.x, &y)?.log_p;
    Ok(Conditioning { kernel, y, log_p_full })
}

impl Conditioning {
    /// log(p(t/2, z, y)/p(t, x, y)).
    fn log_ratio(&self, chart: &dyn ManifoldChart, t: f64, z: &Vector) -> Result<f64> {
        let r = chart
            .distance(z, &self.y)
            .ok_or_else(|| Error::UnsupportedManifold(chart.name().to_string()))?;
        Ok(self.kernel.log_p(t / 2.0, r)? - self.log_p_full)
    }

    fn ratio(log_ratio: f64) -> f64 {
        if log_ratio < LOG_RATIO_FLOOR {
            0.0
        } else {
            log_ratio.exp()
        }
    }
}

/// Path functionals on [0, t/2] and the conditioning ratio.
fn conditioned_path(
    chart: &dyn ManifoldChart,
    setup: &Setup,
    cond: &Conditioning,
    cfg: &EstimatorConfig,
    id: StreamId,
    anti: bool,
    opts: AccumOptions,
) -> Result<(WeightAccumulator, f64, f64)> {
    let sim = sim_config(cfg, cfg.t / 2.0, setup.m, anti);
    let (path, acc) = weighted_path(chart, &setup.start, &sim, setup.m, cfg.t, &setup.w, id, opts)?;
    let lr = cond.log_ratio(chart, cfg.t, path.terminal())?;
    Ok((acc, lr, Conditioning::ratio(lr)))
}

/// t⟨∇ₓlog p(t,x,y), v⟩ = E[∫₀^{t/2}⟨g_m w, dB⟩ · p(t/2, X_{t/2}, y)/p(t,x,y)]
/// where the integrand g_m(s)w = 2l_m w − (t−2s)l_m′w − (t/2)ric(((t−2s)/t)l_m w)
/// equals −tΘ for the localized h.
pub fn estimate_log_gradient(chart: &dyn ManifoldChart, problem: &Problem, cfg: &EstimatorConfig) -> Result<Estimate> {
    let cond = conditioning(chart, problem, cfg)?;
    let st = setup(chart, problem, cfg)?;
    let samples = run_paths(cfg, |id, anti| {
        let (acc, lr, ratio) = conditioned_path(chart, &st, &cond, cfg, id, anti, AccumOptions::first_order())?;
        let mut s = base_sample(id, ratio, &acc, -cfg.t * acc.int_theta_db * ratio);
        s.log_ratio = Some(lr);
        Ok(s)
    })?;
    let oracle = oracles::evaluate(chart, cond.kernel.as_ref(), cfg.t, &problem.x, &cond.y)?;
    let value = cfg.t * oracle.grad_dot(chart, &problem.x, &problem.v);
    Ok(summarize(Quantity::Loggrad, chart, cfg, st.m, stats_of(&samples)?, Some(value), samples))
}

/// t∇²log p(v,v) = t·(E[I·ratio] − (E[−∫⟨Θ,dB⟩·ratio])²), with the standard
/// error from the delta method on the per-path pair.
pub fn estimate_log_hessian(chart: &dyn ManifoldChart, problem: &Problem, cfg: &EstimatorConfig) -> Result<Estimate> {
    let cond = conditioning(chart, problem, cfg)?;
    let st = setup(chart, problem, cfg)?;
    let mut samples = run_paths(cfg, |id, anti| {
        let (acc, lr, ratio) = conditioned_path(chart, &st, &cond, cfg, id, anti, AccumOptions::second_order())?;
        let mut s = base_sample(id, ratio, &acc, acc.hessian_weight() * ratio);
        s.log_ratio = Some(lr);
        s.aux = Some(-acc.int_theta_db * ratio);
        Ok(s)
    })?;
    let second = stats_of(&samples)?;
    let first: Vec<f64> = samples.iter().map(|s| s.aux.unwrap_or(0.0)).collect();
    let first = sample_stats(&first)?;
    let g = first.mean;
    let combined: Vec<f64> = samples
        .iter()
        .map(|s| cfg.t * (s.sample - 2.0 * g * s.aux.unwrap_or(0.0)))
        .collect();
    let spread = sample_stats(&combined)?;
    let value = cfg.t * (second.mean - g * g);
    for (s, c) in samples.iter_mut().zip(&combined) {
        s.sample = *c;
    }
    let oracle = oracles::evaluate(chart, cond.kernel.as_ref(), cfg.t, &problem.x, &cond.y)?;
    let stats = SampleStats {
        mean: value,
        sd: spread.sd,
        stderr: spread.stderr,
        n: spread.n,
    };
    Ok(summarize(
        Quantity::Loghess,
        chart,
        cfg,
        st.m,
        stats,
        Some(cfg.t * oracle.hess_vv(&problem.v)),
        samples,
    ))
}

/// Sample mean of the Girsanov density Mₜᵉ for the localized h.
pub fn girsanov_mean(chart: &dyn ManifoldChart, problem: &Problem, eps: f64, cfg: &EstimatorConfig) -> Result<Estimate> {
    let Setup { start, w, m } = setup(chart, problem, cfg)?;
    let samples = run_paths(cfg, |id, anti| {
        let sim = sim_config(cfg, cfg.t, m, anti);
        let (_, acc) = weighted_path(chart, &start, &sim, m, cfg.t, &w, id, AccumOptions::second_order())?;
        Ok(base_sample(id, 1.0, &acc, acc.girsanov_density(eps)))
    })?;
    Ok(summarize(Quantity::Girsanov, chart, cfg, m, stats_of(&samples)?, Some(1.0), samples))
}
