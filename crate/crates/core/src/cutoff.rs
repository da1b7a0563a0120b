//! The cut-off process l_m: an adapted [0,1]-valued process that is 1 until
//! the path leaves D_{m−1} (and s ≤ 1) and 0 after it leaves D_m.
//!
//! With the shell function f_m = φ(ĥd − m + 2) and the time change
//! T_m(s) = ∫₀ˢ f_m⁻², the process is l_m(s) = φ(J(s)) where
//! J(s) = ∫₀ˢ φ(T_m − 2)/f_m² du. On the grid, J is the exact integral of the
//! piecewise-linear interpolant of its integrand q, so l_m and
//! l_m′ = φ′(J)·q can also be evaluated between nodes.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::frame_sde::{simulate_horizontal, FrameState, PathRecord, SimConfig};
use crate::functionals::AdmissibleH;
use crate::geometry::{ManifoldChart, Vector};
use crate::quadrature;
use crate::rng::StreamId;
use crate::stats::sample_stats;

fn sigma(u: f64) -> f64 {
    if u > 0.0 {
        (-1.0 / u).exp()
    } else {
        0.0
    }
}

fn sigma_prime(u: f64) -> f64 {
    if u > 0.0 {
        (-1.0 / u).exp() / (u * u)
    } else {
        0.0
    }
}

/// Smooth step: 1 on (−∞,1], 0 on [2,∞), strictly decreasing between.
#[derive(Debug, Clone, Copy, Default)]
pub struct BumpPhi;

impl BumpPhi {
    pub fn eval(r: f64) -> f64 {
        if r <= 1.0 {
            1.0
        } else if r >= 2.0 {
            0.0
        } else {
            let a = sigma(2.0 - r);
            let b = sigma(r - 1.0);
            a / (a + b)
        }
    }

    pub fn deriv(r: f64) -> f64 {
        if r <= 1.0 || r >= 2.0 {
            return 0.0;
        }
        let a = sigma(2.0 - r);
        let b = sigma(r - 1.0);
        let s = a + b;
        (-sigma_prime(2.0 - r) * b - a * sigma_prime(r - 1.0)) / (s * s)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CutoffTrace {
    pub m: u32,
    pub times: Vec<f64>,
    /// f_m at each node; 0 from the exit node of D_m on.
    pub f: Vec<f64>,
    /// T_m at each node; +∞ from the exit node of D_m on.
    pub time_change: Vec<f64>,
    /// J at each node.
    pub inner: Vec<f64>,
    /// Integrand φ(T_m − 2)/f_m² of J at each node.
    pub rate: Vec<f64>,
    pub l: Vec<f64>,
    pub l_prime: Vec<f64>,
    /// Exit nodes of D_{m−1} and D_m.
    pub tau_prev: Option<usize>,
    pub tau_m: Option<usize>,
}

impl CutoffTrace {
    fn zero(m: u32, times: Vec<f64>) -> Self {
        let n = times.len();
        Self {
            m,
            f: vec![0.0; n],
            time_change: vec![f64::INFINITY; n],
            inner: vec![0.0; n],
            rate: vec![0.0; n],
            l: vec![0.0; n],
            l_prime: vec![0.0; n],
            tau_prev: Some(0),
            tau_m: Some(0),
            times,
        }
    }

    fn ds(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    fn exit_limit(&self) -> usize {
        self.tau_m.unwrap_or(self.times.len())
    }

    /// Interval index and offset for time s on the uniform grid.
    fn locate(&self, s: f64) -> Option<(usize, f64)> {
        let last = self.times.len() - 1;
        if s < 0.0 || s > self.times[last] {
            return None;
        }
        let j = ((s / self.ds()).floor() as usize).min(last - 1);
        Some((j, s - self.times[j]))
    }

    fn model(&self, j: usize, u: f64) -> (f64, f64) {
        let dq = self.rate[j + 1] - self.rate[j];
        let q = self.rate[j] + dq * u / self.ds();
        let inner = self.inner[j] + self.rate[j] * u + dq * u * u / (2.0 * self.ds());
        (inner, q)
    }

    /// First offset in interval j where the interpolated inner clock reaches
    /// `level`; the clock is nondecreasing there, so bisection suffices.
    fn crossing(&self, j: usize, level: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, self.ds());
        if self.model(j, lo).0 >= level {
            return lo;
        }
        if self.model(j, hi).0 <= level {
            return hi;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.model(j, mid).0 < level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// l_m(s) between nodes.
    pub fn l_at(&self, s: f64) -> f64 {
        match self.locate(s) {
            None => 0.0,
            Some((j, u)) => {
                if j + 1 > self.exit_limit() || (j + 1 == self.exit_limit() && u >= self.ds()) {
                    return 0.0;
                }
                if u == 0.0 {
                    return self.l[j];
                }
                BumpPhi::eval(self.model(j, u).0)
            }
        }
    }

    /// l_m′(s) between nodes.
    pub fn l_prime_at(&self, s: f64) -> f64 {
        match self.locate(s) {
            None => 0.0,
            Some((j, u)) => {
                if j + 1 > self.exit_limit() {
                    return 0.0;
                }
                if u == 0.0 {
                    return self.l_prime[j];
                }
                let (inner, q) = self.model(j, u);
                BumpPhi::deriv(inner) * q
            }
        }
    }

    /// |l(s_k) − l(0) − ∫₀^{s_k} l′| at every node, integrating the
    /// interpolated derivative adaptively.
    pub fn ftc_residuals(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.times.len());
        let mut integral = 0.0;
        out.push(0.0);
        let limit = self.exit_limit();
        for j in 0..self.times.len() - 1 {
            if j < limit {
                let lo = self.inner[j].min(self.inner[j + 1]);
                let hi = self.inner[j].max(self.inner[j + 1]);
                let active = hi > 1.0 && lo < 2.0 && (self.rate[j] != 0.0 || self.rate[j + 1] != 0.0);
                if active {
                    let f = |u: f64| {
                        let (inner, q) = self.model(j, u);
                        BumpPhi::deriv(inner) * q
                    };
                    let (a, b) = (self.crossing(j, 1.0), self.crossing(j, 2.0));
                    integral += quadrature::adaptive(&f, a, b, 1e-13)?;
                }
            }
            out.push((self.l[j + 1] - self.l[0] - integral).abs());
        }
        Ok(out)
    }

    /// Node counts breaking l ∈ [0,1], l = 1 before τ_{m−1}∧1 and l = 0 from
    /// τ_m on, plus the largest FTC residual.
    pub fn invariants(&self) -> Result<CutoffInvariants> {
        let before = self.tau_prev.unwrap_or(self.times.len());
        let after = self.exit_limit();
        let mut inv = CutoffInvariants::default();
        for (k, (&l, &s)) in self.l.iter().zip(&self.times).enumerate() {
            if !(0.0..=1.0).contains(&l) {
                inv.out_of_range += 1;
            }
            if k < before && s <= 1.0 && l != 1.0 {
                inv.not_one_inside += 1;
            }
            if k >= after && (l != 0.0 || self.l_prime[k] != 0.0) {
                inv.nonzero_outside += 1;
            }
        }
        inv.max_ftc_residual = self.ftc_residuals()?.into_iter().fold(0.0, f64::max);
        Ok(inv)
    }

    /// ∫₀ᵘᵖᵗᵒ |l_m′|ᵏ ds by the trapezoid rule on the grid.
    pub fn derivative_moment(&self, k: i32, upto: f64) -> f64 {
        let ds = self.ds();
        let mut s = 0.0;
        for j in 0..self.times.len() - 1 {
            if self.times[j + 1] > upto + 1e-12 {
                break;
            }
            s += 0.5 * (self.l_prime[j].abs().powi(k) + self.l_prime[j + 1].abs().powi(k)) * ds;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CutoffInvariants {
    pub out_of_range: usize,
    pub not_one_inside: usize,
    pub nonzero_outside: usize,
    pub max_ftc_residual: f64,
}

impl CutoffInvariants {
    pub fn violations(&self, ftc_tol: f64) -> usize {
        self.out_of_range + self.not_one_inside + self.nonzero_outside + usize::from(!(self.max_ftc_residual <= ftc_tol))
    }
}

/// Build the trace from exhaustion levels ĥd(γ(s_k)) on a uniform grid.
pub fn build_cutoff_from_levels(times: &[f64], levels: &[f64], m: u32) -> Result<CutoffTrace> {
    if m < 2 {
        return Err(Error::config("m", "must be at least 2"));
    }
    if times.len() < 2 || times.len() != levels.len() {
        return Err(Error::config("path", "grid and level sequences differ"));
    }
    let m_f = m as f64;
    if levels[0] >= m_f {
        return Ok(CutoffTrace::zero(m, times.to_vec()));
    }
    let n = times.len();
    let ds = times[1] - times[0];
    let tau_prev = levels.iter().position(|&e| e >= m_f - 1.0);
    let tau_m = levels.iter().position(|&e| e >= m_f);
    let limit = tau_m.unwrap_or(n);

    let mut f = vec![0.0; n];
    let mut inv_sq = vec![0.0; n];
    for k in 0..limit {
        f[k] = BumpPhi::eval(levels[k] - m_f + 2.0);
        inv_sq[k] = 1.0 / (f[k] * f[k]);
    }
    // Accumulate T − s and J − s so both equal s exactly while the integrands are 1.
    let mut time_change = vec![f64::INFINITY; n];
    let mut rate = vec![0.0; n];
    let mut inner = vec![0.0; n];
    let mut t_excess = 0.0;
    let mut j_excess = 0.0;
    for k in 0..n {
        if k < limit {
            if k > 0 {
                t_excess += 0.5 * ((inv_sq[k - 1] - 1.0) + (inv_sq[k] - 1.0)) * ds;
            }
            time_change[k] = times[k] + t_excess;
            let gate = BumpPhi::eval(time_change[k] - 2.0);
            // f_m may underflow to 0 just inside the boundary; the gate is 0 there.
            rate[k] = if gate == 0.0 { 0.0 } else { gate * inv_sq[k] };
        }
        if k > 0 {
            j_excess += 0.5 * ((rate[k - 1] - 1.0) + (rate[k] - 1.0)) * ds;
        }
        inner[k] = times[k] + j_excess;
    }
    let mut l = vec![0.0; n];
    let mut l_prime = vec![0.0; n];
    for k in 0..limit {
        l[k] = BumpPhi::eval(inner[k]);
        l_prime[k] = BumpPhi::deriv(inner[k]) * rate[k];
    }
    Ok(CutoffTrace {
        m,
        times: times.to_vec(),
        f,
        time_change,
        inner,
        rate,
        l,
        l_prime,
        tau_prev,
        tau_m,
    })
}

pub fn build_cutoff(chart: &dyn ManifoldChart, path: &PathRecord, m: u32) -> Result<CutoffTrace> {
    let levels: Vec<f64> = path.globals.iter().map(|p| chart.exhaustion(p)).collect();
    build_cutoff_from_levels(&path.times, &levels, m)
}

/// h(s) = ((t−2s)/t)⁺·l_m(s)·w with w = U₀⁻¹v.
#[derive(Debug, Clone)]
pub struct LocalizedH {
    pub trace: Arc<CutoffTrace>,
    pub t: f64,
    pub w: Vector,
}

impl LocalizedH {
    fn ramp(&self, s: f64) -> f64 {
        ((self.t - 2.0 * s) / self.t).max(0.0)
    }

    fn combine(&self, s: f64, l: f64, lp: f64) -> Vector {
        if s >= self.t / 2.0 {
            return Vector::zeros(self.w.len());
        }
        &self.w * (-2.0 / self.t * l + self.ramp(s) * lp)
    }
}

impl AdmissibleH for LocalizedH {
    fn value(&self, s: f64) -> Vector {
        &self.w * (self.ramp(s) * self.trace.l_at(s))
    }

    fn derivative(&self, s: f64) -> Vector {
        self.combine(s, self.trace.l_at(s), self.trace.l_prime_at(s))
    }

    fn support_end(&self) -> f64 {
        let exit = self.trace.tau_m.map_or(f64::INFINITY, |k| self.trace.times[k]);
        (self.t / 2.0).min(exit)
    }

    fn grid_len(&self) -> Option<usize> {
        Some(self.trace.times.len())
    }

    fn node_value(&self, k: usize, s: f64) -> Vector {
        &self.w * (self.ramp(s) * self.trace.l[k])
    }

    fn node_derivative(&self, k: usize, s: f64) -> Vector {
        self.combine(s, self.trace.l[k], self.trace.l_prime[k])
    }
}

pub fn localized_h(trace: Arc<CutoffTrace>, t: f64, w: Vector) -> LocalizedH {
    LocalizedH { trace, t, w }
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub x: Vec<f64>,
    pub k: i32,
    pub mean: f64,
    pub stderr: f64,
    pub paths: usize,
    pub nonfinite: usize,
}

#[derive(Debug, Clone)]
pub struct MomentConfig {
    pub m: u32,
    pub ks: Vec<i32>,
    pub t: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
}

/// Monte Carlo estimates of E[∫₀¹|l_m′|ᵏ ds] from each start point.
pub fn moment_harness(chart: &dyn ManifoldChart, x_grid: &[Vector], cfg: &MomentConfig) -> Result<Vec<MomentRow>> {
    let mut rows = Vec::new();
    let sim = SimConfig::new(cfg.t, cfg.steps).with_track(&[cfg.m - 1, cfg.m]);
    for (ix, x) in x_grid.iter().enumerate() {
        if chart.exhaustion(x) >= cfg.m as f64 - 1.0 {
            return Err(Error::config("x_grid", format!("point {ix} lies outside D_{}", cfg.m - 1)));
        }
        let start = FrameState::at(chart, x, None)?;
        let per_path: Vec<Vec<f64>> = (0..cfg.paths)
            .into_par_iter()
            .map(|i| {
                let stream = StreamId::new(cfg.seed, ((ix as u64) << 40) | i as u64);
                let path = simulate_horizontal(chart, &start, &sim, stream)?;
                let trace = build_cutoff(chart, &path, cfg.m)?;
                Ok(cfg.ks.iter().map(|&k| trace.derivative_moment(k, cfg.t.min(1.0))).collect())
            })
            .collect::<Result<_>>()?;
        for (j, &k) in cfg.ks.iter().enumerate() {
            let vals: Vec<f64> = per_path.iter().map(|v| v[j]).collect();
            let nonfinite = vals.iter().filter(|v| !v.is_finite()).count();
            let st = sample_stats(&vals)?;
            rows.push(MomentRow {
                x: x.iter().copied().collect(),
                k,
                mean: st.mean,
                stderr: st.stderr,
                paths: cfg.paths,
                nonfinite,
            });
        }
    }
    Ok(rows)
}
