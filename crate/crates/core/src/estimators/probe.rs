//! Finite-difference probe of the perturbed flow: with common noise, the
//! terminal point X_tᵉ has first derivative U_t h(t) and covariant second
//! derivative U_tΓ_t h(t) at ε = 0.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cutoff::{build_cutoff, localized_h};
use crate::error::{Error, Result};
use crate::frame_sde::{simulate_horizontal, simulate_perturbed, FrameState, PerturbationPlan, SimConfig};
use crate::functionals::{accumulate, AccumOptions, AdmissibleH, LinearH};
use crate::geometry::{ManifoldChart, Vector};
use crate::rng::StreamId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeH {
    /// ((t−2s)/t)⁺·l_m(s)·U₀⁻¹v, which vanishes at t.
    Localized,
    /// (1 − s/(2t))·U₀⁻¹v, nonzero at t.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub t: f64,
    pub steps: usize,
    /// Symmetric around 0 with at least 3 points.
    pub eps_grid: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    pub h: ProbeH,
    #[serde(default)]
    pub m: Option<u32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeRow {
    pub eps: f64,
    pub first_fd: Vec<f64>,
    pub second_fd: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub seed: u64,
    pub stream: u64,
    /// Richardson-extrapolated differences when the grid allows it.
    pub first_fd: Vec<f64>,
    pub second_fd: Vec<f64>,
    /// U_t h(t) and U_tΓ_t h(t).
    pub first_expected: Vec<f64>,
    pub second_expected: Vec<f64>,
    pub first_error: f64,
    pub second_error: f64,
    pub v_norm: f64,
    pub rows: Vec<ProbeRow>,
}

fn positive_steps(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.len() < 3 {
        return Err(Error::config("eps_grid", "needs at least 3 points"));
    }
    let mut pos: Vec<f64> = grid.iter().copied().filter(|e| *e > 0.0).collect();
    pos.sort_by(f64::total_cmp);
    let symmetric = pos.iter().all(|e| grid.iter().any(|g| (g + e).abs() < 1e-15));
    let has_zero = grid.contains(&0.0);
    if pos.is_empty() || !symmetric || !has_zero || grid.len() != 2 * pos.len() + 1 {
        return Err(Error::config("eps_grid", "must be symmetric around 0 and contain 0"));
    }
    Ok(pos)
}

pub fn variation_probe(chart: &dyn ManifoldChart, x: &Vector, v: &Vector, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let eps = positive_steps(&cfg.eps_grid)?;
    let start = FrameState::at(chart, x, None)?;
    let w = start.frame_coords(chart, v);
    let v_chart = &start.u * &w;
    let m = cfg
        .m
        .unwrap_or_else(|| super::default_m(chart, &[x]));
    let sim = SimConfig::new(cfg.t, cfg.steps).with_track(&[m - 1, m]);
    let stream = StreamId::new(cfg.seed, cfg.stream);
    let base = simulate_horizontal(chart, &start, &sim, stream)?;
    let h: Box<dyn AdmissibleH> = match cfg.h {
        ProbeH::Localized => Box::new(localized_h(Arc::new(build_cutoff(chart, &base, m)?), cfg.t, w.clone())),
        ProbeH::Linear => Box::new(LinearH {
            w: w.clone(),
            end: 2.0 * cfg.t,
        }),
    };
    let (_, trace) = accumulate(chart, &base, h.as_ref(), AccumOptions::full())?;
    let trace = trace.expect("recorded");
    let terminal_state = base.states.last().expect("nonempty");
    let h_t = trace.h.last().expect("nonempty").clone();
    let gamma_t = trace.gamma.last().expect("nonempty").clone();
    let first_expected = terminal_state.push_frame(chart, &h_t);
    let second_expected = terminal_state.push_frame(chart, &(&gamma_t * &h_t));
    let plan = PerturbationPlan {
        h: trace.h,
        gamma: trace.gamma,
        gamma2: trace.gamma2,
        phi_step: trace.phi_step,
    };

    let x0 = base.terminal().clone();
    let g = chart.global_metric(&x0);
    let embedded = chart.global_dim() > chart.dim();
    let mut rows = Vec::with_capacity(eps.len());
    for &e in &eps {
        let plus = simulate_perturbed(chart, &base, &plan, &v_chart, e, &sim)?;
        let minus = simulate_perturbed(chart, &base, &plan, &v_chart, -e, &sim)?;
        let (xp, xm) = (plus.terminal(), minus.terminal());
        let first = (xp - xm) / (2.0 * e);
        let raw = (xp - &x0 * 2.0 + xm) / (e * e);
        let second = if embedded {
            // The metric of an embedded model is the tangential projection.
            &g * raw
        } else {
            let (xc, _) = chart.chart_from_global(&x0)?;
            raw + chart.christoffel_contract(&xc, &first, &first)
        };
        rows.push((e, first, second));
    }
    let pick = |i: usize| -> Vector {
        let (e0, ref f0, ref s0) = rows[0];
        let v0 = if i == 0 { f0 } else { s0 };
        match rows.iter().find(|r| (r.0 - 2.0 * e0).abs() < 1e-12 * e0) {
            Some((_, f1, s1)) => {
                let v1 = if i == 0 { f1 } else { s1 };
                (v0 * 4.0 - v1) / 3.0
            }
            None => v0.clone(),
        }
    };
    let first_fd = pick(0);
    let second_fd = pick(1);
    let norm = |a: &Vector| (a.transpose() * &g * a)[(0, 0)].max(0.0).sqrt();
    let v_norm = {
        let gx = chart.global_metric(x);
        (v.transpose() * gx * v)[(0, 0)].sqrt()
    };
    Ok(ProbeReport {
        seed: cfg.seed,
        stream: cfg.stream,
        first_error: norm(&(&first_fd - &first_expected)),
        second_error: norm(&(&second_fd - &second_expected)),
        first_fd: first_fd.iter().copied().collect(),
        second_fd: second_fd.iter().copied().collect(),
        first_expected: first_expected.iter().copied().collect(),
        second_expected: second_expected.iter().copied().collect(),
        v_norm,
        rows: rows
            .into_iter()
            .map(|(eps, f, s)| ProbeRow {
                eps,
                first_fd: f.iter().copied().collect(),
                second_fd: s.iter().copied().collect(),
            })
            .collect(),
    })
}
