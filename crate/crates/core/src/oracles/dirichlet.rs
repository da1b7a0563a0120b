//! Brownian motion on the interval (−a, a) killed at the boundary: image
//! series for the Dirichlet kernel and the exit probability, plus a Monte
//! Carlo exit frequency for cross-checking.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;
use libm::erfc;

use crate::error::{Error, Result};
use crate::rng::{NoiseSource, StreamId};
use crate::stats::{sample_stats, SampleStats};

const MAX_IMAGES: i64 = 100_000;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DirichletValues {
    pub p: f64,
    pub p_dirichlet: f64,
    /// p − p_D summed directly, so it keeps relative accuracy when small.
    pub p_minus_dirichlet: f64,
    pub exit_prob: f64,
}

/// Upper normal tail P(N > z).
fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn gauss(t: f64, z: f64) -> f64 {
    (-z * z / (2.0 * t)).exp() / (2.0 * PI * t).sqrt()
}

fn check(a: f64, t: f64, pts: &[f64]) -> Result<()> {
    if !(a > 0.0) {
        return Err(Error::config("a", "half-width must be positive"));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    if let Some(x) = pts.iter().find(|x| x.abs() >= a) {
        return Err(Error::Domain(format!("point {x} is not inside (-{a}, {a})")));
    }
    Ok(())
}

/// P(τ < t) for the exit time τ of (−a, a) from x, by inclusion–exclusion
/// over alternating boundary hits.
pub fn exit_probability(a: f64, t: f64, x: f64) -> Result<f64> {
    check(a, t, &[x])?;
    let width = 2.0 * a;
    let u = x + a;
    let st = t.sqrt();
    let mut sum = 0.0;
    for k in 0..MAX_IMAGES {
        let kf = k as f64;
        let term = 2.0 * (upper_tail((kf * width + u) / st) + upper_tail(((kf + 1.0) * width - u) / st));
        sum += if k % 2 == 0 { term } else { -term };
        if term <= 1e-16 * sum.abs() || term == 0.0 {
            return Ok(sum.clamp(0.0, 1.0));
        }
    }
    Err(Error::Numeric(format!("exit series did not converge at t={t}")))
}

pub fn dirichlet_surrogate_1d(a: f64, t: f64, x: f64, y: f64) -> Result<DirichletValues> {
    check(a, t, &[x, y])?;
    let width = 2.0 * a;
    let (u, v) = (x + a, y + a);
    let p = gauss(t, x - y);
    // p − p_D = Σₖ g(u+v+2kL) − Σ_{k≠0} g(u−v+2kL).
    let mut diff = gauss(t, u + v);
    let mut converged = false;
    for k in 1..MAX_IMAGES {
        let shift = 2.0 * k as f64 * width;
        let terms = [
            gauss(t, u + v + shift),
            gauss(t, u + v - shift),
            -gauss(t, u - v + shift),
            -gauss(t, u - v - shift),
        ];
        diff += terms.iter().sum::<f64>();
        let size = terms.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if size <= 1e-16 * diff.abs() || size == 0.0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!("image series did not converge at t={t}")));
    }
    Ok(DirichletValues {
        p,
        p_dirichlet: p - diff,
        p_minus_dirichlet: diff,
        exit_prob: exit_probability(a, t, x)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitFrequency {
    pub frequency: f64,
    pub stderr: f64,
    pub paths: usize,
    pub steps: usize,
}

/// Fraction of simulated paths leaving (−a, a) before t. Between grid nodes
/// each boundary is crossed with the Brownian-bridge probability
/// exp(−2·d₀·d₁/Δs), which removes the grid-resolution bias.
pub fn mc_exit_frequency(a: f64, t: f64, x: f64, steps: usize, paths: usize, seed: u64) -> Result<ExitFrequency> {
    check(a, t, &[x])?;
    if steps == 0 {
        return Err(Error::config("steps", "must be positive"));
    }
    let ds = t / steps as f64;
    let hits: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut noise = NoiseSource::new(StreamId::new(seed, i as u64), 1, false);
            let mut pos = x;
            let mut db = [0.0];
            for _ in 0..steps {
                noise.increment(ds, &mut db);
                let next = pos + db[0];
                if next.abs() >= a {
                    return 1.0;
                }
                let up = (-2.0 * (a - pos) * (a - next) / ds).exp();
                let down = (-2.0 * (a + pos) * (a + next) / ds).exp();
                if noise.uniform() >= (1.0 - up) * (1.0 - down) {
                    return 1.0;
                }
                pos = next;
            }
            0.0
        })
        .collect();
    let SampleStats { mean, stderr, .. } = sample_stats(&hits)?;
    Ok(ExitFrequency {
        frequency: mean,
        stderr,
        paths,
        steps,
    })
}
