//! Compensated reductions and sample statistics.

use crate::error::{Error, Result};

/// Kahan–Babuska accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn kahan_sum<'a>(xs: impl IntoIterator<Item = &'a f64>) -> f64 {
    let mut k = KahanSum::default();
    for x in xs {
        k.add(*x);
    }
    k.value()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStats {
    pub mean: f64,
    pub sd: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Two-pass mean and standard deviation with compensated sums.
pub fn sample_stats(xs: &[f64]) -> Result<SampleStats> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::Statistics(format!("need at least 2 samples, got {n}")));
    }
    let mean = kahan_sum(xs) / n as f64;
    let mut sq = KahanSum::default();
    for x in xs {
        let d = x - mean;
        sq.add(d * d);
    }
    let sd = (sq.value() / (n - 1) as f64).sqrt();
    if !mean.is_finite() || !sd.is_finite() {
        return Err(Error::Statistics("non-finite sample".into()));
    }
    Ok(SampleStats {
        mean,
        sd,
        stderr: sd / (n as f64).sqrt(),
        n,
    })
}
