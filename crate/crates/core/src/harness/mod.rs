//! Configuration-driven experiment runner. Every experiment is computed in
//! full before anything is written, so a rejected config leaves no artifacts.
//! Data files are deterministic; wall time and timestamps go only to
//! `metadata.json`.

pub mod artifacts;
pub mod config;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

pub use artifacts::{content_hash, num, CsvTable, Provenance};
pub use config::{CheckSpec, ExperimentConfig, ExperimentKind, StudyAxis, StudySpec};

use crate::cutoff::{build_cutoff, moment_harness, CutoffInvariants, MomentConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    default_m, estimate_gradient, estimate_hessian, estimate_log_gradient, estimate_log_hessian, girsanov_mean,
    variation_probe, Estimate, ProbeConfig, ProbeH, Problem,
};
use crate::frame_sde::{simulate_horizontal, FrameState, SimConfig};
use crate::geometry::{ManifoldChart, Vector};
use crate::oracles::{dirichlet_surrogate_1d, mc_exit_frequency, strictly_decreasing, varadhan_report};
use crate::rng::StreamId;

/// Default FTC tolerance of the cut-off diagnostics.
pub const FTC_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// An in-memory CSV table; `stream` is the per-row stream label.
#[derive(Debug, Clone)]
pub struct Table {
    pub file: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<(Vec<String>, String)>,
}

impl Table {
    fn new(file: &'static str, header: &[&'static str]) -> Self {
        Self {
            file,
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, fields: Vec<String>, stream: impl Into<String>) {
        self.rows.push((fields, stream.into()));
    }

    /// The table as CSV text with provenance columns.
    pub fn to_csv(&self, prov: &Provenance) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut cols = self.header.clone();
        cols.extend(["seed", "stream", "config_hash"]);
        w.write_record(&cols)?;
        for (fields, stream) in &self.rows {
            let mut rec = fields.clone();
            rec.extend([prov.seed.to_string(), stream.clone(), prov.config_hash.clone()]);
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    fn write(&self, dir: &Path, prov: &Provenance) -> Result<PathBuf> {
        let mut t = CsvTable::create(&dir.join(self.file), &self.header, prov)?;
        for (fields, stream) in &self.rows {
            t.row(fields, stream)?;
        }
        t.finish()
    }
}

/// Everything an experiment produced, before it is written.
#[derive(Debug, Clone, Default)]
pub struct Computed {
    pub summary: Value,
    pub tables: Vec<Table>,
    /// File name and rows of a per-path dump.
    pub jsonl: Option<(&'static str, Vec<Value>)>,
    pub checks: Vec<CheckResult>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub computed: Computed,
    pub artifacts: Vec<PathBuf>,
    pub wall_time_s: f64,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.computed.checks.iter().all(|c| c.passed)
    }

    /// 0 when every acceptance check passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn table(&self, file: &str) -> Option<&Table> {
        self.computed.tables.iter().find(|t| t.file == file)
    }
}

/// Hash of the canonical JSON form of the config, ignoring settings that do
/// not change results (output directory and worker count).
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.out = None;
    c.workers = None;
    Ok(content_hash(&serde_json::to_vec(&c)?))
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => f(),
        Some(0) => Err(Error::config("workers", "must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))?
            .install(f),
    }
}

fn context(kind: ExperimentKind, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("{kind:?} experiment: {msg}")),
        other => other,
    }
}

/// Run one experiment and, when `out` is set, write its artifacts.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let hash = config_hash(cfg)?;
    let prov = Provenance {
        seed: cfg.seed,
        config_hash: hash.clone(),
    };
    let clock = Instant::now();
    let computed = with_workers(cfg.workers, || match &cfg.study {
        Some(spec) => convergence_study(cfg, spec),
        None => compute(cfg),
    })
    .map_err(|e| context(cfg.kind, e))?;
    let wall_time_s = clock.elapsed().as_secs_f64();
    let mut artifacts = Vec::new();
    if let Some(dir) = &cfg.out {
        artifacts = write_artifacts(dir, cfg, &prov, &computed, wall_time_s)?;
    }
    Ok(RunOutcome {
        kind: cfg.kind,
        config_hash: hash,
        computed,
        artifacts,
        wall_time_s,
    })
}

fn write_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    prov: &Provenance,
    computed: &Computed,
    wall_time_s: f64,
) -> Result<Vec<PathBuf>> {
    artifacts::ensure_dir(dir)?;
    let mut written = Vec::new();
    for t in &computed.tables {
        written.push(t.write(dir, prov)?);
    }
    if let Some((name, rows)) = &computed.jsonl {
        written.push(artifacts::write_jsonl(&dir.join(name), rows, &prov.config_hash)?);
    }
    let mut summary = computed.summary.clone();
    if let Value::Object(map) = &mut summary {
        map.insert("seed".into(), json!(prov.seed));
        map.insert("config_hash".into(), json!(prov.config_hash));
    }
    written.push(artifacts::write_json(&dir.join("summary.json"), &summary)?);
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0) - wall_time_s;
    let names: Vec<String> = written
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let meta = json!({
        "config": cfg,
        "config_hash": prov.config_hash,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix_s": started,
        "wall_time_s": wall_time_s,
        "artifacts": names,
        "checks": computed.checks,
        "passed": computed.checks.iter().all(|c| c.passed),
    });
    written.push(artifacts::write_json(&dir.join("metadata.json"), &meta)?);
    Ok(written)
}

/// Compute one experiment without writing anything.
pub fn compute(cfg: &ExperimentConfig) -> Result<Computed> {
    let chart = cfg.manifold.build()?;
    let chart = chart.as_ref();
    match cfg.kind {
        ExperimentKind::Simulate => simulate_paths(chart, cfg),
        ExperimentKind::Varadhan => varadhan(chart, cfg),
        ExperimentKind::CutoffDiag => cutoff_diag(chart, cfg),
        ExperimentKind::VariationProbe => probe(chart, cfg),
        ExperimentKind::ExitSurrogate => exit_surrogate(cfg),
        _ => {
            let est = estimate(chart, cfg)?;
            Ok(estimate_output(cfg, &est))
        }
    }
}

/// Run the estimator named by `cfg.kind`.
pub fn estimate(chart: &dyn ManifoldChart, cfg: &ExperimentConfig) -> Result<Estimate> {
    let ec = cfg.estimator()?;
    let x = cfg.point("x")?;
    let v = cfg.point("v")?;
    let problem = Problem::new(x, v);
    let observable = || cfg.observable.clone().ok_or_else(|| Error::config("observable", "required for this experiment"));
    match cfg.kind {
        ExperimentKind::Grad => estimate_gradient(chart, &problem, &observable()?, &ec),
        ExperimentKind::Hess => estimate_hessian(chart, &problem, &observable()?, &ec),
        ExperimentKind::Loggrad => estimate_log_gradient(chart, &problem.with_target(cfg.point("y")?), &ec),
        ExperimentKind::Loghess => estimate_log_hessian(chart, &problem.with_target(cfg.point("y")?), &ec),
        ExperimentKind::Girsanov => {
            girsanov_mean(chart, &problem, ExperimentConfig::require(cfg.epsilon, "epsilon")?, &ec)
        }
        other => Err(Error::config("kind", format!("{other:?} is not an estimator"))),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn estimate_output(cfg: &ExperimentConfig, est: &Estimate) -> Computed {
    let s = &est.summary;
    let streams = Provenance::streams(est.samples.len());
    let mut table = Table::new(
        "results.csv",
        &["quantity", "manifold", "value", "stderr", "n_paths", "t", "steps", "m", "oracle"],
    );
    let quantity = serde_json::to_value(s.quantity).ok().and_then(|q| q.as_str().map(String::from)).unwrap_or_default();
    table.push(
        vec![
            quantity,
            s.manifold.clone(),
            num(s.value),
            num(s.stderr),
            s.n_paths.to_string(),
            num(s.t),
            s.steps.to_string(),
            s.m.to_string(),
            opt(s.oracle),
        ],
        streams,
    );
    let mut checks = Vec::new();
    if let Some(z) = cfg.check.z_max {
        let detail = match s.z_score() {
            Some(score) => format!("|value − oracle| = {:.3}·stderr (limit {z})", score),
            None => "no oracle for this problem".into(),
        };
        checks.push(CheckResult::new("oracle_z", s.within(z), detail));
    }
    if let Some(limit) = cfg.check.max_stderr {
        checks.push(CheckResult::new(
            "stderr",
            s.stderr <= limit,
            format!("stderr {:.3e} (limit {limit:e})", s.stderr),
        ));
    }
    let jsonl = cfg.dump_paths.then(|| {
        let rows = est.samples.iter().map(|p| serde_json::to_value(p).unwrap_or(Value::Null)).collect();
        ("paths.jsonl", rows)
    });
    Computed {
        summary: serde_json::to_value(s).unwrap_or(Value::Null),
        tables: vec![table],
        jsonl,
        checks,
    }
}

fn simulate_paths(chart: &dyn ManifoldChart, cfg: &ExperimentConfig) -> Result<Computed> {
    let x = cfg.point("x")?;
    let t = ExperimentConfig::require(cfg.t, "t")?;
    let steps = ExperimentConfig::require(cfg.steps, "steps")?;
    let paths = cfg.paths.unwrap_or(1);
    let m = cfg.m.unwrap_or_else(|| default_m(chart, &[&x]));
    let mut sim = SimConfig::new(t, steps).with_track(&[m - 1, m]);
    sim.refine = cfg.refine.unwrap_or(1);
    sim.antithetic = cfg.antithetic;
    let start = FrameState::at(chart, &x, None)?;
    let rows: Vec<Value> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let path = simulate_horizontal(chart, &start, &sim, StreamId::new(cfg.seed, i as u64))?;
            let points: Vec<&[f64]> = path.globals.iter().map(|p| p.as_slice()).collect();
            let exits: Vec<Value> = path.exit_times.iter().map(|e| json!({"m": e.m, "node": e.node})).collect();
            Ok(json!({
                "seed": cfg.seed,
                "stream": i,
                "times": path.times,
                "points": points,
                "exits": exits,
                "alive": path.alive,
            }))
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new("terminals.csv", &["path", "alive", "terminal"]);
    for (i, r) in rows.iter().enumerate() {
        let last = r["points"].as_array().and_then(|a| a.last()).cloned().unwrap_or(Value::Null);
        let coords: Vec<String> = last.as_array().into_iter().flatten().filter_map(Value::as_f64).map(num).collect();
        table.push(vec![i.to_string(), r["alive"].to_string(), coords.join(" ")], i.to_string());
    }
    Ok(Computed {
        summary: json!({"kind": "simulate", "paths": paths, "t": t, "steps": steps, "m": m}),
        tables: vec![table],
        jsonl: Some(("paths.jsonl", rows)),
        checks: Vec::new(),
    })
}

fn varadhan(chart: &dyn ManifoldChart, cfg: &ExperimentConfig) -> Result<Computed> {
    let x = cfg.point("x")?;
    let y = cfg.point("y")?;
    let grid = cfg.t_grid.clone().ok_or_else(|| Error::config("t_grid", "required for this experiment"))?;
    let rows = varadhan_report(chart, &x, &y, &grid)?;
    let mut table = Table::new("varadhan.csv", &["t", "vlog", "vgrad", "vhess", "warn"]);
    for r in &rows {
        table.push(
            vec![num(r.t), num(r.vlog), num(r.vgrad), num(r.vhess), r.warn.to_string()],
            "none",
        );
    }
    let mut checks = Vec::new();
    if cfg.check.decreasing == Some(true) {
        checks.push(CheckResult::new(
            "deviations_decreasing",
            strictly_decreasing(&rows),
            "vlog, vgrad and vhess strictly decreasing down the t grid".into(),
        ));
    }
    if let (Some(limit), Some(last)) = (cfg.check.final_max, rows.last()) {
        checks.push(CheckResult::new(
            "final_vlog",
            last.vlog <= limit,
            format!("vlog {:.4e} at t = {} (limit {limit})", last.vlog, last.t),
        ));
    }
    Ok(Computed {
        summary: json!({"kind": "varadhan", "manifold": chart.name(), "rows": rows}),
        tables: vec![table],
        jsonl: None,
        checks,
    })
}

/// Per-path invariant counts of the cut-off process.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct CutoffTally {
    pub paths: usize,
    pub paths_with_violations: usize,
    pub out_of_range: usize,
    pub not_one_inside: usize,
    pub nonzero_outside: usize,
    pub ftc_failures: usize,
    pub max_ftc_residual: f64,
}

impl CutoffTally {
    fn add(&mut self, inv: &CutoffInvariants, ftc_tol: f64) {
        self.paths += 1;
        if inv.violations(ftc_tol) > 0 {
            self.paths_with_violations += 1;
        }
        self.out_of_range += inv.out_of_range;
        self.not_one_inside += inv.not_one_inside;
        self.nonzero_outside += inv.nonzero_outside;
        self.ftc_failures += usize::from(!(inv.max_ftc_residual <= ftc_tol));
        self.max_ftc_residual = self.max_ftc_residual.max(inv.max_ftc_residual);
    }
}

fn cutoff_diag(chart: &dyn ManifoldChart, cfg: &ExperimentConfig) -> Result<Computed> {
    let x = cfg.point("x")?;
    let t = cfg.t.unwrap_or(1.0);
    let steps = ExperimentConfig::require(cfg.steps, "steps")?;
    let paths = ExperimentConfig::require(cfg.paths, "paths")?;
    let m = cfg.m.unwrap_or_else(|| default_m(chart, &[&x]));
    if m < 2 {
        return Err(Error::config("m", "must be at least 2"));
    }
    let ftc_tol = cfg.check.ftc_max.unwrap_or(FTC_TOL);
    let n_trace = cfg.trace_paths.unwrap_or(1).min(paths);
    let starts: Vec<Vector> = match &cfg.starts {
        Some(s) => s.iter().map(|c| Vector::from_column_slice(c)).collect(),
        None => vec![x.clone()],
    };
    let ks = cfg.moment_ks.clone().unwrap_or_else(|| vec![2, 4]);
    if ks.iter().any(|k| *k <= 0 || k % 2 != 0) {
        return Err(Error::config("moment_ks", "exponents must be positive even integers"));
    }

    let sim = SimConfig::new(t, steps).with_track(&[m - 1, m]);
    let start = FrameState::at(chart, &x, None)?;
    let per_path: Vec<(CutoffInvariants, Option<crate::cutoff::CutoffTrace>)> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let path = simulate_horizontal(chart, &start, &sim, StreamId::new(cfg.seed, i as u64))?;
            let trace = build_cutoff(chart, &path, m)?;
            Ok((trace.invariants()?, (i < n_trace).then_some(trace)))
        })
        .collect::<Result<_>>()?;
    let mut tally = CutoffTally::default();
    let mut trace_table = Table::new("cutoff_trace.csv", &["s", "f_m", "T_m", "l_m", "l_m'"]);
    for (i, (inv, trace)) in per_path.iter().enumerate() {
        tally.add(inv, ftc_tol);
        if let Some(tr) = trace {
            for k in 0..tr.times.len() {
                trace_table.push(
                    vec![num(tr.times[k]), num(tr.f[k]), num(tr.time_change[k]), num(tr.l[k]), num(tr.l_prime[k])],
                    i.to_string(),
                );
            }
        }
    }

    let moments = moment_harness(
        chart,
        &starts,
        &MomentConfig {
            m,
            ks,
            t,
            steps,
            paths,
            seed: cfg.seed,
        },
    )?;
    let mut moment_table = Table::new("moments.csv", &["x", "k", "mean", "stderr", "paths", "nonfinite"]);
    for r in &moments {
        let coords: Vec<String> = r.x.iter().map(|c| num(*c)).collect();
        moment_table.push(
            vec![
                coords.join(" "),
                r.k.to_string(),
                num(r.mean),
                num(r.stderr),
                r.paths.to_string(),
                r.nonfinite.to_string(),
            ],
            Provenance::streams(r.paths),
        );
    }

    let mut checks = vec![CheckResult::new(
        "cutoff_invariants",
        tally.paths_with_violations == 0,
        format!(
            "{} of {} paths violate an invariant; max FTC residual {:.2e}",
            tally.paths_with_violations, tally.paths, tally.max_ftc_residual
        ),
    )];
    if let Some(rel) = cfg.check.rel_stderr_max {
        let bad = moments
            .iter()
            .filter(|r| r.nonfinite > 0 || !r.mean.is_finite() || !(r.stderr <= rel * r.mean))
            .count();
        checks.push(CheckResult::new(
            "moment_precision",
            bad == 0,
            format!("{bad} of {} moment rows are nonfinite or have stderr above {rel}·mean", moments.len()),
        ));
    }
    Ok(Computed {
        summary: json!({"kind": "cutoff-diag", "m": m, "tally": tally, "moments": moments}),
        tables: vec![trace_table, moment_table],
        jsonl: None,
        checks,
    })
}

fn probe(chart: &dyn ManifoldChart, cfg: &ExperimentConfig) -> Result<Computed> {
    let x = cfg.point("x")?;
    let v = cfg.point("v")?;
    let pc = ProbeConfig {
        t: ExperimentConfig::require(cfg.t, "t")?,
        steps: ExperimentConfig::require(cfg.steps, "steps")?,
        eps_grid: cfg.eps_grid.clone().ok_or_else(|| Error::config("eps_grid", "required for this experiment"))?,
        seed: cfg.seed,
        stream: 0,
        h: cfg.probe_h.unwrap_or(ProbeH::Localized),
        m: cfg.m,
    };
    let report = variation_probe(chart, &x, &v, &pc)?;
    let mut table = Table::new("probe.csv", &["eps", "component", "first_fd", "second_fd"]);
    for row in &report.rows {
        for (c, (a, b)) in row.first_fd.iter().zip(&row.second_fd).enumerate() {
            table.push(vec![num(row.eps), c.to_string(), num(*a), num(*b)], report.stream.to_string());
        }
    }
    let mut checks = Vec::new();
    if let Some(tol) = cfg.check.first_tol {
        checks.push(CheckResult::new(
            "first_variation",
            report.first_error <= tol * report.v_norm,
            format!("error {:.3e} (limit {:.3e})", report.first_error, tol * report.v_norm),
        ));
    }
    if let Some(tol) = cfg.check.second_tol {
        checks.push(CheckResult::new(
            "second_variation",
            report.second_error <= tol * report.v_norm,
            format!("error {:.3e} (limit {:.3e})", report.second_error, tol * report.v_norm),
        ));
    }
    Ok(Computed {
        summary: serde_json::to_value(&report)?,
        tables: vec![table],
        jsonl: None,
        checks,
    })
}

fn exit_surrogate(cfg: &ExperimentConfig) -> Result<Computed> {
    let a = ExperimentConfig::require(cfg.half_width, "half_width")?;
    let x = cfg.x.as_ref().and_then(|v| v.first().copied()).unwrap_or(0.0);
    let y = cfg.y.as_ref().and_then(|v| v.first().copied()).unwrap_or(x);
    let grid = cfg.t_grid.clone().ok_or_else(|| Error::config("t_grid", "required for this experiment"))?;
    let gap = a - x.abs();
    let mut table = Table::new(
        "exit_surrogate.csv",
        &["t", "exit_prob", "t_log_exit", "deviation", "p", "p_dirichlet", "p_minus_dirichlet", "mc_frequency", "mc_stderr"],
    );
    let mut rows = Vec::new();
    for &t in &grid {
        let d = dirichlet_surrogate_1d(a, t, x, y)?;
        let t_log = t * d.exit_prob.ln();
        let deviation = (t_log + gap * gap / 2.0).abs();
        let mc = match cfg.paths {
            Some(paths) => Some(mc_exit_frequency(a, t, x, ExperimentConfig::require(cfg.steps, "steps")?, paths, cfg.seed)?),
            None => None,
        };
        table.push(
            vec![
                num(t),
                num(d.exit_prob),
                num(t_log),
                num(deviation),
                num(d.p),
                num(d.p_dirichlet),
                num(d.p_minus_dirichlet),
                opt(mc.as_ref().map(|m| m.frequency)),
                opt(mc.as_ref().map(|m| m.stderr)),
            ],
            mc.as_ref().map(|m| Provenance::streams(m.paths)).unwrap_or_else(|| "none".into()),
        );
        rows.push(json!({"t": t, "values": d, "t_log_exit": t_log, "deviation": deviation, "mc": mc}));
    }
    let deviations: Vec<f64> = rows.iter().filter_map(|r| r["deviation"].as_f64()).collect();
    let mut checks = Vec::new();
    if cfg.check.decreasing == Some(true) {
        checks.push(CheckResult::new(
            "deviation_decreasing",
            deviations.windows(2).all(|w| w[1] < w[0]),
            format!("deviations {deviations:?}"),
        ));
    }
    if let (Some(limit), Some(last)) = (cfg.check.final_max, deviations.last()) {
        checks.push(CheckResult::new("final_deviation", *last <= limit, format!("{last:.4} (limit {limit})")));
    }
    if let Some(z) = cfg.check.z_max {
        let mut worst: f64 = 0.0;
        for r in &rows {
            if let (Some(f), Some(n), Some(p)) =
                (r["mc"]["frequency"].as_f64(), r["mc"]["paths"].as_f64(), r["values"]["exit_prob"].as_f64())
            {
                // Binomial stderr under the series value; the sample stderr is 0 when no path exits.
                let se = (p * (1.0 - p) / n).sqrt();
                let z = if se > 0.0 { (f - p).abs() / se } else if f == p { 0.0 } else { f64::INFINITY };
                worst = worst.max(z);
            }
        }
        checks.push(CheckResult::new(
            "mc_exit_z",
            cfg.paths.is_some() && worst <= z,
            format!("worst |MC − series| = {worst:.3}·stderr (limit {z})"),
        ));
    }
    Ok(Computed {
        summary: json!({"kind": "exit-surrogate", "half_width": a, "x": x, "y": y, "rows": rows}),
        tables: vec![table],
        jsonl: None,
        checks,
    })
}

/// One row of a convergence study.
#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub axis_value: f64,
    pub value: f64,
    pub stderr: f64,
    pub oracle: Option<f64>,
    pub deviation: Option<f64>,
    /// value minus the reference run's value.
    pub bias: Option<f64>,
    pub n_paths: usize,
}

fn monotone(grid: &[f64]) -> bool {
    grid.windows(2).all(|w| w[1] > w[0]) || grid.windows(2).all(|w| w[1] < w[0])
}

fn at_axis(cfg: &ExperimentConfig, axis: StudyAxis, value: f64, finest: Option<f64>) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match axis {
        StudyAxis::T => c.t = Some(value),
        StudyAxis::Paths => c.paths = Some(value as usize),
        StudyAxis::Steps => {
            let steps = value as usize;
            c.steps = Some(steps);
            // Share the noise of the finest grid so step bias is measured pathwise.
            if let Some(fine) = finest {
                let fine = fine as usize;
                if fine % steps != 0 {
                    return Err(Error::config("study.grid", format!("{steps} does not divide {fine}")));
                }
                c.refine = Some(cfg.refine.unwrap_or(1) * (fine / steps) as u32);
            }
        }
    }
    Ok(c)
}

/// Estimates against one axis. `study.grid` must be monotone with at least 3
/// points; a steps study couples all runs to the finest grid's noise.
pub fn convergence_study(cfg: &ExperimentConfig, spec: &StudySpec) -> Result<Computed> {
    if spec.grid.len() < 3 || !monotone(&spec.grid) {
        return Err(Error::config("study.grid", "needs at least 3 strictly monotone points"));
    }
    if spec.grid.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::config("study.grid", "values must be positive"));
    }
    if spec.axis != StudyAxis::T && spec.grid.iter().chain(&spec.reference).any(|g| g.fract() != 0.0) {
        return Err(Error::config("study.grid", "steps and paths must be integers"));
    }
    let chart = cfg.manifold.build()?;
    let chart = chart.as_ref();

    if cfg.kind == ExperimentKind::Varadhan {
        if spec.axis != StudyAxis::T {
            return Err(Error::config("study.axis", "a varadhan study runs along t"));
        }
        let mut c = cfg.clone();
        c.t_grid = Some(spec.grid.clone());
        let mut out = varadhan(chart, &c)?;
        out.summary["study"] = serde_json::to_value(spec)?;
        return Ok(out);
    }
    if !cfg.kind.is_estimate() {
        return Err(Error::config("kind", "studies support estimators and varadhan"));
    }

    let finest = match spec.axis {
        StudyAxis::Steps => spec.grid.iter().chain(&spec.reference).copied().reduce(f64::max),
        _ => None,
    };
    let reference = match spec.reference {
        Some(r) => Some(estimate(chart, &at_axis(cfg, spec.axis, r, finest)?)?.summary),
        None => None,
    };
    let mut rows = Vec::new();
    for &g in &spec.grid {
        let s = estimate(chart, &at_axis(cfg, spec.axis, g, finest)?)?.summary;
        rows.push(StudyRow {
            axis_value: g,
            value: s.value,
            stderr: s.stderr,
            oracle: s.oracle,
            deviation: s.oracle.map(|o| s.value - o),
            bias: reference.as_ref().map(|r| s.value - r.value),
            n_paths: s.n_paths,
        });
    }

    let axis_name = serde_json::to_value(spec.axis)?.as_str().unwrap_or_default().to_string();
    let mut table = Table::new(
        "study.csv",
        &["axis", "axis_value", "value", "stderr", "oracle", "deviation", "bias", "n_paths"],
    );
    for r in &rows {
        table.push(
            vec![
                axis_name.clone(),
                num(r.axis_value),
                num(r.value),
                num(r.stderr),
                opt(r.oracle),
                opt(r.deviation),
                opt(r.bias),
                r.n_paths.to_string(),
            ],
            Provenance::streams(r.n_paths),
        );
    }
    let mut checks = Vec::new();
    if let Some(z) = cfg.check.z_max {
        let bad = rows
            .iter()
            .filter(|r| !r.deviation.is_some_and(|d| d.abs() <= z * r.stderr))
            .count();
        checks.push(CheckResult::new("oracle_z", bad == 0, format!("{bad} rows outside {z}·stderr of the oracle")));
    }
    if let Some(k) = cfg.check.bias_max_stderr {
        let (passed, detail) = match (rows.iter().max_by(|a, b| a.axis_value.total_cmp(&b.axis_value)), &reference) {
            (Some(r), Some(_)) => {
                let b = r.bias.unwrap_or(f64::NAN);
                (b.abs() <= k * r.stderr, format!("bias {b:.3e} at {} (limit {k}·{:.3e})", r.axis_value, r.stderr))
            }
            _ => (false, "no reference run configured".into()),
        };
        checks.push(CheckResult::new("reference_bias", passed, detail));
    }
    Ok(Computed {
        summary: json!({
            "kind": "study",
            "experiment": cfg.kind,
            "study": spec,
            "reference": reference,
            "rows": rows,
        }),
        tables: vec![table],
        jsonl: None,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ManifoldSpec;

    fn varadhan_cfg() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(ExperimentKind::Varadhan, ManifoldSpec::euclidean(2));
        c.x = Some(vec![0.0, 0.0]);
        c.y = Some(vec![1.0, 0.0]);
        c.t_grid = Some(vec![0.4, 0.2, 0.1, 0.05]);
        c
    }

    #[test]
    fn euclidean_varadhan_columns_are_zero() {
        let out = run(&varadhan_cfg()).unwrap();
        let rows = &out.computed.summary["rows"];
        for r in rows.as_array().unwrap() {
            assert_eq!(r["vlog"].as_f64(), Some(0.0));
            assert_eq!(r["vgrad"].as_f64(), Some(0.0));
            assert_eq!(r["vhess"].as_f64(), Some(0.0));
        }
        let csv = out.table("varadhan.csv").unwrap().to_csv(&Provenance { seed: 0, config_hash: "h".into() }).unwrap();
        assert!(csv.starts_with("t,vlog,vgrad,vhess,warn,seed,stream,config_hash\n"));
    }

    #[test]
    fn malformed_kind_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let text = format!(
            "kind = \"varadhan\"\nout = {:?}\nmanifold = {{ kind = \"moebius\" }}\n",
            out.to_string_lossy()
        );
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config { .. })));
        let mut cfg = varadhan_cfg();
        cfg.out = Some(out.clone());
        cfg.t_grid = None;
        assert!(matches!(run(&cfg), Err(Error::Config { .. })));
        assert!(!out.exists());
    }

    #[test]
    fn artifacts_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(ExperimentKind::Grad, ManifoldSpec::euclidean(2));
        cfg.x = Some(vec![0.0, 0.0]);
        cfg.v = Some(vec![1.0, 0.0]);
        cfg.t = Some(0.5);
        cfg.paths = Some(400);
        cfg.steps = Some(8);
        cfg.seed = 5;
        cfg.observable = Some(crate::estimators::Observable::SinPlusSquare);
        cfg.dump_paths = true;
        cfg.out = Some(dir.path().to_path_buf());
        cfg.workers = Some(2);
        let out = run(&cfg).unwrap();
        let names: Vec<_> = out.artifacts.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["results.csv", "paths.jsonl", "summary.json", "metadata.json"]);
        let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
        assert_eq!(meta["config_hash"].as_str(), Some(out.config_hash.as_str()));
        assert_eq!(meta["config"]["seed"].as_u64(), Some(5));
        let jsonl = std::fs::read_to_string(dir.path().join("paths.jsonl")).unwrap();
        let first: Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
        assert_eq!(first["stream"].as_u64(), Some(0));
        assert_eq!(first["config_hash"].as_str(), Some(out.config_hash.as_str()));
        assert_eq!(jsonl.lines().count(), 400);
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(ExperimentKind::Hess, ManifoldSpec::new(crate::geometry::ManifoldKind::Sphere2));
        cfg.x = Some(vec![0.6, 0.0, 0.8]);
        cfg.v = Some(vec![0.0, 1.0, 0.0]);
        cfg.t = Some(0.5);
        cfg.paths = Some(200);
        cfg.steps = Some(8);
        cfg.observable = Some(crate::estimators::Observable::Coordinate { index: 2 });
        cfg.out = Some(a.path().to_path_buf());
        cfg.workers = Some(1);
        let ra = run(&cfg).unwrap();
        cfg.out = Some(b.path().to_path_buf());
        cfg.workers = Some(3);
        let rb = run(&cfg).unwrap();
        assert_eq!(ra.config_hash, rb.config_hash);
        for f in ["results.csv", "summary.json"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn study_grid_validation() {
        let mut cfg = varadhan_cfg();
        let spec = StudySpec {
            axis: StudyAxis::T,
            grid: vec![0.4, 0.1, 0.2],
            reference: None,
        };
        assert!(matches!(convergence_study(&cfg, &spec), Err(Error::Config { .. })));
        cfg.kind = ExperimentKind::Grad;
        let short = StudySpec {
            axis: StudyAxis::Steps,
            grid: vec![8.0, 16.0],
            reference: None,
        };
        assert!(matches!(convergence_study(&cfg, &short), Err(Error::Config { .. })));
    }

    #[test]
    fn paths_study_stderr_follows_root_n() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Grad, ManifoldSpec::euclidean(2));
        cfg.x = Some(vec![0.0, 0.0]);
        cfg.v = Some(vec![1.0, 0.0]);
        cfg.t = Some(0.5);
        cfg.steps = Some(4);
        cfg.observable = Some(crate::estimators::Observable::Linear { coeffs: vec![1.0, 0.5] });
        let spec = StudySpec {
            axis: StudyAxis::Paths,
            grid: vec![1000.0, 4000.0, 16000.0],
            reference: None,
        };
        let out = convergence_study(&cfg, &spec).unwrap();
        let se: Vec<f64> = out.summary["rows"].as_array().unwrap().iter().map(|r| r["stderr"].as_f64().unwrap()).collect();
        for w in se.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.7..2.3).contains(&ratio), "{se:?}");
        }
    }
}
