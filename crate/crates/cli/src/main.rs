use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use heatgrad_core::estimators::{Observable, ProbeH};
use heatgrad_core::geometry::ManifoldSpec;
use heatgrad_core::harness::{self, ExperimentConfig, ExperimentKind, Provenance, StudyAxis, StudySpec};
use heatgrad_core::oracles::oracle_eval;
use heatgrad_core::Error;

/// Environment variable that overrides the RNG seed when --seed is absent.
const SEED_ENV: &str = "HEATGRAD_SEED";

#[derive(Parser)]
#[command(name = "heatgrad", version, about = "Monte Carlo heat-semigroup and log-kernel derivative estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate horizontal Brownian paths and dump them as JSONL.
    Simulate(Common),
    /// Estimate a derivative and print the summary as JSON.
    Estimate {
        quantity: Quantity,
        #[command(flatten)]
        common: Common,
        /// Append a row to this results table.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate the oracle heat kernel.
    Oracle {
        #[command(subcommand)]
        action: OracleAction,
    },
    /// Deviation table of the small-time limits, as CSV.
    Varadhan(Common),
    /// Cut-off process invariants and derivative moments.
    CutoffDiag {
        #[command(flatten)]
        common: Common,
        /// Write the per-node trace (s, f_m, T_m, l_m, l_m') of the first paths here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Finite-difference probe of the perturbed flow.
    Probe(Common),
    /// Exit probability and Dirichlet comparison of Brownian motion on an interval.
    ExitSurrogate(Common),
    /// Convergence study along t, steps or paths.
    Study {
        /// Experiment to repeat (ignored when the config names one).
        #[arg(long, value_enum, default_value = "grad")]
        experiment: Quantity,
        #[arg(long, value_enum)]
        axis: Option<Axis>,
        /// Comma-separated grid.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        reference: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum OracleAction {
    Eval(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Quantity {
    Grad,
    Hess,
    Loggrad,
    Loghess,
    Girsanov,
    Varadhan,
}

impl Quantity {
    fn kind(self) -> ExperimentKind {
        match self {
            Quantity::Grad => ExperimentKind::Grad,
            Quantity::Hess => ExperimentKind::Hess,
            Quantity::Loggrad => ExperimentKind::Loggrad,
            Quantity::Loghess => ExperimentKind::Loghess,
            Quantity::Girsanov => ExperimentKind::Girsanov,
            Quantity::Varadhan => ExperimentKind::Varadhan,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    T,
    Steps,
    Paths,
}

#[derive(Args, Default)]
struct Common {
    /// Experiment config (TOML); flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Manifold kind, e.g. `sphere2` or `euclidean:3`.
    #[arg(long)]
    manifold: Option<String>,
    /// Points and vectors as comma-separated global coordinates.
    #[arg(long, allow_hyphen_values = true)]
    x: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    y: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    v: Option<String>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    m: Option<u32>,
    /// `sin_plus_square`, `square:I`, `coordinate:I`, `linear:A,B,..` or `constant:C`.
    #[arg(long)]
    observable: Option<String>,
    #[arg(long)]
    antithetic: bool,
    #[arg(long)]
    refine: Option<u32>,
    /// Girsanov perturbation size.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Comma-separated times.
    #[arg(long = "t-grid")]
    t_grid: Option<String>,
    /// Comma-separated probe perturbation sizes.
    #[arg(long = "eps-grid", allow_hyphen_values = true)]
    eps_grid: Option<String>,
    /// Probe direction process.
    #[arg(long = "probe-h", value_parser = ["localized", "linear"])]
    probe_h: Option<String>,
    /// Half-width of the exit interval.
    #[arg(long = "half-width")]
    half_width: Option<f64>,
    /// Write one JSONL object per path into --out.
    #[arg(long = "dump-paths")]
    dump_paths: bool,
}

fn parse_list(s: &str, field: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::config(field, format!("`{s}` is not a comma-separated list of numbers")))
}

fn parse_observable(s: &str) -> Result<Observable, Error> {
    let (name, arg) = s.split_once(':').unwrap_or((s, ""));
    let index = || arg.parse::<usize>().map_err(|_| Error::config("observable", format!("bad index in `{s}`")));
    Ok(match name {
        "sin_plus_square" => Observable::SinPlusSquare,
        "square" => Observable::Square { index: index()? },
        "coordinate" => Observable::Coordinate { index: index()? },
        "linear" => Observable::Linear {
            coeffs: parse_list(arg, "observable")?,
        },
        "constant" => Observable::Constant {
            value: arg.parse().map_err(|_| Error::config("observable", format!("bad constant in `{s}`")))?,
        },
        _ => return Err(Error::config("observable", format!("unknown observable `{s}`"))),
    })
}

fn seed_override(flag: Option<u64>) -> Result<Option<u64>, Error> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .parse()
            .map(Some)
            .map_err(|_| Error::config(SEED_ENV, format!("`{s}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Load the config file (if any) and apply flag overrides. `kind` replaces the
/// file's kind unless `keep_kind` is set.
fn build_config(c: &Common, kind: ExperimentKind, keep_kind: bool) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut cfg = ExperimentConfig::from_toml(&text)?;
            if !keep_kind {
                cfg.kind = kind;
            }
            cfg
        }
        None => {
            let manifold = match &c.manifold {
                Some(m) => ManifoldSpec::parse(m)?,
                // The exit surrogate is one-dimensional and ignores the manifold.
                None if kind == ExperimentKind::ExitSurrogate => ManifoldSpec::euclidean(1),
                None => return Err(Error::config("manifold", "pass --manifold or --config").into()),
            };
            ExperimentConfig::new(kind, manifold)
        }
    };
    if let (Some(m), Some(_)) = (&c.manifold, &c.config) {
        cfg.manifold = ManifoldSpec::parse(m)?;
    }
    if let Some(s) = seed_override(c.seed)? {
        cfg.seed = s;
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    if c.workers.is_some() {
        cfg.workers = c.workers;
    }
    for (flag, slot) in [(&c.x, &mut cfg.x), (&c.y, &mut cfg.y), (&c.v, &mut cfg.v)] {
        if let Some(s) = flag {
            *slot = Some(parse_list(s, "point")?);
        }
    }
    macro_rules! set {
        ($($f:ident),*) => { $( if c.$f.is_some() { cfg.$f = c.$f; } )* };
    }
    set!(t, paths, steps, m, refine, epsilon, half_width);
    if c.antithetic {
        cfg.antithetic = true;
    }
    if c.dump_paths {
        cfg.dump_paths = true;
    }
    if let Some(o) = &c.observable {
        cfg.observable = Some(parse_observable(o)?);
    }
    if let Some(g) = &c.t_grid {
        cfg.t_grid = Some(parse_list(g, "t_grid")?);
    }
    if let Some(g) = &c.eps_grid {
        cfg.eps_grid = Some(parse_list(g, "eps_grid")?);
    }
    if let Some(h) = &c.probe_h {
        cfg.probe_h = Some(if h == "linear" { ProbeH::Linear } else { ProbeH::Localized });
    }
    Ok(cfg)
}

fn print_json(v: &serde_json::Value) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn append_csv(path: &PathBuf, table: &harness::Table, prov: &Provenance) -> anyhow::Result<()> {
    let text = table.to_csv(prov)?;
    let exists = path.metadata().map(|m| m.len() > 0).unwrap_or(false);
    let body = if exists {
        text.split_once('\n').map(|(_, rest)| rest).unwrap_or("")
    } else {
        text.as_str()
    };
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

fn finish(outcome: &harness::RunOutcome) -> u8 {
    for c in outcome.computed.checks.iter().filter(|c| !c.passed) {
        eprintln!("check {} failed: {}", c.name, c.detail);
    }
    outcome.exit_code() as u8
}

fn execute(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Estimate { quantity, common, csv } => {
            let cfg = build_config(&common, quantity.kind(), false)?;
            let out = harness::run(&cfg)?;
            if let Some(path) = csv {
                let prov = Provenance {
                    seed: cfg.seed,
                    config_hash: out.config_hash.clone(),
                };
                append_csv(&path, out.table("results.csv").expect("estimate table"), &prov)?;
            }
            print_json(&out.computed.summary)?;
            Ok(finish(&out))
        }
        Command::Oracle {
            action: OracleAction::Eval(common),
        } => {
            let cfg = build_config(&common, ExperimentKind::Varadhan, false)?;
            let chart = cfg.manifold.build()?;
            let t = ExperimentConfig::require(cfg.t, "t")?;
            let vals = oracle_eval(chart.as_ref(), t, &cfg.point("x")?, &cfg.point("y")?)?;
            print_json(&vals.to_json())?;
            Ok(0)
        }
        Command::Varadhan(common) => {
            let cfg = build_config(&common, ExperimentKind::Varadhan, false)?;
            let out = harness::run(&cfg)?;
            println!("t,vlog,vgrad,vhess,warn");
            for (fields, _) in &out.table("varadhan.csv").expect("varadhan table").rows {
                println!("{}", fields.join(","));
            }
            Ok(finish(&out))
        }
        Command::CutoffDiag { common, trace } => {
            let cfg = build_config(&common, ExperimentKind::CutoffDiag, false)?;
            let out = harness::run(&cfg)?;
            if let Some(path) = trace {
                let prov = Provenance {
                    seed: cfg.seed,
                    config_hash: out.config_hash.clone(),
                };
                fs::write(&path, out.table("cutoff_trace.csv").expect("trace table").to_csv(&prov)?)?;
            }
            print_json(&out.computed.summary)?;
            Ok(finish(&out))
        }
        Command::Simulate(common) => {
            let mut cfg = build_config(&common, ExperimentKind::Simulate, false)?;
            cfg.dump_paths = true;
            let out = harness::run(&cfg)?;
            if cfg.out.is_none() {
                if let Some((_, rows)) = &out.computed.jsonl {
                    for r in rows {
                        println!("{}", serde_json::to_string(r)?);
                    }
                }
            } else {
                print_json(&out.computed.summary)?;
            }
            Ok(finish(&out))
        }
        Command::Probe(common) => {
            let cfg = build_config(&common, ExperimentKind::VariationProbe, false)?;
            let out = harness::run(&cfg)?;
            print_json(&out.computed.summary)?;
            Ok(finish(&out))
        }
        Command::ExitSurrogate(common) => {
            let cfg = build_config(&common, ExperimentKind::ExitSurrogate, false)?;
            let out = harness::run(&cfg)?;
            print_json(&out.computed.summary)?;
            Ok(finish(&out))
        }
        Command::Study {
            experiment,
            axis,
            grid,
            reference,
            common,
        } => {
            let mut cfg = build_config(&common, experiment.kind(), common.config.is_some())?;
            let mut spec = cfg.study.clone();
            if let (Some(axis), Some(grid)) = (axis, &grid) {
                spec = Some(StudySpec {
                    axis: match axis {
                        Axis::T => StudyAxis::T,
                        Axis::Steps => StudyAxis::Steps,
                        Axis::Paths => StudyAxis::Paths,
                    },
                    grid: parse_list(grid, "study.grid")?,
                    reference,
                });
            }
            let Some(spec) = spec else {
                bail!(Error::config("study", "pass --axis and --grid or a [study] section"));
            };
            cfg.study = Some(spec);
            let out = harness::run(&cfg)?;
            let table = out.computed.tables.first().expect("study table");
            print!("{}", table.to_csv(&Provenance { seed: cfg.seed, config_hash: out.config_hash.clone() })?);
            Ok(finish(&out))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config { .. }) | Some(Error::UnsupportedManifold(_)) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
