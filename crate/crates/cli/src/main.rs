//! `ljfuse` command-line harness.
//!
//! Exit codes: 0 success, 2 config or I/O problems, 3 violated assumptions on
//! the bounds or gains, 1 anything else. Errors go to stderr as one JSON object.

mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use ljfuse_core::config::{ExperimentConfig, GainSpec};
use ljfuse_core::ellipsoid::spectral_bounds;
use ljfuse_core::experiment::{oracle_options, run_experiment, run_sweep, ExperimentOutput, RunSummary};
use ljfuse_core::export::{write_sweep_csv, write_trace_csv};
use ljfuse_core::fusion::{fuse_central, fuse_distributed, max_disagreement, weights_from_state};
use ljfuse_core::matrix::SpdMatrix;
use ljfuse_core::oracle::{grid_search, solve_simplex};
use ljfuse_core::par::Execution;
use ljfuse_core::tuning::{gain_bounds, tune, validate, DEFAULT_SAFETY_FACTOR};
use ljfuse_core::{Error, Result};

use svg::{ellipse_plot, line_plot, EllipseLayer, Series};

const GRID_AGENT_LIMIT: usize = 4;

#[derive(Parser)]
#[command(name = "ljfuse", version, about = "Distributed outer Löwner-John ellipsoids and covariance intersection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment file (JSON). Without it the reference experiment is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skips SVG plots.
    #[arg(long)]
    no_plots: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, compare with the oracle and write trace, summary and plots.
    Run(Common),
    /// Solve the centralized problem (plus a grid search for N <= 4).
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Grid step for the brute-force check.
        #[arg(long, default_value_t = 0.01)]
        resolution: f64,
    },
    /// Print tuned or configured gains with the bound check.
    Tune(Common),
    /// Fuse estimates with the weights of a finished run.
    Fuse {
        #[command(flatten)]
        common: Common,
        /// `summary.json` written by `run`.
        #[arg(long)]
        summary: PathBuf,
        /// Per-agent estimates (JSON list of vectors); defaults to the
        /// instance's own estimates.
        #[arg(long)]
        estimates: Option<PathBuf>,
    },
    /// Run every cell of the config's `sweep` section.
    Sweep(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    if common.no_plots {
        cfg.output.plots = false;
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("LJFUSE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config {
            path: "LJFUSE_THREADS".into(),
            message: format!("expected a positive integer, got {raw:?}"),
        })?;
    #[cfg(feature = "parallel")]
    {
        // fails only if a pool already exists, in which case it is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn plot_consensus(out: &ExperimentOutput) -> String {
    let tr = &out.trace;
    let mut series: Vec<Series> = (0..tr.n_agents())
        .map(|i| Series {
            label: format!("ŝ_{}", i + 1),
            xs: &tr.times,
            ys: tr.s_hat.iter().map(|row| row[i]).collect(),
            dashed: false,
        })
        .collect();
    series.push(Series {
        label: "s(x)".into(),
        xs: &tr.times,
        ys: tr.s.clone(),
        dashed: true,
    });
    let eps = out.params.epsilon;
    line_plot("Local estimates of s(x)", "t", "s", &series, &[1.0 - eps, 1.0])
}

fn plot_weights(out: &ExperimentOutput) -> String {
    let tr = &out.trace;
    let series: Vec<Series> = (0..tr.n_agents())
        .map(|i| Series {
            label: format!("λ_{}", i + 1),
            xs: &tr.times,
            ys: (0..tr.len()).map(|k| tr.x[k][i] * tr.x[k][i] / tr.n_agents() as f64).collect(),
            dashed: false,
        })
        .collect();
    let mut levels: Vec<f64> = out.summary.oracle.lambda_star.as_slice().to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    line_plot("Weights λ_i(t) = x_i(t)²/N", "t", "λ", &series, &levels)
}

fn plot_ellipses(out: &ExperimentOutput) -> Result<Option<String>> {
    if out.instance.dim() != 2 {
        return Ok(None);
    }
    let mut layers: Vec<EllipseLayer> = out
        .instance
        .covariances
        .covariances()
        .iter()
        .map(|p| EllipseLayer {
            label: "E(P_i)".into(),
            cov: p.clone(),
            color: "#999999",
            width: 1.0,
        })
        .collect();
    let tr = &out.trace;
    let mut probes = Vec::new();
    if let Some(tf) = tr.events.t_feasible {
        if let Some(k) = tr.record_at(tf) {
            probes.push((k, "#1f77b4"));
        }
    }
    probes.push((tr.len() - 1, "#d62728"));
    for (k, color) in probes {
        let q = ljfuse_core::cost::q_of_x(&tr.x[k], &out.instance.covariances)?;
        layers.push(EllipseLayer {
            label: format!("t = {:.2}", tr.times[k]),
            cov: SpdMatrix::new(q.cholesky().inverse())?,
            color,
            width: 1.8,
        });
    }
    ellipse_plot("Outer ellipses E(Q(x(t))⁻¹)", &layers).map(Some)
}

fn cmd_run(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let out = run_experiment(&cfg, Execution::default())?;
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;
    write_trace_csv(&out.trace, std::io::BufWriter::new(fs::File::create(dir.join("trace.csv"))?))?;
    write_json(&dir.join("summary.json"), &out.summary)?;
    write_json(&dir.join("estimates.json"), &out.instance.estimates)?;
    write_json(&dir.join("config.json"), &cfg)?;
    if cfg.output.plots {
        fs::write(dir.join("consensus.svg"), plot_consensus(&out))?;
        fs::write(dir.join("weights.svg"), plot_weights(&out))?;
        if let Some(svg) = plot_ellipses(&out)? {
            fs::write(dir.join("ellipses.svg"), svg)?;
        }
    }
    let s = &out.summary;
    print_json(&json!({
        "out": dir,
        "t_cons": s.events.t_cons,
        "t_cons_matrix": s.events.t_cons_matrix,
        "t_feasible": s.events.t_feasible,
        "terminal_objective": s.terminal_objective,
        "f_star": s.oracle.f_star,
        "relative_gap": s.relative_gap,
        "epsilon_gap_bound": s.epsilon_gap_bound,
        "containment_violations": s.containment.iter().map(|p| p.report.violations).sum::<usize>(),
    }))
}

fn cmd_oracle(common: &Common, resolution: f64) -> Result<()> {
    let cfg = load(common)?;
    let covs = cfg.instance.covariance_set(cfg.seed)?;
    let cost = cfg.protocol.cost;
    let sol = solve_simplex(&covs, cost, &oracle_options(&cfg), Execution::default())?;
    let grid = if covs.len() <= GRID_AGENT_LIMIT {
        Some(grid_search(&covs, cost, resolution)?)
    } else {
        None
    };
    let gap = grid.as_ref().map(|g| sol.f_star - g.f_star);
    print_json(&json!({ "cost": cost, "solution": sol, "grid": grid, "solver_minus_grid": gap }))
}

fn cmd_tune(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let inst = cfg.instance.build(cfg.seed)?;
    let ib = cfg.protocol.bounds()?;
    let gc = inst.network.constants()?;
    let sb = spectral_bounds(inst.covariances.covariances())?;
    let design = cfg.protocol.design();
    let bounds = gain_bounds(&gc, &sb, &ib, &design)?;
    let params = match cfg.protocol.gains {
        GainSpec::Tuned { safety_factor } => tune(&gc, &sb, &ib, &design, safety_factor)?,
        GainSpec::Manual { .. } => cfg.protocol.params(&inst)?,
    };
    let report = validate(&params, &gc, &sb, &ib);
    print_json(&json!({
        "graph": gc,
        "bounds": bounds,
        "default_safety_factor": DEFAULT_SAFETY_FACTOR,
        "params": params,
        "validation": report,
    }))
}

fn cmd_fuse(common: &Common, summary: &Path, estimates: Option<&Path>) -> Result<()> {
    let cfg = load(common)?;
    let text = fs::read_to_string(summary)?;
    let run: RunSummary = serde_json::from_str(&text).map_err(|e| Error::Config {
        path: summary.display().to_string(),
        message: e.to_string(),
    })?;
    let inst = cfg.instance.build(run.seed)?;
    let est: Vec<Vec<f64>> = match estimates {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| Error::Config {
            path: p.display().to_string(),
            message: e.to_string(),
        })?,
        None => inst.estimates.clone().unwrap_or_default(),
    };
    let local = fuse_distributed(&run.final_state, &inst.covariances, &est, &run.params, &inst.network, &cfg.fusion)?;
    let central = fuse_central(&weights_from_state(&run.final_state.x)?, &inst.covariances, &est)?;
    let gap = local
        .iter()
        .flat_map(|r| r.p_fused.iter().zip(&central.p_fused).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let report = json!({
        "central": central,
        "distributed": local,
        "max_disagreement": max_disagreement(&local),
        "max_distance_to_central": gap,
    });
    fs::create_dir_all(&cfg.output.dir)?;
    write_json(&cfg.output.dir.join("fusion.json"), &report)?;
    print_json(&report)
}

fn cmd_sweep(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let rows = run_sweep(&cfg, Execution::default())?;
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;
    write_sweep_csv(&rows, fs::File::create(dir.join("sweep.csv"))?)?;
    write_json(&dir.join("sweep.json"), &rows)?;
    let mut stdout = Vec::new();
    write_sweep_csv(&rows, &mut stdout)?;
    print!("{}", String::from_utf8_lossy(&stdout));
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Io(_) | Error::Json(_) => 2,
        Error::InvalidAssumption(_) => 3,
        _ => 1,
    }
}

fn report(e: &Error) {
    let mut obj = json!({ "error": e.kind(), "message": e.to_string() });
    if let Error::Config { path, message } = e {
        obj["path"] = json!(path);
        obj["message"] = json!(message);
    }
    eprintln!("{obj}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Oracle { common, resolution } => cmd_oracle(common, *resolution),
        Command::Tune(c) => cmd_tune(c),
        Command::Fuse {
            common,
            summary,
            estimates,
        } => cmd_fuse(common, summary, estimates.as_deref()),
        Command::Sweep(c) => cmd_sweep(c),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
