//! Command-line front end.
//!
//! Every subcommand loads one model file, runs one instrument, and emits one
//! table (CSV or JSON, to stdout or `--out`). Exit codes: 0 on success, 1
//! when a `--check` gate fails, 2 on configuration or model errors. State
//! labels on the command line are one-based, matching the config files;
//! coordinates on edge 0 are negative.

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{load_model, ConfigError, LoadedModel};
use crate::graph::{self, LimitMotion};
use crate::model::{validation_grid, ChainFamily, GraphPoint, ModelError};
use crate::report::{format_float, Cell, Provenance, ReportTable};
use crate::sim::{self, FastSlowState, SimConfig, SimError};
use crate::spectral::{self, SpectralError};
use crate::verify::{self, VerifyError};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Parser)]
#[command(
    name = "avgraph",
    version,
    about = "Fast-slow Markov systems over a bifurcating invariant simplex: \
             simulation, spectral analysis, and verification against the \
             graph-valued averaged limit"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model file and report the validation quantities.
    Validate(ValidateArgs),
    /// Print the derived vertex data of a model.
    Info(InfoArgs),
    /// Simulate fast-slow paths; one path dumps a trajectory, several dump
    /// the terminal law on the graph.
    Simulate(SimulateArgs),
    /// Simulate the graph-valued limit process.
    Limit(LimitArgs),
    /// Compare fast-slow ensembles against the simulated limit over a list
    /// of epsilons.
    Sweep(SweepArgs),
    /// Window spectral analysis: second eigenpair, alpha, and the left-null
    /// projection; with --eps, the boundary-layer profile instead.
    Spectral(SpectralArgs),
    /// Exit statistics: band exits from every chain state, or class
    /// frequencies at a hitting level with --level.
    Exitprob(ExitprobArgs),
    /// Martingale defect of a localized test function.
    Defect(DefectArgs),
    /// Return-cycle counts between the bifurcation level and the band edge.
    Cycles(CyclesArgs),
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct InfoArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Time-scale separation of the fast chain.
    #[arg(long)]
    eps: f64,
    /// Slow dynamics: 0 transport, 1 additive noise. Defaults to the model's
    /// own flag.
    #[arg(long)]
    kappa: Option<u8>,
    /// Horizon.
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    /// Step size; defaults to eps / 10, the largest admissible value.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 1)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Starting chain state, one-based.
    #[arg(long, default_value_t = 1)]
    state: usize,
    /// Starting slow coordinate.
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    z0: f64,
    /// Sample times per recorded path (endpoints included).
    #[arg(long, default_value_t = 129)]
    grid: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct LimitArgs {
    #[arg(long)]
    model: PathBuf,
    /// 0 selects the transport limit, 1 the diffusive one. Defaults to the
    /// model's flag.
    #[arg(long)]
    kappa: Option<u8>,
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 1)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Starting edge (0, 1, or 2).
    #[arg(long, default_value_t = 0)]
    edge: u8,
    /// Starting coordinate, negative on edge 0.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    coord: f64,
    #[arg(long, default_value_t = 129)]
    grid: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated epsilons, largest first by convention.
    #[arg(long, value_delimiter = ',', required = true)]
    eps: Vec<f64>,
    #[arg(long)]
    kappa: Option<u8>,
    #[arg(long = "T", default_value_t = 0.5)]
    horizon: f64,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    state: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    z0: f64,
    /// Step of the limit-process ensemble.
    #[arg(long = "limit-dt", default_value_t = 2e-4)]
    limit_dt: f64,
    /// Fail (exit 1) unless the distances strictly decrease in row order.
    #[arg(long)]
    check: bool,
    /// With --check, additionally require the last distance at or below this.
    #[arg(long = "final-below")]
    final_below: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SpectralArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated window half-widths.
    #[arg(long, value_delimiter = ',', required = true)]
    delta: Vec<f64>,
    /// Switch to the boundary-layer profile at this epsilon (one delta only).
    #[arg(long)]
    eps: Option<f64>,
    /// Fail (exit 1) unless |projection - p1| decreases with delta and ends
    /// at or below 1e-2.
    #[arg(long)]
    check: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct ExitprobArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    kappa: Option<u8>,
    #[arg(long = "T", default_value_t = 0.2)]
    horizon: f64,
    /// Half-width of the band around the bifurcation.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Paths per starting state (band mode) or in total (level mode).
    #[arg(long, default_value_t = 1000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    dt: Option<f64>,
    /// Hitting level: report class frequencies at the first hit instead of
    /// band exits.
    #[arg(long, allow_negative_numbers = true)]
    level: Option<f64>,
    /// Starting state for level mode, one-based.
    #[arg(long, default_value_t = 1)]
    state: usize,
    /// Starting coordinate for level mode.
    #[arg(long, default_value_t = -0.5, allow_negative_numbers = true)]
    z0: f64,
    /// Append the reference row simulated from the limit process.
    #[arg(long)]
    limit: bool,
    /// Step of the limit reference; defaults to delta^2 / 100.
    #[arg(long = "limit-dt")]
    limit_dt: Option<f64>,
    /// Fail (exit 1) when the pooled (or level) frequencies sit more than
    /// three standard errors from their predicted values.
    #[arg(long)]
    check: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct DefectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Time-scale ratio; required unless --limit is given.
    #[arg(long, required_unless_present = "limit")]
    eps: Option<f64>,
    #[arg(long)]
    kappa: Option<u8>,
    #[arg(long = "T", default_value_t = 0.5)]
    horizon: f64,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    state: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    z0: f64,
    #[arg(long, default_value_t = 257)]
    grid: usize,
    /// Generator value of the test function at the vertex.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    a0: f64,
    /// Support radius of the test function.
    #[arg(long, default_value_t = 1.0)]
    support: f64,
    /// Vertex slope along edge 1.
    #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
    slope1: f64,
    /// Vertex slope along edge 2.
    #[arg(long, default_value_t = -0.2, allow_negative_numbers = true)]
    slope2: f64,
    #[arg(long, default_value = "bump")]
    label: String,
    /// Measure the limit process itself instead of the fast-slow system.
    #[arg(long)]
    limit: bool,
    #[arg(long = "limit-dt", default_value_t = 1e-4)]
    limit_dt: f64,
    /// Fail (exit 1) when |mean| exceeds three standard errors.
    #[arg(long)]
    check: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct CyclesArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    kappa: Option<u8>,
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 1000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    state: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    z0: f64,
    #[arg(long)]
    dt: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

/// Parses the process arguments and runs one command.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let command_line = std::env::args().collect::<Vec<_>>().join(" ");
    match dispatch(cli.command, &command_line) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(command: Command, command_line: &str) -> Result<bool, CliError> {
    match command {
        Command::Validate(a) => cmd_validate(a, command_line),
        Command::Info(a) => cmd_info(a, command_line),
        Command::Simulate(a) => cmd_simulate(a, command_line),
        Command::Limit(a) => cmd_limit(a, command_line),
        Command::Sweep(a) => cmd_sweep(a, command_line),
        Command::Spectral(a) => cmd_spectral(a, command_line),
        Command::Exitprob(a) => cmd_exitprob(a, command_line),
        Command::Defect(a) => cmd_defect(a, command_line),
        Command::Cycles(a) => cmd_cycles(a, command_line),
    }
}

fn load(path: &Path) -> Result<(LoadedModel, String), CliError> {
    let loaded = load_model(path)?;
    let stamp = format!("{} sha256:{}", path.display(), loaded.hash);
    Ok((loaded, stamp))
}

fn emit(table: &ReportTable, prov: &Provenance, output: &OutputArgs) -> Result<(), CliError> {
    let text = match output.format {
        Format::Csv => table.to_csv(Some(prov)),
        Format::Json => table.to_json(Some(prov)),
    };
    match &output.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn state_index(model: &ChainFamily, state: usize) -> Result<usize, CliError> {
    if state == 0 || state > model.n() {
        return Err(CliError::Usage(format!(
            "state {} out of range 1..={}",
            state,
            model.n()
        )));
    }
    Ok(state - 1)
}

fn resolve_kappa(model: &ChainFamily, flag: Option<u8>) -> Result<u8, CliError> {
    let kappa = flag.unwrap_or_else(|| model.kappa());
    if kappa > 1 {
        return Err(CliError::Usage(format!("kappa must be 0 or 1, got {kappa}")));
    }
    Ok(kappa)
}

fn check_line(ok: bool, what: &str) -> bool {
    if !ok {
        eprintln!("check failed: {what}");
    }
    ok
}

fn cmd_validate(args: ValidateArgs, command_line: &str) -> Result<bool, CliError> {
    let (loaded, stamp) = load(&args.model)?;
    let model = &loaded.model;
    let classes = model.classes();
    let mut max_left = 0.0f64;
    let mut max_right = 0.0f64;
    for z in validation_grid(model.cutoff()) {
        let row = model.invariant_distribution(z)?;
        if z < 0.0 {
            max_left = max_left.max(row.residual);
        } else {
            max_right = max_right.max(row.residual);
        }
    }
    let mut table = ReportTable::new("model validation", &["check", "value"]);
    let mut push = |name: &str, cell: Cell| table.push_row(vec![name.into(), cell]);
    push("states", model.n().into());
    push("class_one_size", model.m().into());
    push("cutoff", model.cutoff().into());
    push("kappa", (model.kappa() as usize).into());
    push("content_hash", loaded.hash.clone().into());
    push("boundary_level_k", (classes.converged_k as usize).into());
    push("boundary_oracle_gap", classes.oracle_gap.into());
    push("max_invariant_residual_left", max_left.into());
    push("max_invariant_residual_right", max_right.into());
    push(
        "shared_far_drift",
        match model.shared_far_drift() {
            Some(v) => v.into(),
            None => "none".into(),
        },
    );
    let prov = Provenance::new(stamp, None, command_line);
    emit(&table, &prov, &args.output)?;
    Ok(true)
}

fn cmd_info(args: InfoArgs, command_line: &str) -> Result<bool, CliError> {
    let (loaded, stamp) = load(&args.model)?;
    let model = &loaded.model;
    let classes = model.classes();
    let mut table = ReportTable::new("model info", &["quantity", "value"]);
    let mut push = |name: String, value: f64| table.push_row(vec![name.into(), value.into()]);
    push("n".into(), model.n() as f64);
    push("m".into(), model.m() as f64);
    push("cutoff".into(), model.cutoff());
    push("kappa".into(), model.kappa() as f64);
    push("p1".into(), classes.branching[0]);
    push("p2".into(), classes.branching[1]);
    for i in 0..model.n() {
        push(format!("pi_{}", i + 1), classes.pi[i]);
    }
    push("pi_bar_1".into(), classes.pi_bar[0]);
    push("pi_bar_2".into(), classes.pi_bar[1]);
    for l in 0..3 {
        push(format!("vertex_weight_{l}"), classes.vertex_weights[l]);
    }
    for l in 0..3 {
        push(format!("vbar_{l}"), classes.vbar0[l]);
    }
    let prov = Provenance::new(stamp, None, command_line);
    emit(&table, &prov, &args.output)?;
    Ok(true)
}

fn cmd_simulate(args: SimulateArgs, command_line: &str) -> Result<bool, CliError> {
    let (loaded, stamp) = load(&args.model)?;
    let model = &loaded.model;
    let start = FastSlowState {
        state: state_index(model, args.state)?,
        z: args.z0,
    };
    let cfg = SimConfig {
        epsilon: args.eps,
        kappa: resolve_kappa(model, args.kappa)?,
        dt: args.dt.unwrap_or(args.eps / 10.0),
        horizon: args.horizon,
        paths: args.paths,
        seed: args.seed,
        grid_points: args.grid,
    };
    cfg.ensure_valid()?;
    let prov = Provenance::new(stamp, Some(args.seed), command_line);
    if args.paths == 1 {
        let mut rng = sim::path_rng(cfg.seed, 0);
        let clock = Instant::now();
        let path = sim::simulate_path(model, start, &cfg, &mut rng)?;
        let mut table = ReportTable::new("fast-slow path", &["t", "i", "z"]);
        table.runtime_comment("path", clock.elapsed().as_secs_f64());
        table.comment(format!("jump_count: {}", path.jumps.len()));
        for ev in &path.jumps {
            table.comment(format!(
                "jump,{},{},{},{}",
                format_float(ev.t),
                ev.from + 1,
                ev.to + 1,
                format_float(ev.z)
            ));
        }
        for s in &path.samples {
            table.push_row(vec![s.t.into(), (s.state + 1).into(), s.z.into()]);
        }
        emit(&table, &prov, &args.output)?;
    } else {
        let clock = Instant::now();
        let law = sim::monte_carlo_law(model, start, &cfg)?;
        let mut table = ReportTable::new("fast-slow terminal law", &["edge", "coord", "weight"]);
        table.runtime_comment("ensemble", clock.elapsed().as_secs_f64());
        let weight = 1.0 / law.len() as f64;
        for p in &law.points {
            table.push_row(vec![
                (p.edge() as usize).into(),
                p.coord().into(),
                weight.into(),
            ]);
        }
        emit(&table, &prov, &args.output)?;
    }
    Ok(true)
}

fn cmd_limit(args: LimitArgs, command_line: &str) -> Result<bool, CliError> {
    let (loaded, stamp) = load(&args.model)?;
    let model = &loaded.model;
    let kappa = resolve_kappa(model, args.kappa)?;
    if !(args.dt > 0.0) || !(args.horizon > 0.0) {
        return Err(CliError::Usage(
            "dt and T must both be positive".to_string(),
        ));
    }
    if args.paths == 0 {
        return Err(CliError::Usage("need at least one path".to_string()));
    }
    let y0 = GraphPoint::new(args.edge, args.coord)?;
    let motion = LimitMotion::new(model)?;
    let prov = Provenance::new(stamp, Some(args.seed), command_line);
    if args.paths == 1 {
        let mut rng = sim::path_rng(args.seed, 0);
        let clock = Instant::now();
        let path = if kappa == 1 {
            motion.simulate_diff(y0, args.horizon, args.dt, args.grid, &mut rng)
        } else {
            motion.simulate_det(y0, args.horizon, args.dt, args.grid, &mut rng)
        };
        let mut table = ReportTable::new("graph limit path", &["t", "edge", "coord"]);
        table.runtime_comment("path", clock.elapsed().as_secs_f64());
        table.comment(format!("branch_count: {}", path.branches.len()));
        for b in &path.branches {
            table.comment(format!("branch,{},{}", format_float(b.t), b.edge));
        }
        for s in &path.samples {
            table.push_row(vec![
                s.t.into(),
                (s.point.edge() as usize).into(),
                s.point.coord().into(),
            ]);
        }
        emit(&table, &prov, &args.output)?;
    } else {
        let clock = Instant::now();
        let points: Vec<GraphPoint> = (0..args.paths)
            .into_par_iter()
            .map(|k| {
                let mut rng = sim::path_rng(args.seed, k as u64);
                let path = if kappa == 1 {
                    motion.simulate_diff(y0, args.horizon, args.dt, 2, &mut rng)
                } else {
                    motion.simulate_det(y0, args.horizon, args.dt, 2, &mut rng)
                };
                path.terminal
            })
            .collect();
        let mut table = ReportTable::new("graph limit terminal law", &["edge", "coord", "weight"]);
        table.runtime_comment("ensemble", clock.elapsed().as_secs_f64());
        let weight = 1.0 / points.len() as f64;
        for p in &points {
            table.push_row(vec![
                (p.edge() as usize).into(),
                p.coord().into(),
                weight.into(),
            ]);
        }
        emit(&table, &prov, &args.output)?;
    }
    Ok(true)
}

fn cmd_sweep(args: SweepArgs, command_line: &str) -> Result<bool, CliError> {
    let (loaded, stamp) = load(&args.model)?;
    let model = &loaded.model;
    let kappa = resolve_kappa(model, args.kappa)?;
    if args.eps.is_empty() {
        return Err(CliError::Usage("need at least one epsilon".to_string()));
    }
    let start = FastSlowState {
        state: state_index(model, args.state)?,
        z: args.z0,
    };
    let rows = verify::convergence_sweep(
        model,
        start,
        kappa,
        args.horizon,
        &args.eps,
        args.paths,
        args.seed,
        args.limit_dt,
    )?;
    let mut table = ReportTable::new(
        "weak convergence sweep",
        &[
            "epsilon",
            "dt",
            "paths",
            "distance_half",
            "distance_full",
            "distance",
            "std_error",
        ],
    );
    for r in &rows {
        table.runtime_comment(&format!("eps_{}", format_float(r.epsilon)), r.runtime_s);
        table.push_row(vec![
            r.epsilon.into(),
            r.dt.into(),
            r.paths.into(),
            r.distance_half.into(),
            r.distance_full.into(),
            r.distance.into(),
            r.std_error.into(),
        ]);
    }
    let prov = Provenance::new(stamp, Some(args.seed), command_line);
    emit(&table, &prov, &args.output)?;
    let mut ok = true;
    if args.check {
        for w in rows.windows(2) {
            ok &= check_line(
                w[1].distance < w[0].distance,
                &format!(
                    "distance did not decrease from eps={} ({}) to eps={} ({})",
                    format_float(w[0].epsilon),
                    format_float(w[0].distance),
                    format_float(w[1].epsilon),
                    format_float(w[1].distance)
                ),
            );
        }
        if let (Some(bound), Some(last)) = (args.final_below, rows.last()) {
            ok &= check_line(
                last.distance <= bound,
                &format!(
                    "final distance {} above the bound {}",
                    format_float(last.distance),
                    format_float(bound)
                ),
            );
        }
    }
    Ok(ok)
}

fn cmd_spectral(args: SpectralArgs, command_line: &str) -> Result<bool, CliError> {
    let (loaded, stamp) = load(&args.model)?;
    let model = &loaded.model;
    let prov = Provenance::new(stamp, None, command_line);
    if let Some(eps) = args.eps {
        if args.delta.len() != 1 {
            return Err(CliError::Usage(
                "the profile mode takes exactly one --delta".to_string(),
            ));
        }
        let clock = Instant::now();
        let profile = spectral::f_epsilon_profile(model, args.delta[0], eps)?;
        let mut table =
            ReportTable::new("boundary-layer profile", &["i", "ode", "closed_form", "gap"]);
        table.runtime_comment("profile", clock.elapsed().as_secs_f64());
        table.comment(format!("delta: {}", format_float(profile.delta)));
        table.comment(format!("epsilon: {}", format_float(profile.epsilon)));
        table.comment(format!("intervals: {}", profile.intervals));
        table.comment(format!("grid_diff: {}", format_float(profile.grid_diff)));
        table.comment(format!("window_gap: {}", format_float(profile.window_gap)));
        for i in 0..profile.ode.len() {
            table.push_row(vec![
                (i + 1).into(),
                profile.ode[i].into(),
                profile.closed_form[i].into(),
                (profile.ode[i] - profile.closed_form[i]).abs().into(),
            ]);
        }
        emit(&table, &prov, &args.output)?;
        return Ok(true);
    }

    let mut table = ReportTable::new(
        "window spectral sweep",
        &[
            "delta",
            "lambda1",
            "gap",
            "alpha",
            "alpha_limit",
            "pi_proj",
            "p1",
            "identity_gap",
            "proj_gap",
            "eigen_residual",
            "psi_residual",
        ],
    );
    let mut reports = Vec::new();
    for &delta in &args.delta {
        let rep = spectral::alpha_and_projection(model, delta)?;
        let identity_gap = (rep.projection + 1.0 / rep.alpha).abs();
        let proj_gap = (rep.projection - rep.p1).abs();
        table.push_row(vec![
            rep.delta.into(),
            rep.lambda1.into(),
            rep.gap.into(),
            rep.alpha.into(),
            rep.alpha_limit.into(),
            rep.projection.into(),
            rep.p1.into(),
            identity_gap.into(),
            proj_gap.into(),
            rep.eigen_residual.into(),
            rep.psi_residual.into(),
        ]);
        reports.push(rep);
    }
    emit(&table, &prov, &args.output)?;
    let mut ok = true;
    if args.check {
        let mut sorted: Vec<_> = reports.iter().collect();
        sorted.sort_by(|a, b| b.delta.total_cmp(&a.delta));
        for w in sorted.windows(2) {
            let ga = (w[0].projection - w[0].p1).abs();
            let gb = (w[1].projection - w[1].p1).abs();
            ok &= check_line(
                gb < ga,
                &format!(
                    "|projection - p1| did not decrease from delta={} ({}) to delta={} ({})",
                    format_float(w[0].delta),
                    format_float(ga),
                    format_float(w[1].delta),
                    format_float(gb)
                ),
            );
        }
        if let Some(last) = sorted.last() {
            let g = (last.projection - last.p1).abs();
            ok &= check_line(
                g <= 1e-2,
                &format!("final |projection - p1| = {} above 1e-2", format_float(g)),
            );
        }
    }
    Ok(ok)
}

fn cmd_exitprob(args: ExitprobArgs, command_line: &str) -> Result<bool, CliError> {
    let (loaded, stamp) = load(&args.model)?;
    let model = &loaded.model;
    let cfg = SimConfig {
        epsilon: args.eps,
        kappa: resolve_kappa(model, args.kappa)?,
        dt: args.dt.unwrap_or(args.eps / 10.0),
        horizon: args.horizon,
        paths: args.paths,
        seed: args.seed,
        grid_points: 2,
    };
    cfg.ensure_valid()?;
    let prov = Provenance::new(stamp, Some(args.seed), command_line);

    if let Some(level) = args.level {
        let start = FastSlowState {
            state: state_index(model, args.state)?,
            z: args.z0,
        };
        let clock = Instant::now();
        let stats = verify::branching_frequencies(model, start, &cfg, level)?;
        let mut table = ReportTable::new(
            "class frequencies at the hitting level",
            &[
                "level",
                "paths",
                "hit",
                "freq_class1",
                "se",
                "p1",
                "mean_hit_time",
            ],
        );
        table.runtime_comment("ensemble", clock.elapsed().as_secs_f64());
        table.push_row(vec![
            level.into(),
            stats.paths.into(),
            stats.hit.into(),
            stats.freq_class1.into(),
            stats.se.into(),
            stats.p1.into(),
            stats.mean_hit_time.into(),
        ]);
        emit(&table, &prov, &args.output)?;
        let mut ok = true;
        if args.check {
            ok &= check_line(
                stats.hit == stats.paths,
                &format!("{} of {} paths never reached the level", stats.paths - stats.hit, stats.paths),
            );
            let gap = (stats.freq_class1 - stats.p1).abs();
            ok &= check_line(
                gap <= 3.0 * stats.se,
                &format!(
                    "class-one frequency {} differs from p1 {} by {} > 3se = {}",
                    format_float(stats.freq_class1),
                    format_float(stats.p1),
                    format_float(gap),
                    format_float(3.0 * stats.se)
                ),
            );
        }
        return Ok(ok);
    }

    let clock = Instant::now();
    let mut rows = verify::vertex_exit_probabilities(model, &cfg, args.delta)?;
    if args.limit {
        let limit_dt = args.limit_dt.unwrap_or(args.delta * args.delta / 100.0);
        rows.push(verify::limit_vertex_exits(
            model,
            args.delta,
            limit_dt,
            args.horizon,
            args.paths,
            args.seed,
        )?);
    }
    let classes = model.classes();
    let expected = if cfg.kappa == 1 {
        classes.vertex_weights
    } else {
        [0.0, classes.branching[0], classes.branching[1]]
    };
    let mut table = ReportTable::new(
        "band exit frequencies",
        &[
            "start",
            "paths",
            "exited",
            "f_left",
            "se_left",
            "f_right1",
            "se_right1",
            "f_right2",
            "se_right2",
            "mean_exit_time",
        ],
    );
    table.runtime_comment("ensemble", clock.elapsed().as_secs_f64());
    table.comment(format!(
        "expected: {},{},{}",
        format_float(expected[0]),
        format_float(expected[1]),
        format_float(expected[2])
    ));
    for r in &rows {
        table.push_row(vec![
            r.label.clone().into(),
            r.paths.into(),
            r.exited.into(),
            r.freq[0].into(),
            r.se[0].into(),
            r.freq[1].into(),
            r.se[1].into(),
            r.freq[2].into(),
            r.se[2].into(),
            r.mean_exit_time.into(),
        ]);
    }
    emit(&table, &prov, &args.output)?;
    let mut ok = true;
    if args.check {
        let pooled = rows
            .iter()
            .find(|r| r.label == "pooled")
            .expect("band mode always emits a pooled row");
        ok &= check_line(
            pooled.exited == pooled.paths,
            &format!(
                "{} of {} paths never left the band",
                pooled.paths - pooled.exited,
                pooled.paths
            ),
        );
        for (l, &want) in expected.iter().enumerate() {
            let gap = (pooled.freq[l] - want).abs();
            let bound = 3.0 * pooled.se[l];
            ok &= check_line(
                gap <= bound,
                &format!(
                    "pooled frequency {} for bucket {} differs from {} by {} > 3se = {}",
                    format_float(pooled.freq[l]),
                    l,
                    format_float(want),
                    format_float(gap),
                    format_float(bound)
                ),
            );
        }
    }
    Ok(ok)
}

fn cmd_defect(args: DefectArgs, command_line: &str) -> Result<bool, CliError> {
    let (loaded, stamp) = load(&args.model)?;
    let model = &loaded.model;
    let f = graph::make_test_function(
        model,
        (args.slope1, args.slope2),
        args.a0,
        args.support,
        args.label.clone(),
    )?;
    let start = FastSlowState {
        state: state_index(model, args.state)?,
        z: args.z0,
    };
    let prov = Provenance::new(stamp, Some(args.seed), command_line);
    let clock = Instant::now();
    let estimate = if args.limit {
        let y0 = model.project_h(start.state, start.z);
        verify::limit_defect(
            model,
            &f,
            y0,
            args.limit_dt,
            args.horizon,
            args.paths,
            args.seed,
            args.grid,
        )?
    } else {
        let eps = args
            .eps
            .ok_or_else(|| CliError::Usage("--eps is required without --limit".into()))?;
        let cfg = SimConfig {
            epsilon: eps,
            kappa: resolve_kappa(model, args.kappa)?,
            dt: args.dt.unwrap_or(eps / 10.0),
            horizon: args.horizon,
            paths: args.paths,
            seed: args.seed,
            grid_points: args.grid,
        };
        verify::martingale_defect(model, &f, start, &cfg)?
    };
    let mut table = ReportTable::new(
        "martingale defect",
        &[
            "label",
            "epsilon",
            "horizon",
            "paths",
            "mean",
            "std_error",
            "zscore",
        ],
    );
    table.runtime_comment("ensemble", clock.elapsed().as_secs_f64());
    let zscore = if estimate.std_error > 0.0 {
        estimate.mean / estimate.std_error
    } else {
        f64::NAN
    };
    table.push_row(vec![
        estimate.label.clone().into(),
        estimate.epsilon.into(),
        estimate.horizon.into(),
        estimate.paths.into(),
        estimate.mean.into(),
        estimate.std_error.into(),
        zscore.into(),
    ]);
    emit(&table, &prov, &args.output)?;
    let mut ok = true;
    if args.check {
        ok = check_line(
            estimate.mean.abs() <= 3.0 * estimate.std_error,
            &format!(
                "defect mean {} exceeds 3se = {}",
                format_float(estimate.mean),
                format_float(3.0 * estimate.std_error)
            ),
        );
    }
    Ok(ok)
}

fn cmd_cycles(args: CyclesArgs, command_line: &str) -> Result<bool, CliError> {
    let (loaded, stamp) = load(&args.model)?;
    let model = &loaded.model;
    let cfg = SimConfig {
        epsilon: args.eps,
        kappa: resolve_kappa(model, args.kappa)?,
        dt: args.dt.unwrap_or(args.eps / 10.0),
        horizon: args.horizon,
        paths: args.paths,
        seed: args.seed,
        grid_points: 2,
    };
    cfg.ensure_valid()?;
    let start = FastSlowState {
        state: state_index(model, args.state)?,
        z: args.z0,
    };
    let clock = Instant::now();
    let rep = verify::cycle_diagnostic(model, start, &cfg, args.delta)?;
    let mut table = ReportTable::new("return cycle tail", &["j", "survival"]);
    table.runtime_comment("ensemble", clock.elapsed().as_secs_f64());
    table.comment(format!("mean_cycles: {}", format_float(rep.mean_cycles)));
    table.comment(format!("se_cycles: {}", format_float(rep.se_cycles)));
    table.comment(match rep.log_slope {
        Some(s) => format!("log_slope: {}", format_float(s)),
        None => "log_slope: none".to_string(),
    });
    for &(j, frac) in &rep.survival {
        table.push_row(vec![j.into(), frac.into()]);
    }
    let prov = Provenance::new(stamp, Some(args.seed), command_line);
    emit(&table, &prov, &args.output)?;
    Ok(true)
}
