//! Command-line front end for the solver and the sensitivity experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use log::{info, warn};
use ns2dsens::diagnostics::{check_apriori, identity_suite, BoundCheck};
use ns2dsens::dynamics::SystemKind;
use ns2dsens::experiments::{
    run_da_dq_convergence, run_da_sync, run_dq_convergence, run_reynolds_switch, run_taylor_green_suite, ExperimentError,
    ExperimentReport, Outcome, TaylorGreenSpec,
};
use ns2dsens::interp::{verify_bound, InterpolantSpec};
use ns2dsens::io::{
    emit_diagnostics_csv, final_summary, interpolant_label, load_config, write_report, write_trajectory,
    write_trajectory_snapshots, ConfigError, IoError, RunConfig,
};
use ns2dsens::par::Execution;
use ns2dsens::spectral::{GridSpec, SpectralField};
use ns2dsens::stepper::{integrate, IntegrateError, Trajectory};

#[derive(Parser, Debug)]
#[command(name = "ns2dsens", version, about = "2D Navier-Stokes sensitivity and data assimilation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Cmd {
    /// Integrate the configured system.
    Simulate,
    /// Integrate a nudged system (`da` unless a nudged kind is configured).
    Assimilate,
    /// Integrate a sensitivity system (`nse-sens` unless `da-sens` is configured).
    Sensitivity,
    /// Difference-quotient convergence sweep.
    DqSweep,
    /// Difference-quotient sweep on assimilated solutions.
    DaDqSweep,
    /// Synchronization of the nudged solution with the reference.
    Sync,
    /// Mid-run viscosity switch of the assimilated solution.
    Switch,
    /// Closed-form Taylor-Green checks.
    TaylorGreen,
    /// Identity, interpolant and Taylor-Green self checks.
    Verify,
}

impl Cmd {
    fn dir_name(self) -> &'static str {
        match self {
            Cmd::Simulate => "simulate",
            Cmd::Assimilate => "assimilate",
            Cmd::Sensitivity => "sensitivity",
            Cmd::DqSweep => "dq-sweep",
            Cmd::DaDqSweep => "da-dq-sweep",
            Cmd::Sync => "sync",
            Cmd::Switch => "switch",
            Cmd::TaylorGreen => "taylor-green",
            Cmd::Verify => "verify",
        }
    }
}

const OK: u8 = 0;
const VERDICT_FAILED: u8 = 1;
const CONFIG_ERROR: u8 = 2;
const BLOW_UP: u8 = 3;

enum Failure {
    Config(String),
    BlowUp(String, Option<PathBuf>),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

struct Ctx {
    quiet: bool,
    out: PathBuf,
}

impl Ctx {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "error" } else { "warn" }))
        .init();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            CONFIG_ERROR
        }
        Err(Failure::BlowUp(msg, path)) => {
            eprintln!("blow-up: {msg}");
            if let Some(p) = path {
                eprintln!("blow-up report: {}", p.display());
            }
            BLOW_UP
        }
    };
    ExitCode::from(code)
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    if cli.command == Cmd::Verify || cli.command == Cmd::TaylorGreen {
        let cfg = cli.config.as_deref().map(load).transpose()?;
        let out = output_root(cli, cfg.as_ref()).join(cli.command.dir_name());
        fs::create_dir_all(&out)?;
        let ctx = Ctx { quiet: cli.quiet, out };
        return if cli.command == Cmd::Verify {
            verify(&ctx, cfg.as_ref(), cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0))
        } else {
            taylor_green(&ctx)
        };
    }
    let Some(path) = cli.config.as_deref() else {
        let mut cmd = Cli::command();
        eprintln!("error: --config is required for {}\n\n{}", cli.command.dir_name(), cmd.render_usage());
        return Ok(CONFIG_ERROR);
    };
    let mut cfg = load(path)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = output_root(cli, Some(&cfg)).join(cli.command.dir_name());
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.toml"), cfg.echo())?;
    let ctx = Ctx { quiet: cli.quiet, out };
    match cli.command {
        Cmd::Simulate => simulate(&ctx, &cfg),
        Cmd::Assimilate => {
            if !matches!(cfg.system.kind, SystemKind::Da | SystemKind::DaSens | SystemKind::DaDqDirect) {
                cfg.system.kind = SystemKind::Da;
                cfg.validate()?;
            }
            simulate(&ctx, &cfg)
        }
        Cmd::Sensitivity => {
            if !matches!(cfg.system.kind, SystemKind::NseSens | SystemKind::DaSens) {
                cfg.system.kind = SystemKind::NseSens;
                cfg.validate()?;
            }
            simulate(&ctx, &cfg)
        }
        Cmd::DqSweep | Cmd::DaDqSweep | Cmd::Sync | Cmd::Switch => experiment(&ctx, &cfg, cli.command),
        Cmd::TaylorGreen | Cmd::Verify => unreachable!(),
    }
}

fn load(path: &Path) -> Result<RunConfig, Failure> {
    load_config(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn output_root(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn initial_data(cfg: &RunConfig, grid: &GridSpec) -> Result<Vec<(String, SpectralField)>, Failure> {
    let u0 = cfg.initial(grid)?;
    let v0 = cfg.assimilated_initial(grid)?;
    let spec = cfg.system();
    let mut init = Vec::new();
    for m in &spec.members {
        if m.equation.is_flow() {
            let field = if m.equation.is_nudged() { v0.clone() } else { u0.clone() };
            init.push((m.name.clone(), field));
        }
    }
    info!("{}: initial data for {} members", spec.kind, init.len());
    Ok(init)
}

fn simulate(ctx: &Ctx, cfg: &RunConfig) -> Result<u8, Failure> {
    let grid = cfg.grid()?;
    let p = cfg.physics(&grid)?;
    let spec = cfg.system();
    let init = initial_data(cfg, &grid)?;
    let refs: Vec<(&str, &SpectralField)> = init.iter().map(|(n, f)| (n.as_str(), f)).collect();
    let traj = integrate(&spec, &refs, &p, &cfg.solver).map_err(|e| integrate_failure(ctx, e))?;
    write_trajectory_artifacts(ctx, &traj)?;
    let checks = check_apriori(&traj, &p);
    fs::write(ctx.out.join("apriori.json"), serde_json::to_string_pretty(&checks).map_err(IoError::from)?)?;
    ctx.say(format!("{} on N = {}, {}", spec.kind, grid.n(), interpolant_label(&p.interp)));
    ctx.say(final_summary(&traj));
    if traj.cfl_violations > 0 {
        ctx.say(format!("CFL exceeded on {} steps (max {:.3})", traj.cfl_violations, traj.max_cfl));
    }
    for note in &traj.admissibility_notes {
        ctx.say(format!("note: {note}"));
    }
    Ok(summarize_checks(ctx, &checks))
}

fn write_trajectory_artifacts(ctx: &Ctx, traj: &Trajectory) -> Result<(), Failure> {
    emit_diagnostics_csv(traj, &ctx.out.join("diagnostics.csv"))?;
    write_trajectory(traj, &ctx.out.join("trajectory.json"))?;
    let snaps = ctx.out.join("snapshots");
    fs::create_dir_all(&snaps)?;
    write_trajectory_snapshots(traj, &snaps, "state")?;
    ctx.say(format!("artifacts in {}", ctx.out.display()));
    Ok(())
}

fn summarize_checks(ctx: &Ctx, checks: &[BoundCheck]) -> u8 {
    let failed: Vec<&BoundCheck> = checks.iter().filter(|c| !c.pass).collect();
    for c in &failed {
        ctx.say(format!("FAIL {} (margin {:.3e})", c.name, c.margin));
    }
    ctx.say(format!("{} of {} checks passed", checks.len() - failed.len(), checks.len()));
    if failed.is_empty() {
        OK
    } else {
        VERDICT_FAILED
    }
}

fn integrate_failure(ctx: &Ctx, e: IntegrateError) -> Failure {
    match e {
        IntegrateError::BlowUp { .. } => blow_up(ctx, e.to_string(), &e),
        other => Failure::Config(other.to_string()),
    }
}

fn blow_up(ctx: &Ctx, msg: String, e: &IntegrateError) -> Failure {
    let IntegrateError::BlowUp {
        member,
        time,
        step,
        history,
    } = e
    else {
        return Failure::Config(msg);
    };
    let report = serde_json::json!({
        "error": msg,
        "member": member,
        "time": time,
        "step": step,
        "history": history,
    });
    let path = ctx.out.join("blowup.json");
    match serde_json::to_string_pretty(&report).map_err(IoError::from).map(|s| fs::write(&path, s)) {
        Ok(Ok(())) => Failure::BlowUp(msg, Some(path)),
        _ => Failure::BlowUp(msg, None),
    }
}

fn experiment_failure(ctx: &Ctx, e: ExperimentError) -> Failure {
    match e {
        ExperimentError::Integrate { context, source } => match source {
            IntegrateError::BlowUp { .. } => blow_up(ctx, format!("{context}: {source}"), &source),
            other => Failure::Config(format!("{context}: {other}")),
        },
        other => Failure::Config(other.to_string()),
    }
}

fn experiment(ctx: &Ctx, cfg: &RunConfig, cmd: Cmd) -> Result<u8, Failure> {
    let grid = cfg.grid()?;
    let p = cfg.physics(&grid)?;
    let u0 = cfg.initial(&grid)?;
    let v0 = cfg.assimilated_initial(&grid)?;
    let solver = &cfg.solver;
    let report = match cmd {
        Cmd::DqSweep => run_dq_convergence(&cfg.sweep(), &u0, &p, solver),
        Cmd::DaDqSweep => run_da_dq_convergence(&cfg.sweep(), &u0, &v0, &p, solver),
        Cmd::Sync => run_da_sync(&p, solver, &u0, &v0, cfg.sync_criteria()),
        Cmd::Switch => {
            let (Some(t_switch), Some(nu_new)) = (cfg.experiment.t_switch, cfg.experiment.nu_new) else {
                return Err(Failure::Config("switch needs experiment.t_switch and experiment.nu_new".into()));
            };
            run_reynolds_switch(&p, solver, &u0, &v0, t_switch, nu_new).and_then(|(report, traj)| {
                write_trajectory_artifacts(ctx, &traj).map_err(|_| ExperimentError::InvalidSpec("cannot write artifacts".into()))?;
                Ok(report)
            })
        }
        _ => unreachable!(),
    }
    .map_err(|e| experiment_failure(ctx, e))?;
    finish_report(ctx, &report)
}

fn finish_report(ctx: &Ctx, report: &ExperimentReport) -> Result<u8, Failure> {
    let path = ctx.out.join("report.json");
    write_report(report, &path)?;
    ctx.say(format!("{}: config {}", report.name, &report.metadata.config_hash[..12.min(report.metadata.config_hash.len())]));
    for row in &report.table {
        let ratio = row.ratio.map(|r| format!("{r:.4}")).unwrap_or_else(|| "-".into());
        ctx.say(format!("  delta {:.4e}  error {:.6e}  ratio {ratio}", row.delta, row.error));
    }
    for (k, v) in &report.scalars {
        ctx.say(format!("  {k} = {v:.6e}"));
    }
    for v in &report.verdicts {
        let tag = match v.outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Inconclusive => "INCONCLUSIVE",
        };
        ctx.say(format!("{tag} {}: {}", v.name, v.detail));
    }
    for note in &report.metadata.notes {
        ctx.say(format!("note: {note}"));
    }
    ctx.say(format!("report: {}", path.display()));
    Ok(if report.passed() { OK } else { VERDICT_FAILED })
}

fn taylor_green(ctx: &Ctx) -> Result<u8, Failure> {
    let report = run_taylor_green_suite(&TaylorGreenSpec::default()).map_err(|e| experiment_failure(ctx, e))?;
    finish_report(ctx, &report)
}

fn verify(ctx: &Ctx, cfg: Option<&RunConfig>, seed: u64) -> Result<u8, Failure> {
    let exec = Execution::default();
    let grid = match cfg {
        Some(c) => c.grid()?,
        None => GridSpec::new(32).map_err(|e| Failure::Config(e.to_string()))?,
    };
    let mut ok = true;
    let checks = identity_suite(&grid, 8, seed, exec).map_err(|e| Failure::Config(e.to_string()))?;
    for c in &checks {
        ok &= c.pass;
        ctx.say(format!("{} {} (margin {:.3e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.margin));
    }
    let k = grid.cutoff() / 2;
    let mut interps = vec![InterpolantSpec::spectral_projection(k.max(1))];
    if let Some(m) = (2..=grid.n()).rev().find(|m| grid.n() % m == 0 && *m <= grid.n() / 4) {
        interps.push(InterpolantSpec::box_average(m));
    }
    if let Some(c) = cfg {
        interps.insert(0, c.physics.interpolant.spec());
    }
    for spec in interps {
        match verify_bound(&spec, &grid, 16, seed, exec) {
            Ok(r) => {
                ok &= r.pass;
                ctx.say(format!(
                    "{} interpolant bound, {}: max ratio {:.4e} <= c0 {:.4e}",
                    if r.pass { "PASS" } else { "FAIL" },
                    interpolant_label(&spec),
                    r.max_ratio,
                    spec.c0
                ));
            }
            Err(e) => {
                warn!("skipping {}: {e}", interpolant_label(&spec));
            }
        }
    }
    let tg = TaylorGreenSpec {
        n: 32,
        execution: exec,
        ..TaylorGreenSpec::default()
    };
    let report = run_taylor_green_suite(&tg).map_err(|e| experiment_failure(ctx, e))?;
    let code = finish_report(ctx, &report)?;
    Ok(if ok && code == OK { OK } else { VERDICT_FAILED })
}
