use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use contact_ddp::ddp::{solve, Regularization, SolveTrace};
use contact_ddp::scenarios::config::{ConfigError, LoadedConfig, ScenarioConfig};
use contact_ddp::scenarios::{diagnostics, ik_baseline, kkt_dump, write_diagnostics_csv, write_trajectory_csv, DiagnosticsReport, Scenario};
use nalgebra::DVector;
use serde_json::{json, Value};

const CONVERGED: u8 = 0;
const NOT_CONVERGED: u8 = 2;
const CONFIG_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "contact-ddp", version, about = "Trajectory optimization over rigid-contact dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Reg {
    Quu,
    Vxx,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write its outputs.
    Run {
        config: PathBuf,
        /// Output directory [default: <output root>/<scenario name>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root for default output directories.
        #[arg(long, env = "CONTACT_DDP_OUT", default_value = "runs", hide_env_values = true)]
        out_root: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, value_enum)]
        reg: Option<Reg>,
        /// Also run the instantaneous IK baseline and compare.
        #[arg(long)]
        ik_baseline: bool,
        /// Write the KKT system of every step to kkt.json.
        #[arg(long)]
        dump_kkt: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Print every solver iteration to stderr.
        #[arg(short, long)]
        verbose: bool,
    },
    /// Check a config without solving.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => validate(&config),
        Command::Run {
            config,
            out,
            out_root,
            iterations,
            dt,
            reg,
            ik_baseline,
            dump_kkt,
            seed,
            verbose,
        } => {
            let overrides = Overrides { iterations, dt, reg, seed };
            let flags = Flags { ik_baseline, dump_kkt, verbose };
            run(&config, out, &out_root, &overrides, &flags)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(NOT_CONVERGED)
        }
    }
}

fn report_config_error(e: &ConfigError) -> u8 {
    match e {
        ConfigError::Invalid(issues) => {
            for i in issues {
                eprintln!("error: {i}");
            }
        }
        other => eprintln!("error: {other}"),
    }
    CONFIG_ERROR
}

fn validate(path: &Path) -> Result<u8> {
    let LoadedConfig { config, base_dir } = match ScenarioConfig::load(path) {
        Ok(c) => c,
        Err(e) => return Ok(report_config_error(&e)),
    };
    let issues = config.validate(&base_dir);
    if issues.is_empty() {
        println!("ok: {} ({}, {} s)", path.display(), config.name, config.phase_duration());
        return Ok(0);
    }
    Ok(report_config_error(&ConfigError::Invalid(issues)))
}

struct Overrides {
    iterations: Option<usize>,
    dt: Option<f64>,
    reg: Option<Reg>,
    seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, config: &mut ScenarioConfig) {
        if let Some(n) = self.iterations {
            config.solver.max_iterations = n;
        }
        if let Some(dt) = self.dt {
            config.dt = dt;
        }
        if let Some(r) = self.reg {
            config.solver.regularization = match r {
                Reg::Quu => Regularization::Quu,
                Reg::Vxx => Regularization::Vxx,
            };
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
    }
}

struct Flags {
    ik_baseline: bool,
    dump_kkt: bool,
    verbose: bool,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_outputs(scenario: &Scenario, dir: &Path, prefix: &str, xs: &[DVector<f64>], us: &[DVector<f64>], lambdas: &[DVector<f64>]) -> Result<DiagnosticsReport> {
    write_trajectory_csv(scenario, xs, us, lambdas, create(dir, &format!("{prefix}trajectory.csv"))?)?;
    let report = diagnostics(scenario, xs, us, lambdas);
    write_diagnostics_csv(scenario, &report, create(dir, &format!("{prefix}diagnostics.csv"))?)?;
    Ok(report)
}

fn report_json(scenario: &Scenario, r: &DiagnosticsReport, xs: &[DVector<f64>]) -> Value {
    let peaks: serde_json::Map<String, Value> = r.contact_names.iter().cloned().zip(r.peak_normals.iter().map(|&v| json!(v))).collect();
    json!({
        "peak_normal": r.peak_normal,
        "peak_normals": peaks,
        "max_stance_drift": r.max_stance_drift(),
        "phase_drift": r.phase_drift,
        "angular_momentum_deviation": r.angular_momentum_deviation,
        "max_kkt_residual": r.max_kkt_residual,
        "max_com_error": r.max_com_error,
        "max_limit_violation": r.max_limit_violation,
        "final_base_angle": xs.last().map(|x| x[2]),
        "horizon": scenario.horizon(),
    })
}

fn run(path: &Path, out: Option<PathBuf>, out_root: &Path, overrides: &Overrides, flags: &Flags) -> Result<u8> {
    let started = Instant::now();
    let LoadedConfig { mut config, base_dir } = match ScenarioConfig::load(path) {
        Ok(c) => c,
        Err(e) => return Ok(report_config_error(&e)),
    };
    overrides.apply(&mut config);
    let scenario = match config.build(&base_dir) {
        Ok(s) => s,
        Err(e) => return Ok(report_config_error(&e)),
    };
    let dir = out.unwrap_or_else(|| out_root.join(&config.name));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let problem = scenario.problem();
    let trace: SolveTrace = solve(&problem, &scenario.warm_start, &scenario.settings).context("solve failed")?;
    if flags.verbose {
        for r in &trace.iterations {
            eprintln!(
                "iter {:>3}  cost {:<22} alpha {:<10} mu {:<10e} |Q_u| {:<10e} {}",
                r.iteration,
                r.cost,
                r.alpha,
                r.mu,
                r.gradient_norm,
                if r.accepted { "accepted" } else { "rejected" }
            );
        }
    }
    trace.write_iterations_csv(create(&dir, "iterations.csv")?)?;
    let report = write_outputs(&scenario, &dir, "", &trace.xs, &trace.us, &trace.lambdas)?;
    if flags.dump_kkt {
        let dump = kkt_dump(&scenario, &trace.xs, &trace.us);
        serde_json::to_writer_pretty(create(&dir, "kkt.json")?, &dump)?;
    }
    let rollout_only = config.solver.max_iterations == 0;
    let mut summary = json!({
        "name": config.name,
        "converged": trace.converged,
        "iterations": trace.iterations_used(),
        "initial_cost": trace.iterations[0].cost,
        "cost": trace.cost,
        "solver": trace.to_json(),
        "diagnostics": report_json(&scenario, &report, &trace.xs),
    });
    if flags.ik_baseline {
        let ik = ik_baseline(&scenario).context("IK baseline failed")?;
        let ik_report = write_outputs(&scenario, &dir, "ik_", &ik.xs, &ik.us, &ik.lambdas)?;
        let ratio = if ik_report.peak_normal > 0.0 { Some(report.peak_normal / ik_report.peak_normal) } else { None };
        summary["baseline"] = json!({
            "cost": ik.cost,
            "degenerate_steps": ik.degenerate_steps,
            "diagnostics": report_json(&scenario, &ik_report, &ik.xs),
        });
        summary["comparison"] = json!({
            "peak_force_ratio": ratio,
            "cost_ratio": trace.cost / ik.cost,
            "net_rotation": trace.xs.last().map(|x| x[2] - trace.xs[0][2]),
            "baseline_net_rotation": ik.xs.last().map(|x| x[2] - ik.xs[0][2]),
        });
    }
    summary["wall_time_s"] = json!(started.elapsed().as_secs_f64());
    serde_json::to_writer_pretty(create(&dir, "summary.json")?, &summary)?;
    println!(
        "{}: {} after {} iterations, cost {} (initial {}), peak normal force {} N -> {}",
        config.name,
        if trace.converged { "converged" } else { "not converged" },
        trace.iterations_used(),
        trace.cost,
        trace.iterations[0].cost,
        report.peak_normal,
        dir.display()
    );
    Ok(if trace.converged || rollout_only { CONVERGED } else { NOT_CONVERGED })
}
