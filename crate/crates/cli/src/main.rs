//! `sgaps`: runs the shrinking-gap reduction pipeline and long-time
//! propagation experiments from a TOML or JSON config.

mod commands;
mod config;
mod error;
mod setup;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};
use shrinking_gaps::evolution::FitMethod;

use commands::Outcome;
use config::ExperimentConfig;
use error::{CliError, CliResult, EXIT_BOUND, EXIT_PASS, EXIT_VALIDATION};
use setup::Setup;

#[derive(Parser, Debug)]
#[command(name = "sgaps", version, about = "Shrinking-gap Floquet reduction and energy-diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Refuse inputs beyond the smallness conditions (the default).
    #[arg(long, global = true, conflicts_with = "permissive")]
    strict: bool,
    /// Record failed bound checks as warnings and continue.
    #[arg(long, global = true)]
    permissive: bool,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for a random initial state; overrides `evolution.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run once per value, e.g. `--sweep model.N=64,128`. Repeat for a grid.
    #[arg(long, global = true, value_name = "KEY=V1,V2,...")]
    sweep: Vec<String>,
    /// Write a gnuplot script next to the trace CSV.
    #[arg(long, global = true)]
    emit_gnuplot: bool,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Class norms, gap certificate and norm-calculus checks of the perturbation.
    Norms,
    /// Gap constants c_H and C_H of the unperturbed spectrum.
    CertifyGaps,
    /// One anti-adiabatic gauge transform of the perturbation.
    Antiadiabatic,
    /// Progressive diagonalization of H + Z̄.
    Diagonalize,
    /// Full q-step reduction to H + A + B(t).
    Reduce,
    /// Long-time propagation, energy trace and exponent fit.
    Evolve,
    /// Fit a diffusion exponent to an existing trace CSV.
    Fit {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        window: f64,
        #[arg(long, value_enum, default_value_t = MethodArg::Envelope)]
        method: MethodArg,
    },
    /// Admissible coupling for the configured reduction.
    Threshold,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Tail,
    Envelope,
}

impl From<MethodArg> for FitMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Tail => FitMethod::TailLsq,
            MethodArg::Envelope => FitMethod::EnvelopeLsq,
        }
    }
}

/// One sweep point: overrides applied on top of the config file.
type Point = Vec<(String, toml::Value)>;

fn sweep_points(specs: &[String]) -> CliResult<Vec<Point>> {
    let mut points: Vec<Point> = vec![vec![]];
    for spec in specs {
        let (key, values) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--sweep '{spec}': expected KEY=V1,V2,...")))?;
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(CliError::Validation(format!("--sweep '{spec}': no values")));
        }
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.trim().to_string(), config::parse_value(v)));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

fn point_label(point: &Point) -> String {
    point
        .iter()
        .map(|(k, v)| {
            let v = match v {
                toml::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            format!("{k}={v}")
        })
        .collect::<Vec<_>>()
        .join("_")
        .replace(['/', '\\', ' ', '"'], "")
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value");
    s.push('\n');
    s
}

fn persist(dir: &Path, outcome: &Outcome) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_file(&dir.join(format!("{}.json", outcome.name)), &pretty(&outcome.report))?;
    for (name, contents) in &outcome.files {
        write_file(&dir.join(name), contents)?;
    }
    Ok(())
}

fn load_config(cli: &Cli, point: &Point) -> CliResult<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Validation("this command needs --config PATH".into()))?;
    let mut cfg = config::load(path, point)?;
    if cli.permissive {
        cfg.pipeline.strict = false;
    }
    if cli.strict {
        cfg.pipeline.strict = true;
    }
    if let Some(seed) = cli.seed {
        cfg.evolution.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

/// Runs the command for one sweep point and writes its files.
fn run_point(cli: &Cli, point: &Point, subdir: Option<&str>) -> CliResult<Outcome> {
    let cfg = load_config(cli, point)?;
    let dir = match subdir {
        Some(s) => cfg.output.dir.join(s),
        None => cfg.output.dir.clone(),
    };
    let setup = Setup::build(cfg)?;
    let outcome = match &cli.command {
        Command::Norms => commands::norms(&setup),
        Command::CertifyGaps => commands::certify_gaps(&setup),
        Command::Antiadiabatic => commands::antiadiabatic(&setup),
        Command::Diagonalize => commands::diagonalize(&setup),
        Command::Reduce => commands::reduce(&setup),
        Command::Evolve => commands::evolve(&setup, cli.emit_gnuplot),
        Command::Threshold => commands::threshold(&setup),
        Command::Fit { .. } => unreachable!("handled without a config"),
    };
    let outcome = match outcome {
        Err(CliError::Refused { message, report }) => {
            persist(&dir, &Outcome { name: "refused", report: report.clone(), files: vec![], violated: true })?;
            return Err(CliError::Refused { message, report });
        }
        other => other?,
    };
    persist(&dir, &outcome)?;
    Ok(outcome)
}

fn exit_of(r: &CliResult<Outcome>) -> i32 {
    match r {
        Ok(o) if o.violated => EXIT_BOUND,
        Ok(_) => EXIT_PASS,
        Err(e) => e.code(),
    }
}

fn report_error(e: &CliError) {
    if let CliError::Refused { report, .. } = e {
        print!("{}", pretty(report));
    }
    eprintln!("error: {e}");
}

fn run(cli: &Cli) -> i32 {
    if let Command::Fit { trace, window, method } = &cli.command {
        let r = commands::fit(trace, *window, (*method).into());
        if let Ok(o) = &r {
            print!("{}", pretty(&o.report));
            if let Some(dir) = &cli.out {
                if let Err(e) = persist(dir, o) {
                    report_error(&e);
                    return e.code();
                }
            }
        }
        if let Err(e) = &r {
            report_error(e);
        }
        return exit_of(&r);
    }
    let points = match sweep_points(&cli.sweep) {
        Ok(p) => p,
        Err(e) => {
            report_error(&e);
            return e.code();
        }
    };
    if cli.sweep.is_empty() {
        let r = run_point(cli, &points[0], None);
        match &r {
            Ok(o) => print!("{}", pretty(&o.report)),
            Err(e) => report_error(e),
        }
        return exit_of(&r);
    }
    let labels: Vec<String> = points.iter().map(point_label).collect();
    let results: Vec<CliResult<Outcome>> =
        points.par_iter().zip(labels.par_iter()).map(|(p, l)| run_point(cli, p, Some(l))).collect();
    let mut code = EXIT_PASS;
    let mut runs = Vec::with_capacity(results.len());
    for ((point, label), r) in points.iter().zip(&labels).zip(&results) {
        let c = exit_of(r);
        code = code.max(c);
        let overrides: serde_json::Map<String, Value> =
            point.iter().map(|(k, v)| (k.clone(), serde_json::to_value(v).unwrap_or(Value::Null))).collect();
        runs.push(match r {
            Ok(o) => json!({"dir": label, "overrides": overrides, "exit_code": c, "report": o.report}),
            Err(e) => json!({"dir": label, "overrides": overrides, "exit_code": c, "error": e.to_string()}),
        });
    }
    let summary = json!({"sweep": cli.sweep, "runs": runs});
    print!("{}", pretty(&summary));
    if let Some(dir) = cli.out.clone().or_else(|| load_config(cli, &points[0]).ok().map(|c| c.output.dir)) {
        let out = Outcome { name: "sweep", report: summary, files: vec![], violated: false };
        if let Err(e) = persist(&dir, &out) {
            report_error(&e);
            return code.max(e.code());
        }
    }
    code
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_VALIDATION as u8),
            };
        }
    };
    ExitCode::from(run(&cli) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid_is_cartesian_in_order() {
        let pts = sweep_points(&["a=1,2".into(), "b=x,y".into()]).unwrap();
        let labels: Vec<String> = pts.iter().map(point_label).collect();
        assert_eq!(labels, ["a=1_b=x", "a=1_b=y", "a=2_b=x", "a=2_b=y"]);
    }

    #[test]
    fn malformed_sweep_is_a_validation_error() {
        assert_eq!(sweep_points(&["novalue".into()]).unwrap_err().code(), EXIT_VALIDATION);
    }
}
