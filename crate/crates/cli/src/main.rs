//! `gammastab`: normal forms, gamma-stabilizing synthesis and robust output
//! synchronization from JSON project files.
//!
//! Exit codes: 0 success, 1 input error, 2 assumption violation, 3 synthesis
//! or verification failure, 4 small-gain rejection, 5 failing acceptance rows.

mod commands;
mod config;
mod controller;
mod error;
mod reproduce;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::commands::{
    cmd_normal_form, cmd_synthesize, cmd_verify, default_seed, design_bundle, design_network, load, network_precheck,
    parameter_values, render_metrics, render_verify, sim_record_states, simulate_seeds, write_json, write_trace,
};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "gammastab", version, about = "Gamma-stabilization and robust output synchronization")]
struct Cli {
    /// Print reports as JSON instead of text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Project file; the bundled four-agent example when omitted.
    #[arg(long, env = "GAMMASTAB_INPUT")]
    input: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// SVD reduction, block dimensions and assumption checks for one system.
    NormalForm {
        #[command(flatten)]
        input: InputArgs,
        /// System to analyse, numbered from 1.
        #[arg(long, default_value_t = 1)]
        system: usize,
        /// Also save the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gamma-stabilizing controller with a re-verified certificate.
    Synthesize {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 1)]
        system: usize,
        /// Required gain; the project value when omitted.
        #[arg(long, allow_negative_numbers = true)]
        gamma: Option<f64>,
        /// Observer-based controller for the plant with its internal model.
        #[arg(long)]
        output_feedback: bool,
        /// Added to every kappa lower bound.
        #[arg(long, allow_negative_numbers = true)]
        margin: Option<f64>,
        /// Controller file to write.
        #[arg(long, default_value = "controller.json")]
        output: PathBuf,
    },
    /// Distributed synchronization design for the whole network.
    Sync {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, allow_negative_numbers = true)]
        gamma: Option<f64>,
        /// Simulate the designed network.
        #[arg(long)]
        simulate: bool,
        /// Directory for design.json, trace CSV, metrics and plot files.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Designs the network and runs seeded simulations in parallel.
    Simulate {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, allow_negative_numbers = true)]
        gamma: Option<f64>,
        /// Number of runs; seeds count up from the project seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Full run of the bundled example with the acceptance table.
    ReproduceExample {
        /// Uncertain parameters are drawn from the box scaled by this factor.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        w_scale: f64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Re-checks the certificate of a saved controller.
    Verify {
        #[arg(long)]
        controller: PathBuf,
    },
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).unwrap_or_else(|e| format!("{{\"error\": \"{e}\"}}")));
    } else {
        println!("{}", text());
    }
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let json = cli.json;
    match cli.command {
        Command::NormalForm { input, system, out } => {
            let project = load(input.input.as_deref())?;
            let report = cmd_normal_form(&project, system)?;
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            emit(json, &report, || report.render());
        }
        Command::Synthesize { input, system, gamma, output_feedback, margin, output } => {
            let project = load(input.input.as_deref())?;
            let (report, _) = cmd_synthesize(&project, system, gamma, output_feedback, margin, Some(&output))?;
            emit(json, &report, || report.render());
        }
        Command::Sync { input, gamma, simulate, out_dir } => {
            let project = load(input.input.as_deref())?;
            let inputs = network_precheck(&project, gamma)?;
            warn_all(&inputs.warnings);
            let net = design_network(&project, inputs.gamma)?;
            let bundle = design_bundle(&project, &net, &inputs);
            if let Some(dir) = &out_dir {
                write_json(&dir.join("design.json"), &bundle)?;
            }
            let mut metrics = None;
            if simulate {
                let ws = parameter_values(&project);
                let mut runs = simulate_seeds(&project, &net, &ws, &[default_seed(&project)])?;
                let (trace, m) = runs.remove(0);
                if let Some(dir) = &out_dir {
                    write_json(&dir.join("metrics.json"), &m)?;
                    write_trace(dir, "trace", &trace, sim_record_states(&project))?;
                }
                metrics = Some(m);
            }
            #[derive(Serialize)]
            struct SyncReport<'a> {
                design: &'a commands::DesignBundle,
                metrics: Option<&'a commands::RunMetrics>,
            }
            let report = SyncReport { design: &bundle, metrics: metrics.as_ref() };
            emit(json, &report, || render_sync(&bundle, metrics.as_ref()));
        }
        Command::Simulate { input, gamma, seeds, out_dir } => {
            if seeds == 0 {
                return Err(CliError::input("--seeds: at least one run is required"));
            }
            let project = load(input.input.as_deref())?;
            let inputs = network_precheck(&project, gamma)?;
            warn_all(&inputs.warnings);
            let net = design_network(&project, inputs.gamma)?;
            let base = default_seed(&project);
            let seed_list: Vec<u64> = (0..seeds).map(|k| base.wrapping_add(k)).collect();
            let runs = simulate_seeds(&project, &net, &parameter_values(&project), &seed_list)?;
            if let Some(dir) = &out_dir {
                for (trace, m) in &runs {
                    write_trace(dir, &format!("trace_{}", m.seed), trace, sim_record_states(&project))?;
                }
                let all: Vec<_> = runs.iter().map(|(_, m)| m).collect();
                write_json(&dir.join("metrics.json"), &all)?;
            }
            let all: Vec<_> = runs.iter().map(|(_, m)| m).collect();
            emit(json, &all, || all.iter().map(|m| render_metrics(m)).collect::<Vec<_>>().join("\n"));
        }
        Command::ReproduceExample { w_scale, out_dir } => {
            let (table, log) = reproduce::reproduce(w_scale, out_dir.as_deref())?;
            for line in &log {
                eprintln!("{line}");
            }
            emit(json, &table, || table.render());
            let failures = table.failures();
            if failures > 0 {
                return Err(CliError::Acceptance(failures));
            }
        }
        Command::Verify { controller } => {
            let tol = gammastab::Tolerance::from_env()?;
            let report = cmd_verify(&controller, &tol)?;
            emit(json, &report, || render_verify(&report));
        }
    }
    Ok(())
}

fn render_sync(bundle: &commands::DesignBundle, metrics: Option<&commands::RunMetrics>) -> String {
    let mut lines = vec![format!(
        "gamma = {} accepted (small-gain bound 1/(N gamma_zeta) = {:.6})",
        bundle.gamma, bundle.small_gain_bound
    )];
    for a in &bundle.agents {
        lines.push(format!(
            "{}: l = {}, kappas {:?}, certified gain {}, abscissa {:.4}, {} controller states",
            a.name,
            a.normal_form_steps,
            a.kappas.iter().map(|k| (k * 1e4).round() / 1e4).collect::<Vec<_>>(),
            a.certified_gain,
            a.closed_loop_abscissa,
            a.controller_states
        ));
    }
    if let Some(m) = metrics {
        lines.push(render_metrics(m));
    }
    lines.join("\n")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are input errors; help and version are not errors
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
