use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mpm_thermal::boundary::BoundaryMethod;
use mpm_thermal::scenario::{
    compare_methods, convergence_study, list_scenarios, load_config, run_scenario,
};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "mpm-thermal",
    version,
    about = "Material point heat conduction benchmarks"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario from a JSON configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mesh refinement study with a fitted convergence rate.
    Convergence {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.2,0.1,0.05,0.02")]
        meshes: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        cfl_factor: f64,
        /// Time at which errors are measured.
        #[arg(long, default_value_t = 1.0)]
        time: f64,
        /// Writes `convergence.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one scenario with several boundary methods.
    Compare {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_delimiter = ',', default_value = "vhfm,node,particle")]
        methods: Vec<String>,
    },
    /// Print the built-in scenario names.
    ListScenarios,
}

fn parse_method(s: &str) -> Result<BoundaryMethod> {
    Ok(match s.trim() {
        "vhfm" => BoundaryMethod::Vhfm,
        "node" => BoundaryMethod::Node,
        "particle" => BoundaryMethod::Particle,
        other => anyhow::bail!("unknown method `{other}` (expected vhfm, node or particle)"),
    })
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Run { config, out } => {
            let mut cfg = load_config(&config)?;
            if out.is_some() {
                cfg.output.dir = out;
            }
            let run = run_scenario(&cfg)?;
            println!(
                "{}: {} particles, {} steps of {:.3e} s, {:.2} s wall",
                cfg.scenario,
                run.state.particles.len(),
                run.state.steps,
                run.dt,
                run.runtime_seconds
            );
            for r in &run.reports {
                println!(
                    "  t = {:<8} rmse = {:.4e}  particle rmse = {:.4e}  excluded = {}",
                    r.time, r.rmse, r.particle_rmse, r.excluded_points
                );
            }
        }
        Command::Convergence {
            scenario,
            meshes,
            cfl_factor,
            time,
            out,
        } => {
            let (pairs, slope) = convergence_study(&scenario, &meshes, cfl_factor, time)?;
            for (h, e) in &pairs {
                println!("h = {h:<6} error = {e:.4e}");
            }
            println!("fitted rate = {slope:.3}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let doc = json!({
                    "scenario": scenario,
                    "cfl_factor": cfl_factor,
                    "time": time,
                    "h": pairs.iter().map(|p| p.0).collect::<Vec<_>>(),
                    "error": pairs.iter().map(|p| p.1).collect::<Vec<_>>(),
                    "slope": slope,
                });
                let path = dir.join("convergence.json");
                std::fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Compare { scenario, methods } => {
            let methods = methods
                .iter()
                .map(|m| parse_method(m))
                .collect::<Result<Vec<_>>>()?;
            let runs = compare_methods(&scenario, &methods)?;
            for (m, run) in methods.iter().zip(&runs) {
                for r in &run.reports {
                    println!("{:<9} t = {:<8} rmse = {:.4e}", m.as_str(), r.time, r.rmse);
                }
            }
        }
        Command::ListScenarios => {
            for name in list_scenarios() {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
