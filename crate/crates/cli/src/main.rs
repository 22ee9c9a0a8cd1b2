use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dd4dvar::config::ExperimentConfig;
use dd4dvar::report::{self, OutputDir};
use dd4dvar::Error;

#[derive(Parser)]
#[command(name = "dd4dvar", version, about = "Domain-decomposed 4D-Var experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment manifest; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// output directory (overrides output.directory)
    #[arg(long)]
    out: Option<PathBuf>,
    /// observation noise seed (overrides observations.seed)
    #[arg(long)]
    seed: Option<u64>,
    /// replace existing artifacts
    #[arg(long)]
    overwrite: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve with the global oracle and with DD-4DVAR, compare the minima
    Assimilate(Common),
    /// Refinement sweep of the DD error
    Consistency {
        #[command(flatten)]
        common: Common,
        /// refinement factors, e.g. 1,2,4 (overrides consistency.d_list)
        #[arg(long, value_delimiter = ',')]
        d_list: Option<Vec<usize>>,
    },
    /// Response of the analysis to initial-value perturbations on one slab
    Stability {
        #[command(flatten)]
        common: Common,
        /// perturbation sizes (overrides stability.perturbations)
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        perturbations: Option<Vec<f64>>,
    },
    /// Condition numbers of the local problems
    Condition(Common),
}

fn setup(c: &Common) -> dd4dvar::Result<(ExperimentConfig, OutputDir)> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.observations.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output.directory = o.display().to_string();
    }
    cfg.validate()?;
    let out = OutputDir::create(&PathBuf::from(&cfg.output.directory), c.overwrite)?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> dd4dvar::Result<()> {
    match cli.command {
        Command::Assimilate(c) => {
            let (cfg, out) = setup(&c)?;
            let r = report::assimilate(&cfg, &out)?;
            let e = &r.equality;
            println!("J(u_DA) = {:.6e}  J(u_DD) = {:.6e}  relative gap = {:.3e}  ({})", e.j_da, e.j_dd, e.relative_gap, if e.pass { "pass" } else { "FAIL" });
            println!("outer iterations: {}  converged: {}", r.state.outer.len(), r.state.converged);
        }
        Command::Consistency { common, d_list } => {
            let (mut cfg, out) = setup(&common)?;
            if let Some(d) = d_list {
                cfg.consistency.d_list = d;
            }
            let r = report::consistency(&cfg, &cfg.consistency.d_list, &out)?;
            for row in &r.rows {
                println!("d = {:>2}  e_p = {:.5e}", row.d, row.e_p);
            }
            match r.order {
                Some(p) => println!("fitted order: {p:.3}"),
                None => println!("fitted order: undefined"),
            }
        }
        Command::Stability { common, perturbations } => {
            let (mut cfg, out) = setup(&common)?;
            if let Some(p) = perturbations {
                cfg.stability.perturbations = p;
            }
            let r = report::stability(&cfg, &cfg.stability.perturbations, &out)?;
            for row in &r.rows {
                println!("e = {:.5e}  E = {:.5e}  C = {:.5e}", row.e_bar_k, row.big_e_bar_k, row.c_k);
            }
        }
        Command::Condition(c) => {
            let (cfg, out) = setup(&c)?;
            let r = report::condition(&cfg, &out)?;
            for (k, m) in r.mu_bar.iter().enumerate() {
                println!("mu_bar_{} = {:.5e}", k + 1, m);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else {
        3
    }
}
