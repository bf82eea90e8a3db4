use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use nehari_core::eigen::{principal_eig_full, well_convergence_sweep, write_sweep_csv};
use nehari_core::experiment::{read_field_csv, run_scenario, verify_suite, write_field_csv, Scenario};
use nehari_core::fibering::{fibering_coeffs, stationary_points, Branch};
use nehari_core::solver::{minimize_on_branch, standard_seeds};
use nehari_core::thresholds::{compute_thresholds, regime_classify};

#[derive(Parser)]
#[command(name = "nehari", about = "Nehari-manifold experiments for steep-well Kirchhoff problems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Principal eigenvalues and the steep-well convergence table.
    Eig {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated μ values for the table.
        #[arg(long, value_delimiter = ',', default_values_t = vec![10.0, 100.0, 1000.0, 10000.0])]
        mu_list: Vec<f64>,
    },
    /// Fibering-map analysis of a stored field.
    Fiber {
        #[command(subcommand)]
        cmd: FiberCmd,
    },
    /// Minimizes the energy on one Nehari branch at the scenario's base point.
    Solve {
        #[arg(long)]
        branch: Branch,
        #[arg(long)]
        config: PathBuf,
        /// Name of the initial guess (phi1, phi_mu, ground_state, bump0, ...).
        /// Without it every standard seed is tried.
        #[arg(long)]
        seed: Option<String>,
        /// Where to write the solution field.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Threshold estimates and regime tags at the scenario's base point.
    Thresholds {
        #[arg(long)]
        config: PathBuf,
        /// Number of ascent restarts.
        #[arg(long, default_value_t = 32)]
        budget: usize,
    },
    /// Runs the full sweep and writes its artifacts.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Runs the property suite; exits nonzero when a check fails.
    Verify {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum FiberCmd {
    Classify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load(path: &Path) -> Result<Scenario> {
    Scenario::from_file(path).with_context(|| format!("reading {}", path.display()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Eig { config, mu_list } => {
            let s = load(&config)?;
            let setup = s.setup()?;
            let base = s.base_problem(&setup)?;
            let full = principal_eig_full(&base)?;
            eprintln!("lambda1 = {}  lambda_tilde(mu = {}) = {}", setup.lambda1, base.mu, full.eigenvalue);
            let phi1 = nehari_core::eigen::principal_eig_omega(&setup.fields, &setup.grid)?;
            let rows = well_convergence_sweep(&base, &mu_list, &phi1.eigenfunction)?;
            write_sweep_csv(&rows, std::io::stdout().lock())?;
        }
        Cmd::Fiber { cmd: FiberCmd::Classify { config, input } } => {
            let s = load(&config)?;
            let setup = s.setup()?;
            let base = s.base_problem(&setup)?;
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let u = read_field_csv(&setup.grid, BufReader::new(file))?;
            let coeffs = fibering_coeffs(&u, &base)?;
            let class = stationary_points(&coeffs)?;
            print_json(&serde_json::json!({ "coefficients": coeffs, "class": class, "label": class.to_string() }))?;
        }
        Cmd::Solve { branch, config, seed, out } => {
            let s = load(&config)?;
            let setup = s.setup()?;
            let base = s.base_problem(&setup)?;
            let report = match seed {
                Some(name) => {
                    let seeds = standard_seeds(&base, &s.solver)?;
                    let known: Vec<String> = seeds.iter().map(|x| x.name.clone()).collect();
                    let chosen = seeds
                        .into_iter()
                        .find(|x| x.name == name)
                        .ok_or_else(|| anyhow!("unknown seed {name}; available: {}", known.join(", ")))?;
                    let mut r = minimize_on_branch(&base, branch, Some(&chosen.values), &s.solver)?;
                    r.seed = name;
                    r
                }
                None => minimize_on_branch(&base, branch, None, &s.solver)?,
            };
            let mut summary = serde_json::to_value(&report)?;
            if let Some(map) = summary.as_object_mut() {
                map.remove("solution");
            }
            print_json(&summary)?;
            if let Some(path) = out {
                let mut w = BufWriter::new(File::create(&path)?);
                let note = format!("branch={} seed={} energy={}", branch.name(), report.seed, report.energy.j);
                write_field_csv(&setup.grid, &report.solution, &note, &mut w)?;
                w.flush()?;
            }
            return Ok(report.converged);
        }
        Cmd::Thresholds { config, budget } => {
            let s = load(&config)?;
            let setup = s.setup()?;
            let base = s.base_problem(&setup)?;
            let mut section = s.thresholds;
            section.restarts = budget;
            let th = compute_thresholds(&base, &section.ascent(s.seed), &s.solver)?;
            let tags = regime_classify(&base, &th, &section.regime());
            if th.gamma0_nonpositive {
                eprintln!("warning: gamma0 estimate is not positive");
            }
            print_json(&serde_json::json!({ "thresholds": th, "tags": tags }))?;
        }
        Cmd::Sweep { config } => {
            let s = load(&config)?;
            let out = run_scenario(&s)?;
            for r in &out.rows {
                let tags: Vec<&str> = r.tags.iter().map(|t| t.tag.as_str()).collect();
                let energies: Vec<String> = r
                    .outcomes
                    .iter()
                    .map(|o| match (o.converged, o.energy) {
                        (true, Some(e)) => format!("{}={e:.6}", o.branch.name()),
                        _ => format!("{}=none", o.branch.name()),
                    })
                    .collect();
                eprintln!("{}  [{}]  {}", r.key, tags.join(","), energies.join(" "));
            }
            eprintln!("wrote {} rows to {}", out.rows.len(), s.output.dir.display());
        }
        Cmd::Verify { config } => {
            let s = load(&config)?;
            let report = verify_suite(&s)?;
            for c in &report.checks {
                eprintln!("{:<22} {}  value {:.3e}  tol {:.1e}", c.name, if c.passed { "pass" } else { "FAIL" }, c.value, c.tolerance);
            }
            print_json(&serde_json::to_value(&report)?)?;
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
