use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::eigen::principal_eig_full;
use crate::fibering::{fibering_coeffs, stationary_points, Branch};
use crate::fields::ProblemData;
use crate::grid::GridFunction;
use crate::sampling::BumpSampler;
use crate::solver::minimize_on_branch;
use crate::thresholds::{compute_thresholds, regime_classify, RegimeTag, ThresholdReport};

use super::{row_seed, write_field_csv, ExperimentError, FieldsSection, GridSection, Scenario, Setup, SweepSection};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchOutcome {
    pub branch: Branch,
    pub converged: bool,
    pub energy: Option<f64>,
    pub mu_norm: Option<f64>,
    pub grad_residual: Option<f64>,
    pub nehari_residual: Option<f64>,
    pub positivity_min: Option<f64>,
    pub iterations: Option<usize>,
    pub seed_name: Option<String>,
    pub error: Option<String>,
    #[serde(skip)]
    pub solution: Option<GridFunction>,
}

impl BranchOutcome {
    fn failed(branch: Branch, error: String) -> Self {
        BranchOutcome {
            branch,
            converged: false,
            energy: None,
            mu_norm: None,
            grad_residual: None,
            nehari_residual: None,
            positivity_min: None,
            iterations: None,
            seed_name: None,
            error: Some(error),
            solution: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub key: String,
    pub a: f64,
    pub p: f64,
    pub lambda: f64,
    pub lambda_rel: f64,
    pub mu: f64,
    pub lambda1: f64,
    pub lambda_tilde: Option<f64>,
    pub seed: u64,
    pub tags: Vec<RegimeTag>,
    /// Fraction of random functions whose fiber has a stationary point.
    pub nehari_fraction: Option<f64>,
    pub outcomes: Vec<BranchOutcome>,
    pub thresholds: Option<ThresholdReport>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn outcome(&self, branch: Branch) -> Option<&BranchOutcome> {
        self.outcomes.iter().find(|o| o.branch == branch)
    }

    /// Energy of a converged branch solution.
    pub fn energy(&self, branch: Branch) -> Option<f64> {
        self.outcome(branch).filter(|o| o.converged).and_then(|o| o.energy)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutput {
    pub seed: u64,
    pub lambda1: f64,
    pub rows: Vec<SweepRow>,
}

fn fmt_key(x: f64) -> String {
    x.to_string()
}

fn nehari_fraction(problem: &ProblemData, count: usize, seed: u64) -> Option<f64> {
    if count == 0 {
        return None;
    }
    let grid = &problem.grid;
    let free: Vec<bool> = grid.boundary_mask().iter().map(|b| !b).collect();
    let mut sampler = BumpSampler::new(grid, &free, seed);
    let hits = (0..count)
        .filter(|_| {
            let u = sampler.sample(grid);
            fibering_coeffs(&u, problem)
                .ok()
                .and_then(|c| stationary_points(&c).ok())
                .is_some_and(|cl| !cl.roots.is_empty())
        })
        .count();
    Some(hits as f64 / count as f64)
}

fn run_row(scenario: &Scenario, setup: &Setup, a: f64, lambda_in: f64, mu: f64, p: f64) -> SweepRow {
    let key = format!("a{}_l{}_mu{}_p{}", fmt_key(a), fmt_key(lambda_in), fmt_key(mu), fmt_key(p));
    let seed = row_seed(scenario.seed, &key);
    let lambda = scenario.resolve_lambda(lambda_in, setup.lambda1);
    let mut row = SweepRow {
        key,
        a,
        p,
        lambda,
        lambda_rel: lambda / setup.lambda1,
        mu,
        lambda1: setup.lambda1,
        lambda_tilde: None,
        seed,
        tags: Vec::new(),
        nehari_fraction: None,
        outcomes: Vec::new(),
        thresholds: None,
        error: None,
    };
    let problem = match ProblemData::new(setup.grid.clone(), setup.fields.clone(), a, p, lambda, mu) {
        Ok(pd) => pd,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    match principal_eig_full(&problem) {
        Ok(e) => row.lambda_tilde = Some(e.eigenvalue),
        Err(e) => row.error = Some(e.to_string()),
    }
    if scenario.thresholds.enabled {
        match compute_thresholds(&problem, &scenario.thresholds.ascent(seed), &scenario.solver) {
            Ok(th) => {
                row.tags = regime_classify(&problem, &th, &scenario.thresholds.regime());
                row.thresholds = Some(th);
            }
            Err(e) => row.error = Some(format!("thresholds: {e}")),
        }
    }
    row.nehari_fraction = nehari_fraction(&problem, scenario.sweep.nehari_probe, seed);
    row.outcomes = scenario
        .sweep
        .branches
        .iter()
        .map(|&branch| match minimize_on_branch(&problem, branch, None, &scenario.solver) {
            Ok(r) => BranchOutcome {
                branch,
                converged: r.converged,
                energy: Some(r.energy.j),
                mu_norm: Some(r.mu_norm()),
                grad_residual: Some(r.grad_residual),
                nehari_residual: Some(r.nehari_residual),
                positivity_min: Some(r.positivity_min),
                iterations: Some(r.iterations),
                seed_name: Some(r.seed.clone()),
                error: None,
                solution: Some(r.solution),
            },
            Err(e) => BranchOutcome::failed(branch, e.to_string()),
        })
        .collect();
    row
}

/// Runs every sweep point. Rows come back in the order p, μ, a, λ with λ
/// varying fastest; failures are recorded in the row.
pub fn run_rows(scenario: &Scenario) -> Result<SweepOutput, ExperimentError> {
    scenario.validate()?;
    let setup = scenario.setup()?;
    let sw = &scenario.sweep;
    let mut points = Vec::new();
    for &p in &sw.p {
        for &mu in &sw.mu {
            for &a in &sw.a {
                for &l in &sw.lambda {
                    points.push((a, l, mu, p));
                }
            }
        }
    }
    let rows = points.par_iter().map(|&(a, l, mu, p)| run_row(scenario, &setup, a, l, mu, p)).collect();
    Ok(SweepOutput { seed: scenario.seed, lambda1: setup.lambda1, rows })
}

const BRANCH_COLUMNS: [&str; 7] = ["status", "energy", "mu_norm", "grad_residual", "nehari_residual", "positivity_min", "iterations"];

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn tag_list(tags: &[RegimeTag]) -> String {
    tags.iter().map(|t| if t.estimated { format!("{}*", t.tag) } else { t.tag.clone() }).collect::<Vec<_>>().join(";")
}

fn write_rows_csv<W: Write>(out: &SweepOutput, w: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(w);
    let mut header: Vec<String> =
        ["key", "scenario_seed", "row_seed", "a", "p", "lambda", "lambda_rel", "mu", "lambda1", "lambda_tilde", "tags", "nehari_fraction"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    for b in [Branch::Minus, Branch::Plus] {
        header.extend(BRANCH_COLUMNS.iter().map(|c| format!("{}_{c}", b.name())));
    }
    header.extend(["gamma0_est", "abar_threshold", "phi1_sign_p", "error"].iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for r in &out.rows {
        let mut rec = vec![
            r.key.clone(),
            out.seed.to_string(),
            r.seed.to_string(),
            r.a.to_string(),
            r.p.to_string(),
            r.lambda.to_string(),
            r.lambda_rel.to_string(),
            r.mu.to_string(),
            r.lambda1.to_string(),
            opt(r.lambda_tilde),
            tag_list(&r.tags),
            opt(r.nehari_fraction),
        ];
        for b in [Branch::Minus, Branch::Plus] {
            match r.outcome(b) {
                Some(o) => {
                    let status = if o.converged { "converged" } else if o.error.is_some() { "failed" } else { "uncertified" };
                    rec.extend([
                        status.to_string(),
                        opt(o.energy),
                        opt(o.mu_norm),
                        opt(o.grad_residual),
                        opt(o.nehari_residual),
                        opt(o.positivity_min),
                        opt(o.iterations),
                    ]);
                }
                None => rec.extend(std::iter::repeat_n(String::new(), BRANCH_COLUMNS.len())),
            }
        }
        let th = r.thresholds.as_ref();
        rec.extend([
            opt(th.map(|t| t.gamma0_est)),
            opt(th.and_then(|t| t.abar_lambda_est.as_ref()).map(|e| e.threshold)),
            opt(th.map(|t| t.phi1_sign_p)),
            r.error.clone().unwrap_or_default(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BifurcationPoint {
    pub a: f64,
    pub mu: f64,
    pub p: f64,
    pub lambda: f64,
    pub lambda_rel: f64,
    pub phi1_sign_p: Option<f64>,
    pub minus_energy: Option<f64>,
    pub minus_mu_norm: Option<f64>,
    pub plus_energy: Option<f64>,
    pub plus_mu_norm: Option<f64>,
}

/// Branch energies and norms against λ, grouped by `(p, μ, a)` in sweep
/// order and sorted by λ inside each group. Only certified solutions enter.
pub fn bifurcation_table(rows: &[SweepRow]) -> Vec<BifurcationPoint> {
    let mut groups: Vec<(f64, f64, f64)> = Vec::new();
    for r in rows {
        if !groups.contains(&(r.p, r.mu, r.a)) {
            groups.push((r.p, r.mu, r.a));
        }
    }
    let mut table = Vec::with_capacity(rows.len());
    for g in groups {
        let mut part: Vec<&SweepRow> = rows.iter().filter(|r| (r.p, r.mu, r.a) == g).collect();
        part.sort_by(|x, y| x.lambda.total_cmp(&y.lambda));
        for r in part {
            let norm = |b: Branch| r.outcome(b).filter(|o| o.converged).and_then(|o| o.mu_norm);
            table.push(BifurcationPoint {
                a: r.a,
                mu: r.mu,
                p: r.p,
                lambda: r.lambda,
                lambda_rel: r.lambda_rel,
                phi1_sign_p: r.thresholds.as_ref().map(|t| t.phi1_sign_p),
                minus_energy: r.energy(Branch::Minus),
                minus_mu_norm: norm(Branch::Minus),
                plus_energy: r.energy(Branch::Plus),
                plus_mu_norm: norm(Branch::Plus),
            });
        }
    }
    table
}

pub fn write_bifurcation_csv<W: Write>(table: &[BifurcationPoint], w: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "a", "mu", "p", "lambda", "lambda_rel", "phi1_sign_p", "minus_energy", "minus_mu_norm", "plus_energy", "plus_mu_norm",
    ])?;
    for b in table {
        w.write_record([
            b.a.to_string(),
            b.mu.to_string(),
            b.p.to_string(),
            b.lambda.to_string(),
            b.lambda_rel.to_string(),
            opt(b.phi1_sign_p),
            opt(b.minus_energy),
            opt(b.minus_mu_norm),
            opt(b.plus_energy),
            opt(b.plus_mu_norm),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ScenarioEcho<'a> {
    seed: u64,
    grid: &'a GridSection,
    fields: &'a FieldsSection,
    sweep: &'a SweepSection,
    solver: &'a crate::solver::SolverOptions,
    thresholds: &'a super::ThresholdSection,
}

#[derive(Serialize)]
struct ThresholdEntry<'a> {
    key: &'a str,
    report: Option<&'a ThresholdReport>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, ExperimentError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), ExperimentError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Runs the sweep and writes `rows.csv`, `thresholds.json`, `report.json`,
/// `bifurcation.csv` and one `u_<row>_<branch>.csv` per certified solution.
pub fn run_scenario(scenario: &Scenario) -> Result<SweepOutput, ExperimentError> {
    let out = run_rows(scenario)?;
    let dir = &scenario.output.dir;
    fs::create_dir_all(dir)?;

    let mut w = create(dir, "rows.csv")?;
    write_rows_csv(&out, &mut w)?;
    w.flush()?;

    let entries: Vec<ThresholdEntry> = out.rows.iter().map(|r| ThresholdEntry { key: &r.key, report: r.thresholds.as_ref() }).collect();
    write_json(dir, "thresholds.json", &serde_json::json!({ "seed": out.seed, "lambda1": out.lambda1, "rows": entries }))?;

    let echo = ScenarioEcho {
        seed: scenario.seed,
        grid: &scenario.grid,
        fields: &scenario.fields,
        sweep: &scenario.sweep,
        solver: &scenario.solver,
        thresholds: &scenario.thresholds,
    };
    write_json(dir, "report.json", &serde_json::json!({ "scenario": echo, "lambda1": out.lambda1, "rows": out.rows }))?;

    let mut w = create(dir, "bifurcation.csv")?;
    write_bifurcation_csv(&bifurcation_table(&out.rows), &mut w)?;
    w.flush()?;

    if scenario.output.dump_solutions {
        let grid = scenario.build_grid()?;
        for r in &out.rows {
            for o in r.outcomes.iter().filter(|o| o.converged) {
                if let Some(u) = &o.solution {
                    let name = format!("u_{}_{}.csv", r.key, o.branch.name());
                    let mut w = create(dir, &name)?;
                    let note = format!("scenario_seed={} row={} branch={} energy={}", out.seed, r.key, o.branch.name(), opt(o.energy));
                    write_field_csv(&grid, u, &note, &mut w)?;
                    w.flush()?;
                }
            }
        }
    }
    Ok(out)
}
