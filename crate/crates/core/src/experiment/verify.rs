use rand::Rng;
use serde::Serialize;

use crate::eigen::{principal_eig_full, principal_eig_omega, well_convergence_sweep};
use crate::fibering::{degenerate_point, h_prime, h_second, project_to_nehari, Branch, FiberingCoefficients};
use crate::fields::ProblemData;
use crate::functionals::{dirichlet_norm_sq, energy, energy_gradient, l2_inner, mu_norm_sq, weighted_mass};
use crate::grid::{apply_laplacian, Grid, GridFunction};
use crate::sampling::BumpSampler;
use crate::solver::{minimize_on_branch, solve_limit_problem};

use super::{row_seed, ExperimentError, Fault, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Ctx<'a> {
    scenario: &'a Scenario,
    problem: ProblemData,
    lambda1: f64,
    checks: Vec<CheckResult>,
}

impl Ctx<'_> {
    fn tol(&self, name: &str, default: f64) -> f64 {
        self.scenario.verify.tolerances.get(name).copied().unwrap_or(default)
    }

    fn sampler(&self, name: &str) -> BumpSampler {
        let grid = &self.problem.grid;
        let free: Vec<bool> = grid.boundary_mask().iter().map(|b| !b).collect();
        BumpSampler::new(grid, &free, row_seed(self.scenario.seed, name))
    }

    /// Records `value ≤ tol` (NaN fails) under `name`.
    fn push(&mut self, name: &str, default_tol: f64, value: f64, extra_ok: bool, detail: String) {
        let tolerance = self.tol(name, default_tol);
        let passed = extra_ok && value <= tolerance;
        self.checks.push(CheckResult { name: name.to_string(), value, tolerance, passed, detail });
    }
}

fn relative_gap(x: f64, y: f64) -> f64 {
    (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE)
}

/// Gradient with the stiffness term read one node to the right.
fn shifted_gradient(u: &[f64], problem: &ProblemData) -> GridFunction {
    let grid = &problem.grid;
    let mut g = energy_gradient(u, problem).expect("p >= 2");
    let lu = apply_laplacian(grid, u).expect("length checked");
    let m = problem.a * dirichlet_norm_sq(grid, u).expect("length checked") + ProblemData::B;
    for k in 0..grid.len() {
        if !grid.is_boundary(k) && k + 1 < grid.len() {
            g[k] += m * (lu[k + 1] - lu[k]);
        }
    }
    g
}

fn check_gradient(ctx: &mut Ctx) {
    let pd = ctx.problem.clone();
    let grid: &Grid = &pd.grid;
    let mut s = ctx.sampler("gradient_fd");
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let u = s.sample(grid);
        let v = s.sample(grid);
        let g = match ctx.scenario.verify.fault {
            Some(Fault::GradientStencil) => shifted_gradient(&u, &pd),
            None => energy_gradient(&u, &pd).expect("p >= 2"),
        };
        let analytic = l2_inner(grid, &g, &v).expect("length checked");
        let shift = |t: f64| -> Vec<f64> { u.iter().zip(v.iter()).map(|(a, b)| a + t * b).collect() };
        let jp = energy(&shift(eps), &pd).expect("length checked").j;
        let jm = energy(&shift(-eps), &pd).expect("length checked").j;
        worst = worst.max(relative_gap((jp - jm) / (2.0 * eps), analytic));
    }
    ctx.push("gradient_fd", 1e-6, worst, true, "20 random pairs, central differences, step 1e-5".into());
}

fn check_triple_identity(ctx: &mut Ctx) {
    let grid = ctx.problem.grid.clone();
    let mut s = ctx.sampler("triple_identity");
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for &p in &[2.5, 3.0, 4.0, 5.0] {
        let Ok(pd) = ctx.problem.with_p(p) else { continue };
        let mut tries = 0;
        let mut got = 0;
        while got < ctx.scenario.verify.samples / 4 && tries < 20 * ctx.scenario.verify.samples {
            tries += 1;
            let u = s.sample(&grid);
            let branches = [Branch::Minus, Branch::Plus];
            for b in branches {
                if let Ok(proj) = project_to_nehari(&u, &pd, b) {
                    let f = proj.coeffs.second_derivative_forms();
                    worst = worst.max(relative_gap(f[0], f[1])).max(relative_gap(f[0], f[2])).max(relative_gap(f[1], f[2]));
                    got += 1;
                    count += 1;
                    break;
                }
            }
        }
    }
    ctx.push("triple_identity", 1e-10, worst, count > 0, format!("{count} projected samples over p in 2.5, 3, 4, 5"));
}

fn check_gap(ctx: &mut Ctx) {
    let Ok(lt) = principal_eig_full(&ctx.problem).map(|e| e.eigenvalue) else {
        ctx.push("gap_inequality", 1e-10, f64::INFINITY, false, "principal eigenvalue failed".into());
        return;
    };
    let pd = ctx.problem.with_lambda(0.5 * lt).expect("valid lambda");
    let mut s = ctx.sampler("gap_inequality");
    let mut worst: f64 = 0.0;
    for _ in 0..ctx.scenario.verify.samples {
        let u = s.sample(&pd.grid);
        let m = mu_norm_sq(&u, &pd).expect("length checked");
        let b = m - pd.lambda * weighted_mass(&pd.grid, &u, pd.fields.f()).expect("length checked");
        worst = worst.max(((lt - pd.lambda) / lt * m - b) / m);
    }
    ctx.push("gap_inequality", 1e-10, worst.max(0.0), true, format!("largest relative deficit at lambda = {}", pd.lambda));
}

fn check_eigen(ctx: &mut Ctx) {
    let mus = [10.0, 100.0, 1000.0, 10000.0];
    let phi1 = principal_eig_omega(&ctx.problem.fields, &ctx.problem.grid).ok();
    let rows = phi1.as_ref().and_then(|phi| well_convergence_sweep(&ctx.problem, &mus, &phi.eigenfunction).ok());
    let Some(rows) = rows else {
        ctx.push("eigen_monotonicity", 0.0, f64::INFINITY, false, "eigen sweep failed".into());
        return;
    };
    let drop = rows.windows(2).map(|w| w[0].lambda_tilde - w[1].lambda_tilde).fold(0.0, f64::max);
    let below = rows.iter().all(|r| r.lambda_tilde < ctx.lambda1);
    let detail = rows.iter().map(|r| format!("{}:{:.6}", r.mu, r.lambda_tilde)).collect::<Vec<_>>().join(" ");
    ctx.push("eigen_monotonicity", 0.0, drop, below, detail);

    let phi = phi1.expect("checked above");
    let grid = ctx.problem.grid.clone();
    let norm = weighted_mass(&grid, &phi.eigenfunction, ctx.problem.fields.f()).expect("length checked");
    ctx.push("eigen_normalization", 1e-4, (norm - 1.0).abs(), true, format!("int f phi1^2 = {norm}"));
    let d = dirichlet_norm_sq(&grid, &phi.eigenfunction).expect("length checked");
    ctx.push("eigen_dirichlet", 1e-3, (d - phi.eigenvalue).abs() / phi.eigenvalue, true, format!("D = {d}"));
}

fn check_double_root(ctx: &mut Ctx) {
    let mut s = ctx.sampler("double_root");
    let rng = s.rng();
    let (mut h1, mut h2) = (0.0f64, 0.0f64);
    for _ in 0..ctx.scenario.verify.samples {
        let p = rng.gen_range(2.25..3.75);
        let (a, b, c) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
        match degenerate_point(&FiberingCoefficients::new(a, b, c, p, 0.0)) {
            Ok(dp) => {
                let fc = FiberingCoefficients::new(a, b, c, p, dp.a);
                h1 = h1.max(h_prime(&fc, dp.t).map_or(f64::INFINITY, f64::abs));
                h2 = h2.max(h_second(&fc, dp.t).map_or(f64::INFINITY, f64::abs));
            }
            Err(_) => h1 = f64::INFINITY,
        }
    }
    ctx.push("double_root_h1", 1e-9, h1, true, "max |h'(t(u))| over random tuples".into());
    ctx.push("double_root_h2", 1e-8, h2, true, "max |h''(t(u))| over random tuples".into());
}

fn check_solutions(ctx: &mut Ctx) {
    let branch = ctx.scenario.sweep.branches[0];
    let opts = ctx.scenario.solver;
    match minimize_on_branch(&ctx.problem, branch, None, &opts) {
        Ok(r) => {
            let ok = r.converged && r.positivity_min > 0.0 && r.nehari_residual <= opts.tol_nehari;
            let detail = format!(
                "{} branch from {}: J = {}, nehari {:.2e}, min {:.3e}",
                branch.name(),
                r.seed,
                r.energy.j,
                r.nehari_residual,
                r.positivity_min
            );
            ctx.push("solution_certificate", opts.tol_grad, r.grad_residual, ok, detail);
        }
        Err(e) => ctx.push("solution_certificate", opts.tol_grad, f64::INFINITY, false, e.to_string()),
    }
    match solve_limit_problem(&ctx.problem, &opts) {
        Ok(gs) => ctx.push("limit_identity", 1e-6, gs.identity_residual, true, format!("alpha = {}", gs.alpha_infty)),
        Err(e) => ctx.push("limit_identity", 1e-6, f64::INFINITY, false, e.to_string()),
    }
}

/// Runs the property checks on the scenario's base point. Failures are
/// report content, configuration problems are errors.
pub fn verify_suite(scenario: &Scenario) -> Result<VerifyReport, ExperimentError> {
    scenario.validate()?;
    let setup = scenario.setup()?;
    let problem = scenario.base_problem(&setup)?;
    let mut ctx = Ctx { scenario, problem, lambda1: setup.lambda1, checks: Vec::new() };
    check_gradient(&mut ctx);
    check_triple_identity(&mut ctx);
    check_gap(&mut ctx);
    check_eigen(&mut ctx);
    check_double_root(&mut ctx);
    check_solutions(&mut ctx);
    let passed = ctx.checks.iter().all(|c| c.passed);
    Ok(VerifyReport { seed: scenario.seed, passed, checks: ctx.checks })
}
