//! Minimization of the energy on one Nehari branch.
//!
//! Each step moves along a Sobolev-preconditioned descent direction, truncates
//! to the positive part and rescales back onto the branch with the fibering
//! root. Armijo backtracking controls the step. Once the gradient is small,
//! Newton's method on the discrete Euler–Lagrange system polishes the iterate
//! to near machine precision, which is what the residual tolerances require.

use crate::thresholds::{estimate_gamma0, AscentOptions, SupEstimate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigen::{principal_eig_full, principal_eig_omega, EigenError};
use crate::fibering::{
    branch_scale, coefficients_from_energy, h_second, Branch, FiberError, FiberingCoefficients,
};
use crate::fields::{ProblemData, Support};
use crate::functionals::{EnergyBreakdown, Evaluator};
use crate::grid::{GridError, GridFunction};
use crate::linalg::{assemble_stiffness, BandedCholesky, FreeIndex, LinalgError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("initial guess: {0}")]
    Initial(FiberError),
    #[error("branch vanished after {iterations} iterations: {reason}")]
    BranchVanished { iterations: usize, reason: String },
    #[error("step size collapsed after {iterations} iterations (gradient {grad:.3e})")]
    StepCollapse { iterations: usize, grad: f64 },
    #[error("no convergence within {iterations} iterations (gradient {grad:.3e})")]
    MaxIterations { iterations: usize, grad: f64 },
    #[error("initial guess has {got} values, grid has {expected}")]
    InitialSize { expected: usize, got: usize },
    #[error("limit problem needs 0 <= lambda < lambda_1 = {lambda1}, got {lambda}")]
    LimitLambda { lambda: f64, lambda1: f64 },
    #[error("no seed reached the {branch:?} branch: {failures:?}")]
    AllSeedsFailed { branch: Branch, failures: Vec<(String, String)> },
    #[error("scalings need 2 < p < 4 and a below the degenerate value {a_limit} (a = {a})")]
    NoScalings { a: f64, a_limit: f64 },
    #[error(transparent)]
    Fiber(#[from] FiberError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tol_grad: f64,
    pub tol_nehari: f64,
    pub max_iter: usize,
    pub armijo: f64,
    /// Gradient level at which Newton polishing is first attempted.
    pub newton_switch: f64,
    pub max_newton: usize,
    /// Gaussian seeds placed inside Ω in addition to the eigenfunctions.
    pub bump_seeds: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_grad: 1e-6,
            tol_nehari: 1e-9,
            max_iter: 50_000,
            armijo: 1e-4,
            newton_switch: 1e-3,
            max_newton: 40,
            bump_seeds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solution: GridFunction,
    pub branch: Branch,
    pub energy: EnergyBreakdown,
    /// Sup norm of the nodal gradient over the unknown nodes.
    pub grad_residual: f64,
    /// `|aA + B − C| / (aA + |B| + |C|)`.
    pub nehari_residual: f64,
    /// Minimum of the solution over the interior of Ω.
    pub positivity_min: f64,
    /// `h''(1)` of the solution's fiber.
    pub h_second: f64,
    pub iterations: usize,
    pub newton_steps: usize,
    pub converged: bool,
    /// Name of the initial guess.
    pub seed: String,
}

impl SolveReport {
    /// `‖u‖_μ` of the solution.
    pub fn mu_norm(&self) -> f64 {
        self.energy.munorm2.sqrt()
    }
}

/// A named initial guess.
#[derive(Debug, Clone)]
pub struct Seed {
    pub name: String,
    pub values: GridFunction,
}

struct Descent<'a> {
    problem: &'a ProblemData,
    index: FreeIndex,
    eval: Evaluator<'a>,
    weight: f64,
    opts: SolverOptions,
    branch: Branch,
}

struct Point {
    u: Vec<f64>,
    e: EnergyBreakdown,
    grad: Vec<f64>,
}

impl<'a> Descent<'a> {
    fn new(problem: &'a ProblemData, support: Support, branch: Branch, opts: SolverOptions) -> Self {
        let free = problem.fields.free_mask(&problem.grid, support);
        Descent {
            problem,
            index: FreeIndex::new(&problem.grid, &free),
            eval: Evaluator::new(problem),
            weight: problem.grid.cell_volume(),
            opts,
            branch,
        }
    }

    fn restrict(&self, u: &mut [f64]) {
        let mut kept = vec![0.0; u.len()];
        for &k in self.index.nodes() {
            kept[k] = u[k];
        }
        u.copy_from_slice(&kept);
    }

    fn point(&mut self, u: Vec<f64>) -> Point {
        let mut grad = vec![0.0; u.len()];
        let e = self.eval.energy_and_gradient(&u, &mut grad);
        Point { u, e, grad }
    }

    fn grad_sup(&self, p: &Point) -> f64 {
        self.index.nodes().iter().map(|&k| p.grad[k].abs()).fold(0.0, f64::max)
    }

    fn coeffs(&self, e: &EnergyBreakdown) -> FiberingCoefficients {
        coefficients_from_energy(e, self.problem)
    }

    /// Rescales `v` onto the requested branch.
    fn project(&mut self, mut v: Vec<f64>) -> Result<Point, FiberError> {
        if v.iter().all(|&x| x == 0.0) {
            return Err(FiberError::ZeroFunction);
        }
        let e = self.eval.energy(&v);
        let (t, _) = branch_scale(&self.coeffs(&e), self.branch)?;
        v.iter_mut().for_each(|x| *x *= t);
        Ok(self.point(v))
    }

    fn preconditioner(&self) -> Result<BandedCholesky, LinalgError> {
        let shift: Vec<f64> = self.index.nodes().iter().map(|&k| self.problem.mu * self.problem.fields.v()[k] + 1.0).collect();
        assemble_stiffness(&self.problem.grid, &self.index, &shift).cholesky()
    }

    /// One Newton step for the Euler–Lagrange system on the free nodes.
    fn newton_direction(&self, p: &Point) -> Result<Vec<f64>, LinalgError> {
        let prob = self.problem;
        let fields = &prob.fields;
        let nodes = self.index.nodes();
        let m = prob.a * p.e.dnorm4.sqrt() + ProblemData::B;
        let diag: Vec<f64> = nodes
            .iter()
            .map(|&k| {
                let u = p.u[k].abs();
                let nl = if u == 0.0 { 0.0 } else { (prob.p - 1.0) * fields.q()[k] * u.powf(prob.p - 2.0) };
                (prob.mu * fields.v()[k] - nl - prob.lambda * fields.f()[k]) / m
            })
            .collect();
        let mut h = assemble_stiffness(&prob.grid, &self.index, &diag);
        h.scale(m);
        let lu = h.to_general().lu()?;
        let r: Vec<f64> = nodes.iter().map(|&k| p.grad[k]).collect();
        let mut x = lu.solve(&r);
        if prob.a > 0.0 {
            // rank-one term 2aw (Ku)(Ku)ᵀ, with Ku = -Δ_h u on the free nodes
            let lap = self.eval.last_laplacian();
            let z: Vec<f64> = nodes.iter().map(|&k| lap[k]).collect();
            let s = 2.0 * prob.a * self.weight;
            let y = lu.solve(&z);
            let zx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            let zy: f64 = z.iter().zip(&y).map(|(a, b)| a * b).sum();
            let denom = 1.0 + s * zy;
            if denom == 0.0 || !denom.is_finite() {
                return Err(LinalgError::Singular(0));
            }
            let c = s * zx / denom;
            x.iter_mut().zip(&y).for_each(|(xi, yi)| *xi -= c * yi);
        }
        Ok(x)
    }

    /// Newton polish; returns the improved point if it lands on a positive
    /// critical point of the right branch below the gradient tolerance.
    fn polish(&mut self, start: &Point) -> Option<(Point, usize)> {
        let mut cur = self.point(start.u.clone());
        let mut res = self.grad_sup(&cur);
        let initial = res;
        let mut steps = 0;
        for _ in 0..self.opts.max_newton {
            if res <= 1e-6 * self.opts.tol_grad {
                break;
            }
            // evaluator caches -Δu of the current point
            self.eval.energy(&cur.u);
            let dir = self.newton_direction(&cur).ok()?;
            let mut accepted = None;
            let mut step = 1.0;
            for _ in 0..6 {
                let mut v = cur.u.clone();
                for (i, &k) in self.index.nodes().iter().enumerate() {
                    v[k] -= step * dir[i];
                }
                let trial = self.point(v);
                let r = self.grad_sup(&trial);
                if r.is_finite() && r < res {
                    accepted = Some((trial, r));
                    break;
                }
                step *= 0.5;
            }
            let Some((next, r)) = accepted else { break };
            steps += 1;
            let stalled = r > 0.5 * res;
            cur = next;
            res = r;
            if stalled && res <= self.opts.tol_grad {
                break;
            }
            if res > 1e3 * initial.max(1.0) {
                return None;
            }
        }
        if res > self.opts.tol_grad {
            return None;
        }
        let positive = self.index.nodes().iter().all(|&k| cur.u[k] >= 0.0);
        let h2 = h_second(&self.coeffs(&cur.e), 1.0).ok()?;
        let right_side = match self.branch {
            Branch::Minus => h2 < 0.0,
            Branch::Plus => h2 > 0.0,
        };
        (positive && right_side).then_some((cur, steps))
    }

    fn run(&mut self, init: &[f64]) -> Result<(Point, usize, usize), SolverError> {
        let mut u = init.iter().map(|&x| x.max(0.0)).collect::<Vec<_>>();
        self.restrict(&mut u);
        let mut cur = self.project(u).map_err(SolverError::Initial)?;
        let chol = self.preconditioner()?;
        let nodes: Vec<usize> = self.index.nodes().to_vec();
        let mut eta = 1.0;
        let mut switch = self.opts.newton_switch;
        let mut iterations = 0;
        loop {
            let gsup = self.grad_sup(&cur);
            if gsup <= self.opts.tol_grad && self.certified(&cur) {
                return Ok((cur, iterations, 0));
            }
            if gsup <= switch {
                if let Some((p, steps)) = self.polish(&cur) {
                    return Ok((p, iterations, steps));
                }
                switch = (switch * 0.1).max(self.opts.tol_grad);
            }
            if iterations >= self.opts.max_iter {
                return Err(SolverError::MaxIterations { iterations, grad: gsup });
            }
            let g: Vec<f64> = nodes.iter().map(|&k| cur.grad[k]).collect();
            let d = chol.solve(&g);
            let slope = self.weight * g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
            let mut last_failure = None;
            let mut accepted = None;
            while eta > 1e-16 {
                let mut v = cur.u.clone();
                for (i, &k) in nodes.iter().enumerate() {
                    v[k] = (v[k] - eta * d[i]).max(0.0);
                }
                match self.project(v) {
                    Ok(trial) if trial.e.j <= cur.e.j - self.opts.armijo * eta * slope => {
                        accepted = Some(trial);
                        break;
                    }
                    Ok(_) => {}
                    Err(e) => last_failure = Some(e),
                }
                eta *= 0.5;
            }
            iterations += 1;
            match accepted {
                Some(next) => {
                    cur = next;
                    eta = (eta * 2.0).min(1e6);
                }
                None => {
                    if let Some((p, steps)) = self.polish(&cur) {
                        return Ok((p, iterations, steps));
                    }
                    return Err(match last_failure {
                        Some(e) if !matches!(e, FiberError::Bracketing { .. }) || gsup > switch => {
                            SolverError::BranchVanished { iterations, reason: e.to_string() }
                        }
                        _ => SolverError::StepCollapse { iterations, grad: gsup },
                    });
                }
            }
        }
    }

    fn certified(&self, p: &Point) -> bool {
        let c = self.coeffs(&p.e);
        c.nehari_residual() <= self.opts.tol_nehari
    }

    fn report(&self, p: Point, iterations: usize, newton_steps: usize, seed: &str) -> SolveReport {
        let c = self.coeffs(&p.e);
        let grad_residual = self.grad_sup(&p);
        let nehari_residual = c.nehari_residual();
        let interior = self.problem.fields.omega_interior();
        let positivity_min = (0..p.u.len()).filter(|&k| interior[k]).map(|k| p.u[k]).fold(f64::INFINITY, f64::min);
        let h2 = h_second(&c, 1.0).unwrap_or(f64::NAN);
        let sign_ok = match self.branch {
            Branch::Minus => h2 < 0.0,
            Branch::Plus => h2 > 0.0,
        };
        let converged = grad_residual <= self.opts.tol_grad
            && nehari_residual <= self.opts.tol_nehari
            && positivity_min > 0.0
            && sign_ok;
        SolveReport {
            solution: GridFunction::from_vec(p.u),
            branch: self.branch,
            energy: p.e,
            grad_residual,
            nehari_residual,
            positivity_min,
            h_second: h2,
            iterations,
            newton_steps,
            converged,
            seed: seed.to_string(),
        }
    }
}

fn solve_from(
    problem: &ProblemData,
    support: Support,
    branch: Branch,
    seed: &Seed,
    opts: &SolverOptions,
) -> Result<SolveReport, SolverError> {
    problem.grid.check_len(seed.values.len()).map_err(|_| SolverError::InitialSize {
        expected: problem.grid.len(),
        got: seed.values.len(),
    })?;
    let mut d = Descent::new(problem, support, branch, *opts);
    let (p, it, nt) = d.run(&seed.values)?;
    Ok(d.report(p, it, nt, &seed.name))
}

/// Positive gaussian bumps spread across Ω.
pub fn bump_seeds(problem: &ProblemData, count: usize) -> Vec<Seed> {
    let grid = &problem.grid;
    let mask = problem.fields.omega_interior();
    let dim = grid.dim();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for k in (0..grid.len()).filter(|&k| mask[k]) {
        let x = grid.position(k);
        for d in 0..dim {
            lo[d] = lo[d].min(x[d]);
            hi[d] = hi[d].max(x[d]);
        }
    }
    let width = (0..dim).map(|d| hi[d] - lo[d]).fold(0.0, f64::max) * 0.25;
    (0..count)
        .map(|i| {
            // center first, then alternate sides
            let frac = if i == 0 { 0.5 } else { 0.5 + 0.3 * (if i % 2 == 1 { -1.0 } else { 1.0 }) * i.div_ceil(2) as f64 / ((count / 2).max(1)) as f64 };
            let c: Vec<f64> = (0..dim).map(|d| lo[d] + frac * (hi[d] - lo[d])).collect();
            let values = GridFunction::from_fn(grid, |x| {
                let r2: f64 = (0..dim).map(|d| (x[d] - c[d]).powi(2)).sum();
                (-r2 / (width * width)).exp()
            });
            Seed { name: format!("bump{i}"), values }
        })
        .collect()
}

/// The standard seed set: `φ₁`, `φ_μ`, the limit ground state when it
/// exists, the quartic-quotient maximizer at `p = 4`, and the gaussian bumps.
pub fn standard_seeds(problem: &ProblemData, opts: &SolverOptions) -> Result<Vec<Seed>, SolverError> {
    let phi1 = principal_eig_omega(&problem.fields, &problem.grid)?;
    let phimu = principal_eig_full(problem)?;
    let mut seeds = vec![
        Seed { name: "phi1".into(), values: phi1.eigenfunction },
        Seed { name: "phi_mu".into(), values: phimu.eigenfunction },
    ];
    if problem.lambda >= 0.0 && problem.lambda < phi1.eigenvalue {
        if let Ok(ground) = solve_limit_problem(problem, opts) {
            seeds.push(Seed { name: "ground_state".into(), values: ground.w });
        }
    }
    if problem.p == 4.0 {
        // at p = 4 the minus branch needs ∫Q u⁴ > a‖u‖⁴, which the eigenfunctions rarely meet
        let ascent = AscentOptions { restarts: 4, steps: 200, ..AscentOptions::default() };
        if let Ok(SupEstimate { argmax: Some(u), .. }) = estimate_gamma0(&problem.grid, problem.fields.q(), &ascent, &[]) {
            seeds.push(Seed { name: "gamma0_max".into(), values: u });
        }
    }
    seeds.extend(bump_seeds(problem, opts.bump_seeds));
    Ok(seeds)
}

/// Runs every seed in parallel and keeps the converged result of lowest
/// energy (ties broken by seed order).
pub fn multistart(
    problem: &ProblemData,
    support: Support,
    branch: Branch,
    seeds: &[Seed],
    opts: &SolverOptions,
) -> Result<SolveReport, SolverError> {
    let runs: Vec<Result<SolveReport, SolverError>> =
        seeds.par_iter().map(|s| solve_from(problem, support, branch, s, opts)).collect();
    let mut best: Option<SolveReport> = None;
    let mut failures = Vec::new();
    for (seed, run) in seeds.iter().zip(runs) {
        match run {
            Ok(r) if r.converged => {
                if best.as_ref().is_none_or(|b| r.energy.j < b.energy.j) {
                    best = Some(r);
                }
            }
            Ok(r) => failures.push((seed.name.clone(), format!("not certified (grad {:.3e})", r.grad_residual))),
            Err(e) => failures.push((seed.name.clone(), e.to_string())),
        }
    }
    best.ok_or(SolverError::AllSeedsFailed { branch, failures })
}

/// Minimizes the energy on one branch. With an initial guess the descent
/// starts there; otherwise the standard multi-start runs.
pub fn minimize_on_branch(
    problem: &ProblemData,
    branch: Branch,
    u_init: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<SolveReport, SolverError> {
    match u_init {
        Some(u) => {
            let seed = Seed { name: "given".into(), values: GridFunction::from_vec(u.to_vec()) };
            solve_from(problem, Support::Box, branch, &seed, opts)
        }
        None => multistart(problem, Support::Box, branch, &standard_seeds(problem, opts)?, opts),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitGroundState {
    /// Zero outside the interior of Ω.
    pub w: GridFunction,
    pub alpha_infty: f64,
    /// Largest relative mismatch among `B`, `C` and `2p/(p−2)·α`.
    pub identity_residual: f64,
    pub report: SolveReport,
}

/// Ground state of the local problem on Ω: `a = 0`, no potential, Dirichlet
/// data on ∂Ω, with the coefficient fields of `problem`.
pub fn solve_limit_problem(problem: &ProblemData, opts: &SolverOptions) -> Result<LimitGroundState, SolverError> {
    let phi1 = principal_eig_omega(&problem.fields, &problem.grid)?;
    if !(problem.lambda >= 0.0 && problem.lambda < phi1.eigenvalue) {
        return Err(SolverError::LimitLambda { lambda: problem.lambda, lambda1: phi1.eigenvalue });
    }
    let mut local = problem.clone();
    local.a = 0.0;
    let mut seeds = vec![Seed { name: "phi1".into(), values: phi1.eigenfunction }];
    seeds.extend(bump_seeds(&local, opts.bump_seeds));
    let report = multistart(&local, Support::Omega, Branch::Minus, &seeds, opts)?;
    let e = report.energy;
    let b = e.munorm2 - local.lambda * e.f_term;
    let c = e.q_term;
    let alpha = e.j;
    let k = 2.0 * local.p / (local.p - 2.0);
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs());
    let identity_residual = rel(b, c).max(rel(c, k * alpha)).max(rel(b, k * alpha));
    Ok(LimitGroundState { w: report.solution.clone(), alpha_infty: alpha, identity_residual, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundStateScalings {
    pub a: f64,
    pub t_minus: f64,
    pub t_plus: f64,
    /// `(2/(4−p))^{1/(p−2)}`, which separates the two scalings.
    pub pivot: f64,
    /// Degenerate coefficient `a(w)` of the ground state's fiber.
    pub a_limit: f64,
}

/// The two Nehari scalings `t⁻ < t⁺` of `w` under the full problem.
pub fn t_scalings_of_ground_state(w: &[f64], problem: &ProblemData) -> Result<GroundStateScalings, SolverError> {
    let p = problem.p;
    let c = crate::fibering::fibering_coeffs(w, problem)?;
    let a_limit = crate::fibering::degenerate_point(&c)
        .map_err(|_| SolverError::NoScalings { a: problem.a, a_limit: f64::NAN })?
        .a;
    if !(problem.a > 0.0 && problem.a < a_limit) {
        return Err(SolverError::NoScalings { a: problem.a, a_limit });
    }
    let class = crate::fibering::stationary_points(&c)?;
    use crate::fibering::RootKind;
    match (class.root_of(RootKind::Max), class.root_of(RootKind::Min)) {
        (Some(t_minus), Some(t_plus)) => Ok(GroundStateScalings {
            a: problem.a,
            t_minus,
            t_plus,
            pivot: (2.0 / (4.0 - p)).powf(1.0 / (p - 2.0)),
            a_limit,
        }),
        _ => Err(SolverError::NoScalings { a: problem.a, a_limit }),
    }
}

/// Scalings along `a = factor · a(w)` for each factor.
pub fn scaling_ladder(
    w: &[f64],
    problem: &ProblemData,
    factors: &[f64],
) -> Result<Vec<GroundStateScalings>, SolverError> {
    let a_limit = crate::fibering::degenerate_params(w, problem)?.a;
    factors
        .iter()
        .map(|&f| {
            let mut inst = problem.clone();
            inst.a = f * a_limit;
            t_scalings_of_ground_state(w, &inst)
        })
        .collect()
}
