//! Estimators for the constants that separate the existence regimes, and the
//! regime tags derived from them.
//!
//! `Γ₀` and `Ā_λ` are suprema over an infinite-dimensional space. Both are
//! estimated by preconditioned ascent from seeded restarts, so the reported
//! values are discrete lower bounds together with the number of samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigen::{principal_eig_full, principal_eig_omega, EigenError};
use crate::fibering::{degenerate_prefactor, degenerate_prefactor_alt, fibering_coeffs, degenerate_point};
use crate::fields::{CoefficientFields, ProblemData, Support};
use crate::functionals::{signed_power, Evaluator};
use crate::grid::{integrate_unchecked, laplacian_into, Grid, GridError, GridFunction};
use crate::linalg::{assemble_stiffness, BandedCholesky, FreeIndex, LinalgError};
use crate::sampling::BumpSampler;
use crate::solver::{solve_limit_problem, SolverError, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("threshold needs 2 < p < 4 and lambda < lambda_tilde (p = {p}, lambda = {lambda}, lambda_tilde = {lambda_tilde})")]
    AbarDomain { p: f64, lambda: f64, lambda_tilde: f64 },
    #[error("no admissible sample with B > 0 and C > 0")]
    NoAdmissibleSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentOptions {
    pub restarts: usize,
    pub steps: usize,
    pub armijo: f64,
    pub seed: u64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions { restarts: 32, steps: 400, armijo: 1e-4, seed: 0 }
    }
}

/// Result of a sampled supremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupEstimate {
    pub value: f64,
    /// Quotient evaluations made during the run.
    pub samples: usize,
    /// Running maximum after each restart, in restart order.
    pub trace: Vec<f64>,
    /// Sample attaining `value`, scaled to unit sup norm.
    #[serde(skip)]
    pub argmax: Option<GridFunction>,
}

/// Normalized ascent of a 0-homogeneous objective. `objective` returns the
/// value and nodal gradient, or `None` outside the admissible set.
fn ascend<F>(
    index: &FreeIndex,
    chol: &BandedCholesky,
    weight: f64,
    start: Vec<f64>,
    steps: usize,
    armijo: f64,
    objective: &F,
) -> (f64, usize, Vec<f64>)
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)> + Sync,
{
    let normalize = |mut u: Vec<f64>| {
        let s = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if s > 0.0 {
            u.iter_mut().for_each(|x| *x /= s);
        }
        u
    };
    let mut u = normalize(start);
    let mut samples = 1;
    let Some((mut val, mut grad)) = objective(&u) else { return (f64::NEG_INFINITY, samples, u) };
    let mut best = val;
    let mut best_u = u.clone();
    let mut eta = 1.0;
    for _ in 0..steps {
        let g = index.gather(&grad);
        let d = chol.solve(&g);
        let slope = weight * g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
        if !(slope > 1e-14 * (1.0 + val.abs())) {
            break;
        }
        let mut moved = false;
        while eta > 1e-12 {
            let mut v = u.clone();
            for (i, &k) in index.nodes().iter().enumerate() {
                v[k] += eta * d[i];
            }
            let v = normalize(v);
            samples += 1;
            if let Some((nv, ng)) = objective(&v) {
                if nv > best {
                    best = nv;
                    best_u = v.clone();
                }
                if nv >= val + armijo * eta * slope {
                    u = v;
                    val = nv;
                    grad = ng;
                    moved = true;
                    break;
                }
            }
            eta *= 0.5;
        }
        if !moved {
            break;
        }
        eta *= 2.0;
    }
    (best, samples, best_u)
}

fn restarts<F>(
    grid: &Grid,
    free: &[bool],
    shift: &[f64],
    starts: Vec<Vec<f64>>,
    opts: &AscentOptions,
    objective: F,
) -> Result<SupEstimate, ThresholdError>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)> + Sync,
{
    let index = FreeIndex::new(grid, free);
    let chol = assemble_stiffness(grid, &index, &index.gather(shift)).cholesky()?;
    let weight = grid.cell_volume();
    let runs: Vec<(f64, usize, Vec<f64>)> = starts
        .into_par_iter()
        .map(|s| ascend(&index, &chol, weight, s, opts.steps, opts.armijo, &objective))
        .collect();
    let mut trace = Vec::with_capacity(runs.len());
    let mut value = f64::NEG_INFINITY;
    let mut samples = 0;
    let mut argmax = None;
    for (v, n, u) in runs {
        if v > value {
            value = v;
            argmax = Some(GridFunction::from_vec(u));
        }
        samples += n;
        trace.push(value);
    }
    Ok(SupEstimate { value, samples, trace, argmax })
}

fn box_free(grid: &Grid) -> Vec<bool> {
    grid.boundary_mask().iter().map(|b| !b).collect()
}

/// Random positive starts on the given nodes.
fn random_starts(grid: &Grid, free: &[bool], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut s = BumpSampler::new(grid, free, seed).positive();
    (0..count).map(|_| s.sample(grid).into_vec()).collect()
}

/// `∫Q|u|⁴ / ‖u‖⁴` with its nodal gradient.
pub fn gamma_quotient(grid: &Grid, q: &[f64], u: &[f64]) -> Option<(f64, Vec<f64>)> {
    let mut lap = vec![0.0; u.len()];
    laplacian_into(grid, u, &mut lap);
    let d = integrate_unchecked(grid, &u.iter().zip(&lap).map(|(a, b)| a * b).collect::<Vec<_>>());
    if !(d > 0.0) {
        return None;
    }
    let n = integrate_unchecked(grid, &u.iter().zip(q).map(|(x, q)| q * x.powi(4)).collect::<Vec<_>>());
    let r = n / (d * d);
    let grad = (0..u.len())
        .map(|k| if grid.is_boundary(k) { 0.0 } else { 4.0 * q[k] * u[k].powi(3) / (d * d) - 4.0 * n * lap[k] / (d * d * d) })
        .collect();
    Some((r, grad))
}

/// Lower bound for `Γ₀ = sup ∫Q|u|⁴ / ‖u‖⁴` over functions on the box.
/// Extra `witnesses` are used as additional starts.
pub fn estimate_gamma0(
    grid: &Grid,
    q: &[f64],
    opts: &AscentOptions,
    witnesses: &[GridFunction],
) -> Result<SupEstimate, ThresholdError> {
    grid.check_len(q.len())?;
    let free = box_free(grid);
    let mut starts: Vec<Vec<f64>> = witnesses.iter().map(|w| w.to_vec()).collect();
    starts.extend(random_starts(grid, &free, opts.restarts, opts.seed));
    let shift = vec![1.0; grid.len()];
    let mut est = restarts(grid, &free, &shift, starts, opts, |u| gamma_quotient(grid, q, u))?;
    if est.value == f64::NEG_INFINITY {
        est.value = 0.0;
    }
    Ok(est)
}

/// `Ā_λ(u)` with the nodal gradient of its logarithm.
fn abar_objective(problem: &ProblemData, u: &[f64]) -> Option<(f64, Vec<f64>)> {
    let mut eval = Evaluator::new(problem);
    let e = eval.energy(u);
    let (p, lambda, mu) = (problem.p, problem.lambda, problem.mu);
    let big_a = e.dnorm4;
    let b = e.munorm2 - lambda * e.f_term;
    let c = e.q_term;
    if !(big_a > 0.0 && b > 0.0 && c > 0.0) {
        return None;
    }
    let d = big_a.sqrt();
    let lap = eval.last_laplacian();
    let (v, f, q) = (problem.fields.v(), problem.fields.f(), problem.fields.q());
    let (kc, kb) = (2.0 / (p - 2.0), (4.0 - p) / (p - 2.0));
    let grad = (0..u.len())
        .map(|k| {
            if problem.grid.is_boundary(k) {
                return 0.0;
            }
            let ga = 4.0 * d * lap[k];
            let gb = 2.0 * lap[k] + 2.0 * mu * v[k] * u[k] - 2.0 * lambda * f[k] * u[k];
            let gc = p * q[k] * signed_power(u[k], p);
            kc * gc / c - ga / big_a - kb * gb / b
        })
        .collect();
    let log_abar = kc * c.ln() - big_a.ln() - kb * b.ln();
    Some((log_abar, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbarEstimate {
    /// Largest sampled `Ā_λ(u)`.
    pub sup_abar: f64,
    /// Threshold with the prefactor that makes `a(u)` a double-root parameter.
    pub threshold: f64,
    /// Threshold with the `((4−p)/p)` prefactor variant.
    pub threshold_alt: f64,
    pub samples: usize,
    pub trace: Vec<f64>,
}

/// Estimates `sup Ā_λ(u)` over functions with `B > 0`, `C > 0`.
pub fn estimate_abar_lambda(
    problem: &ProblemData,
    opts: &AscentOptions,
    witnesses: &[GridFunction],
) -> Result<AbarEstimate, ThresholdError> {
    let lambda_tilde = principal_eig_full(problem)?.eigenvalue;
    let p = problem.p;
    if !(p > 2.0 && p < 4.0 && problem.lambda < lambda_tilde) {
        return Err(ThresholdError::AbarDomain { p, lambda: problem.lambda, lambda_tilde });
    }
    let grid = &problem.grid;
    let free = box_free(grid);
    let mut starts: Vec<Vec<f64>> = witnesses.iter().map(|w| w.to_vec()).collect();
    starts.push(principal_eig_full(problem)?.eigenfunction.into_vec());
    starts.push(principal_eig_omega(&problem.fields, grid)?.eigenfunction.into_vec());
    let inside = problem.fields.free_mask(grid, Support::Omega);
    starts.extend(random_starts(grid, &inside, opts.restarts, opts.seed));
    let shift: Vec<f64> = problem.fields.v().iter().map(|v| problem.mu * v + 1.0).collect();
    let est = restarts(grid, &free, &shift, starts, opts, |u| abar_objective(problem, u))?;
    if est.value == f64::NEG_INFINITY {
        return Err(ThresholdError::NoAdmissibleSample);
    }
    let sup_abar = est.value.exp();
    Ok(AbarEstimate {
        sup_abar,
        threshold: degenerate_prefactor(p) * sup_abar,
        threshold_alt: degenerate_prefactor_alt(p) * sup_abar,
        samples: est.samples,
        trace: est.trace.iter().map(|v| v.exp()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phi1Sign {
    /// `∫_Ω Q φ₁^p`.
    pub value: f64,
    /// `λ₁^{-2} ∫_Ω Q φ₁⁴`.
    pub p4_gate: f64,
    pub lambda1: f64,
}

/// Sign functional of the principal eigenfunction.
pub fn phi1_sign_condition(fields: &CoefficientFields, grid: &Grid, p: f64) -> Result<Phi1Sign, ThresholdError> {
    let eig = principal_eig_omega(fields, grid)?;
    let phi = &eig.eigenfunction;
    let q = fields.q();
    let powered = |e: f64| -> Vec<f64> { phi.iter().zip(q.iter()).map(|(x, q)| q * x.max(0.0).powf(e)).collect() };
    let value = integrate_unchecked(grid, &powered(p));
    let p4 = integrate_unchecked(grid, &powered(4.0));
    Ok(Phi1Sign { value, p4_gate: p4 / (eig.eigenvalue * eig.eigenvalue), lambda1: eig.eigenvalue })
}

/// `1 − 2((4−p)/4)^{2/p}`, the λ₁-multiple bounding the positive-energy
/// regime for `2 < p < 4`.
pub fn small_lambda_gate(p: f64) -> f64 {
    1.0 - 2.0 * ((4.0 - p) / 4.0).powf(2.0 / p)
}

/// `K(μ) = ((λ̃ − λ)/λ̃)^{1/(p−2)}`, defined for `λ < λ̃`.
pub fn k_mu(lambda_tilde: f64, lambda: f64, p: f64) -> Option<f64> {
    (lambda < lambda_tilde && p > 2.0).then(|| ((lambda_tilde - lambda) / lambda_tilde).powf(1.0 / (p - 2.0)))
}

/// `C(p) = (2 S_p^p / (Q_min (4 − p)))^{2/(p−2)}`.
pub fn c_of_p(sp_pow_p: f64, q_omega_min: f64, p: f64) -> Option<f64> {
    (p > 2.0 && p < 4.0 && q_omega_min > 0.0 && sp_pow_p > 0.0)
        .then(|| (2.0 * sp_pow_p / (q_omega_min * (4.0 - p))).powf(2.0 / (p - 2.0)))
}

/// Discrete `S_p(Ω)^p` from the ground state of `−Δw = w^{p−1}` on Ω:
/// with `m = ∫|∇w|²`, the optimal quotient `‖∇u‖²/‖u‖_p²` equals
/// `m^{1−2/p}`, so `S_p^p = m^{p/2−1}`.
pub fn sobolev_constant_omega(problem: &ProblemData, opts: &SolverOptions) -> Result<f64, ThresholdError> {
    let grid = &problem.grid;
    let ones = GridFunction::from_vec(vec![1.0; grid.len()]);
    let fields = problem.fields.with_q(grid, ones).map_err(|_| ThresholdError::NoAdmissibleSample)?;
    let mut unit = problem.clone();
    unit.fields = std::sync::Arc::new(fields);
    unit.lambda = 0.0;
    let gs = solve_limit_problem(&unit, opts)?;
    let m = gs.report.energy.munorm2;
    Ok(m.powf(problem.p / 2.0 - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeOptions {
    /// `λ < (1 + near_window) λ₁` stands in for the existential `λ₁ + δ₀`.
    pub near_window: f64,
}

impl Default for RegimeOptions {
    fn default() -> Self {
        RegimeOptions { near_window: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub a: f64,
    pub p: f64,
    pub lambda: f64,
    pub mu: f64,
    pub lambda1: f64,
    pub lambda_tilde: f64,
    pub gamma0_est: f64,
    pub gamma0_nonpositive: bool,
    pub abar_lambda_est: Option<AbarEstimate>,
    pub phi1_sign_p: f64,
    pub phi1_p4_gate: f64,
    pub k_mu: Option<f64>,
    pub c_p: Option<f64>,
    /// Discrete `S_p(Ω)^p`.
    pub sp_pow_p: Option<f64>,
    /// `(p−2)/(4p) · C(p) · K(μ)^p`.
    pub energy_band: Option<f64>,
    /// Degenerate coefficient of the λ = 0 ground state, in place of `a₀`.
    pub a0_proxy: Option<f64>,
    pub small_lambda_gate: Option<f64>,
    pub samples: usize,
    pub seed: u64,
}

/// All estimates for one problem instance.
pub fn compute_thresholds(
    problem: &ProblemData,
    ascent: &AscentOptions,
    solver: &SolverOptions,
) -> Result<ThresholdReport, ThresholdError> {
    let grid = &problem.grid;
    let p = problem.p;
    let sign = phi1_sign_condition(&problem.fields, grid, p)?;
    let lambda_tilde = principal_eig_full(problem)?.eigenvalue;
    let gamma = estimate_gamma0(grid, problem.fields.q(), ascent, &[])?;
    let mut samples = gamma.samples;
    let subquartic = p > 2.0 && p < 4.0;
    let abar = if subquartic && problem.lambda < lambda_tilde {
        let est = estimate_abar_lambda(problem, ascent, &[])?;
        samples += est.samples;
        Some(est)
    } else {
        None
    };
    let sp_pow_p = if subquartic { Some(sobolev_constant_omega(problem, solver)?) } else { None };
    let kmu = k_mu(lambda_tilde, problem.lambda, p);
    let c_p = sp_pow_p.and_then(|s| c_of_p(s, problem.fields.q_omega_min(), p));
    let energy_band = match (c_p, kmu) {
        (Some(c), Some(k)) => Some((p - 2.0) / (4.0 * p) * c * k.powf(p)),
        _ => None,
    };
    let a0_proxy = if subquartic {
        let base = problem.with_lambda(0.0).map_err(|_| ThresholdError::NoAdmissibleSample)?;
        let gs = solve_limit_problem(&base, solver)?;
        fibering_coeffs(&gs.w, &base).ok().and_then(|c| degenerate_point(&c).ok()).map(|d| d.a)
    } else {
        None
    };
    Ok(ThresholdReport {
        a: problem.a,
        p,
        lambda: problem.lambda,
        mu: problem.mu,
        lambda1: sign.lambda1,
        lambda_tilde,
        gamma0_est: gamma.value,
        gamma0_nonpositive: gamma.value <= 0.0,
        abar_lambda_est: abar,
        phi1_sign_p: sign.value,
        phi1_p4_gate: sign.p4_gate,
        k_mu: kmu,
        c_p,
        sp_pow_p,
        energy_band,
        a0_proxy,
        small_lambda_gate: subquartic.then(|| small_lambda_gate(p)),
        samples,
        seed: ascent.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeTag {
    pub tag: String,
    /// Some gate was checked against an estimated quantity.
    pub estimated: bool,
}

fn tag(name: &str, estimated: bool) -> RegimeTag {
    RegimeTag { tag: name.to_string(), estimated }
}

/// Checks each regime's inequality gates literally against the estimates.
pub fn regime_classify(problem: &ProblemData, th: &ThresholdReport, opts: &RegimeOptions) -> Vec<RegimeTag> {
    let (a, p, lambda) = (problem.a, problem.p, problem.lambda);
    let l1 = th.lambda1;
    let below = lambda > 0.0 && lambda < l1;
    let near = lambda >= l1 && lambda < (1.0 + opts.near_window) * l1;
    let mut tags = Vec::new();
    if p > 4.0 && p < 6.0 && a > 0.0 {
        if below {
            tags.push(tag("T1", false));
        }
        if th.phi1_sign_p < 0.0 && near {
            tags.push(tag("T2", true));
        }
    }
    if p == 4.0 {
        let g = th.gamma0_est;
        if a > 0.0 && a < g && below {
            tags.push(tag("T3i", true));
        }
        if a > g && below {
            tags.push(tag("T3ii", true));
        }
        if a > g && lambda >= l1 {
            tags.push(tag("T3iii", true));
        }
        if th.phi1_p4_gate < a && a < g && near {
            tags.push(tag("T4", true));
        }
    }
    if p > 2.0 && p < 4.0 {
        let a0 = th.a0_proxy.unwrap_or(0.0);
        let small_a = a > 0.0 && a < a0;
        if (small_a && below) || (a > 0.0 && lambda >= l1) {
            let est = !(a > 0.0 && lambda >= l1);
            tags.push(tag("T5", est));
            tags.push(tag("T5-2", est));
        }
        if small_a && lambda > 0.0 && lambda < small_lambda_gate(p) * l1 {
            tags.push(tag("T6", true));
            tags.push(tag("corollary-multiplicity", true));
        }
    }
    if tags.is_empty() {
        tags.push(tag("unclassified", false));
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_well_fields, FieldSpec};
    use crate::fibering::stationary_points;
    use crate::grid::build_grid;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    const LAMBDA1: f64 = 2.4673503667880166;

    fn scen(q: FieldSpec, a: f64, p: f64, lambda_rel: f64) -> ProblemData {
        let g = Arc::new(build_grid(1, &[(-2.0, 2.0)], &[401]).unwrap());
        let fields =
            Arc::new(make_well_fields(&g, 1.0, 2.0, &FieldSpec::Constant { value: 1.0 }, &q).unwrap());
        ProblemData::new(g, fields, a, p, lambda_rel * LAMBDA1, 1e4).unwrap()
    }

    fn default_q() -> FieldSpec {
        FieldSpec::Polynomial { coeffs: vec![1.0, 0.0, -2.0] }
    }

    #[test]
    fn gamma0_examples() {
        let g = build_grid(1, &[(-2.0, 2.0)], &[201]).unwrap();
        let zero = vec![0.0; g.len()];
        let opts = AscentOptions { restarts: 4, ..Default::default() };
        assert_eq!(estimate_gamma0(&g, &zero, &opts, &[]).unwrap().value, 0.0);
        // witness with quotient exactly 2
        let ones = vec![1.0; g.len()];
        let mut w = GridFunction::from_fn(&g, |x| (std::f64::consts::PI * x[0] / 4.0).cos());
        w[0] = 0.0;
        w[200] = 0.0;
        let (r, _) = gamma_quotient(&g, &ones, &w).unwrap();
        let q2: Vec<f64> = ones.iter().map(|_| 2.0 / r).collect();
        let est = estimate_gamma0(&g, &q2, &AscentOptions { restarts: 0, steps: 0, ..opts }, &[w]).unwrap();
        assert!(est.value >= 2.0 - 1e-12);
    }

    #[test]
    fn gamma0_trace_is_monotone_and_beats_random_search() {
        let prob = scen(default_q(), 1.0, 4.0, 0.5);
        let g = &prob.grid;
        let q = prob.fields.q();
        let est = estimate_gamma0(g, q, &AscentOptions::default(), &[]).unwrap();
        assert!(est.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(est.value > 0.0);
        // brute force over even profiles (1 − (|x|/2)^α)^β, 1e5 draws
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let mut best = f64::NEG_INFINITY;
        let mut u = vec![0.0; g.len()];
        for _ in 0..100_000 {
            let al = 10f64.powf(rng.gen_range(-0.5..1.0));
            let be = 10f64.powf(rng.gen_range(-0.5..1.0));
            for (k, x) in u.iter_mut().enumerate() {
                let s = 1.0 - (g.position(k)[0].abs() / 2.0).powf(al);
                *x = if g.is_boundary(k) { 0.0 } else { s.max(0.0).powf(be) };
            }
            if let Some((r, _)) = gamma_quotient(g, q, &u) {
                best = best.max(r);
            }
        }
        assert!(best <= est.value * (1.0 + 1e-9));
        assert!(best >= 0.95 * est.value, "random {best} vs ascent {}", est.value);
    }

    #[test]
    fn abar_dominates_and_blocks_roots() {
        let prob = scen(default_q(), 0.1, 3.0, 0.5);
        let est = estimate_abar_lambda(&prob, &AscentOptions { restarts: 8, ..Default::default() }, &[]).unwrap();
        assert!(est.sup_abar > 0.0);
        assert!((est.threshold / est.threshold_alt - 9.0 / 4.0).abs() < 1e-12);
        let above = prob.with_a(1.01 * est.threshold).unwrap();
        let free = box_free(&prob.grid);
        let mut s = BumpSampler::new(&prob.grid, &free, 3);
        for _ in 0..300 {
            let u = s.sample(&prob.grid);
            let c = fibering_coeffs(&u, &above).unwrap();
            assert!(stationary_points(&c).unwrap().roots.is_empty());
        }
        let closer = estimate_abar_lambda(
            &prob.with_lambda(0.7 * LAMBDA1).unwrap(),
            &AscentOptions { restarts: 8, ..Default::default() },
            &[],
        )
        .unwrap();
        assert!(closer.sup_abar > est.sup_abar);
        assert!(matches!(
            estimate_abar_lambda(&prob.with_p(4.5).unwrap(), &AscentOptions::default(), &[]),
            Err(ThresholdError::AbarDomain { .. })
        ));
    }

    #[test]
    fn phi1_sign_examples() {
        let neg = scen(FieldSpec::Polynomial { coeffs: vec![-1.0, 0.0, 3.0] }, 1.0, 5.0, 1.0);
        assert!(phi1_sign_condition(&neg.fields, &neg.grid, 5.0).unwrap().value < 0.0);
        let one = scen(FieldSpec::Constant { value: 1.0 }, 1.0, 3.0, 0.5);
        let s = phi1_sign_condition(&one.fields, &one.grid, 2.0).unwrap();
        assert!((s.value - 1.0).abs() < 1e-10);
        // sign flip of Q = 1 − c x² at the quadrature-computed critical c
        let g = &one.grid;
        let phi = principal_eig_omega(&one.fields, g).unwrap().eigenfunction;
        let p = 5.0;
        let m0 = integrate_unchecked(g, &phi.iter().map(|x| x.powf(p)).collect::<Vec<_>>());
        let m2 = integrate_unchecked(
            g,
            &(0..g.len()).map(|k| g.position(k)[0].powi(2) * phi[k].powf(p)).collect::<Vec<_>>(),
        );
        let c_crit = m0 / m2;
        let value_at = |c: f64| {
            let fields = make_well_fields(
                g,
                1.0,
                2.0,
                &FieldSpec::Constant { value: 1.0 },
                &FieldSpec::Polynomial { coeffs: vec![1.0, 0.0, -c] },
            )
            .unwrap();
            phi1_sign_condition(&fields, g, p).unwrap().value
        };
        assert!(value_at(0.99 * c_crit) > 0.0 && value_at(1.01 * c_crit) < 0.0);
        // bisection on c agrees with the ratio
        let (mut lo, mut hi) = (0.5 * c_crit, 2.0 * c_crit);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if value_at(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((lo - c_crit).abs() < 1e-9 * c_crit);
    }

    #[test]
    fn gate_values_on_a_grid() {
        for i in 1..40 {
            let p = 2.0 + 2.0 * i as f64 / 40.0;
            let g = small_lambda_gate(p);
            assert!(g > 0.0 && g < 1.0, "p={p}: {g}");
        }
        assert!((small_lambda_gate(3.0) - (1.0 - 2.0 * 0.25f64.powf(2.0 / 3.0))).abs() < 1e-15);
        assert!((small_lambda_gate(3.0) - 0.2062994740159002).abs() < 1e-12);
        assert_eq!(k_mu(2.0, 2.5, 3.0), None);
        assert!((k_mu(2.0, 1.0, 3.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(c_of_p(1.0, -1.0, 3.0), None);
        assert!((c_of_p(1.0, 1.0, 3.0).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sobolev_constant_matches_ground_energy() {
        let prob = scen(FieldSpec::Constant { value: 1.0 }, 0.1, 3.0, 0.0);
        let opts = SolverOptions::default();
        let sp = sobolev_constant_omega(&prob, &opts).unwrap();
        let gs = solve_limit_problem(&prob, &opts).unwrap();
        // with Q ≡ 1 and λ = 0 the ground energy sits exactly at the bound
        let bound = (prob.p - 2.0) / (2.0 * prob.p) * sp.powf(2.0 / (prob.p - 2.0));
        assert!((gs.alpha_infty - bound).abs() < 1e-9 * bound);
    }

    fn report_for(prob: &ProblemData) -> ThresholdReport {
        compute_thresholds(prob, &AscentOptions { restarts: 8, ..Default::default() }, &SolverOptions::default()).unwrap()
    }

    #[test]
    fn regime_examples() {
        let tags = |p: &ProblemData, th: &ThresholdReport| -> Vec<String> {
            regime_classify(p, th, &RegimeOptions::default()).into_iter().map(|t| t.tag).collect()
        };
        let t1 = scen(default_q(), 1.0, 5.0, 0.5);
        let th1 = report_for(&t1);
        assert_eq!(tags(&t1, &th1), vec!["T1"]);
        assert!(th1.k_mu.unwrap() > 0.0 && th1.k_mu.unwrap() < 1.0);

        let base4 = scen(default_q(), 1.0, 4.0, 0.5);
        let th4 = report_for(&base4);
        let big_a = base4.with_a(1.05 * th4.gamma0_est).unwrap();
        assert_eq!(tags(&big_a, &th4), vec!["T3ii"]);

        let p3 = scen(FieldSpec::Constant { value: 1.0 }, 0.01, 3.0, 0.4);
        let th3 = report_for(&p3);
        let a0 = th3.a0_proxy.unwrap();
        let small = p3.with_a(0.5 * a0).unwrap();
        let got = tags(&small, &th3);
        // 0.4 lies above the gate value 0.206 at p = 3
        assert!(!got.contains(&"T6".to_string()));
        assert!(got.contains(&"T5".to_string()) && got.contains(&"T5-2".to_string()));
        let lower = small.with_lambda(0.1 * LAMBDA1).unwrap();
        assert!(tags(&lower, &th3).contains(&"T6".to_string()));
        assert!(th3.c_p.unwrap() > 0.0);
        assert!(th3.energy_band.unwrap() > 0.0);
        let json = serde_json::to_value(&th3).unwrap();
        for key in ["gamma0_est", "abar_lambda_est", "phi1_sign_p", "phi1_p4_gate", "k_mu", "c_p", "samples"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
