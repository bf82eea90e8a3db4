//! Norms, the energy `J` and its gradient on grid functions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::ProblemData;
use crate::grid::{apply_laplacian, integrate_unchecked, laplacian_into, Grid, GridError, GridFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionalError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("the power nonlinearity is not differentiable for p = {0} < 2")]
    NotDifferentiable(f64),
}

/// The four building blocks of the energy and the assembled value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// `‖u‖⁴` in the homogeneous Sobolev norm.
    pub dnorm4: f64,
    /// `‖u‖²_μ = ∫|∇u|² + μ∫V u²`.
    pub munorm2: f64,
    /// `∫ Q |u|^p`.
    pub q_term: f64,
    /// `∫ f u²`.
    pub f_term: f64,
    #[serde(rename = "J")]
    pub j: f64,
}

impl EnergyBreakdown {
    pub fn assemble(dnorm4: f64, munorm2: f64, q_term: f64, f_term: f64, a: f64, p: f64, lambda: f64) -> Self {
        let j = 0.25 * a * dnorm4 + 0.5 * munorm2 - q_term / p - 0.5 * lambda * f_term;
        EnergyBreakdown { dnorm4, munorm2, q_term, f_term, j }
    }
}

fn weighted_sum(grid: &Grid, values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    integrate_unchecked(grid, &v)
}

/// `|x|^{p-2} x`, continuously extended by 0 at the origin.
#[inline]
pub(crate) fn signed_power(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.abs().powf(p - 2.0) * x
    }
}

/// `∫ |∇u|²`, computed as `∫ u (-Δ_h u)`.
pub fn dirichlet_norm_sq(grid: &Grid, u: &[f64]) -> Result<f64, GridError> {
    let lu = apply_laplacian(grid, u)?;
    Ok(weighted_sum(grid, u.iter().zip(lu.iter()).map(|(a, b)| a * b)))
}

/// `∫ w u²`.
pub fn weighted_mass(grid: &Grid, u: &[f64], w: &[f64]) -> Result<f64, GridError> {
    grid.check_len(u.len())?;
    grid.check_len(w.len())?;
    Ok(weighted_sum(grid, u.iter().zip(w).map(|(x, w)| w * x * x)))
}

/// `∫ q |u|^p` for an arbitrary exponent.
pub fn power_mass(grid: &Grid, u: &[f64], q: &[f64], p: f64) -> Result<f64, GridError> {
    grid.check_len(u.len())?;
    grid.check_len(q.len())?;
    Ok(weighted_sum(grid, u.iter().zip(q).map(|(x, q)| if *x == 0.0 { 0.0 } else { q * x.abs().powf(p) })))
}

/// `‖u‖²_μ = ∫|∇u|² + μ ∫ V u²`.
pub fn mu_norm_sq(u: &[f64], problem: &ProblemData) -> Result<f64, GridError> {
    let grid = &problem.grid;
    Ok(dirichlet_norm_sq(grid, u)? + problem.mu * weighted_mass(grid, u, problem.fields.v())?)
}

/// `∫ Q |u|^p` with the problem's exponent.
pub fn q_power_term(u: &[f64], problem: &ProblemData) -> Result<f64, GridError> {
    power_mass(&problem.grid, u, problem.fields.q(), problem.p)
}

/// Evaluates all energy terms from `u` and a precomputed `-Δ_h u`.
pub(crate) fn energy_from_parts(problem: &ProblemData, u: &[f64], lu: &[f64]) -> EnergyBreakdown {
    let grid = &problem.grid;
    let fields = &problem.fields;
    let p = problem.p;
    let dnorm2 = weighted_sum(grid, u.iter().zip(lu).map(|(a, b)| a * b));
    let vmass = weighted_sum(grid, u.iter().zip(fields.v().iter()).map(|(x, v)| v * x * x));
    let fmass = weighted_sum(grid, u.iter().zip(fields.f().iter()).map(|(x, f)| f * x * x));
    let qterm = weighted_sum(
        grid,
        u.iter().zip(fields.q().iter()).map(|(x, q)| if *x == 0.0 { 0.0 } else { q * x.abs().powf(p) }),
    );
    EnergyBreakdown::assemble(dnorm2 * dnorm2, dnorm2 + problem.mu * vmass, qterm, fmass, problem.a, p, problem.lambda)
}

pub fn energy(u: &[f64], problem: &ProblemData) -> Result<EnergyBreakdown, GridError> {
    let lu = apply_laplacian(&problem.grid, u)?;
    Ok(energy_from_parts(problem, u, &lu))
}

/// Gradient with boundary rows zeroed, given `-Δ_h u` and `∫|∇u|²`.
pub(crate) fn gradient_from_parts(problem: &ProblemData, u: &[f64], lu: &[f64], dnorm2: f64, out: &mut [f64]) {
    let fields = &problem.fields;
    let m = problem.a * dnorm2 + ProblemData::B;
    let (v, f, q) = (fields.v(), fields.f(), fields.q());
    for k in 0..u.len() {
        out[k] = if problem.grid.is_boundary(k) {
            0.0
        } else {
            m * lu[k] + problem.mu * v[k] * u[k] - q[k] * signed_power(u[k], problem.p) - problem.lambda * f[k] * u[k]
        };
    }
}

/// Nodal representative of `J'(u)` with respect to the quadrature inner
/// product, so that `⟨J'(u), v⟩ = integrate(grad * v)` for boundary-zero `v`.
pub fn energy_gradient(u: &[f64], problem: &ProblemData) -> Result<GridFunction, FunctionalError> {
    if problem.p < 2.0 {
        return Err(FunctionalError::NotDifferentiable(problem.p));
    }
    let grid = &problem.grid;
    let lu = apply_laplacian(grid, u)?;
    let dnorm2 = weighted_sum(grid, u.iter().zip(lu.iter()).map(|(a, b)| a * b));
    let mut out = vec![0.0; u.len()];
    gradient_from_parts(problem, u, &lu, dnorm2, &mut out);
    Ok(GridFunction::from_vec(out))
}

/// Quadrature inner product `∫ u v`.
pub fn l2_inner(grid: &Grid, u: &[f64], v: &[f64]) -> Result<f64, GridError> {
    grid.check_len(u.len())?;
    grid.check_len(v.len())?;
    Ok(weighted_sum(grid, u.iter().zip(v).map(|(a, b)| a * b)))
}

/// Scratch-buffer evaluator used inside iterative solvers.
pub(crate) struct Evaluator<'a> {
    pub problem: &'a ProblemData,
    lu: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(problem: &'a ProblemData) -> Self {
        Evaluator { problem, lu: vec![0.0; problem.grid.len()] }
    }

    pub fn energy(&mut self, u: &[f64]) -> EnergyBreakdown {
        laplacian_into(&self.problem.grid, u, &mut self.lu);
        energy_from_parts(self.problem, u, &self.lu)
    }

    /// Energy and gradient in one pass.
    pub fn energy_and_gradient(&mut self, u: &[f64], grad: &mut [f64]) -> EnergyBreakdown {
        laplacian_into(&self.problem.grid, u, &mut self.lu);
        let e = energy_from_parts(self.problem, u, &self.lu);
        gradient_from_parts(self.problem, u, &self.lu, e.dnorm4.sqrt(), grad);
        e
    }

    /// `-Δ_h u` from the last evaluation.
    pub fn last_laplacian(&self) -> &[f64] {
        &self.lu
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_well_fields, FieldSpec};
    use crate::grid::build_grid;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn omega_grid() -> Grid {
        build_grid(1, &[(-1.0, 1.0)], &[801]).unwrap()
    }

    fn cosine(grid: &Grid) -> GridFunction {
        let mut u = GridFunction::from_fn(grid, |x| (PI * x[0] / 2.0).cos());
        let n = u.len();
        u[0] = 0.0;
        u[n - 1] = 0.0;
        u
    }

    #[test]
    fn dirichlet_norm_examples() {
        let g = omega_grid();
        assert_eq!(dirichlet_norm_sq(&g, &vec![0.0; g.len()]).unwrap(), 0.0);
        let u = cosine(&g);
        let d = dirichlet_norm_sq(&g, &u).unwrap();
        assert!((d - PI * PI / 4.0).abs() < 1e-3);
        let d2 = dirichlet_norm_sq(&g, &u.scaled(2.0)).unwrap();
        assert!((d2 - 4.0 * d).abs() < 1e-12 * d2);
    }

    #[test]
    fn weighted_terms_examples() {
        let g = omega_grid();
        let u = cosine(&g);
        let ones = vec![1.0; g.len()];
        assert!((weighted_mass(&g, &u, &ones).unwrap() - 1.0).abs() < 1e-4);
        assert!((power_mass(&g, &u, &ones, 2.0).unwrap() - 1.0).abs() < 1e-4);
        assert_eq!(weighted_mass(&g, &vec![0.0; g.len()], &ones).unwrap(), 0.0);
        let neg = u.scaled(-1.0);
        assert_eq!(power_mass(&g, &neg, &ones, 3.3).unwrap(), power_mass(&g, &u, &ones, 3.3).unwrap());
    }

    #[test]
    fn energy_assembly_arithmetic() {
        let e = EnergyBreakdown::assemble(1.0, 1.0, 1.0, 0.0, 1.0, 4.0, 0.7);
        assert!((e.j - 0.5).abs() < 1e-15);
        let json = serde_json::to_value(e).unwrap();
        for key in ["dnorm4", "munorm2", "q_term", "f_term", "J"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn mu_norm_and_energy_properties() {
        let g = Arc::new(build_grid(1, &[(-2.0, 2.0)], &[401]).unwrap());
        let fields = Arc::new(
            make_well_fields(
                &g,
                1.0,
                2.0,
                &FieldSpec::Constant { value: 1.0 },
                &FieldSpec::Polynomial { coeffs: vec![1.0, 0.0, -2.0] },
            )
            .unwrap(),
        );
        let prob = ProblemData::new(g.clone(), fields, 0.3, 3.0, 1.5, 100.0).unwrap();
        // supported inside Ω
        let inside = GridFunction::from_fn(&g, |x| if x[0].abs() < 1.0 { (PI * x[0] / 2.0).cos() } else { 0.0 });
        assert_eq!(mu_norm_sq(&inside, &prob).unwrap(), dirichlet_norm_sq(&g, &inside).unwrap());
        // doubling μ doubles the potential part
        let mut spread = GridFunction::from_fn(&g, |x| (PI * x[0] / 4.0).cos());
        spread[0] = 0.0;
        spread[400] = 0.0;
        let d = dirichlet_norm_sq(&g, &spread).unwrap();
        let m1 = mu_norm_sq(&spread, &prob).unwrap() - d;
        let m2 = mu_norm_sq(&spread, &prob.with_mu(200.0).unwrap()).unwrap() - d;
        assert!((m2 - 2.0 * m1).abs() < 1e-12 * m2);
        // even functional, zero at zero
        let e = energy(&spread, &prob).unwrap().j;
        let e_neg = energy(&spread.scaled(-1.0), &prob).unwrap().j;
        assert_eq!(e, e_neg);
        assert_eq!(energy(&vec![0.0; g.len()], &prob).unwrap().j, 0.0);
        assert!(energy_gradient(&vec![0.0; g.len()], &prob).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_rejects_small_exponent() {
        let g = Arc::new(build_grid(1, &[(-2.0, 2.0)], &[41]).unwrap());
        let one = FieldSpec::Constant { value: 1.0 };
        let fields = Arc::new(make_well_fields(&g, 1.0, 2.0, &one, &one).unwrap());
        let mut prob = ProblemData::new(g.clone(), fields, 0.3, 3.0, 1.5, 100.0).unwrap();
        prob.p = 1.5;
        assert!(matches!(energy_gradient(&vec![0.0; 41], &prob), Err(FunctionalError::NotDifferentiable(_))));
    }

    fn scen1d(a: f64, p: f64, lambda: f64, mu: f64) -> ProblemData {
        let g = Arc::new(build_grid(1, &[(-2.0, 2.0)], &[401]).unwrap());
        let fields = Arc::new(
            make_well_fields(
                &g,
                1.0,
                2.0,
                &FieldSpec::Constant { value: 1.0 },
                &FieldSpec::Polynomial { coeffs: vec![1.0, 0.0, -2.0] },
            )
            .unwrap(),
        );
        ProblemData::new(g, fields, a, p, lambda, mu).unwrap()
    }

    #[test]
    fn gradient_matches_central_differences() {
        use crate::sampling::BumpSampler;
        for &p in &[2.5, 3.0, 4.0, 5.0] {
            let prob = scen1d(0.7, p, 1.3, 50.0);
            let g = &prob.grid;
            let free = prob.fields.free_mask(g, crate::fields::Support::Box);
            let mut sampler = BumpSampler::new(g, &free, 11);
            for _ in 0..20 {
                let u = sampler.sample(g);
                let v = sampler.sample(g);
                let grad = energy_gradient(&u, &prob).unwrap();
                let exact = l2_inner(g, &grad, &v).unwrap();
                for eps in [1e-4, 1e-5] {
                    let plus: Vec<f64> = u.iter().zip(v.iter()).map(|(a, b)| a + eps * b).collect();
                    let minus: Vec<f64> = u.iter().zip(v.iter()).map(|(a, b)| a - eps * b).collect();
                    let fd = (energy(&plus, &prob).unwrap().j - energy(&minus, &prob).unwrap().j) / (2.0 * eps);
                    assert!((fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()), "p={p} eps={eps}: {fd} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn evaluator_agrees_with_free_functions() {
        let prob = scen1d(0.3, 3.5, 0.5, 100.0);
        let u = GridFunction::from_fn(&prob.grid, |x| (1.0 - x[0] * x[0] / 4.0) * (x[0] + 0.3).cos());
        let mut ev = Evaluator::new(&prob);
        let mut grad = vec![0.0; u.len()];
        let e = ev.energy_and_gradient(&u, &mut grad);
        assert_eq!(e, energy(&u, &prob).unwrap());
        assert_eq!(ev.energy(&u), e);
        assert_eq!(grad, energy_gradient(&u, &prob).unwrap().into_vec());
        assert_eq!(ev.last_laplacian(), &apply_laplacian(&prob.grid, &u).unwrap()[..]);
    }

    proptest::proptest! {
        #[test]
        fn terms_scale_homogeneously(t in 0.1f64..5.0, seed in 0u64..1000, p in 2.1f64..5.9) {
            use crate::sampling::BumpSampler;
            let prob = scen1d(1.0, p, 1.0, 10.0);
            let g = &prob.grid;
            let free = prob.fields.free_mask(g, crate::fields::Support::Box);
            let u = BumpSampler::new(g, &free, seed).sample(g);
            let e1 = energy(&u, &prob).unwrap();
            let et = energy(&u.scaled(t), &prob).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (x.abs() + y.abs() + 1e-300);
            proptest::prop_assert!(close(et.dnorm4, t.powi(4) * e1.dnorm4));
            proptest::prop_assert!(close(et.munorm2, t * t * e1.munorm2));
            proptest::prop_assert!(close(et.q_term, t.powf(p) * e1.q_term));
            proptest::prop_assert!(close(et.f_term, t * t * e1.f_term));
        }

        #[test]
        fn quadrature_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, s1 in 0u64..500, s2 in 500u64..1000) {
            use crate::sampling::BumpSampler;
            use crate::grid::integrate;
            let g = build_grid(2, &[(-1.0, 1.0), (-1.0, 1.5)], &[21, 17]).unwrap();
            let free: Vec<bool> = g.boundary_mask().iter().map(|b| !b).collect();
            let u = BumpSampler::new(&g, &free, s1).sample(&g);
            let v = BumpSampler::new(&g, &free, s2).sample(&g);
            let comb: Vec<f64> = u.iter().zip(v.iter()).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = integrate(&g, &comb).unwrap();
            let rhs = alpha * integrate(&g, &u).unwrap() + beta * integrate(&g, &v).unwrap();
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-13 * (1.0 + lhs.abs()));
        }
    }
}
