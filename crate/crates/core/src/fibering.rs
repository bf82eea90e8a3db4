//! Scalar analysis of the fibering map `h(t) = J(t u)`.
//!
//! With `A = ‖u‖⁴`, `B = ‖u‖²_μ − λ∫fu²` and `C = ∫Q|u|^p`,
//!
//! ```text
//! h(t)  = aA t⁴/4 + B t²/2 − C t^p/p
//! h'(t) = t · k(t),   k(t) = aA t² + B − C t^{p−2}
//! ```
//!
//! so positive stationary points are the positive zeros of `k`, and at such a
//! zero `h''(t) = t k'(t)`. `k` has at most one interior critical point, which
//! splits `(0, ∞)` into at most two monotone pieces; each piece holds at most
//! one root and the direction of monotonicity gives its kind.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::ProblemData;
use crate::functionals::{energy, EnergyBreakdown};
use crate::grid::{GridError, GridFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiberError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("fibering map is undefined for the zero function")]
    ZeroFunction,
    #[error("fibering map is evaluated at t = {0}, need t > 0")]
    NonPositiveT(f64),
    #[error("no {branch:?} stationary point on this fiber ({class})")]
    BranchAbsent { branch: Branch, class: String },
    #[error("root bracketing failed on [{lo:.3e}, {hi:.3e}] (k = {k_lo:.3e}, {k_hi:.3e})")]
    Bracketing { lo: f64, hi: f64, k_lo: f64, k_hi: f64 },
    #[error("degenerate point needs 2 < p < 4, B > 0, C > 0 and A > 0 (p = {p}, A = {a}, B = {b}, C = {c})")]
    DegenerateUndefined { p: f64, a: f64, b: f64, c: f64 },
}

/// Which Nehari branch a solution lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `h''(1) < 0`, local maximum of the fiber.
    Minus,
    /// `h''(1) > 0`, local minimum of the fiber.
    Plus,
}

impl Branch {
    pub fn kind(self) -> RootKind {
        match self {
            Branch::Minus => RootKind::Max,
            Branch::Plus => RootKind::Min,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Minus => "minus",
            Branch::Plus => "plus",
        }
    }
}

impl std::str::FromStr for Branch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minus" => Ok(Branch::Minus),
            "plus" => Ok(Branch::Plus),
            other => Err(format!("unknown branch '{other}', expected minus or plus")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberingCoefficients {
    #[serde(rename = "A")]
    pub big_a: f64,
    #[serde(rename = "B")]
    pub big_b: f64,
    #[serde(rename = "C")]
    pub big_c: f64,
    pub p: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignSet {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
    #[serde(rename = "0")]
    Zero,
}

impl SignSet {
    fn of(x: f64) -> SignSet {
        if x > 0.0 {
            SignSet::Plus
        } else if x < 0.0 {
            SignSet::Minus
        } else {
            SignSet::Zero
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootKind {
    Max,
    Min,
    Inflection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberRoot {
    pub t: f64,
    pub kind: RootKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberClass {
    pub lambda_set: SignSet,
    pub theta_set: SignSet,
    /// Sorted by `t`, all positive.
    pub roots: Vec<FiberRoot>,
}

impl FiberClass {
    pub fn root_of(&self, kind: RootKind) -> Option<f64> {
        self.roots.iter().find(|r| r.kind == kind).map(|r| r.t)
    }
}

impl std::fmt::Display for FiberClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let roots: Vec<String> = self.roots.iter().map(|r| format!("{:?}@{:.6e}", r.kind, r.t)).collect();
        let sign = |s: SignSet| match s {
            SignSet::Plus => "+",
            SignSet::Minus => "-",
            SignSet::Zero => "0",
        };
        write!(f, "Λ{} Θ{} roots [{}]", sign(self.lambda_set), sign(self.theta_set), roots.join(", "))
    }
}

/// Relative size below which the critical value of `k` counts as zero.
const DOUBLE_ROOT_TOL: f64 = 1e-12;

impl FiberingCoefficients {
    pub fn new(big_a: f64, big_b: f64, big_c: f64, p: f64, a: f64) -> Self {
        FiberingCoefficients { big_a, big_b, big_c, p, a }
    }

    /// `aA`, the quartic coefficient.
    fn quartic(&self) -> f64 {
        self.a * self.big_a
    }

    /// `k(t) = h'(t)/t`.
    pub fn k(&self, t: f64) -> f64 {
        self.quartic() * t * t + self.big_b - self.big_c * t.powf(self.p - 2.0)
    }

    fn k_scale(&self, t: f64) -> f64 {
        self.quartic() * t * t + self.big_b.abs() + self.big_c.abs() * t.powf(self.p - 2.0)
    }

    /// `Φ_p`: `C` for `p ≠ 4`, `C − aA` at `p = 4`.
    pub fn phi_p(&self) -> f64 {
        if self.p == 4.0 {
            self.big_c - self.quartic()
        } else {
            self.big_c
        }
    }

    /// The three expressions of `h''(1)` that coincide on the Nehari manifold.
    pub fn second_derivative_forms(&self) -> [f64; 3] {
        let (aa, b, c, p) = (self.quartic(), self.big_b, self.big_c, self.p);
        [-(p - 2.0) * b - (p - 4.0) * aa, 2.0 * aa - (p - 2.0) * c, -2.0 * b - (p - 4.0) * c]
    }

    /// `|aA + B − C| / (aA + |B| + |C|)`.
    pub fn nehari_residual(&self) -> f64 {
        let scale = self.quartic() + self.big_b.abs() + self.big_c.abs();
        (self.quartic() + self.big_b - self.big_c).abs() / scale
    }

    /// Coefficients of `t u`.
    pub fn scaled(&self, t: f64) -> FiberingCoefficients {
        FiberingCoefficients {
            big_a: self.big_a * t.powi(4),
            big_b: self.big_b * t * t,
            big_c: self.big_c * t.powf(self.p),
            ..*self
        }
    }
}

fn check_t(t: f64) -> Result<(), FiberError> {
    if t > 0.0 {
        Ok(())
    } else {
        Err(FiberError::NonPositiveT(t))
    }
}

pub fn h_value(c: &FiberingCoefficients, t: f64) -> Result<f64, FiberError> {
    check_t(t)?;
    Ok(0.25 * c.quartic() * t.powi(4) + 0.5 * c.big_b * t * t - c.big_c * t.powf(c.p) / c.p)
}

pub fn h_prime(c: &FiberingCoefficients, t: f64) -> Result<f64, FiberError> {
    check_t(t)?;
    Ok(c.quartic() * t.powi(3) + c.big_b * t - c.big_c * t.powf(c.p - 1.0))
}

pub fn h_second(c: &FiberingCoefficients, t: f64) -> Result<f64, FiberError> {
    check_t(t)?;
    Ok(3.0 * c.quartic() * t * t + c.big_b - (c.p - 1.0) * c.big_c * t.powf(c.p - 2.0))
}

/// `(A, B, C)` of a grid function, together with its energy terms.
pub fn fibering_coeffs_with_energy(
    u: &[f64],
    problem: &ProblemData,
) -> Result<(FiberingCoefficients, EnergyBreakdown), FiberError> {
    if u.iter().all(|&x| x == 0.0) {
        return Err(FiberError::ZeroFunction);
    }
    let e = energy(u, problem)?;
    Ok((coefficients_from_energy(&e, problem), e))
}

pub(crate) fn coefficients_from_energy(e: &EnergyBreakdown, problem: &ProblemData) -> FiberingCoefficients {
    FiberingCoefficients::new(e.dnorm4, e.munorm2 - problem.lambda * e.f_term, e.q_term, problem.p, problem.a)
}

pub fn fibering_coeffs(u: &[f64], problem: &ProblemData) -> Result<FiberingCoefficients, FiberError> {
    fibering_coeffs_with_energy(u, problem).map(|(c, _)| c)
}

/// Root of a monotone continuous `g` on `[lo, hi]` with a sign change,
/// bisected down to adjacent floats.
fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Result<f64, FiberError> {
    let (g_lo, g_hi) = (g(lo), g(hi));
    if g_lo == 0.0 && lo > 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }
    if g_lo.signum() == g_hi.signum() {
        return Err(FiberError::Bracketing { lo, hi, k_lo: g_lo, k_hi: g_hi });
    }
    let lo_sign = g_lo.signum();
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let pick = if g(lo).abs() <= g(hi).abs() { lo } else { hi };
    Ok(if pick > 0.0 { pick } else { hi })
}

/// Root on `(start, ∞)` of a `g` that is monotone there and changes sign.
fn bisect_unbounded(g: impl Fn(f64) -> f64, start: f64) -> Result<f64, FiberError> {
    let s0 = g(start).signum();
    let mut hi = if start > 0.0 { 2.0 * start } else { 1.0 };
    let mut lo = start;
    for _ in 0..4000 {
        if g(hi).signum() != s0 || g(hi) == 0.0 {
            return bisect(&g, lo, hi);
        }
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            break;
        }
    }
    Err(FiberError::Bracketing { lo: start, hi, k_lo: g(start), k_hi: g(lo) })
}

fn kind_from_k_slope(increasing: bool) -> RootKind {
    // h'' = t k' at a root
    if increasing {
        RootKind::Min
    } else {
        RootKind::Max
    }
}

/// All positive stationary points of `h` with their kinds and the sign sets.
pub fn stationary_points(c: &FiberingCoefficients) -> Result<FiberClass, FiberError> {
    let lambda_set = SignSet::of(c.big_b);
    let theta_set = SignSet::of(c.phi_p());
    let mut roots = Vec::new();
    let (aa, b, cc, p) = (c.quartic(), c.big_b, c.big_c, c.p);
    let q = p - 2.0;
    if aa == 0.0 {
        if b != 0.0 && cc != 0.0 && (b > 0.0) == (cc > 0.0) {
            roots.push(FiberRoot { t: (b / cc).powf(1.0 / q), kind: kind_from_k_slope(cc < 0.0) });
        }
    } else if cc == 0.0 {
        if b < 0.0 {
            roots.push(FiberRoot { t: (-b / aa).sqrt(), kind: RootKind::Min });
        }
    } else if p == 4.0 {
        let d = cc - aa;
        if b != 0.0 && d != 0.0 && (b > 0.0) == (d > 0.0) {
            roots.push(FiberRoot { t: (b / d).sqrt(), kind: kind_from_k_slope(d < 0.0) });
        }
    } else if cc < 0.0 {
        // k strictly increasing from B to +∞
        if b < 0.0 {
            roots.push(FiberRoot { t: bisect_unbounded(|t| c.k(t), 0.0)?, kind: RootKind::Min });
        }
    } else {
        let t_star = (q * cc / (2.0 * aa)).powf(1.0 / (4.0 - p));
        if !(t_star.is_finite() && t_star > 0.0) {
            return Err(FiberError::Bracketing { lo: 0.0, hi: t_star, k_lo: b, k_hi: f64::NAN });
        }
        let k_star = c.k(t_star);
        let degenerate = k_star.abs() <= DOUBLE_ROOT_TOL * c.k_scale(t_star);
        // p < 4: k falls then rises (minimum at t*); p > 4: rises then falls
        let valley = p < 4.0;
        if degenerate {
            roots.push(FiberRoot { t: t_star, kind: RootKind::Inflection });
        } else if (valley && k_star < 0.0) || (!valley && k_star > 0.0) {
            if (valley && b > 0.0) || (!valley && b < 0.0) {
                roots.push(FiberRoot { t: bisect(|t| c.k(t), 0.0, t_star)?, kind: kind_from_k_slope(!valley) });
            }
            roots.push(FiberRoot { t: bisect_unbounded(|t| c.k(t), t_star)?, kind: kind_from_k_slope(valley) });
        }
    }
    Ok(FiberClass { lambda_set, theta_set, roots })
}

/// A fiber point scaled onto the Nehari manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct NehariProjection {
    pub t: f64,
    pub scaled: GridFunction,
    /// Coefficients of the scaled function; `h''(1) = second_derivative_forms()`.
    pub coeffs: FiberingCoefficients,
    pub h_second: f64,
    pub class: FiberClass,
}

/// Scale of `u` landing on the requested branch, if the fiber has one.
pub fn branch_scale(c: &FiberingCoefficients, branch: Branch) -> Result<(f64, FiberClass), FiberError> {
    let class = stationary_points(c)?;
    match class.root_of(branch.kind()) {
        Some(t) => Ok((t, class)),
        None => Err(FiberError::BranchAbsent { branch, class: class.to_string() }),
    }
}

pub fn project_to_nehari(u: &[f64], problem: &ProblemData, branch: Branch) -> Result<NehariProjection, FiberError> {
    let c = fibering_coeffs(u, problem)?;
    let (t, class) = branch_scale(&c, branch)?;
    let scaled = GridFunction::from_vec(u.iter().map(|x| t * x).collect());
    let coeffs = fibering_coeffs(&scaled, problem)?;
    let h_second = h_second(&coeffs, 1.0)?;
    Ok(NehariProjection { t, scaled, coeffs, h_second, class })
}

/// The degenerate point of a fiber for `2 < p < 4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegeneratePoint {
    /// Location of the double root.
    pub t: f64,
    /// The Kirchhoff coefficient that creates it.
    pub a: f64,
    /// `C^{2/(p−2)} / (A B^{(4−p)/(p−2)})`.
    pub abar: f64,
}

/// Prefactor in `a(u) = κ(p) Ā(u)` obtained by solving `h' = h'' = 0`.
pub fn degenerate_prefactor(p: f64) -> f64 {
    (p - 2.0) / (4.0 - p) * ((4.0 - p) / 2.0).powf(2.0 / (p - 2.0))
}

/// The same prefactor with `(4−p)/p` in place of `(4−p)/2`, the variant
/// printed alongside the supremum definition of the threshold.
pub fn degenerate_prefactor_alt(p: f64) -> f64 {
    (p - 2.0) / (4.0 - p) * ((4.0 - p) / p).powf(2.0 / (p - 2.0))
}

/// `Ā(u)` from fibering coefficients.
pub fn abar_of(c: &FiberingCoefficients) -> Result<f64, FiberError> {
    let p = c.p;
    if !(p > 2.0 && p < 4.0 && c.big_a > 0.0 && c.big_b > 0.0 && c.big_c > 0.0) {
        return Err(FiberError::DegenerateUndefined { p, a: c.big_a, b: c.big_b, c: c.big_c });
    }
    Ok(c.big_c.powf(2.0 / (p - 2.0)) / (c.big_a * c.big_b.powf((4.0 - p) / (p - 2.0))))
}

/// `t(u)` and `a(u)` from coefficients (the stored `a` is ignored).
pub fn degenerate_point(c: &FiberingCoefficients) -> Result<DegeneratePoint, FiberError> {
    let abar = abar_of(c)?;
    let p = c.p;
    let t = (2.0 * c.big_b / ((4.0 - p) * c.big_c)).powf(1.0 / (p - 2.0));
    Ok(DegeneratePoint { t, a: degenerate_prefactor(p) * abar, abar })
}

pub fn degenerate_params(u: &[f64], problem: &ProblemData) -> Result<DegeneratePoint, FiberError> {
    degenerate_point(&fibering_coeffs(u, problem)?)
}
