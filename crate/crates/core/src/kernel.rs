//! Fundamental solution machinery in physical variables: the weight Q and its
//! normalisation C*, the Green's function G(V, V0), the Dirichlet kernel
//! K(V, η; V̄) and the boundary value solver u = u1 + u2.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lambda_series::{self, LambdaSeries, DEFAULT_ORDER};
use crate::parallel::Exec;
use crate::specfun::quadrature::{integrate_singular, integrate_with_distances, QuadratureSpec};
use crate::specfun::SigmaParams;

/// Weights of the three terms of (V0^{1/3} + (η−V0)^{1/3})².
pub const C: [f64; 3] = [1.0, 2.0, 1.0];

/// (1−u)^{σ−2} − 1 given u and d = 1−u, both exact.
fn bracket(u: f64, d: f64, sigma: f64) -> f64 {
    if u < 0.5 {
        ((sigma - 2.0) * (-u).ln_1p()).exp_m1()
    } else {
        d.powf(sigma - 2.0) - 1.0
    }
}

/// q(y) = Q(1/y)/y, the form of Q that stays accurate for large and small w.
pub fn q_reduced(y: f64, sigma: f64, rel_tol: f64) -> Result<f64> {
    let inner = QuadratureSpec::default().tolerances(1e-300, rel_tol).subdivisions(2000);
    if y >= 1.0 {
        // (1+y)^{1−σ}/(σ−1) − ∫₀¹ (u+y)^{−σ}[(1−u)^{σ−2} − 1] du
        let i = integrate_with_distances(
            |u, _, d| (u + y).powf(-sigma) * bracket(u, d, sigma),
            0.0,
            1.0,
            &inner.right(2.0 - sigma),
        )?;
        Ok((1.0 + y).powf(1.0 - sigma) / (sigma - 1.0) - i.value)
    } else {
        // [(1+y)^{1−σ} − 1]/(σ−1) + ∫₀¹ [u^{−σ} − (u+y)^{−σ}][(1−u)^{σ−2} − 1] du
        let f = |u: f64, d: f64| -u.powf(-sigma) * (-sigma * (y / u).ln_1p()).exp_m1() * bracket(u, d, sigma);
        let near = integrate_singular(|u| f(u, 1.0 - u), 0.0, y, &inner.left(sigma - 1.0))?;
        let far = integrate_with_distances(|u, _, d| f(u, d), y, 1.0, &inner.right(2.0 - sigma))?;
        let lead = ((1.0 - sigma) * y.ln_1p()).exp_m1() / (sigma - 1.0);
        Ok(lead + near.value + far.value)
    }
}

/// Q(w) = w^{σ−2}/(σ−1) − ∫₀^w (z+1)^{−σ}(w−z)^{σ−2} dz.
pub fn q_weight(w: f64, params: &SigmaParams) -> Result<f64> {
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::Domain(format!("w = {w} must be positive and finite")));
    }
    core_only(params)?;
    let y = 1.0 / w;
    Ok(y * q_reduced(y, params.sigma, 1e-12)?)
}

/// Q(w) straight from its definition. Loses about log10(w) digits to
/// cancellation for large w; used as an independent check.
pub fn q_weight_direct(w: f64, params: &SigmaParams) -> Result<f64> {
    core_only(params)?;
    let sigma = params.sigma;
    let spec = QuadratureSpec::default().tolerances(1e-300, 1e-13).right(2.0 - sigma).subdivisions(4000);
    let i = integrate_with_distances(|z, _, d| (z + 1.0).powf(-sigma) * d.powf(sigma - 2.0), 0.0, w, &spec)?;
    Ok(w.powf(sigma - 2.0) / (sigma - 1.0) - i.value)
}

fn core_only(params: &SigmaParams) -> Result<()> {
    if params.is_core() {
        Ok(())
    } else {
        Err(Error::Domain(format!("sigma = {} is outside (5/3, 2)", params.sigma)))
    }
}

/// ∫₀^∞ Q(w) dw = ∫₀^∞ q(y)/y dy at the given relative tolerance.
pub fn q_integral_with(params: &SigmaParams, rel_tol: f64) -> Result<f64> {
    core_only(params)?;
    let sigma = params.sigma;
    let inner_tol = (rel_tol * 1e-2).max(1e-14);
    let err = std::cell::Cell::new(None);
    let f = |y: f64| match q_reduced(y, sigma, inner_tol) {
        Ok(v) => v / y,
        Err(e) => {
            err.set(Some(e));
            0.0
        }
    };
    let spec = QuadratureSpec::default().tolerances(1e-300, rel_tol).subdivisions(2000);
    let head = integrate_singular(f, 0.0, 1.0, &spec.left(sigma - 1.0));
    let tail = integrate_singular(f, 1.0, f64::INFINITY, &spec.tail(sigma));
    if let Some(e) = err.take() {
        return Err(e);
    }
    match (head, tail) {
        (Ok(h), Ok(t)) => Ok(h.value + t.value),
        (Err(e), _) => Err(e),
        (_, Err(Error::NonConvergence { estimate, error })) => Err(Error::Truncation { tail_bound: error.max(estimate.abs()) }),
        (_, Err(e)) => Err(e),
    }
}

/// (C*, ∫Q) with C* = 1/∫Q.
pub fn c_star(params: &SigmaParams) -> Result<(f64, f64)> {
    let integral = q_integral_with(params, 1e-11)?;
    Ok((1.0 / integral, integral))
}

/// Everything needed to evaluate G and K at one σ.
#[derive(Debug, Clone)]
pub struct GreensContext {
    pub params: SigmaParams,
    pub series: Arc<LambdaSeries>,
    pub c_star: f64,
    pub q_integral: f64,
}

impl GreensContext {
    pub fn new(params: &SigmaParams) -> Result<Self> {
        let series = lambda_series::build(params, DEFAULT_ORDER)?;
        Self::with_series(Arc::new(series))
    }

    pub fn with_series(series: Arc<LambdaSeries>) -> Result<Self> {
        let params = series.params;
        let (c_star, q_integral) = c_star(&params)?;
        Ok(Self { params, series, c_star, q_integral })
    }

    /// Λ(ξ) given ξ and 1−ξ separately, so that ξ → 1 keeps full accuracy.
    pub fn lambda(&self, xi: f64, rest: f64) -> Result<f64> {
        let far = self.series.far_field();
        match far {
            Some(m) if xi > self.series.series_switch => m.lambda_from_g(rest),
            Some(m) => match self.series.series_value(xi) {
                Err(Error::TailTooLarge { .. }) => m.lambda_from_g(rest),
                other => other,
            },
            None => self.series.eval(xi),
        }
    }

    /// Λ(1⁻).
    pub fn lambda_at_one(&self) -> Result<f64> {
        match self.series.far_field() {
            Some(m) => Ok(m.lambda_at_one()),
            None => Err(Error::Domain("Λ(1⁻) needs the contour route attached".into())),
        }
    }
}

/// G(V, V0) = C*·V0^{σ−8/3}·Λ((V0−V)/V0) for V < V0, zero otherwise.
pub fn green_g(v: f64, v0: f64, ctx: &GreensContext) -> Result<f64> {
    if !(v > 0.0 && v0 > 0.0) {
        return Err(Error::Domain(format!("need V > 0 and V0 > 0, got {v}, {v0}")));
    }
    if v >= v0 {
        return Ok(0.0);
    }
    green_from_gap(v, v0 - v, v0, ctx)
}

/// G with the gap V0 − V supplied exactly.
fn green_from_gap(v: f64, gap: f64, v0: f64, ctx: &GreensContext) -> Result<f64> {
    let lam = ctx.lambda(gap / v0, v / v0)?;
    Ok(ctx.c_star * v0.powf(ctx.params.sigma - 8.0 / 3.0) * lam)
}

/// Σ_j weights[j]·∫₁^{1/θ} Λ(1−θs)(ζs−1)^{−α_j} ds with α_j = σ − j/3,
/// integrated in t = ln s so that small θ costs only a logarithmic range.
fn y_sum(theta: f64, zeta_m1: f64, alphas: &[(f64, f64)], ctx: &GreensContext) -> Result<f64> {
    if theta >= 1.0 {
        return Ok(0.0);
    }
    let sigma = ctx.params.sigma;
    let top = -theta.ln();
    let err = std::cell::Cell::new(None);
    let f = |t: f64, _: f64, to_top: f64| {
        // z = 1 − θe^t, 1 − z = e^{−(L−t)}
        let rest = (-to_top).exp();
        let z = -(-to_top).exp_m1();
        let lam = match ctx.lambda(z, rest) {
            Ok(v) => v,
            Err(e) => {
                err.set(Some(e));
                return 0.0;
            }
        };
        let gap = zeta_m1 + (1.0 + zeta_m1) * t.exp_m1();
        let s = t.exp();
        alphas.iter().map(|&(w, a)| w * gap.powf(-a)).sum::<f64>() * s * lam
    };
    let spec = QuadratureSpec::default().tolerances(1e-300, 1e-10).right(2.0 - sigma).subdivisions(4000);
    let q = integrate_with_distances(f, 0.0, top, &spec);
    if let Some(e) = err.take() {
        return Err(e);
    }
    Ok(q?.value)
}

/// P_α(θ, ζ) = θ^α ∫₀^{1−θ} Λ(z)(ζ(1−z) − θ)^{−α} dz.
pub fn p_alpha(theta: f64, zeta: f64, alpha: f64, ctx: &GreensContext) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0 && zeta > 1.0 && alpha > 1.0) {
        if theta >= 1.0 && zeta > 1.0 && alpha > 1.0 {
            return Ok(0.0);
        }
        return Err(Error::Domain(format!("p_alpha needs 0 < θ < 1 < ζ and α > 1, got θ={theta}, ζ={zeta}, α={alpha}")));
    }
    Ok(theta * y_sum(theta, zeta - 1.0, &[(1.0, alpha)], ctx)?)
}

fn k_exponents(sigma: f64) -> [(f64, f64); 3] {
    [(C[0], sigma), (C[1], sigma - 1.0 / 3.0), (C[2], sigma - 2.0 / 3.0)]
}

/// K(V, η; V̄) = (C*/V̄)·(1/θ)·Σ_j c_j P_{σ−j/3}(θ, ζ), θ = V/V̄, ζ = η/V̄.
/// V = 0 returns the continuous extension.
pub fn dirichlet_k(v: f64, eta: f64, v_bar: f64, ctx: &GreensContext) -> Result<f64> {
    if !(v >= 0.0 && v_bar > 0.0 && eta > v_bar) {
        return Err(Error::Domain(format!("need 0 ≤ V and η > V̄ > 0, got V={v}, η={eta}, V̄={v_bar}")));
    }
    dirichlet_k_from_gap(v, eta - v_bar, v_bar, ctx)
}

/// K with η − V̄ supplied exactly, for use close to η = V̄.
pub fn dirichlet_k_from_gap(v: f64, eta_gap: f64, v_bar: f64, ctx: &GreensContext) -> Result<f64> {
    if !(v >= 0.0 && v_bar > 0.0 && eta_gap > 0.0) {
        return Err(Error::Domain(format!("need 0 ≤ V, V̄ > 0 and η > V̄, got V={v}, η−V̄={eta_gap}, V̄={v_bar}")));
    }
    if v >= v_bar {
        return Ok(0.0);
    }
    if v == 0.0 {
        return dirichlet_k_limit(v_bar + eta_gap, v_bar, ctx);
    }
    let y = y_sum(v / v_bar, eta_gap / v_bar, &k_exponents(ctx.params.sigma), ctx)?;
    Ok(ctx.c_star / v_bar * y)
}

/// lim_{V→0⁺} K(V, η; V̄) = (C*/V̄)·Λ(1⁻)·Σ_j c_j (ζ−1)^{1−α_j}/(ζ(α_j − 1)).
pub fn dirichlet_k_limit(eta: f64, v_bar: f64, ctx: &GreensContext) -> Result<f64> {
    if !(v_bar > 0.0 && eta > v_bar) {
        return Err(Error::Domain(format!("need η > V̄ > 0, got η={eta}, V̄={v_bar}")));
    }
    let zeta = eta / v_bar;
    let sum: f64 = k_exponents(ctx.params.sigma)
        .iter()
        .map(|&(w, a)| w * (zeta - 1.0).powf(1.0 - a) / (zeta * (a - 1.0)))
        .sum();
    Ok(ctx.c_star / v_bar * ctx.lambda_at_one()? * sum)
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// −𝒦_∞u = g on (0, V̄), u = Ψ on [V̄, ∞).
#[derive(Clone)]
pub struct BvProblem {
    pub v_bar: f64,
    pub g: Option<ScalarFn>,
    pub psi: Option<ScalarFn>,
}

impl std::fmt::Debug for BvProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BvProblem")
            .field("v_bar", &self.v_bar)
            .field("g", &self.g.is_some())
            .field("psi", &self.psi.is_some())
            .finish()
    }
}

impl BvProblem {
    pub fn new(v_bar: f64, g: Option<ScalarFn>, psi: Option<ScalarFn>) -> Result<Self> {
        let p = Self { v_bar, g, psi };
        p.validate()?;
        Ok(p)
    }

    /// Checks V̄ and that g and Ψ are finite on a sample grid.
    pub fn validate(&self) -> Result<()> {
        if !(self.v_bar > 0.0 && self.v_bar.is_finite()) {
            return Err(Error::Domain(format!("v_bar = {} must be positive", self.v_bar)));
        }
        let n = 200;
        if let Some(g) = &self.g {
            for i in 1..n {
                let v = self.v_bar * i as f64 / n as f64;
                if !g(v).is_finite() {
                    return Err(Error::Domain(format!("g is not finite at V = {v}")));
                }
            }
        }
        if let Some(psi) = &self.psi {
            for i in 0..n {
                let v = self.v_bar * (1.0 + 0.1 * i as f64).powi(2);
                if !psi(v).is_finite() {
                    return Err(Error::Domain(format!("psi is not finite at V = {v}")));
                }
            }
        }
        Ok(())
    }

    /// Ψ at V ≥ V̄ (zero when absent).
    pub fn boundary(&self, v: f64) -> f64 {
        self.psi.as_ref().map_or(0.0, |p| p(v))
    }
}

/// h(V0) = ∫_{V̄}^∞ (η−V0)^{−σ}(V0^{1/3} + (η−V0)^{1/3})² Ψ(η) dη, given a = V̄ − V0.
/// With η − V0 = a·w^{−1/(σ−1)} the weight (η−V0)^{−σ}dη becomes a^{1−σ}dw/(σ−1).
pub fn boundary_source(v0: f64, a: f64, psi: &ScalarFn, sigma: f64) -> Result<f64> {
    let p = 1.0 / (sigma - 1.0);
    let (c0, ca) = (v0.cbrt(), a.cbrt());
    let f = |w: f64| {
        let t = a * w.powf(-p);
        let k = c0 + ca * w.powf(-p / 3.0);
        k * k * psi(v0 + t)
    };
    let spec = QuadratureSpec::default().tolerances(1e-300, 1e-11).left(2.0 * p / 3.0).subdivisions(2000);
    let i = integrate_singular(f, 0.0, 1.0, &spec)?;
    Ok(a.powf(1.0 - sigma) * p * i.value)
}

/// The two parts (u1, u2) of the solution at 0 < V < V̄.
pub fn bvp_parts(v: f64, problem: &BvProblem, ctx: &GreensContext) -> Result<(f64, f64)> {
    let v_bar = problem.v_bar;
    if !(v > 0.0 && v < v_bar) {
        return Err(Error::Domain(format!("need 0 < V < V̄, got V = {v}")));
    }
    let sigma = ctx.params.sigma;
    let err = std::cell::Cell::new(None);
    let spec = QuadratureSpec::default().tolerances(1e-300, 1e-9).left(2.0 - sigma).subdivisions(4000);
    let u1 = match &problem.g {
        Some(g) => {
            let q = integrate_with_distances(
                |v0, gap, _| record_pass(&err, green_from_gap(v, gap, v0, ctx)) * g(v0),
                v,
                v_bar,
                &spec,
            );
            q?.value
        }
        None => 0.0,
    };
    let u2 = match &problem.psi {
        Some(psi) => {
            let q = integrate_with_distances(
                |v0, gap, a| {
                    let green = record_pass(&err, green_from_gap(v, gap, v0, ctx));
                    green * record_pass(&err, boundary_source(v0, a, psi, sigma))
                },
                v,
                v_bar,
                &spec.right(sigma - 1.0),
            );
            q?.value
        }
        None => 0.0,
    };
    if let Some(e) = err.take() {
        return Err(e);
    }
    Ok((u1, u2))
}

fn record_pass(slot: &std::cell::Cell<Option<Error>>, r: Result<f64>) -> f64 {
    match r {
        Ok(x) => x,
        Err(e) => {
            slot.set(Some(e));
            0.0
        }
    }
}

/// u on the grid: u1 + u2 inside (0, V̄), Ψ at and beyond V̄.
pub fn bvp_solve(problem: &BvProblem, ctx: &GreensContext, grid: &[f64], exec: Exec) -> Result<Vec<f64>> {
    problem.validate()?;
    if grid.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("grid points must be positive".into()));
    }
    exec.map(grid, |&v| {
        if v >= problem.v_bar {
            Ok(problem.boundary(v))
        } else {
            bvp_parts(v, problem, ctx).map(|(a, b)| a + b)
        }
    })
    .into_iter()
    .collect()
}
