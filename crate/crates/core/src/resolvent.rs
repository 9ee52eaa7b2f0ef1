//! Jump generators 𝒦φ(V) = ∫ω(v)(V^{1/3}+v^{1/3})²[φ(V+v)−φ(V)]dv acting on
//! piecewise-linear functions that are constant beyond a cap M, the resolvent
//! (I − λ𝒦)φ = g, pregenerator checks and the backward (adjoint) evolution.
//!
//! The discretization is exact for the interpolant: each panel of φ contributes
//! hat-function weights built from ∫ω(v)v^{k/3}dv and ∫ω(v)v^{1+k/3}dv. Jumps
//! only move right, so every row couples a node to nodes above it and all
//! solves are back-substitutions from the cap.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::parallel::Exec;
use crate::simulator::{LawKind, ScattererLaw};
use crate::specfun::quadrature::{gauss_legendre, integrate_singular, QuadratureSpec};
use crate::specfun::SigmaParams;

const C: [f64; 3] = [1.0, 2.0, 1.0];

/// Piecewise-linear function on increasing nodes, constant below the first
/// node and equal to the last value for V ≥ M.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != values.len() {
            return Err(Error::Domain("grid function needs ≥ 2 nodes and one value per node".into()));
        }
        if !(nodes[0] >= 0.0) || nodes.windows(2).any(|w| !(w[1] > w[0])) || !nodes[nodes.len() - 1].is_finite() {
            return Err(Error::Domain("nodes must be finite, ≥ 0 and strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("grid function values must be finite".into()));
        }
        Ok(Self { nodes, values })
    }

    pub fn from_fn(nodes: &[f64], f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(nodes.to_vec(), nodes.iter().map(|&x| f(x)).collect())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cap(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn tail_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Segment j with x_j ≤ v < x_{j+1} and the local coordinate.
    fn locate(&self, v: f64) -> (usize, f64) {
        let j = self.nodes.partition_point(|&x| x <= v).saturating_sub(1).min(self.nodes.len() - 2);
        (j, (v - self.nodes[j]) / (self.nodes[j + 1] - self.nodes[j]))
    }

    pub fn eval(&self, v: f64) -> f64 {
        if v <= self.nodes[0] {
            return self.values[0];
        }
        if v >= self.cap() {
            return self.tail_value();
        }
        let (j, s) = self.locate(v);
        self.values[j] + s * (self.values[j + 1] - self.values[j])
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// n geometric nodes on [lo, hi].
pub fn geometric_nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

#[derive(Debug, Clone)]
pub enum GeneratorSpec {
    /// ω(v) = (v+ε)^{−σ}; ε = 0 is the limiting operator itself.
    GInfinity { sigma: f64, epsilon: f64 },
    Law(ScattererLaw),
    /// G_T(v) = T^{σμ}G(T^μ v)
    Rescaled { t: f64, law: ScattererLaw },
}

#[derive(Clone)]
enum Weight {
    /// v^{−σ} for v ≥ cut
    Power { sigma: f64, cut: f64 },
    /// (v + ε)^{−σ}
    Shifted { sigma: f64, eps: f64 },
    /// tabulated density, constant below `flat`
    General { sigma: f64, flat: f64, f: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorSpec::GInfinity { sigma, epsilon } => {
                SigmaParams::new(*sigma)?;
                if !(*epsilon >= 0.0 && epsilon.is_finite()) {
                    return Err(Error::Domain(format!("epsilon = {epsilon} must be finite and ≥ 0")));
                }
            }
            GeneratorSpec::Law(_) => {}
            GeneratorSpec::Rescaled { t, law } => {
                if !(*t >= 1.0 && t.is_finite()) {
                    return Err(Error::Domain(format!("T = {t} must be ≥ 1")));
                }
                SigmaParams::core(law.sigma)?;
            }
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        match self {
            GeneratorSpec::GInfinity { sigma, .. } => *sigma,
            GeneratorSpec::Law(l) | GeneratorSpec::Rescaled { law: l, .. } => l.sigma,
        }
    }

    /// Whether ∫ω(v)dv < ∞, so that rates are finite and V = 0 is admissible.
    pub fn integrable(&self) -> bool {
        !matches!(self.weight(), Weight::Power { cut, .. } if cut == 0.0)
    }

    fn weight(&self) -> Weight {
        let from_law = |law: &ScattererLaw, scale: f64| {
            // scale = T^μ: G_T(v) = scale^σ G(scale·v)
            let sigma = law.sigma;
            match &law.kind {
                LawKind::ShiftedPower => Weight::Shifted { sigma, eps: 1.0 / scale },
                LawKind::TruncatedPower { v_min } => Weight::Power { sigma, cut: v_min / scale },
                LawKind::Tabulated(table) => {
                    let l = law.clone();
                    let pre = scale.powf(sigma);
                    Weight::General { sigma, flat: table.v[0] / scale, f: Arc::new(move |v| pre * l.density(scale * v)) }
                }
            }
        };
        match self {
            GeneratorSpec::GInfinity { sigma, epsilon } => {
                if *epsilon == 0.0 {
                    Weight::Power { sigma: *sigma, cut: 0.0 }
                } else {
                    Weight::Shifted { sigma: *sigma, eps: *epsilon }
                }
            }
            GeneratorSpec::Law(law) => from_law(law, 1.0),
            GeneratorSpec::Rescaled { t, law } => from_law(law, t.powf(1.0 / (law.sigma - 5.0 / 3.0))),
        }
    }
}

fn gl8() -> &'static (Vec<f64>, Vec<f64>) {
    static NODES: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    NODES.get_or_init(|| gauss_legendre(8))
}

fn gl_panel(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (x, w) = gl8();
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    x.iter().zip(w).map(|(xi, wi)| wi * f(c + h * xi)).sum::<f64>() * h
}

/// ∫_a^b v^p dv, allowing a = 0 when p > −1.
fn power_integral(p: f64, a: f64, b: f64) -> f64 {
    let q = p + 1.0;
    if a == 0.0 {
        return b.powf(q) / q;
    }
    if q.abs() < 1e-12 {
        (b / a).ln()
    } else {
        a.powf(q) * (q * (b / a).ln()).exp_m1() / q
    }
}

impl Weight {
    fn sigma(&self) -> f64 {
        match self {
            Weight::Power { sigma, .. } | Weight::Shifted { sigma, .. } | Weight::General { sigma, .. } => *sigma,
        }
    }

    fn density(&self, v: f64) -> f64 {
        match self {
            Weight::Power { sigma, cut } => {
                if v >= *cut {
                    v.powf(-sigma)
                } else {
                    0.0
                }
            }
            Weight::Shifted { sigma, eps } => (v + eps).powf(-sigma),
            Weight::General { f, .. } => f(v),
        }
    }

    /// ∫_a^b ω(v)v^p dv; a = 0 requires ω(v)v^p integrable at 0.
    fn moment(&self, p: f64, a: f64, b: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        if let Weight::Power { sigma, cut } = self {
            let lo = a.max(*cut);
            return if b > lo { power_integral(p - sigma, lo, b) } else { 0.0 };
        }
        let f = |v: f64| self.density(v) * v.powf(p);
        if a == 0.0 {
            // dyadic pieces toward 0 until ω is flat, where the rest is closed form
            let flat = match self {
                Weight::Shifted { eps, .. } => 1e-9 * eps,
                Weight::General { flat, .. } => *flat,
                Weight::Power { .. } => unreachable!(),
            };
            let mut total = 0.0;
            let mut hi = b;
            for _ in 0..400 {
                if hi <= flat {
                    break;
                }
                total += gl_panel(&f, 0.5 * hi, hi);
                hi *= 0.5;
            }
            return total + self.density(0.0) * hi.powf(p + 1.0) / (p + 1.0);
        }
        let n = ((b / a).log2().ceil() as usize).max(1);
        let r = (b / a).powf(1.0 / n as f64);
        let mut lo = a;
        let mut total = 0.0;
        for k in 0..n {
            let hi = if k + 1 == n { b } else { lo * r };
            total += gl_panel(&f, lo, hi);
            lo = hi;
        }
        total
    }

    /// ∫_a^∞ ω(v)v^p dv for a > 0.
    fn tail(&self, p: f64, a: f64) -> Result<f64> {
        let sigma = self.sigma();
        if let Weight::Power { cut, .. } = self {
            let lo = a.max(*cut);
            return Ok(lo.powf(p + 1.0 - sigma) / (sigma - p - 1.0));
        }
        let spec = QuadratureSpec::default().tolerances(1e-300, 1e-12).tail(sigma - p);
        Ok(integrate_singular(|v| self.density(v) * v.powf(p), a, f64::INFINITY, &spec)?.value)
    }
}

/// Σ_k c_k V^{(2−k)/3}∫_a^b ω(v)v^{k/3+extra}dv.
fn kernel_moment(w: &Weight, v: f64, extra: f64, a: f64, b: f64) -> f64 {
    let c = v.cbrt();
    let pre = [c * c, c, 1.0];
    (0..3)
        .filter(|&k| k == 2 || v > 0.0)
        .map(|k| C[k] * pre[k] * w.moment(k as f64 / 3.0 + extra, a, b))
        .sum()
}

fn kernel_tail(w: &Weight, v: f64, a: f64) -> Result<f64> {
    let c = v.cbrt();
    let pre = [c * c, c, 1.0];
    let mut s = 0.0;
    for k in 0..3 {
        if k == 2 || v > 0.0 {
            s += C[k] * pre[k] * w.tail(k as f64 / 3.0, a)?;
        }
    }
    Ok(s)
}

/// 𝒦φ(V) for the interpolant of φ written as
/// `slope_weight·(φ_{j+1}−φ_j)/h_j + Σ_k weights[k]·(φ_k − φ(V))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorRow {
    pub v: f64,
    /// segment containing V and ∫_0^{x_{j+1}−V}ω·v on it, when V lies inside the grid
    pub first: Option<(usize, f64)>,
    /// (node index, weight ≥ 0), node indices above V
    pub weights: Vec<(usize, f64)>,
}

impl GeneratorRow {
    pub fn rate(&self) -> f64 {
        self.weights.iter().map(|w| w.1).sum()
    }

    pub fn apply(&self, phi: &GridFunction) -> f64 {
        let base = phi.eval(self.v);
        let mut s = 0.0;
        if let Some((j, m1)) = self.first {
            let (x, y) = (phi.nodes(), phi.values());
            s += m1 * (y[j + 1] - y[j]) / (x[j + 1] - x[j]);
        }
        for &(k, w) in &self.weights {
            s += w * (phi.values()[k] - base);
        }
        s
    }
}

fn row_with(nodes: &[f64], v: f64, w: &Weight, include_tail: bool) -> Result<GeneratorRow> {
    let n = nodes.len();
    let cap = nodes[n - 1];
    if v >= cap {
        return Ok(GeneratorRow { v, first: None, weights: Vec::new() });
    }
    let mut weights = vec![0.0; n];
    let mut first = None;
    let start = if v >= nodes[0] {
        let j = nodes.partition_point(|&x| x <= v) - 1;
        let b = nodes[j + 1] - v;
        // φ(V+v) − φ(V) = slope·v on the partial first panel
        first = Some((j, kernel_moment(w, v, 1.0, 0.0, b)));
        j + 1
    } else {
        0
    };
    for p in start..n - 1 {
        let (a, b) = (nodes[p] - v, nodes[p + 1] - v);
        let h = nodes[p + 1] - nodes[p];
        let m0 = kernel_moment(w, v, 0.0, a, b);
        let m1 = kernel_moment(w, v, 1.0, a, b);
        weights[p] += ((b * m0 - m1) / h).max(0.0);
        weights[p + 1] += ((m1 - a * m0) / h).max(0.0);
    }
    if include_tail {
        weights[n - 1] += kernel_tail(w, v, cap - v)?;
    }
    let weights = weights.into_iter().enumerate().filter(|&(_, x)| x > 0.0).collect();
    Ok(GeneratorRow { v, first, weights })
}

/// Row of the discrete generator at V on the given nodes.
pub fn generator_row(nodes: &[f64], v: f64, spec: &GeneratorSpec) -> Result<GeneratorRow> {
    spec.validate()?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Domain(format!("V = {v} must be finite and ≥ 0")));
    }
    if v == 0.0 && !spec.integrable() {
        return Err(Error::Domain("V = 0 needs an integrable jump law: the collision rate diverges".into()));
    }
    row_with(nodes, v, &spec.weight(), true)
}

/// 𝒦φ(V) for the piecewise-linear φ.
pub fn apply_generator(phi: &GridFunction, v: f64, spec: &GeneratorSpec) -> Result<f64> {
    Ok(generator_row(phi.nodes(), v, spec)?.apply(phi))
}

/// Upper-triangular generator on the nodes of a grid function.
#[derive(Debug, Clone)]
pub struct DiscreteGenerator {
    pub nodes: Vec<f64>,
    pub rows: Vec<GeneratorRow>,
}

impl DiscreteGenerator {
    pub fn new(nodes: &[f64], spec: &GeneratorSpec, exec: Exec) -> Result<Self> {
        spec.validate()?;
        if nodes[0] == 0.0 && !spec.integrable() {
            return Err(Error::Domain("a node at V = 0 needs an integrable jump law".into()));
        }
        let w = spec.weight();
        let rows: Result<Vec<_>> = exec.map_range(nodes.len(), |i| row_with(nodes, nodes[i], &w, true)).into_iter().collect();
        Ok(Self { nodes: nodes.to_vec(), rows: rows? })
    }

    /// Node weights c_ik (k > i) of row i; the first-panel slope term is folded in.
    fn node_weights(&self, i: usize) -> Vec<(usize, f64)> {
        let row = &self.rows[i];
        let mut out = row.weights.clone();
        if let Some((j, m1)) = row.first {
            debug_assert_eq!(j, i);
            let h = self.nodes[j + 1] - self.nodes[j];
            match out.iter_mut().find(|e| e.0 == j + 1) {
                Some(e) => e.1 += m1 / h,
                None => out.push((j + 1, m1 / h)),
            }
        }
        out
    }
}

/// Solves φ − λ𝒦φ = g on the nodes of g by marching down from the cap:
/// φ_i = g_i + λΣc_ik(φ_k − g_i)/(1 + λΣc_ik), a convex combination of g_i and
/// the values above, so the maximum and minimum principles hold exactly.
pub fn resolvent_solve(g: &GridFunction, lambda: f64, spec: &GeneratorSpec, exec: Exec) -> Result<GridFunction> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda = {lambda} must be positive")));
    }
    let gen = DiscreteGenerator::new(g.nodes(), spec, exec)?;
    resolvent_with(&gen, g, lambda)
}

pub fn resolvent_with(gen: &DiscreteGenerator, g: &GridFunction, lambda: f64) -> Result<GridFunction> {
    let n = g.nodes().len();
    let gv = g.values();
    let mut phi = vec![0.0; n];
    phi[n - 1] = gv[n - 1];
    for i in (0..n - 1).rev() {
        let w = gen.node_weights(i);
        let rate: f64 = w.iter().map(|e| e.1).sum();
        let pull: f64 = w.iter().map(|&(k, c)| c * (phi[k] - gv[i])).sum();
        let (lo, hi) = w.iter().fold((gv[i], gv[i]), |(lo, hi), &(k, _)| (lo.min(phi[k]), hi.max(phi[k])));
        phi[i] = (gv[i] + lambda * pull / (1.0 + lambda * rate)).clamp(lo, hi);
    }
    GridFunction::new(g.nodes().to_vec(), phi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PregeneratorReport {
    /// max |𝒦1| over nodes
    pub constant_residual: f64,
    /// (sample, V, 𝒦g(V)) where g attains its minimum but 𝒦g(V) < 0
    pub min_violations: Vec<(usize, f64, f64)>,
    /// (sample, V, φ(V) − min g) where the resolvent undershoots
    pub resolvent_violations: Vec<(usize, f64, f64)>,
}

impl PregeneratorReport {
    pub fn passed(&self) -> bool {
        self.constant_residual == 0.0 && self.min_violations.is_empty() && self.resolvent_violations.is_empty()
    }
}

/// Checks 𝒦1 = 0, the minimum principle at the minimizing node of each
/// sample, and min φ ≥ min g for the resolvent with λ = 1.
pub fn pregenerator_check(spec: &GeneratorSpec, samples: &[GridFunction], exec: Exec) -> Result<PregeneratorReport> {
    let mut report = PregeneratorReport { constant_residual: 0.0, min_violations: Vec::new(), resolvent_violations: Vec::new() };
    let mut cache: Option<DiscreteGenerator> = None;
    for (s, g) in samples.iter().enumerate() {
        let gen = match &cache {
            Some(gen) if gen.nodes == g.nodes() => gen,
            _ => {
                cache = Some(DiscreteGenerator::new(g.nodes(), spec, exec)?);
                cache.as_ref().unwrap()
            }
        };
        let one = GridFunction::new(g.nodes().to_vec(), vec![1.0; g.nodes().len()])?;
        for row in &gen.rows {
            report.constant_residual = report.constant_residual.max(row.apply(&one).abs());
        }
        let m = g.min();
        for (i, row) in gen.rows.iter().enumerate() {
            if g.values()[i] == m {
                let k = row.apply(g);
                if k < 0.0 {
                    report.min_violations.push((s, g.nodes()[i], k));
                }
            }
        }
        let phi = resolvent_with(gen, g, 1.0)?;
        for (i, &p) in phi.values().iter().enumerate() {
            if p < m {
                report.resolvent_violations.push((s, g.nodes()[i], p - m));
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointOptions {
    /// internal time steps per decade of t
    pub steps_per_decade: usize,
    /// first internal time relative to the last output time
    pub t_first_rel: f64,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        Self { steps_per_decade: 200, t_first_rel: 1e-8 }
    }
}

/// Weights (w_a, w_b) with ∫_0^h e^{−R(h−τ)}s(τ)dτ = w_a s(0) + w_b s(h) for linear s.
fn etd_weights(rate: f64, h: f64) -> (f64, f64) {
    let z = rate * h;
    if z < 1e-2 {
        let wa = 0.5 - z / 3.0 + z * z / 8.0 - z.powi(3) / 30.0 + z.powi(4) / 144.0;
        let wb = 0.5 - z / 6.0 + z * z / 24.0 - z.powi(3) / 120.0 + z.powi(4) / 720.0;
        return (h * wa, h * wb);
    }
    let e = (-z).exp();
    let wb = (z - 1.0 + e) / (z * z);
    let wa = (1.0 - e * (1.0 + z)) / (z * z);
    (h * wa, h * wb)
}

/// Backward evolution ∂_tφ = 𝒦φ from φ0, reported at the requested times.
///
/// The discrete generator is upper triangular, so each node is a scalar linear
/// ODE dφ_i/dt = −R_iφ_i + s_i(t) driven by the nodes above it. It is integrated
/// exactly over each step with s_i linear in time; the update is a convex
/// combination of current values, which keeps constants and the range of φ0.
pub fn adjoint_evolve(
    phi0: &GridFunction,
    times: &[f64],
    spec: &GeneratorSpec,
    options: AdjointOptions,
    exec: Exec,
) -> Result<Vec<GridFunction>> {
    if !spec.integrable() {
        return Err(Error::Domain("adjoint evolution needs an integrable jump law".into()));
    }
    if times.is_empty() || times.iter().any(|&t| !(t >= 0.0 && t.is_finite())) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("output times must be finite, ≥ 0 and strictly increasing".into()));
    }
    if options.steps_per_decade < 1 || !(options.t_first_rel > 0.0 && options.t_first_rel < 1.0) {
        return Err(Error::Domain("adjoint options out of range".into()));
    }
    let t_max = times[times.len() - 1];
    let mut grid = vec![0.0];
    if t_max > 0.0 {
        let t0 = t_max * options.t_first_rel;
        let decades = (t_max / t0).log10();
        let m = (decades * options.steps_per_decade as f64).ceil() as usize;
        grid.extend((0..=m).map(|k| t0 * (t_max / t0).powf(k as f64 / m as f64)));
        grid.extend(times.iter().copied().filter(|&t| t > 0.0));
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs());
        *grid.last_mut().unwrap() = t_max;
    }
    let gen = DiscreteGenerator::new(phi0.nodes(), spec, exec)?;
    let n = phi0.nodes().len();
    let nt = grid.len();
    // history[i][m] = φ_i(grid[m])
    let mut history = vec![Vec::new(); n];
    history[n - 1] = vec![phi0.values()[n - 1]; nt];
    let steps: Vec<(f64, f64)> = grid.windows(2).map(|w| (w[0], w[1] - w[0])).collect();
    for i in (0..n - 1).rev() {
        let w = gen.node_weights(i);
        let rate: f64 = w.iter().map(|e| e.1).sum();
        let mut h = Vec::with_capacity(nt);
        h.push(phi0.values()[i]);
        for (m, &(_, dt)) in steps.iter().enumerate() {
            let cur = h[m];
            let (wa, wb) = etd_weights(rate, dt);
            let mut pull = 0.0;
            let (mut lo, mut hi) = (cur, cur);
            for &(k, c) in &w {
                let (a, b) = (history[k][m], history[k][m + 1]);
                pull += c * (wa * (a - cur) + wb * (b - cur));
                lo = lo.min(a.min(b));
                hi = hi.max(a.max(b));
            }
            h.push((cur + pull).clamp(lo, hi));
        }
        history[i] = h;
    }
    times
        .iter()
        .map(|&t| {
            let m = grid.partition_point(|&g| g < t * (1.0 - 1e-14)).min(nt - 1);
            GridFunction::new(phi0.nodes().to_vec(), history.iter().map(|h| h[m]).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pure(sigma: f64) -> GeneratorSpec {
        GeneratorSpec::GInfinity { sigma, epsilon: 0.0 }
    }

    /// Reference 𝒦f(V) by adaptive quadrature, given the increment x ↦ f(V+x) − f(V).
    fn reference(diff: &dyn Fn(f64) -> f64, v: f64, sigma: f64, cap: f64) -> f64 {
        let w = |x: f64| x.powf(-sigma) * (v.cbrt() + x.cbrt()).powi(2);
        let spec = QuadratureSpec::default().tolerances(1e-14, 1e-12).left(sigma - 1.0);
        let near = integrate_singular(|x| w(x) * diff(x), 0.0, cap - v, &spec).unwrap().value;
        let far = integrate_singular(|x| w(x) * diff(cap - v), cap - v, f64::INFINITY, &spec.left(0.0).tail(sigma - 2.0 / 3.0))
            .unwrap()
            .value;
        near + far
    }

    #[test]
    fn constants_are_annihilated() {
        let x = geometric_nodes(1e-4, 10.0, 200);
        let one = GridFunction::new(x.clone(), vec![3.5; x.len()]).unwrap();
        for spec in [pure(1.8), GeneratorSpec::GInfinity { sigma: 1.8, epsilon: 1e-3 }] {
            for &v in &[1e-3, 0.3, 1.0, 7.0, 12.0] {
                assert_eq!(apply_generator(&one, v, &spec).unwrap(), 0.0);
            }
        }
        let law = GeneratorSpec::Law(ScattererLaw::truncated(1.8, 1.0).unwrap());
        assert_eq!(apply_generator(&one, 0.0, &law).unwrap(), 0.0);
        assert!(apply_generator(&one, 0.0, &pure(1.8)).is_err());
    }

    #[test]
    fn monotone_phi_gives_nonnegative() {
        let x = geometric_nodes(1e-3, 10.0, 300);
        let phi = GridFunction::from_fn(&x, |v| v.min(10.0) / 10.0).unwrap();
        let k = apply_generator(&phi, 5.0, &pure(1.8)).unwrap();
        assert!(k >= 0.0);
    }

    #[test]
    fn matches_reference_quadrature() {
        let f = |v: f64| (-(v - 1.5) * (v - 1.5)).exp();
        let cap = 8.0;
        let g = |v: f64| f(v.min(cap));
        let diff = |x: f64| {
            if x < 1e-4 {
                // Taylor increment at V = 1, free of cancellation
                let (d, f1) = (-0.5, f(1.0));
                let (f1p, f2p, f3p) = (-2.0 * d * f1, (4.0 * d * d - 2.0) * f1, (-8.0 * d * d * d + 12.0 * d) * f1);
                x * (f1p + x * (0.5 * f2p + x * f3p / 6.0))
            } else {
                g(1.0 + x) - g(1.0)
            }
        };
        let exact = reference(&diff, 1.0, 1.8, cap);
        let at = |n: usize| {
            let x: Vec<f64> = (0..=n).map(|k| cap * k as f64 / n as f64).collect();
            let phi = GridFunction::from_fn(&x, g).unwrap();
            apply_generator(&phi, 1.0, &pure(1.8)).unwrap()
        };
        // grids aligned with V = 1; the first panels give h^{3−σ+k/3}, the rest h²
        let mut level: Vec<f64> = [200, 400, 800, 1600, 3200].iter().map(|&n| at(n)).collect();
        for p in [1.2, 1.2 + 1.0 / 3.0, 1.2 + 2.0 / 3.0, 2.0] {
            let f = 2f64.powf(p);
            level = level.windows(2).map(|w| w[1] + (w[1] - w[0]) / (f - 1.0)).collect();
        }
        assert!((level[0] / exact - 1.0).abs() < 1e-6, "{} vs {exact}", level[0]);
    }

    #[test]
    fn shifted_weight_matches_quadrature() {
        let w = Weight::Shifted { sigma: 1.8, eps: 1e-3 };
        for &(p, a, b) in &[(0.0, 0.0, 0.5), (1.0 / 3.0, 0.0, 2.0), (1.0, 0.01, 3.0), (2.0 / 3.0, 4.0, 4.5)] {
            let spec = QuadratureSpec::default().tolerances(1e-300, 1e-12);
            let r = integrate_singular(|v| (v + 1e-3f64).powf(-1.8) * v.powf(p), a, b, &spec).unwrap().value;
            assert!((w.moment(p, a, b) / r - 1.0).abs() < 1e-10, "p={p} [{a},{b}]: {} vs {r}", w.moment(p, a, b));
        }
        let spec = QuadratureSpec::default().tolerances(1e-300, 1e-12).tail(1.8 - 1.0 / 3.0);
        let r = integrate_singular(|v| (v + 1e-3f64).powf(-1.8) * v.cbrt(), 3.0, f64::INFINITY, &spec).unwrap().value;
        assert!((w.tail(1.0 / 3.0, 3.0).unwrap() / r - 1.0).abs() < 1e-10);
    }

    fn random_g(rng: &mut ChaCha8Rng, x: &[f64]) -> GridFunction {
        let a: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let cap = x[x.len() - 1];
        GridFunction::from_fn(x, |v| {
            let s = v.min(cap) / cap;
            a[0] + a[1] * (3.0 * s).sin() + a[2] * (-5.0 * s).exp() + a[3] * s * s
        })
        .unwrap()
    }

    #[test]
    fn resolvent_basic_properties() {
        let x = geometric_nodes(1e-4, 10.0, 250);
        let spec = GeneratorSpec::GInfinity { sigma: 1.8, epsilon: 1e-3 };
        let c = GridFunction::new(x.clone(), vec![0.7; x.len()]).unwrap();
        let phi = resolvent_solve(&c, 2.0, &spec, Exec::Sequential).unwrap();
        assert!(phi.values().iter().all(|&v| v == 0.7));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gen = DiscreteGenerator::new(&x, &pure(1.8), Exec::Parallel).unwrap();
        for _ in 0..20 {
            let g = random_g(&mut rng, &x);
            let phi = resolvent_with(&gen, &g, 1.0).unwrap();
            assert!(phi.sup_norm() <= g.sup_norm());
            assert!(phi.min() >= g.min());
            assert_eq!(phi.eval(12.0), g.eval(10.0));
            assert_eq!(phi.tail_value(), g.tail_value());
        }
    }

    #[test]
    fn resolvent_small_lambda_order() {
        let x = geometric_nodes(1e-3, 10.0, 200);
        let spec = GeneratorSpec::GInfinity { sigma: 1.8, epsilon: 1e-3 };
        let gen = DiscreteGenerator::new(&x, &spec, Exec::Parallel).unwrap();
        let g = GridFunction::from_fn(&x, |v| (-v).exp()).unwrap();
        let kg: Vec<f64> = gen.rows.iter().map(|r| r.apply(&g)).collect();
        let err = |lambda: f64| {
            let phi = resolvent_with(&gen, &g, lambda).unwrap();
            phi.values().iter().zip(g.values()).zip(&kg).map(|((p, g), k)| (p - g - lambda * k).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(1e-3), err(5e-4));
        let order = (e1 / e2).log2();
        assert!(order >= 1.9, "order {order}");
    }

    #[test]
    fn pregenerator_checks_pass() {
        let x = geometric_nodes(1e-4, 10.0, 200);
        let spec = GeneratorSpec::GInfinity { sigma: 1.8, epsilon: 1e-3 };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut samples: Vec<GridFunction> = (0..20).map(|_| random_g(&mut rng, &x)).collect();
        samples.push(GridFunction::from_fn(&x, |v| 1.0 - 0.9 * (-((v - 0.01) / 0.002).powi(2)).exp()).unwrap());
        samples.push(GridFunction::new(x.clone(), vec![2.0; x.len()]).unwrap());
        let report = pregenerator_check(&spec, &samples, Exec::Parallel).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn rescaled_generators_converge() {
        let x = geometric_nodes(1e-4, 10.0, 300);
        let phi = GridFunction::from_fn(&x, |v| (-(v - 1.0) * (v - 1.0)).exp()).unwrap();
        let target = apply_generator(&phi, 0.5, &pure(1.8)).unwrap();
        let mut last = f64::INFINITY;
        for law in [ScattererLaw::shifted(1.8).unwrap(), ScattererLaw::truncated(1.8, 1.0).unwrap()] {
            for &t in &[1.0, 10.0, 100.0, 1000.0] {
                let k = apply_generator(&phi, 0.5, &GeneratorSpec::Rescaled { t, law: law.clone() }).unwrap();
                let e = (k - target).abs();
                assert!(e < last || t == 1.0, "T = {t}: {e}");
                last = e;
            }
            assert!(last < 1e-3 * target.abs().max(1.0), "{last}");
            last = f64::INFINITY;
        }
        assert!(GeneratorSpec::Rescaled { t: 0.5, law: ScattererLaw::shifted(1.8).unwrap() }.validate().is_err());
    }

    fn saturating_phi(nodes: &[f64], scale: f64) -> GridFunction {
        let cap = nodes[nodes.len() - 1];
        GridFunction::from_fn(nodes, |v| 1.0 / (1.0 + (v.min(cap) / scale).sqrt())).unwrap()
    }

    #[test]
    fn adjoint_constants_and_range() {
        let mut x = geometric_nodes(0.1, 1e6, 200);
        x.insert(0, 0.0);
        let spec = GeneratorSpec::Law(ScattererLaw::truncated(1.8, 1.0).unwrap());
        let one = GridFunction::new(x.clone(), vec![1.0; x.len()]).unwrap();
        let out = adjoint_evolve(&one, &[1.0, 10.0], &spec, AdjointOptions::default(), Exec::Parallel).unwrap();
        assert!(out.iter().all(|f| f.values().iter().all(|&v| v == 1.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let phi0 = GridFunction::from_fn(&x, |v| {
                let s = (1.0 + v.min(1e6)).ln() / (1e6f64).ln();
                a[0] * (4.0 * s).sin() + a[1] * s + a[2] * (-3.0 * s).exp()
            })
            .unwrap();
            let out = adjoint_evolve(&phi0, &[10.0], &spec, AdjointOptions::default(), Exec::Parallel).unwrap();
            assert!(out[0].min() >= phi0.min() && out[0].max() <= phi0.max());
        }
        assert!(adjoint_evolve(&one, &[1.0], &pure(1.8), AdjointOptions::default(), Exec::Sequential).is_err());
    }

    #[test]
    fn adjoint_converges_in_time_and_space() {
        let spec = GeneratorSpec::Law(ScattererLaw::truncated(1.8, 1.0).unwrap());
        let run = |per_decade: usize, steps: usize| {
            let n = 14 * per_decade;
            let mut x = geometric_nodes(0.1, 1e13, n);
            x.insert(0, 0.0);
            let phi0 = saturating_phi(&x, 1e4);
            let opts = AdjointOptions { steps_per_decade: steps, ..AdjointOptions::default() };
            adjoint_evolve(&phi0, &[1.0, 10.0], &spec, opts, Exec::Parallel).unwrap().iter().map(|f| f.values()[0]).collect::<Vec<_>>()
        };
        let a = run(40, 200);
        let b = run(80, 400);
        for k in 0..2 {
            assert!((a[k] - b[k]).abs() < 5e-3 * b[k], "{a:?} {b:?}");
        }
    }

    #[test]
    fn etd_weights_consistent() {
        for &(r, h) in &[(0.0, 1.0), (1e-5, 0.3), (2.0, 0.5), (1e8, 1.0)] {
            let (wa, wb) = etd_weights(r, h);
            let want = if r == 0.0 { h } else { -(-r * h).exp_m1() / r };
            assert!(((wa + wb) / want - 1.0).abs() < 1e-12);
            assert!(wa >= 0.0 && wb >= 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn resolvent_max_principle(seed in 0u64..1000, lambda in 0.01f64..50.0) {
            let x = geometric_nodes(1e-3, 5.0, 80);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_g(&mut rng, &x);
            let phi = resolvent_solve(&g, lambda, &GeneratorSpec::GInfinity { sigma: 1.8, epsilon: 0.0 }, Exec::Sequential).unwrap();
            prop_assert!(phi.max() <= g.max() && phi.min() >= g.min());
        }
    }
}
