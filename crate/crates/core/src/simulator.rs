//! Stochastic simulation of the tagged particle: exponential clocks with rate
//! R(V) = ∫G(v)(V^{1/3}+v^{1/3})²dv, heavy-tailed jumps, ensembles, rescaled
//! profiles, scaling fits and moment diagnostics.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::parallel::Exec;
use crate::specfun::gamma::{gamma, gamma_ratio};
use crate::specfun::quadrature::{gauss_legendre, integrate_singular, QuadratureSpec};
use crate::specfun::SigmaParams;

/// Density table with log-log interpolation, constant below the first node
/// and a pure power tail with index σ beyond the last.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    pub v: Vec<f64>,
    pub g: Vec<f64>,
}

impl DensityTable {
    pub fn new(v: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if v.len() < 2 || v.len() != g.len() {
            return Err(Error::Domain("density table needs at least two (v, g) pairs".into()));
        }
        if !(v[0] > 0.0) || v.windows(2).any(|w| !(w[1] > w[0])) || g.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Domain("density table needs increasing positive v and positive finite g".into()));
        }
        Ok(Self { v, g })
    }

    fn eval(&self, x: f64, sigma: f64) -> f64 {
        let n = self.v.len();
        if x <= self.v[0] {
            return self.g[0];
        }
        if x >= self.v[n - 1] {
            return self.g[n - 1] * (x / self.v[n - 1]).powf(-sigma);
        }
        let k = self.v.partition_point(|&p| p <= x) - 1;
        let s = (x / self.v[k]).ln() / (self.v[k + 1] / self.v[k]).ln();
        (self.g[k].ln() * (1.0 - s) + self.g[k + 1].ln() * s).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LawKind {
    /// G(v) = (1+v)^{−σ}
    ShiftedPower,
    /// G(v) = v^{−σ} for v ≥ v_min
    TruncatedPower { v_min: f64 },
    Tabulated(Arc<DensityTable>),
}

/// Partial moments U_j(θ) = ∫_θ^∞ G v^{j/3} and D_j(θ) = ∫_0^θ G v^{1+j/3} on a
/// log grid, interpolated by cubic Hermite in (ln θ, ln value) with exact slopes.
#[derive(Debug, Clone)]
struct MomentTables {
    ln_lo: f64,
    step: f64,
    upper: [Vec<f64>; 3],
    lower: [Vec<f64>; 3],
    tail_coef: f64,
    g0: f64,
}

const TABLE_LO: f64 = -12.0;
const TABLE_HI: f64 = 30.0;
const TABLE_PER_DECADE: usize = 16;

impl MomentTables {
    fn build(g: &dyn Fn(f64) -> f64, sigma: f64) -> Result<Self> {
        let n = ((TABLE_HI - TABLE_LO) as usize) * TABLE_PER_DECADE + 1;
        let step = std::f64::consts::LN_10 / TABLE_PER_DECADE as f64;
        let ln_lo = TABLE_LO * std::f64::consts::LN_10;
        let grid: Vec<f64> = (0..n).map(|k| (ln_lo + step * k as f64).exp()).collect();
        let (x, w) = gauss_legendre(16);
        let panel = |f: &dyn Fn(f64) -> f64, a: f64, b: f64| {
            let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
            x.iter().zip(&w).map(|(xi, wi)| wi * f(c + h * xi)).sum::<f64>() * h
        };
        let spec = QuadratureSpec::default().tolerances(1e-300, 1e-12);
        let mut upper: [Vec<f64>; 3] = Default::default();
        let mut lower: [Vec<f64>; 3] = Default::default();
        for j in 0..3 {
            let e = j as f64 / 3.0;
            let fu = |v: f64| g(v) * v.powf(e);
            let fd = |v: f64| g(v) * v.powf(1.0 + e);
            let mut u = vec![0.0; n];
            u[n - 1] = integrate_singular(fu, grid[n - 1], f64::INFINITY, &spec.tail(sigma - e))?.value;
            for k in (0..n - 1).rev() {
                u[k] = u[k + 1] + panel(&fu, grid[k], grid[k + 1]);
            }
            let mut d = vec![0.0; n];
            d[0] = integrate_singular(fd, 0.0, grid[0], &spec)?.value;
            for k in 1..n {
                d[k] = d[k - 1] + panel(&fd, grid[k - 1], grid[k]);
            }
            upper[j] = u;
            lower[j] = d;
        }
        let top = grid[n - 1];
        Ok(Self { ln_lo, step, upper, lower, tail_coef: g(top) * top.powf(sigma), g0: g(0.0) })
    }

    fn top(&self) -> f64 {
        (self.ln_lo + self.step * (self.upper[0].len() - 1) as f64).exp()
    }

    fn hermite(&self, values: &[f64], ln_t: f64, slope: &dyn Fn(f64, f64) -> f64) -> f64 {
        let pos = (ln_t - self.ln_lo) / self.step;
        let k = (pos.floor() as usize).min(values.len() - 2);
        let s = pos - k as f64;
        let (t0, t1) = (self.ln_lo + self.step * k as f64, self.ln_lo + self.step * (k + 1) as f64);
        let (y0, y1) = (values[k].ln(), values[k + 1].ln());
        let m0 = slope(t0.exp(), values[k]) * self.step;
        let m1 = slope(t1.exp(), values[k + 1]) * self.step;
        let (s2, s3) = (s * s, s * s * s);
        let y = (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * m1;
        y.exp()
    }
}

#[derive(Debug, Clone)]
pub struct ScattererLaw {
    pub sigma: f64,
    pub kind: LawKind,
    moments: [f64; 3],
    tables: Option<Arc<MomentTables>>,
}

impl ScattererLaw {
    pub fn shifted(sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        let moments = [0, 1, 2].map(|j| {
            let e = j as f64 / 3.0;
            // Γ(1+e)Γ(σ−1−e)/Γ(σ)
            gamma(1.0 + e).unwrap_or(f64::NAN) * gamma_ratio(sigma - 1.0 - e, sigma)
        });
        let g = move |v: f64| (1.0 + v).powf(-sigma);
        let tables = MomentTables::build(&g, sigma)?;
        Ok(Self { sigma, kind: LawKind::ShiftedPower, moments, tables: Some(Arc::new(tables)) })
    }

    pub fn truncated(sigma: f64, v_min: f64) -> Result<Self> {
        check_sigma(sigma)?;
        if !(v_min > 0.0 && v_min.is_finite()) {
            return Err(Error::Domain(format!("v_min = {v_min} must be positive: a pure power is not integrable at 0")));
        }
        let moments = [0, 1, 2].map(|j| {
            let a = sigma - 1.0 - j as f64 / 3.0;
            v_min.powf(-a) / a
        });
        Ok(Self { sigma, kind: LawKind::TruncatedPower { v_min }, moments, tables: None })
    }

    pub fn tabulated(sigma: f64, table: DensityTable) -> Result<Self> {
        check_sigma(sigma)?;
        let table = Arc::new(table);
        let t2 = table.clone();
        let g = move |v: f64| t2.eval(v, sigma);
        let tables = MomentTables::build(&g, sigma)?;
        let spec = QuadratureSpec::default().tolerances(1e-300, 1e-11);
        let mut moments = [0.0; 3];
        for (j, m) in moments.iter_mut().enumerate() {
            let e = j as f64 / 3.0;
            *m = integrate_singular(|v| g(v) * v.powf(e), 0.0, f64::INFINITY, &spec.tail(sigma - e))?.value;
        }
        Ok(Self { sigma, kind: LawKind::Tabulated(table), moments, tables: Some(Arc::new(tables)) })
    }

    pub fn params(&self) -> SigmaParams {
        SigmaParams::new(self.sigma).expect("sigma validated at construction")
    }

    pub fn name(&self) -> String {
        match &self.kind {
            LawKind::ShiftedPower => "shifted".into(),
            LawKind::TruncatedPower { v_min } => format!("truncated:{v_min}"),
            LawKind::Tabulated(_) => "tabulated".into(),
        }
    }

    pub fn density(&self, v: f64) -> f64 {
        match &self.kind {
            LawKind::ShiftedPower => (1.0 + v).powf(-self.sigma),
            LawKind::TruncatedPower { v_min } => {
                if v >= *v_min {
                    v.powf(-self.sigma)
                } else {
                    0.0
                }
            }
            LawKind::Tabulated(t) => t.eval(v, self.sigma),
        }
    }

    /// I_j = ∫G(v)v^{j/3}dv.
    pub fn moment(&self, j: usize) -> f64 {
        self.moments[j]
    }

    /// ∫_θ^∞ G(v)v^{j/3}dv.
    pub fn upper_moment(&self, j: usize, theta: f64) -> f64 {
        let e = j as f64 / 3.0;
        let sigma = self.sigma;
        if theta <= 0.0 {
            return self.moments[j];
        }
        if let LawKind::TruncatedPower { v_min } = self.kind {
            let a = sigma - 1.0 - e;
            return theta.max(v_min).powf(-a) / a;
        }
        let t = self.tables.as_ref().expect("tables exist for non-power laws");
        let lo = t.ln_lo.exp();
        if theta < lo {
            return t.upper[j][0] + t.g0 * (lo.powf(1.0 + e) - theta.powf(1.0 + e)) / (1.0 + e);
        }
        let top = t.top();
        if theta >= top {
            return t.upper[j][t.upper[j].len() - 1] * (theta / top).powf(1.0 + e - sigma);
        }
        let g = |x: f64| self.density(x);
        t.hermite(&t.upper[j], theta.ln(), &|x, u| -x.powf(1.0 + e) * g(x) / u)
    }

    /// ∫_0^θ G(v)v^{1+j/3}dv, the mean displacement carried by jumps below θ.
    pub fn lower_first_moment(&self, j: usize, theta: f64) -> f64 {
        let e = 1.0 + j as f64 / 3.0;
        let sigma = self.sigma;
        if theta <= 0.0 {
            return 0.0;
        }
        if let LawKind::TruncatedPower { v_min } = self.kind {
            if theta <= v_min {
                return 0.0;
            }
            return power_integral(e - sigma, v_min, theta);
        }
        let t = self.tables.as_ref().expect("tables exist for non-power laws");
        let lo = t.ln_lo.exp();
        if theta < lo {
            return t.lower[j][0] * (theta / lo).powf(1.0 + e);
        }
        let top = t.top();
        if theta >= top {
            return t.lower[j][t.lower[j].len() - 1] + t.tail_coef * power_integral(e - sigma, top, theta);
        }
        let g = |x: f64| self.density(x);
        t.hermite(&t.lower[j], theta.ln(), &|x, d| x.powf(1.0 + e) * g(x) / d)
    }
}

/// ∫_a^b v^p dv.
fn power_integral(p: f64, a: f64, b: f64) -> f64 {
    let q = p + 1.0;
    if q.abs() < 1e-12 {
        (b / a).ln()
    } else {
        a.powf(q) * ((q * (b / a).ln()).exp_m1()) / q
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    let p = SigmaParams::new(sigma)?;
    let _ = p;
    Ok(())
}

/// R(V) = V^{2/3}I₀ + 2V^{1/3}I₁ + I₂.
pub fn total_rate(v: f64, law: &ScattererLaw) -> f64 {
    rate_above(v, 0.0, law)
}

/// Rate of jumps larger than θ.
pub fn rate_above(v: f64, theta: f64, law: &ScattererLaw) -> f64 {
    let c = v.cbrt();
    c * c * law.upper_moment(0, theta) + 2.0 * c * law.upper_moment(1, theta) + law.upper_moment(2, theta)
}

/// Mean growth rate carried by jumps smaller than θ.
pub fn drift_below(v: f64, theta: f64, law: &ScattererLaw) -> f64 {
    let c = v.cbrt();
    c * c * law.lower_first_moment(0, theta) + 2.0 * c * law.lower_first_moment(1, theta) + law.lower_first_moment(2, theta)
}

fn unit_open<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.gen::<f64>()
}

/// Jump size v ∝ G(v)(V^{1/3}+v^{1/3})².
pub fn sample_jump<R: Rng>(v: f64, law: &ScattererLaw, rng: &mut R) -> f64 {
    sample_jump_above(v, 0.0, law, rng)
}

/// Jump size conditioned on v > θ.
pub fn sample_jump_above<R: Rng>(v: f64, theta: f64, law: &ScattererLaw, rng: &mut R) -> f64 {
    let c = v.cbrt();
    let w = [c * c * law.upper_moment(0, theta), 2.0 * c * law.upper_moment(1, theta), law.upper_moment(2, theta)];
    let total = w[0] + w[1] + w[2];
    let pick = rng.gen::<f64>() * total;
    let j = if pick < w[0] {
        0
    } else if pick < w[0] + w[1] {
        1
    } else {
        2
    };
    sample_component(j, theta, law, rng)
}

/// v ∝ G(v)v^{j/3} on (θ, ∞).
pub fn sample_component<R: Rng>(j: usize, theta: f64, law: &ScattererLaw, rng: &mut R) -> f64 {
    let e = j as f64 / 3.0;
    let sigma = law.sigma;
    match &law.kind {
        LawKind::TruncatedPower { v_min } => {
            let lo = theta.max(*v_min);
            lo * unit_open(rng).powf(-1.0 / (sigma - 1.0 - e))
        }
        LawKind::ShiftedPower => {
            // proposal ∝ (1+v)^{−σ+j/3}, accepted with probability (v/(1+v))^{j/3}
            let shape = -1.0 / (sigma - 1.0 - e);
            loop {
                let x = (1.0 + theta) * unit_open(rng).powf(shape) - 1.0;
                if j == 0 || rng.gen::<f64>() < (x / (1.0 + x)).powf(e) {
                    return x;
                }
            }
        }
        LawKind::Tabulated(_) => {
            // invert U_j(x) = u·U_j(θ) by bisection in ln x
            let target = unit_open(rng) * law.upper_moment(j, theta);
            let mut lo = theta.max(1e-300).ln();
            let mut hi = lo.max(0.0) + 1.0;
            while law.upper_moment(j, hi.exp()) > target {
                hi += (hi - lo).max(1.0);
            }
            if theta <= 0.0 {
                lo = -700.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if law.upper_moment(j, mid.exp()) > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-13 {
                    break;
                }
            }
            (0.5 * (lo + hi)).exp()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimMode {
    /// Every jump simulated.
    Exact,
    /// Jumps below rel_eps·V replaced by their mean drift; larger jumps are
    /// drawn by thinning along the drift path.
    SmallJumpDrift { rel_eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub mode: SimMode,
    pub event_cap: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { mode: SimMode::Exact, event_cap: 10_000_000 }
    }
}

impl SimOptions {
    pub fn drift(rel_eps: f64) -> Self {
        Self { mode: SimMode::SmallJumpDrift { rel_eps }, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    /// (t_n, V_n) after each jump, starting with (0, V0)
    pub events: Vec<(f64, f64)>,
    pub t_end: f64,
    pub v_end: f64,
}

/// Growth allowed within one drift window before the rates are refreshed.
const WINDOW_GROWTH: f64 = 0.5;

struct Walker<'a, R: Rng> {
    law: &'a ScattererLaw,
    options: SimOptions,
    rng: R,
    t: f64,
    v: f64,
    jumps: u64,
    events: Option<Vec<(f64, f64)>>,
}

impl<R: Rng> Walker<'_, R> {
    fn advance(&mut self, until: f64) -> Result<()> {
        while self.t < until {
            let theta = match self.options.mode {
                SimMode::Exact => 0.0,
                SimMode::SmallJumpDrift { rel_eps } => rel_eps * self.v,
            };
            let law = self.law;
            let lower = [0, 1, 2].map(|j| law.lower_first_moment(j, theta));
            let upper = [0, 1, 2].map(|j| law.upper_moment(j, theta));
            let drift = |x: f64| {
                let c = x.cbrt();
                c * c * lower[0] + 2.0 * c * lower[1] + lower[2]
            };
            let rate = |x: f64| {
                let c = x.cbrt();
                c * c * upper[0] + 2.0 * c * upper[1] + upper[2]
            };
            let flow = |x: f64, dt: f64| {
                // two RK4 steps of dx/dt = drift(x)
                let h = 0.5 * dt;
                let mut y = x;
                for _ in 0..2 {
                    let k1 = drift(y);
                    let k2 = drift(y + 0.5 * h * k1);
                    let k3 = drift(y + 0.5 * h * k2);
                    let k4 = drift(y + h * k3);
                    y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                }
                y
            };
            let d0 = drift(self.v);
            let horizon = until - self.t;
            let (window, v_end) = if d0 > 0.0 {
                let dt = horizon.min(WINDOW_GROWTH * self.v / d0);
                (dt, flow(self.v, dt))
            } else {
                (horizon, self.v)
            };
            let r_max = rate(v_end);
            let mut s = 0.0;
            loop {
                let e: f64 = self.rng.sample(Exp1);
                s += if r_max > 0.0 { e / r_max } else { f64::INFINITY };
                if s >= window {
                    self.t += window;
                    self.v = v_end;
                    break;
                }
                let vs = if d0 > 0.0 { flow(self.v, s) } else { self.v };
                if d0 > 0.0 && self.rng.gen::<f64>() * r_max > rate(vs) {
                    continue;
                }
                self.t += s;
                let jump = sample_jump_above(vs, theta, law, &mut self.rng);
                self.v = vs + jump;
                self.jumps += 1;
                if let Some(ev) = self.events.as_mut() {
                    ev.push((self.t, self.v));
                }
                if self.jumps > self.options.event_cap {
                    return Err(Error::EventCap { cap: self.options.event_cap, t: self.t, volume: self.v });
                }
                break;
            }
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_start(v0: f64, t_end: f64) -> Result<()> {
    if !(v0 >= 0.0 && v0.is_finite()) {
        return Err(Error::Domain(format!("V0 = {v0} must be finite and ≥ 0")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::Domain(format!("t_end = {t_end} must be finite and ≥ 0")));
    }
    Ok(())
}

/// One trajectory from V0 up to t_end, reproducible per seed.
pub fn simulate(v0: f64, t_end: f64, law: &ScattererLaw, seed: u64, options: SimOptions) -> Result<Trajectory> {
    check_start(v0, t_end)?;
    let mut w = Walker { law, options, rng: stream_rng(seed, 0), t: 0.0, v: v0, jumps: 0, events: Some(vec![(0.0, v0)]) };
    w.advance(t_end)?;
    Ok(Trajectory { seed, events: w.events.take().unwrap_or_default(), t_end, v_end: w.v })
}

/// Snapshots V(t_k) of N independent trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub sigma: f64,
    pub law: String,
    pub master_seed: u64,
    pub v0: f64,
    pub checkpoints: Vec<f64>,
    /// snapshots[k][i] = V_i(t_k)
    pub snapshots: Vec<Vec<f64>>,
    pub jumps: Vec<u64>,
}

impl TrajectoryEnsemble {
    pub fn len(&self) -> usize {
        self.jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jumps.is_empty()
    }

    pub fn checkpoint_index(&self, t: f64) -> Result<usize> {
        self.checkpoints
            .iter()
            .position(|&c| (c - t).abs() <= 1e-12 * t.abs().max(1.0))
            .ok_or_else(|| Error::Domain(format!("t = {t} is not a checkpoint")))
    }
}

/// Trajectory i uses stream i of the generator seeded by master_seed, so the
/// result does not depend on scheduling.
pub fn ensemble(
    n: usize,
    v0: f64,
    checkpoints: &[f64],
    law: &ScattererLaw,
    master_seed: u64,
    options: SimOptions,
    exec: Exec,
) -> Result<TrajectoryEnsemble> {
    if n == 0 {
        return Err(Error::Domain("ensemble needs N ≥ 1".into()));
    }
    if checkpoints.is_empty() || checkpoints.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("checkpoints must be non-empty and strictly increasing".into()));
    }
    check_start(v0, *checkpoints.last().unwrap())?;
    if checkpoints[0] < 0.0 {
        return Err(Error::Domain("checkpoints must be ≥ 0".into()));
    }
    let runs: Vec<Result<(Vec<f64>, u64)>> = exec.map_range(n, |i| {
        let mut w = Walker { law, options, rng: stream_rng(master_seed, i as u64), t: 0.0, v: v0, jumps: 0, events: None };
        let mut snap = Vec::with_capacity(checkpoints.len());
        for &c in checkpoints {
            w.advance(c)?;
            snap.push(w.v);
        }
        Ok((snap, w.jumps))
    });
    let mut snapshots = vec![Vec::with_capacity(n); checkpoints.len()];
    let mut jumps = Vec::with_capacity(n);
    for r in runs {
        let (snap, j) = r?;
        for (k, v) in snap.into_iter().enumerate() {
            snapshots[k].push(v);
        }
        jumps.push(j);
    }
    Ok(TrajectoryEnsemble {
        sigma: law.sigma,
        law: law.name(),
        master_seed,
        v0,
        checkpoints: checkpoints.to_vec(),
        snapshots,
        jumps,
    })
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

const BOOTSTRAP: usize = 100;

/// Least-squares slope of ln median V(t) against ln t, with a bootstrap stderr.
pub fn scaling_exponent(ens: &TrajectoryEnsemble) -> Result<(f64, f64)> {
    let t = &ens.checkpoints;
    if t.len() < 3 || t[0] <= 0.0 || t[t.len() - 1] / t[0] < 100.0 {
        return Err(Error::Domain("scaling fit needs ≥ 3 positive checkpoints spanning ≥ 2 decades".into()));
    }
    let xs: Vec<f64> = t.iter().map(|x| x.ln()).collect();
    let medians: Vec<f64> = ens.snapshots.iter().map(|s| median(&mut s.clone())).collect();
    if medians.iter().any(|&m| !(m > 0.0)) || medians.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::Degenerate("median volume does not move; no jumps to fit".into()));
    }
    let ys: Vec<f64> = medians.iter().map(|m| m.ln()).collect();
    let fit = slope(&xs, &ys);
    let mut rng = stream_rng(ens.master_seed ^ 0x5ca1_ab1e, 0);
    let mut slopes = Vec::with_capacity(BOOTSTRAP);
    let mut buf = vec![0.0; ens.len()];
    for _ in 0..BOOTSTRAP {
        let ys: Vec<f64> = ens
            .snapshots
            .iter()
            .map(|s| {
                for b in buf.iter_mut() {
                    *b = s[rng.gen_range(0..s.len())];
                }
                median(&mut buf).ln()
            })
            .collect();
        slopes.push(slope(&xs, &ys));
    }
    Ok((fit, std_dev(&slopes)))
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Histogram of ξ = V/t^μ with the sorted samples kept for CDF comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalProfile {
    pub time: f64,
    pub rescale_exponent: f64,
    /// interior edges; bin 0 is [0, edges[0]) and the last bin is [edges[last], ∞)
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub samples: Vec<f64>,
}

impl EmpiricalProfile {
    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Total probability mass, from integer counts.
    pub fn total_mass(&self) -> f64 {
        self.counts.iter().sum::<u64>() as f64 / self.n() as f64
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.samples.partition_point(|&s| s <= x) as f64 / self.n() as f64
    }

    /// Two-sample Kolmogorov distance.
    pub fn ks_distance(&self, other: &EmpiricalProfile) -> f64 {
        ks_two_sample(&self.samples, &other.samples)
    }
}

/// sup |F_a − F_b| for sorted samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Logarithmic bin edges.
pub fn log_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| lo * (hi / lo).powf(k as f64 / n as f64)).collect()
}

pub fn profile(ens: &TrajectoryEnsemble, t: f64, mu: f64, edges: &[f64]) -> Result<EmpiricalProfile> {
    let k = ens.checkpoint_index(t)?;
    if edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("bin edges must increase".into()));
    }
    let scale = if t > 0.0 { t.powf(mu) } else { 1.0 };
    let mut samples: Vec<f64> = ens.snapshots[k].iter().map(|v| v / scale).collect();
    samples.sort_by(f64::total_cmp);
    let mut counts = vec![0u64; edges.len() + 1];
    for &x in &samples {
        counts[edges.partition_point(|&e| e <= x)] += 1;
    }
    Ok(EmpiricalProfile { time: t, rescale_exponent: mu, edges: edges.to_vec(), counts, samples })
}

/// M_β and m_γ along the checkpoints, with ξ = V/(1+t)^μ and τ = ln(1+t).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub beta: f64,
    pub gamma: f64,
    pub tau: Vec<f64>,
    pub m_beta: Vec<f64>,
    pub m_beta_err: Vec<f64>,
    pub m_gamma: Vec<f64>,
    pub m_gamma_err: Vec<f64>,
    pub burn_in: usize,
    /// largest value after burn-in plus three bootstrap errors
    pub bound: f64,
    /// both series free of drift beyond 3 combined bootstrap errors after burn-in
    pub bounded: bool,
}

pub fn moments(ens: &TrajectoryEnsemble, beta: f64, gamma: f64, burn_in: usize) -> Result<MomentReport> {
    let sigma = ens.sigma;
    if !(beta >= 0.0 && beta < sigma - 5.0 / 3.0) {
        return Err(Error::Domain(format!("beta = {beta} must lie in [0, σ−5/3) = [0, {})", sigma - 5.0 / 3.0)));
    }
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("gamma = {gamma} must be positive")));
    }
    if burn_in >= ens.checkpoints.len() {
        return Err(Error::Domain("burn-in leaves no checkpoints".into()));
    }
    let mu = 1.0 / (sigma - 5.0 / 3.0);
    let mut rng = stream_rng(ens.master_seed ^ 0x0b00_7575, 0);
    let mut report = MomentReport {
        beta,
        gamma,
        tau: Vec::new(),
        m_beta: Vec::new(),
        m_beta_err: Vec::new(),
        m_gamma: Vec::new(),
        m_gamma_err: Vec::new(),
        burn_in,
        bound: 0.0,
        bounded: true,
    };
    for (k, &t) in ens.checkpoints.iter().enumerate() {
        let scale = (1.0 + t).powf(mu);
        let xi: Vec<f64> = ens.snapshots[k].iter().map(|v| v / scale).collect();
        let fb = |x: f64| (1.0 + x).powf(beta);
        let fg = |x: f64| x.powf(-gamma);
        let (mb, eb) = mean_and_bootstrap(&xi, &fb, &mut rng);
        let (mg, eg) = mean_and_bootstrap(&xi, &fg, &mut rng);
        report.tau.push((1.0 + t).ln());
        report.m_beta.push(mb);
        report.m_beta_err.push(eb);
        report.m_gamma.push(mg);
        report.m_gamma_err.push(eg);
    }
    let after = burn_in..ens.checkpoints.len();
    report.bound = after
        .clone()
        .map(|k| (report.m_beta[k] + 3.0 * report.m_beta_err[k]).max(report.m_gamma[k] + 3.0 * report.m_gamma_err[k]))
        .fold(0.0, f64::max);
    let first = burn_in;
    let last = ens.checkpoints.len() - 1;
    let drift_ok = |m: &[f64], e: &[f64]| (m[last] - m[first]) <= 3.0 * (e[last].powi(2) + e[first].powi(2)).sqrt();
    report.bounded = report.bound.is_finite()
        && drift_ok(&report.m_beta, &report.m_beta_err)
        && drift_ok(&report.m_gamma, &report.m_gamma_err);
    Ok(report)
}

fn mean_and_bootstrap<R: Rng>(x: &[f64], f: &dyn Fn(f64) -> f64, rng: &mut R) -> (f64, f64) {
    let values: Vec<f64> = x.iter().map(|&v| f(v)).collect();
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let reps: Vec<f64> = (0..BOOTSTRAP)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    (mean, std_dev(&reps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn quad_moment(law: &ScattererLaw, j: usize) -> f64 {
        let e = j as f64 / 3.0;
        let spec = QuadratureSpec::default().tolerances(1e-300, 1e-12).tail(law.sigma - e);
        integrate_singular(|v| law.density(v) * v.powf(e), 0.0, f64::INFINITY, &spec).unwrap().value
    }

    #[test]
    fn shifted_moments() {
        let law = ScattererLaw::shifted(1.8).unwrap();
        assert!((law.moment(0) - 1.25).abs() < 1e-12);
        for j in 0..3 {
            assert!((law.moment(j) / quad_moment(&law, j) - 1.0).abs() < 1e-8, "j={j}");
        }
        let big = 1e12;
        assert!((total_rate(big, &law) / big.powf(2.0 / 3.0) / law.moment(0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn tail_normalisation() {
        let v = 1e6;
        for law in [ScattererLaw::shifted(1.8).unwrap(), ScattererLaw::truncated(1.8, 1.0).unwrap()] {
            assert!((law.density(v) * v.powf(1.8) - 1.0).abs() < 1e-2);
        }
        assert!(ScattererLaw::truncated(1.8, 0.0).is_err());
        assert!(ScattererLaw::shifted(1.6).is_err());
    }

    #[test]
    fn partial_moments_match_quadrature() {
        let law = ScattererLaw::shifted(1.9).unwrap();
        let spec = QuadratureSpec::default().tolerances(1e-300, 1e-12);
        for &theta in &[1e-14, 1e-3, 0.37, 1.0, 42.0, 3e5, 1e31] {
            for j in 0..3 {
                let e = j as f64 / 3.0;
                let up = integrate_singular(|v| law.density(v) * v.powf(e), theta, f64::INFINITY, &spec.tail(1.9 - e))
                    .unwrap()
                    .value;
                let lo = integrate_singular(|v| law.density(v) * v.powf(1.0 + e), 0.0, theta, &spec).unwrap().value;
                assert!((law.upper_moment(j, theta) / up - 1.0).abs() < 1e-7, "U θ={theta} j={j}");
                assert!((law.lower_first_moment(j, theta) / lo - 1.0).abs() < 1e-7, "D θ={theta} j={j}");
            }
        }
    }

    fn ks_against(samples: &mut [f64], cdf: &dyn Fn(f64) -> f64) -> f64 {
        samples.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        samples
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn jump_components_match_quadrature_cdf() {
        let law = ScattererLaw::shifted(1.8).unwrap();
        let mut rng = stream_rng(7, 0);
        for j in 0..3 {
            let mut s: Vec<f64> = (0..100_000).map(|_| sample_component(j, 0.0, &law, &mut rng)).collect();
            let total = law.moment(j);
            let d = ks_against(&mut s, &|x| 1.0 - law.upper_moment(j, x) / total);
            assert!(d < 0.01, "j={j}: {d}");
        }
        let mut s: Vec<f64> = (0..100_000).map(|_| sample_jump(1.0, &law, &mut rng)).collect();
        let total = total_rate(1.0, &law);
        let d = ks_against(&mut s, &|x| 1.0 - rate_above(1.0, x, &law) / total);
        assert!(d < 0.01, "mixture: {d}");
    }

    #[test]
    fn tabulated_law_samples() {
        let v: Vec<f64> = (0..60).map(|k| 10f64.powf(-3.0 + 0.1 * k as f64)).collect();
        let g: Vec<f64> = v.iter().map(|x| (1.0 + x).powf(-1.8)).collect();
        let law = ScattererLaw::tabulated(1.8, DensityTable::new(v, g).unwrap()).unwrap();
        let shifted = ScattererLaw::shifted(1.8).unwrap();
        assert!((law.moment(0) / shifted.moment(0) - 1.0).abs() < 2e-2);
        let mut rng = stream_rng(3, 0);
        let mut s: Vec<f64> = (0..50_000).map(|_| sample_component(1, 0.5, &law, &mut rng)).collect();
        let total = law.upper_moment(1, 0.5);
        let d = ks_against(&mut s, &|x| 1.0 - law.upper_moment(1, x) / total);
        assert!(d < 0.015, "{d}");
    }

    #[test]
    fn jump_survival_far_tail() {
        let law = ScattererLaw::shifted(1.8).unwrap();
        let mut rng = stream_rng(11, 0);
        let n = 400_000;
        let s: Vec<f64> = (0..n).map(|_| sample_jump(1.0, &law, &mut rng)).collect();
        let r = total_rate(1.0, &law);
        for &x in &[1e2, 1e4, 1e6] {
            let emp = s.iter().filter(|&&v| v > x).count() as f64 / n as f64;
            let exact = rate_above(1.0, x, &law) / r;
            assert!((emp / exact - 1.0).abs() < 0.05, "x={x}: {emp} vs {exact}");
        }
    }

    fn survival_slope(s: &[f64], lo: f64, hi: f64) -> f64 {
        let n = s.len() as f64;
        let xs: Vec<f64> = (0..=8).map(|k| lo * (hi / lo).powf(k as f64 / 8.0)).collect();
        let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let ly: Vec<f64> = xs.iter().map(|&x| (s.iter().filter(|&&v| v > x).count() as f64 / n).ln()).collect();
        slope(&lx, &ly)
    }

    #[test]
    fn scatterer_tail_index() {
        let law = ScattererLaw::shifted(1.8).unwrap();
        let mut rng = stream_rng(12, 0);
        let s: Vec<f64> = (0..400_000).map(|_| sample_component(0, 0.0, &law, &mut rng)).collect();
        let fit = survival_slope(&s, 1e2, 1e4);
        assert!((fit / -0.8 - 1.0).abs() < 0.05, "slope {fit}");
    }

    #[test]
    fn weighted_jump_tail_index() {
        // the v^{2/3} part of the collision weight dominates far out
        let law = ScattererLaw::truncated(1.8, 1.0).unwrap();
        let mut rng = stream_rng(13, 0);
        let s: Vec<f64> = (0..400_000).map(|_| sample_jump(0.0, &law, &mut rng)).collect();
        let fit = survival_slope(&s, 1e2, 1e6);
        assert!((fit / -(1.8 - 5.0 / 3.0) - 1.0).abs() < 0.05, "slope {fit}");
    }

    #[test]
    fn zero_time_and_determinism() {
        let law = ScattererLaw::shifted(1.8).unwrap();
        let t = simulate(0.5, 0.0, &law, 1, SimOptions::default()).unwrap();
        assert_eq!(t.events, vec![(0.0, 0.5)]);
        let opts = SimOptions::drift(1e-3);
        let a = simulate(0.0, 5.0, &law, 9, opts).unwrap();
        let b = simulate(0.0, 5.0, &law, 9, opts).unwrap();
        assert_eq!(a, b);
        assert!(a.events.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1));
        let e = ensemble(1, 0.0, &[5.0], &law, 9, opts, Exec::Sequential).unwrap();
        assert_eq!(e.snapshots[0][0], a.v_end);
    }

    #[test]
    fn ensemble_order_independent() {
        let law = ScattererLaw::truncated(1.9, 1.0).unwrap();
        let cps = [0.5, 1.0, 2.0];
        let opts = SimOptions::drift(1e-3);
        let a = ensemble(300, 0.0, &cps, &law, 5, opts, Exec::Sequential).unwrap();
        let b = ensemble(300, 0.0, &cps, &law, 5, opts, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        let p = profile(&a, 1.0, 1.0, &log_edges(0.1, 100.0, 10)).unwrap();
        assert_eq!(p.total_mass(), 1.0);
    }

    #[test]
    fn poisson_clock_with_frozen_volume() {
        // the volume is never updated, so arrivals form a Poisson process at the V = 0 rate
        let law = ScattererLaw::truncated(1.8, 1.0).unwrap();
        let r = total_rate(0.0, &law);
        let mut rng = stream_rng(1, 0);
        let n = 20_000;
        let t = 2.0;
        let mut total = 0.0;
        for _ in 0..n {
            let mut s = 0.0;
            let mut k = 0;
            loop {
                s += rng.sample::<f64, _>(Exp1) / r;
                if s > t {
                    break;
                }
                k += 1;
            }
            total += k as f64;
        }
        let mean = total / n as f64;
        assert!((mean / (r * t) - 1.0).abs() < 0.02);
    }

    #[test]
    fn degenerate_scaling_rejected() {
        let law = ScattererLaw::truncated(1.9, 1.0).unwrap();
        let e = ensemble(10, 1.0, &[1e-12, 2e-12, 1e-9], &law, 1, SimOptions::default(), Exec::Sequential).unwrap();
        assert!(matches!(scaling_exponent(&e), Err(Error::Degenerate(_))));
    }

    #[test]
    fn moment_report_rules() {
        let law = ScattererLaw::truncated(1.9, 1.0).unwrap();
        let e = ensemble(200, 0.0, &[1.0, 2.0, 4.0], &law, 1, SimOptions::drift(1e-3), Exec::Sequential).unwrap();
        let r = moments(&e, 0.0, 0.5, 0).unwrap();
        assert!(r.m_beta.iter().all(|&m| m == 1.0));
        assert!(moments(&e, 0.3, 0.5, 0).is_err());
    }

    #[test]
    fn drift_mode_matches_exact_in_distribution() {
        let law = ScattererLaw::truncated(2.5, 1.0).unwrap();
        let cps = [1.0, 3.0];
        let a = ensemble(20_000, 0.0, &cps, &law, 2, SimOptions::default(), Exec::Parallel).unwrap();
        let b = ensemble(20_000, 0.0, &cps, &law, 3, SimOptions::drift(0.01), Exec::Parallel).unwrap();
        for k in 0..2 {
            let mut x = a.snapshots[k].clone();
            let mut y = b.snapshots[k].clone();
            x.sort_by(f64::total_cmp);
            y.sort_by(f64::total_cmp);
            let d = ks_two_sample(&x, &y);
            assert!(d < 0.03, "checkpoint {k}: {d}");
        }
    }

    #[test]
    fn drift_mode_converges_in_epsilon() {
        let law = ScattererLaw::shifted(1.9).unwrap();
        let cps = [10.0, 100.0];
        let a = ensemble(20_000, 0.0, &cps, &law, 2, SimOptions::drift(1e-2), Exec::Parallel).unwrap();
        let b = ensemble(20_000, 0.0, &cps, &law, 3, SimOptions::drift(1e-3), Exec::Parallel).unwrap();
        for k in 0..2 {
            let mut x = a.snapshots[k].clone();
            let mut y = b.snapshots[k].clone();
            x.sort_by(f64::total_cmp);
            y.sort_by(f64::total_cmp);
            let d = ks_two_sample(&x, &y);
            assert!(d < 0.03, "checkpoint {k}: {d}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn trajectories_monotone(seed in 0u64..10_000, v0 in 0.0f64..5.0) {
            let law = ScattererLaw::shifted(1.9).unwrap();
            let tr = simulate(v0, 3.0, &law, seed, SimOptions::drift(1e-3)).unwrap();
            prop_assert!(tr.events.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1));
            prop_assert!(tr.v_end >= v0);
        }
    }
}
