//! The Mellin symbol M(z) of the generator, its real zeros and poles, and the
//! inversion 𝒢(V) = −(1/2πi)∫ V^z/M(z) dz over a wedge contour.
//!
//! M(z) = z/Γ(1−z) · S(z),  S(z) = Σ_j c_j K_j Γ(b_j − z),
//! b_j = σ−1−j/3,  K_j = Γ(2+j/3−σ)/(σ−1−j/3),  c = (1, 2, 1).

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::specfun::{cln_gamma, digamma, gamma, gamma_ratio, gauss_legendre, sin_pi, SigmaParams};

const C: [f64; 3] = [1.0, 2.0, 1.0];

/// Zeros per family kept for the residue expansion of 𝒢.
pub const DEFAULT_ZERO_COUNT: usize = 45;
/// Largest V for which 𝒢 is summed from residues instead of the contour.
pub const RESIDUE_CUTOFF: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Pole {
    pub family: usize,
    pub n: usize,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Zero {
    pub family: usize,
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub root: f64,
    /// pole-plus-residue prediction (families 1 and 2 only)
    pub asymptotic: Option<f64>,
    /// M′ at the root
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourSpec {
    pub vertex: f64,
    pub half_angle: f64,
    /// radial cut-off; chosen from V when None
    pub r_max: Option<f64>,
    /// Gauss–Legendre nodes per panel
    pub nodes: usize,
}

impl Default for ContourSpec {
    fn default() -> Self {
        Self { vertex: -1.0, half_angle: PI / 4.0, r_max: None, nodes: 24 }
    }
}

impl ContourSpec {
    pub fn with_angle(mut self, alpha: f64) -> Self {
        self.half_angle = alpha;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.half_angle > 0.0 && self.half_angle < PI / 2.0) {
            return Err(Error::Domain(format!("half angle {} outside (0, pi/2)", self.half_angle)));
        }
        // the smallest zero of M is z = 0
        if !(self.vertex < 0.0 && self.vertex.is_finite()) {
            return Err(Error::Domain(format!("contour vertex {} must lie left of 0", self.vertex)));
        }
        if self.nodes < 2 {
            return Err(Error::Domain("need at least 2 nodes per panel".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GValue {
    pub value: f64,
    /// imaginary part left over from the two rays; zero up to rounding
    pub imag: f64,
    pub tail_bound: f64,
}

fn shift(j: usize, sigma: f64) -> f64 {
    sigma - 1.0 - j as f64 / 3.0
}

fn weight(j: usize, sigma: f64) -> f64 {
    C[j] * gamma(2.0 + j as f64 / 3.0 - sigma).expect("argument in (0, 1)") / shift(j, sigma)
}

/// Γ(b − x)/Γ(1 − x) for real x, written through Γ(x)/Γ(1 − b + x) so that large x is harmless.
fn reflected_ratio(b: f64, x: f64) -> f64 {
    let s = sin_pi(x) / sin_pi(b - x);
    if x > 0.0 && 1.0 - b + x > 0.0 {
        s * gamma_ratio(x, 1.0 - b + x)
    } else {
        gamma(b - x).unwrap_or(f64::NAN) * crate::specfun::rgamma(1.0 - x)
    }
}

fn check_core(params: &SigmaParams) -> Result<()> {
    if !params.is_core() {
        return Err(Error::Domain(format!("sigma = {} is outside (5/3, 2)", params.sigma)));
    }
    Ok(())
}

/// M(z) at a complex point.
pub fn m_eval(z: Complex64, params: &SigmaParams) -> Result<Complex64> {
    check_core(params)?;
    let sigma = params.sigma;
    if z.im == 0.0 {
        for j in 0..3 {
            let w = shift(j, sigma) - z.re;
            if w <= 0.0 && w == w.floor() {
                return Err(Error::Pole { at: z.re });
            }
        }
        if z.re == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
    }
    let one = Complex64::new(1.0, 0.0);
    let denom = cln_gamma(one - z).ok();
    let mut s = Complex64::new(0.0, 0.0);
    for j in 0..3 {
        let num = cln_gamma(Complex64::new(shift(j, sigma), 0.0) - z)?;
        let term = match denom {
            Some(d) => (num - d).exp(),
            // 1/Γ(1−z) vanishes at the positive integers
            None => Complex64::new(0.0, 0.0),
        };
        s += weight(j, sigma) * term;
    }
    Ok(z * s)
}

/// M(x) for real x off the poles.
pub fn m_eval_real(x: f64, params: &SigmaParams) -> Result<f64> {
    Ok(m_eval(Complex64::new(x, 0.0), params)?.re)
}

/// M′(0) = Σ c_j K_j Γ(σ−1−j/3).
pub fn m_prime_zero(params: &SigmaParams) -> Result<f64> {
    check_core(params)?;
    let sigma = params.sigma;
    let mut s = 0.0;
    for j in 0..3 {
        s += weight(j, sigma) * gamma(shift(j, sigma))?;
    }
    Ok(s)
}

/// K̄ = (σ−1) sin(π(σ−1))/π.
pub fn k_bar(params: &SigmaParams) -> Result<f64> {
    check_core(params)?;
    let s = params.sigma;
    Ok((s - 1.0) * sin_pi(s - 1.0) / PI)
}

/// The analytic factor S(x)/Γ(σ−1−x), whose real zeros are the non-integer zeros of M.
pub fn analytic_factor(x: f64, params: &SigmaParams) -> f64 {
    let sigma = params.sigma;
    let b0 = shift(0, sigma);
    let mut q = weight(0, sigma);
    for j in 1..3 {
        let bj = shift(j, sigma);
        let ratio = sin_pi(b0 - x) / sin_pi(bj - x) * gamma_ratio(1.0 - b0 + x, 1.0 - bj + x);
        q += weight(j, sigma) * ratio;
    }
    q
}

/// Residue of the analytic factor at the pole z_{j,n}, j ∈ {1, 2}.
pub fn residue(j: usize, n: usize, params: &SigmaParams) -> f64 {
    let sigma = params.sigma;
    let nf = n as f64;
    -weight(j, sigma) * sin_pi(j as f64 / 3.0) / PI * gamma_ratio(1.0 - j as f64 / 3.0 + nf, 1.0 + nf)
}

fn m_and_slope_real(x: f64, sigma: f64) -> (f64, f64) {
    let mut m = 0.0;
    let mut dm = 0.0;
    let psi1 = digamma(1.0 - x).unwrap_or(f64::NAN);
    for j in 0..3 {
        let bj = shift(j, sigma);
        let r = weight(j, sigma) * reflected_ratio(bj, x);
        m += r;
        dm += r * (1.0 + x * (psi1 - digamma(bj - x).unwrap_or(f64::NAN)));
    }
    (x * m, dm)
}

/// M′ at the integer zero z = n.
fn slope_at_integer(n: usize, sigma: f64) -> f64 {
    let nf = n as f64;
    (0..3)
        .map(|j| {
            let bj = shift(j, sigma);
            weight(j, sigma) * PI / sin_pi(bj) * gamma_ratio(nf + 1.0, nf + 1.0 - bj)
        })
        .sum()
}

fn bisect<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Zeros of M up to index n_max: the integers and the two families interlaced with the poles.
pub fn find_zeros(params: &SigmaParams, n_max: usize) -> Result<Vec<Zero>> {
    check_core(params)?;
    let sigma = params.sigma;
    let q_inf = weight(0, sigma);
    let mut out = Vec::with_capacity(3 * (n_max + 1));
    for n in 0..=n_max {
        let nf = n as f64;
        out.push(Zero {
            family: 0,
            n,
            lo: nf,
            hi: nf,
            root: nf,
            asymptotic: None,
            slope: slope_at_integer(n, sigma),
        });
        let brackets = [
            (1usize, sigma - 5.0 / 3.0 + nf, sigma - 4.0 / 3.0 + nf, 2usize),
            (2usize, sigma - 4.0 / 3.0 + nf, sigma - 2.0 / 3.0 + nf, 1usize),
        ];
        for &(family, lo, hi, pole_family) in &brackets {
            let f = |x: f64| analytic_factor(x, params);
            let samples = 256;
            let width = hi - lo;
            let pts: Vec<f64> = (1..samples).map(|i| lo + width * i as f64 / samples as f64).collect();
            let vals: Vec<f64> = pts.iter().map(|&x| f(x)).collect();
            let mut changes = Vec::new();
            for i in 0..vals.len() - 1 {
                if (vals[i] > 0.0) != (vals[i + 1] > 0.0) {
                    changes.push(i);
                }
            }
            // the factor is negative just right of the left pole and positive
            // just left of the right pole; check the ends in case the root
            // hides inside the first or last sub-interval
            let edge = 1e-9 * width;
            let left_end = f(lo + edge);
            let right_end = f(hi - edge);
            let mut sign_changes = changes.len();
            if (left_end > 0.0) != (vals[0] > 0.0) {
                sign_changes += 1;
            }
            if (right_end > 0.0) != (vals[vals.len() - 1] > 0.0) {
                sign_changes += 1;
            }
            if sign_changes != 1 {
                return Err(Error::Bracket { family, n, sign_changes });
            }
            let (a, b) = if let Some(&i) = changes.first() {
                (pts[i], pts[i + 1])
            } else if (left_end > 0.0) != (vals[0] > 0.0) {
                (lo + edge, pts[0])
            } else {
                (pts[pts.len() - 1], hi - edge)
            };
            let mut root = bisect(&f, a, b);
            // Newton polish on M itself
            for _ in 0..3 {
                let (m, dm) = m_and_slope_real(root, sigma);
                let next = root - m / dm;
                if !(next > a && next < b) {
                    break;
                }
                let (m_next, _) = m_and_slope_real(next, sigma);
                if m_next.abs() >= m.abs() {
                    break;
                }
                root = next;
            }
            let pole = shift(pole_family, sigma) + nf;
            let asymptotic = pole - residue(pole_family, n, params) / q_inf;
            let (_, slope) = m_and_slope_real(root, sigma);
            out.push(Zero { family, n, lo, hi, root, asymptotic: Some(asymptotic), slope });
        }
    }
    Ok(out)
}

/// Poles z_{j,n} = σ−1−j/3+n up to index n_max.
pub fn poles(params: &SigmaParams, n_max: usize) -> Vec<Pole> {
    let mut out = Vec::with_capacity(3 * (n_max + 1));
    for n in 0..=n_max {
        for j in 0..3 {
            out.push(Pole { family: j, n, z: shift(j, params.sigma) + n as f64 });
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct MellinStructure {
    pub params: SigmaParams,
    pub m_prime_zero: f64,
    pub k_bar: f64,
    pub poles: Vec<Pole>,
    pub zeros: Vec<Zero>,
}

impl MellinStructure {
    pub fn build(params: &SigmaParams) -> Result<Self> {
        Self::build_with(params, DEFAULT_ZERO_COUNT)
    }

    pub fn build_with(params: &SigmaParams, n_max: usize) -> Result<Self> {
        let zeros = find_zeros(params, n_max)?;
        Ok(Self {
            params: *params,
            m_prime_zero: m_prime_zero(params)?,
            k_bar: k_bar(params)?,
            poles: poles(params, n_max),
            zeros,
        })
    }

    /// Λ(1⁻) = 1/(K̄·M′(0)).
    pub fn lambda_at_one(&self) -> f64 {
        1.0 / (self.k_bar * self.m_prime_zero)
    }

    /// 𝒢(V) = Σ V^ẑ/M′(ẑ) summed over the stored zeros, for 0 ≤ V < 1.
    pub fn g_residues(&self, v: f64) -> f64 {
        if v == 0.0 {
            return 1.0 / self.m_prime_zero;
        }
        let lv = v.ln();
        let mut terms: Vec<f64> = self.zeros.iter().map(|z| (z.root * lv).exp() / z.slope).collect();
        terms.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        terms.iter().sum()
    }

    /// Bound on the first omitted residue term, used to decide when the sum is trustworthy.
    pub fn residue_tail(&self, v: f64) -> f64 {
        let top = self.zeros.iter().map(|z| z.root).fold(0.0, f64::max);
        3.0 * v.powf(top) / self.m_prime_zero * (top + 1.0)
    }

    /// Λ(ξ) = 𝒢(1−ξ)/K̄; residues for small V, the contour otherwise.
    pub fn lambda_from_g(&self, v: f64) -> Result<f64> {
        let g = if v <= RESIDUE_CUTOFF && self.residue_tail(v) < 1e-15 {
            self.g_residues(v)
        } else {
            g_eval(v, &ContourSpec::default(), self)?
        };
        Ok(g / self.k_bar)
    }

    /// Fit Λ near ξ = 1 from samples (ξ, Λ(ξ)) using the exponents of 𝒢 in V = 1−ξ
    /// and return the constant term, i.e. the extrapolated Λ(1⁻).
    ///
    /// The expansion coefficients are 1/(K̄M′(ẑ)), positive at every stored
    /// zero, so the fit is constrained to non-negative coefficients. An
    /// unconstrained fit over power functions with close exponents loses the
    /// constant term to cancellation.
    pub fn extrapolate_to_one(&self, samples: &[(f64, f64)], n_exponents: usize) -> Result<f64> {
        let mut exps: Vec<f64> = self.zeros.iter().map(|z| z.root).collect();
        exps.sort_by(f64::total_cmp);
        exps.truncate(n_exponents);
        if samples.len() < exps.len() {
            return Err(Error::Degenerate("fewer samples than exponents".into()));
        }
        let rows: Vec<Vec<f64>> = samples.iter().map(|&(xi, _)| exps.iter().map(|&e| (1.0 - xi).powf(e)).collect()).collect();
        let rhs: Vec<f64> = samples.iter().map(|&(_, l)| l).collect();
        let coef = nonnegative_least_squares(&rows, &rhs)?;
        Ok(coef[0])
    }
}

/// Lawson–Hanson active-set solver for min ‖Ax − b‖ subject to x ≥ 0.
pub fn nonnegative_least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, |r| r.len());
    if n == 0 || rhs.len() != m {
        return Err(Error::Degenerate("empty or mismatched least-squares system".into()));
    }
    let scale = rows.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())) * rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-17 * scale.max(f64::MIN_POSITIVE) * m as f64;
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let gradient = |x: &[f64]| -> Vec<f64> {
        let r: Vec<f64> = (0..m).map(|i| rhs[i] - rows[i].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).collect();
        (0..n).map(|j| (0..m).map(|i| rows[i][j] * r[i]).sum()).collect()
    };
    // solve the unconstrained problem restricted to the passive set
    let restricted = |passive: &[bool]| -> Result<Vec<f64>> {
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub: Vec<Vec<f64>> = rows.iter().map(|r| cols.iter().map(|&j| r[j]).collect()).collect();
        let z = least_squares(&sub, rhs)?;
        let mut full = vec![0.0; n];
        for (k, &j) in cols.iter().enumerate() {
            full[j] = z[k];
        }
        Ok(full)
    };
    for _ in 0..3 * n {
        let w = gradient(&x);
        let pick = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = pick else { return Ok(x) };
        passive[j] = true;
        loop {
            let z = restricted(&passive)?;
            if (0..n).all(|k| !passive[k] || z[k] > 0.0) {
                x = z;
                break;
            }
            // step towards z until the first passive coefficient hits zero
            let (hit, alpha) = (0..n)
                .filter(|&k| passive[k] && z[k] <= 0.0)
                .map(|k| (k, x[k] / (x[k] - z[k])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("some passive coefficient is non-positive");
            for k in 0..n {
                x[k] += alpha * (z[k] - x[k]);
                if passive[k] && (k == hit || x[k] <= 0.0) {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
        }
    }
    Err(Error::NonConvergence { estimate: x[0], error: f64::NAN })
}

/// Householder least squares for a small dense system.
pub fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, |r| r.len());
    if n == 0 || m < n {
        return Err(Error::Degenerate("underdetermined least-squares system".into()));
    }
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let mut b = rhs.to_vec();
    for k in 0..n {
        let norm = (k..m).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate("rank-deficient least-squares system".into()));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for col in k..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * a[i][col]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..m {
                a[i][col] -= f * v[i - k];
            }
        }
        let dot: f64 = (k..m).map(|i| v[i - k] * b[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..m {
            b[i] -= f * v[i - k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = ((k + 1)..n).map(|c| a[k][c] * x[c]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Ok(x)
}

fn inverse_m(z: Complex64, sigma: f64) -> Result<Complex64> {
    let one = Complex64::new(1.0, 0.0);
    let d = cln_gamma(one - z)?;
    let mut s = Complex64::new(0.0, 0.0);
    for j in 0..3 {
        let num = cln_gamma(Complex64::new(shift(j, sigma), 0.0) - z)?;
        s += weight(j, sigma) * (num - d).exp();
    }
    Ok(one / (z * s))
}

/// 𝒢(V) by quadrature along the two rays z = vertex + r·e^{±iα}.
///
/// For V > 1 the rays are opened towards the left half plane instead, where
/// V^z decays; no singularity of V^z/M(z) lies between the two contours.
pub fn g_eval_full(v: f64, spec: &ContourSpec, m: &MellinStructure) -> Result<GValue> {
    spec.validate()?;
    if !(v > 0.0) || v == 1.0 || !v.is_finite() {
        return Err(Error::Domain(format!("V = {v} must be positive and different from 1")));
    }
    let sigma = m.params.sigma;
    let lv = v.ln();
    let angle = if v < 1.0 { spec.half_angle } else { PI - spec.half_angle };
    let decay = angle.cos() * lv; // negative on both branches
    let r_max = spec.r_max.unwrap_or_else(|| (36.0 / decay.abs()).max(50.0));

    let (gx, gw) = gauss_legendre(spec.nodes);
    let up = Complex64::from_polar(1.0, angle);
    let down = up.conj();
    let vertex = Complex64::new(spec.vertex, 0.0);
    let mut upper = Complex64::new(0.0, 0.0);
    let mut lower = Complex64::new(0.0, 0.0);
    let mut a = 0.0;
    let mut h = 0.25;
    while a < r_max {
        let b = (a + h).min(r_max);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in gx.iter().zip(&gw) {
            let r = mid + half * x;
            let zu = vertex + up * r;
            let zd = vertex + down * r;
            upper += (zu * lv).exp() * inverse_m(zu, sigma)? * up * (w * half);
            lower += (zd * lv).exp() * inverse_m(zd, sigma)? * down * (w * half);
        }
        a = b;
        h *= 1.3;
    }
    let z_end = vertex + up * r_max;
    let tail_bound = 2.0 * (z_end * lv).exp().norm() * inverse_m(z_end, sigma)?.norm() / decay.abs() / (2.0 * PI);
    // traverse the lower ray inwards and the upper ray outwards
    let total = (upper - lower) / Complex64::new(0.0, -2.0 * PI);
    if tail_bound > 1e-11 {
        return Err(Error::Truncation { tail_bound });
    }
    Ok(GValue { value: total.re, imag: total.im, tail_bound })
}

pub fn g_eval(v: f64, spec: &ContourSpec, m: &MellinStructure) -> Result<f64> {
    Ok(g_eval_full(v, spec, m)?.value)
}
