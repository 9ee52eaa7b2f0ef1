//! Frobenius-type series for the rescaled fundamental solution
//!
//!   Λ(ξ) = Σ_{j=0..2} Σ_{m≥0} a[m][j]·ξ^{σ−2+j/3+m},   a[0][0] = 1,
//!
//! together with the remainder H(ξ) = Λ(ξ) − ξ^{σ−2} and a quadrature-based
//! residual of the nonlocal equation ℒ(Λ) = 0.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mellin::MellinStructure;
use crate::specfun::{integrate_with_distances, omega, QuadratureSpec, SigmaParams};

pub const DEFAULT_ORDER: usize = 200;
pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_SWITCH: f64 = 0.9;
pub const DEFAULT_REL_TOL: f64 = 1e-5;

/// Weights c_ℓ of the two lower-order collision terms.
const F_WEIGHT: [f64; 3] = [1.0, 2.0, 1.0];

/// Taylor coefficients of c_ℓ(1−ξ)^{−ℓ/3}.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorF {
    pub l: usize,
    pub coeffs: Vec<f64>,
}

pub fn f_taylor(l: usize, order: usize) -> Result<TaylorF> {
    if !(l == 1 || l == 2) {
        return Err(Error::Domain(format!("l must be 1 or 2, got {l}")));
    }
    let mut coeffs = Vec::with_capacity(order + 1);
    let mut b = F_WEIGHT[l];
    coeffs.push(b);
    for i in 1..=order {
        b *= (l as f64 / 3.0 + i as f64 - 1.0) / i as f64;
        coeffs.push(b);
    }
    Ok(TaylorF { l, coeffs })
}

/// Neumaier compensated sum.
#[derive(Default, Clone, Copy)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }
    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

#[derive(Debug, Clone)]
pub struct LambdaSeries {
    pub params: SigmaParams,
    pub order: usize,
    /// coeffs[m][j] = a_{m,j}
    pub coeffs: Vec<[f64; 3]>,
    pub delta: f64,
    /// smallest C with max_j |a[k][j]| ≤ C(1+δ)^k for all k ≤ K
    pub growth_constant: f64,
    pub series_switch: f64,
    pub rel_tol: f64,
    far_field: Option<Arc<MellinStructure>>,
}

/// Series of order K with default δ, switch point and the contour route
/// attached for ξ beyond the switch.
pub fn build(params: &SigmaParams, order: usize) -> Result<LambdaSeries> {
    let series = LambdaSeries::build_with(params, order, DEFAULT_DELTA)?;
    let mellin = MellinStructure::build(params)?;
    Ok(series.with_far_field(Arc::new(mellin)))
}

impl LambdaSeries {
    /// Fill the coefficient table in the order k ascending, then s = 0, 1, 2.
    pub fn build_with(params: &SigmaParams, order: usize, delta: f64) -> Result<Self> {
        if !params.is_core() {
            return Err(Error::Domain(format!("sigma = {} is outside (5/3, 2)", params.sigma)));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Domain(format!("delta = {delta} must lie in (0, 1)")));
        }
        let b = [Vec::new(), f_taylor(1, order)?.coeffs, f_taylor(2, order)?.coeffs];
        let mut a = vec![[0.0f64; 3]; order + 1];
        a[0][0] = 1.0;

        let mut omega_tab = vec![[[0.0f64; 3]; 3]; order + 1];
        for (m, row) in omega_tab.iter_mut().enumerate() {
            for (l, r) in row.iter_mut().enumerate() {
                for (j, v) in r.iter_mut().enumerate() {
                    *v = omega(l, j, m, params);
                }
            }
        }

        let growth = 1.0 + delta;
        let mut running_c: f64 = 1.0;
        for k in 0..=order {
            for s in 0..3 {
                if k == 0 && s == 0 {
                    continue;
                }
                let mut rhs = Compensated::default();
                for l in 1..3 {
                    for j in 0..3 {
                        if (j + l) % 3 != s {
                            continue;
                        }
                        // τ = 1 when j + ℓ wraps past 3: one power of ξ is carried over
                        let carry = (j + l) / 3;
                        if carry > k {
                            continue;
                        }
                        let top = k - carry;
                        for m in 0..=top {
                            rhs.add(b[l][top - m] * omega_tab[m][l][j] * a[m][j]);
                        }
                    }
                }
                let value = -rhs.value() / omega_tab[k][0][s];
                if !value.is_finite() {
                    return Err(Error::Overflow { k, s, value });
                }
                let ratio = value.abs() / growth.powi(k as i32);
                if k >= 10 && ratio > 10.0 * running_c {
                    return Err(Error::Overflow { k, s, value });
                }
                running_c = running_c.max(ratio);
                a[k][s] = value;
            }
        }

        let growth_constant = a
            .iter()
            .enumerate()
            .map(|(k, row)| row.iter().fold(0.0f64, |acc, v| acc.max(v.abs())) / growth.powi(k as i32))
            .fold(0.0, f64::max);

        Ok(Self {
            params: *params,
            order,
            coeffs: a,
            delta,
            growth_constant,
            series_switch: DEFAULT_SWITCH,
            rel_tol: DEFAULT_REL_TOL,
            far_field: None,
        })
    }

    pub fn with_far_field(mut self, mellin: Arc<MellinStructure>) -> Self {
        self.far_field = Some(mellin);
        self
    }

    pub fn far_field(&self) -> Option<&MellinStructure> {
        self.far_field.as_deref()
    }

    pub fn with_switch(mut self, xi: f64) -> Self {
        self.series_switch = xi;
        self
    }

    pub fn with_rel_tol(mut self, tol: f64) -> Self {
        self.rel_tol = tol;
        self
    }

    /// Copy with one coefficient replaced (used to probe the residual's sensitivity).
    pub fn with_coeff(&self, m: usize, j: usize, value: f64) -> Self {
        let mut s = self.clone();
        s.coeffs[m][j] = value;
        s
    }

    /// Largest |a[k][j]| / (1+δ)^k; equals the growth constant by construction.
    pub fn certificate_holds(&self) -> bool {
        let g = 1.0 + self.delta;
        self.coeffs.iter().enumerate().all(|(k, row)| {
            row.iter().all(|v| v.abs() <= self.growth_constant * g.powi(k as i32) * (1.0 + 1e-12))
        })
    }

    fn exponent(&self, j: usize) -> f64 {
        self.params.sigma - 2.0 + j as f64 / 3.0
    }

    /// Estimated magnitude of the truncated tail Σ_{m>K}: the last rows of the
    /// table, combined across j at this ξ, continued geometrically with ratio (1+δ)ξ.
    pub fn tail_estimate(&self, xi: f64) -> f64 {
        let q = (1.0 + self.delta) * xi;
        if q >= 1.0 {
            return f64::INFINITY;
        }
        let first = self.order.saturating_sub(4);
        let (c1, c2) = (xi.cbrt(), xi.cbrt() * xi.cbrt());
        let anchor = self.coeffs[first..]
            .iter()
            .map(|r| (r[0] + r[1] * c1 + r[2] * c2).abs())
            .fold(0.0f64, f64::max);
        anchor * xi.powf(self.exponent(0)) * xi.powi(self.order as i32) * q / (1.0 - q)
    }

    /// Truncated sum and the sum of absolute terms (its rounding scale).
    fn poly(&self, xi: f64, skip_leading: bool) -> (f64, f64) {
        let mut total = Compensated::default();
        let mut magnitude = 0.0;
        for j in 0..3 {
            let mut acc = 0.0;
            let mut acc_abs = 0.0;
            for m in (0..=self.order).rev() {
                let c = if skip_leading && m == 0 && j == 0 { 0.0 } else { self.coeffs[m][j] };
                acc = acc * xi + c;
                acc_abs = acc_abs * xi + c.abs();
            }
            let p = xi.powf(self.exponent(j));
            total.add(acc * p);
            magnitude += acc_abs * p;
        }
        (total.value(), magnitude)
    }

    /// Estimated error of the truncated series at ξ: tail plus rounding in
    /// the cancelling sum. For σ close to 5/3 the coefficients grow
    /// polynomially and the rounding part dominates well before ξ = 0.9.
    pub fn error_estimate(&self, xi: f64) -> f64 {
        let (_, magnitude) = self.poly(xi, false);
        self.tail_estimate(xi) + 64.0 * f64::EPSILON * magnitude
    }

    fn check_tail(&self, xi: f64, value: f64, magnitude: f64) -> Result<()> {
        let tail = self.tail_estimate(xi);
        let rounding = 64.0 * f64::EPSILON * magnitude;
        if tail + rounding <= self.rel_tol * value.abs() {
            return Ok(());
        }
        if rounding > self.rel_tol * value.abs() {
            // more terms cannot help
            return Err(Error::TailTooLarge { xi, required_order: usize::MAX });
        }
        let q = (1.0 + self.delta) * xi;
        let required_order = if q < 1.0 {
            let extra = (tail / (self.rel_tol * value.abs())).ln() / -xi.ln();
            self.order + extra.ceil() as usize + 1
        } else {
            usize::MAX
        };
        Err(Error::TailTooLarge { xi, required_order })
    }

    /// Λ(ξ) from the truncated series alone.
    pub fn series_value(&self, xi: f64) -> Result<f64> {
        if !(xi > 0.0 && xi < 1.0) {
            return Err(Error::Domain(format!("xi = {xi} must lie in (0, 1)")));
        }
        let (v, magnitude) = self.poly(xi, false);
        self.check_tail(xi, v, magnitude)?;
        Ok(v)
    }

    /// Λ(ξ). Beyond the switch point, or wherever the series cannot meet its
    /// tolerance, the contour route Λ(ξ) = 𝒢(1−ξ)/K̄ is used when attached.
    pub fn eval(&self, xi: f64) -> Result<f64> {
        if !(xi > 0.0 && xi < 1.0) {
            return Err(Error::Domain(format!("xi = {xi} must lie in (0, 1)")));
        }
        match &self.far_field {
            Some(m) if xi > self.series_switch => m.lambda_from_g(1.0 - xi),
            Some(m) => match self.series_value(xi) {
                Err(Error::TailTooLarge { .. }) => m.lambda_from_g(1.0 - xi),
                other => other,
            },
            None => self.series_value(xi),
        }
    }

    /// True when `eval` at ξ is answered by the series itself.
    pub fn uses_series(&self, xi: f64) -> bool {
        xi <= self.series_switch && self.series_value(xi).is_ok()
    }

    /// H(ξ) = Λ(ξ) − ξ^{σ−2}, computed without the cancellation.
    pub fn h_eval(&self, xi: f64) -> Result<f64> {
        if !(xi > 0.0 && xi < 1.0) {
            return Err(Error::Domain(format!("xi = {xi} must lie in (0, 1)")));
        }
        if self.far_field.is_some() && !self.uses_series(xi) {
            return Ok(self.eval(xi)? - xi.powf(self.exponent(0)));
        }
        let (full, magnitude) = self.poly(xi, false);
        self.check_tail(xi, full, magnitude)?;
        Ok(self.poly(xi, true).0)
    }

    /// Λ(y) − Λ(ξ) for y = ξ − η, accurate when η ≪ ξ.
    pub fn difference(&self, xi: f64, y: f64, eta: f64) -> f64 {
        let mut total = Compensated::default();
        if eta < 0.5 * xi {
            let l = (-eta / xi).ln_1p();
            for j in 0..3 {
                let p0 = self.exponent(j);
                let mut pow = xi.powf(p0);
                for m in 0..=self.order {
                    let p = p0 + m as f64;
                    total.add(self.coeffs[m][j] * pow * (p * l).exp_m1());
                    pow *= xi;
                }
            }
        } else {
            for j in 0..3 {
                let p0 = self.exponent(j);
                let mut px = xi.powf(p0);
                let mut py = y.powf(p0);
                for m in 0..=self.order {
                    total.add(self.coeffs[m][j] * (py - px));
                    px *= xi;
                    py *= y;
                }
            }
        }
        total.value()
    }

    /// ℒ(Λ)(ξ), which vanishes for the exact solution.
    pub fn residual(&self, xi: f64) -> Result<f64> {
        if !(xi > 0.0 && xi <= 0.9) {
            return Err(Error::Domain(format!("residual needs 0 < xi <= 0.9, got {xi}")));
        }
        let sigma = self.params.sigma;
        let lam = self.series_value(xi)?;
        let diff = |eta: f64, y: f64| self.difference(xi, y, eta);
        let mut out = -d_plus(sigma - 1.0, xi, sigma, &diff)? + xi.powf(1.0 - sigma) * lam / (sigma - 1.0);
        for k in 1..3 {
            let alpha = sigma - 1.0 - k as f64 / 3.0;
            let f_k = F_WEIGHT[k] * (1.0 - xi).powf(-(k as f64) / 3.0);
            out -= f_k * (d_plus(alpha, xi, sigma, &diff)? - xi.powf(-alpha) * lam / alpha);
        }
        Ok(out)
    }
}

/// D^α₊G(ξ) = ∫₀^ξ η^{−α−1}[G(ξ−η) − G(ξ)]dη, where `diff(η, ξ−η)` returns the
/// bracket. The bracket may blow up like (ξ−η)^{σ−2} at the far end.
pub fn d_plus<D: Fn(f64, f64) -> f64>(alpha: f64, xi: f64, sigma: f64, diff: &D) -> Result<f64> {
    let spec = QuadratureSpec::default()
        .left(alpha)
        .right(2.0 - sigma)
        .tolerances(1e-14, 1e-11)
        .subdivisions(20_000);
    let q = integrate_with_distances(|eta, _, y| eta.powf(-alpha - 1.0) * diff(eta, y), 0.0, xi, &spec)?;
    Ok(q.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::omega;
    use proptest::prelude::*;

    fn series(sigma: f64) -> LambdaSeries {
        LambdaSeries::build_with(&SigmaParams::core(sigma).unwrap(), DEFAULT_ORDER, DEFAULT_DELTA).unwrap()
    }

    #[test]
    fn taylor_coefficients() {
        let b1 = f_taylor(1, 1).unwrap().coeffs;
        let b2 = f_taylor(2, 1).unwrap().coeffs;
        assert_eq!((b1[0], b2[0]), (2.0, 1.0));
        assert!((b1[1] - 2.0 / 3.0).abs() < 1e-15 && (b2[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(f_taylor(3, 1).is_err());
        for l in 1..3 {
            let b = f_taylor(l, 300).unwrap().coeffs;
            assert!(b.iter().all(|&v| v > 0.0));
            // coefficients decay, so any δ > 0 envelope holds with C = b[0]
            let g: f64 = 1.0 + 0.01 / 3.0;
            assert!(b.iter().enumerate().all(|(k, &v)| v <= b[0] * g.powi(k as i32)));
        }
    }

    #[test]
    fn leading_coefficients() {
        let p = SigmaParams::core(1.8).unwrap();
        let s = series(1.8);
        assert_eq!(s.coeffs[0][0], 1.0);
        let expected = -2.0 * omega(1, 0, 0, &p) / omega(0, 1, 0, &p);
        assert!((s.coeffs[0][1] - expected).abs() < 1e-14);
        // reference values from an independent high-precision run
        assert!((s.coeffs[0][1] + 1.5417362).abs() < 1e-6);
        assert!((s.coeffs[0][2] - 0.14669846).abs() < 1e-7);
    }

    #[test]
    fn growth_certificate() {
        for k in 0..6 {
            let s = series(1.70 + 0.05 * k as f64);
            assert!(s.certificate_holds());
            assert!(s.growth_constant.is_finite());
        }
        assert!(series(1.8).growth_constant < 10.0);
    }

    #[test]
    fn reference_values() {
        let s = series(1.8);
        for &(xi, v) in &[(0.1, 0.6707246923), (0.3, 0.3482876084), (0.5, 0.2360359168), (0.7, 0.1723961851)] {
            let got = s.eval(xi).unwrap();
            assert!(((got - v) / v).abs() < 1e-8, "{xi}: {got}");
        }
    }

    #[test]
    fn tail_too_large_reports_order() {
        let s = LambdaSeries::build_with(&SigmaParams::core(1.8).unwrap(), 20, DEFAULT_DELTA).unwrap();
        match s.series_value(0.9) {
            Err(Error::TailTooLarge { required_order, .. }) => assert!(required_order > 20),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn small_xi_asymptotics() {
        // Λ ξ^{2−σ} − 1 = a[0][1] ξ^{1/3} + O(ξ^{2/3})
        let s = series(1.8);
        for &xi in &[1e-6, 1e-5, 1e-4] {
            let d = s.eval(xi).unwrap() * xi.powf(0.2) - 1.0;
            let lead = s.coeffs[0][1] * xi.powf(1.0 / 3.0);
            assert!((d - lead).abs() < 0.15 * xi.powf(2.0 / 3.0) + 3.0 * xi, "{xi}");
        }
        assert!((s.eval(1e-12).unwrap() * 1e-12f64.powf(0.2) - 1.0).abs() < 1e-2);
    }

    #[test]
    fn remainder_definition_and_bound() {
        let s = series(1.8);
        let h = s.h_eval(0.5).unwrap();
        assert!((h - (s.eval(0.5).unwrap() - 0.5f64.powf(-0.2))).abs() < 1e-13);
        let ratios: Vec<f64> = (1..=40)
            .map(|i| {
                let xi = 10f64.powf(-8.0 + 0.18 * i as f64);
                (s.h_eval(xi).unwrap() / xi.powf(-0.2 + 1.0 / 3.0)).abs()
            })
            .collect();
        let c = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(c < 2.0, "{c}");
    }

    #[test]
    fn fractional_difference_cancels_leading_power() {
        let sigma: f64 = 1.8;
        let p = sigma - 2.0;
        for &xi in &[0.05, 0.4, 0.9] {
            let diff = |eta: f64, y: f64| {
                if eta < 0.5 * xi {
                    xi.powf(p) * (p * (-eta / xi).ln_1p()).exp_m1()
                } else {
                    y.powf(p) - xi.powf(p)
                }
            };
            let v = -d_plus(sigma - 1.0, xi, sigma, &diff).unwrap() + xi.powf(1.0 - sigma) * xi.powf(p) / (sigma - 1.0);
            assert!(v.abs() < 1e-9 * xi.powf(-1.0), "{xi}: {v}");
        }
    }

    #[test]
    fn residual_small_and_sensitive() {
        let s = series(1.8);
        let scale = 0.3f64.powf(-0.2);
        assert!(s.residual(0.3).unwrap().abs() < 1e-4 * scale);
        let bad = s.with_coeff(0, 0, 1.1);
        assert!(bad.residual(0.3).unwrap().abs() > 1e-2 * scale);
    }

    #[test]
    fn difference_bound() {
        let s = series(1.8);
        let mut worst: f64 = 0.0;
        for i in 1..10 {
            let xi = 0.1 * i as f64;
            for k in 1..20 {
                let zeta = 0.05 * k as f64;
                let d = (s.eval(xi * (1.0 - zeta)).unwrap() - s.eval(xi).unwrap()).abs();
                worst = worst.max(d / (xi.powf(-0.2) * zeta * (1.0 - zeta).powf(-0.2)));
            }
        }
        assert!(worst < 1.0, "{worst}");
    }

    fn full(k: usize) -> &'static LambdaSeries {
        static CACHE: std::sync::OnceLock<Vec<LambdaSeries>> = std::sync::OnceLock::new();
        &CACHE.get_or_init(|| {
            (0..6).map(|i| build(&SigmaParams::core(1.70 + 0.05 * i as f64).unwrap(), DEFAULT_ORDER).unwrap()).collect()
        })[k]
    }

    #[test]
    fn far_field_takes_over_when_series_is_ill_conditioned() {
        let s = full(0);
        assert!(!s.uses_series(0.85));
        assert!(s.uses_series(0.2));
        let v = s.eval(0.85).unwrap();
        assert!(v > 0.0 && v < 0.85f64.powf(-0.3));
    }

    proptest! {
        #[test]
        fn positive_and_below_leading_power(sig in 0usize..6, xi in 0.001f64..0.999) {
            let s = full(sig);
            let v = s.eval(xi).unwrap();
            prop_assert!(v > 0.0 && v <= xi.powf(s.params.sigma - 2.0));
        }
    }
}
