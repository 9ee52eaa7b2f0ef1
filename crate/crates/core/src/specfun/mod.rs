//! Special functions, the exponent parameter type and a singular quadrature oracle.

pub mod gamma;
pub mod quadrature;

pub use gamma::{beta, cgamma, cln_gamma, crgamma, digamma, gamma, gamma_ratio, ln_gamma, rgamma, sin_pi};
pub use quadrature::{gauss_legendre, integrate_singular, integrate_with_distances, Quadrature, QuadratureSpec};

use crate::error::{Error, Result};

/// Which side of σ = 2 we are on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Regime {
    /// 5/3 < σ < 2: self-similar growth with exponent μ = 1/(σ − 5/3)
    Core,
    /// σ > 2: only the heuristic cubic growth law applies
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SigmaParams {
    pub sigma: f64,
    /// NaN outside the core regime
    pub mu: f64,
    pub regime: Regime,
}

impl SigmaParams {
    /// Accepts σ in (5/3, 2) or σ > 2.
    pub fn new(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma <= 5.0 / 3.0 {
            return Err(Error::Domain(format!(
                "sigma = {sigma} must exceed 5/3: the collision rate diverges otherwise"
            )));
        }
        if sigma == 2.0 {
            return Err(Error::Domain("sigma = 2 is the borderline case and is not supported".into()));
        }
        if sigma < 2.0 {
            Ok(Self { sigma, mu: 1.0 / (sigma - 5.0 / 3.0), regime: Regime::Core })
        } else {
            Ok(Self { sigma, mu: f64::NAN, regime: Regime::Heuristic })
        }
    }

    /// Same as `new` but insists on 5/3 < σ < 2.
    pub fn core(sigma: f64) -> Result<Self> {
        let p = Self::new(sigma)?;
        if p.regime != Regime::Core {
            return Err(Error::Domain(format!("sigma = {sigma} is outside (5/3, 2)")));
        }
        Ok(p)
    }

    pub fn is_core(&self) -> bool {
        self.regime == Regime::Core
    }
}

/// Φ_α(β) = (1/α)[1 − βΓ(1−α)Γ(β)/Γ(1−α+β)], using βΓ(β) = Γ(β+1).
pub fn phi(alpha: f64, beta_: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || !(beta_ > -1.0) {
        return Err(Error::Domain(format!("phi needs 0 < alpha < 1 and beta > -1, got ({alpha}, {beta_})")));
    }
    if beta_ == 0.0 {
        return Ok(0.0);
    }
    let s = 1.0 - alpha + beta_;
    let ratio = if s > 0.0 {
        gamma(1.0 - alpha)? * gamma_ratio(beta_ + 1.0, s)
    } else {
        gamma(1.0 - alpha)? * gamma(beta_ + 1.0)? * rgamma(s)
    };
    Ok((1.0 - ratio) / alpha)
}

/// ω(ℓ, j, m; σ) = [(σ−2+j/3+m)/(σ−1−ℓ/3)]·B(2−σ+ℓ/3, σ−2+j/3+m).
///
/// Evaluated as Γ(x)Γ(y+1)/Γ(x+y) so that ω(0,0,0) = 0 exactly and large m
/// does not overflow.
pub fn omega(l: usize, j: usize, m: usize, params: &SigmaParams) -> f64 {
    debug_assert!(l <= 2 && j <= 2);
    let sigma = params.sigma;
    let x = 2.0 - sigma + l as f64 / 3.0;
    let y = sigma - 2.0 + j as f64 / 3.0 + m as f64;
    if l == 0 && j == 0 && m == 0 {
        return 0.0;
    }
    let gx = gamma(x).expect("2 - sigma + l/3 lies in (0, 1)");
    gx * gamma_ratio(y + 1.0, x + y) / (sigma - 1.0 - l as f64 / 3.0)
}

/// Smallest and largest value of |ω(ℓ,j,m)|/(1+m)^{σ−1−ℓ/3} over ℓ, j and
/// 0 ≤ m ≤ m_max, excluding the identically zero ω(0,0,0).
pub fn omega_envelope(params: &SigmaParams, m_max: usize) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for l in 0..3 {
        for j in 0..3 {
            for m in 0..=m_max {
                if l + j + m == 0 {
                    continue;
                }
                let scale = (1.0 + m as f64).powf(params.sigma - 1.0 - l as f64 / 3.0);
                let r = omega(l, j, m, params).abs() / scale;
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
    }
    (lo, hi)
}
