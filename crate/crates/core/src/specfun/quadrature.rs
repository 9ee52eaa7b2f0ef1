//! Adaptive Gauss–Kronrod quadrature with declared endpoint power laws.
//!
//! An endpoint behaving like (x − a)^{−p} is removed by the substitution
//! x = a + (b − a)·t^{1/(1−p)}, which turns the integrand into a bounded one.
//! A tail decaying like x^{−s} on [c, ∞) is handled by x = c·u^{−1/(s−1)}.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// integrand ~ (x − a)^{−left_exponent} near the left endpoint
    pub left_exponent: f64,
    /// integrand ~ (b − x)^{−right_exponent} near the right endpoint
    pub right_exponent: f64,
    /// integrand ~ x^{−tail_exponent} as x → ∞ (infinite intervals only)
    pub tail_exponent: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-13,
            rel_tol: 1e-11,
            left_exponent: 0.0,
            right_exponent: 0.0,
            tail_exponent: 2.0,
            max_subdivisions: 4000,
        }
    }
}

impl QuadratureSpec {
    pub fn tolerances(mut self, abs_tol: f64, rel_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self.rel_tol = rel_tol;
        self
    }
    pub fn left(mut self, p: f64) -> Self {
        self.left_exponent = p;
        self
    }
    pub fn right(mut self, p: f64) -> Self {
        self.right_exponent = p;
        self
    }
    pub fn tail(mut self, s: f64) -> Self {
        self.tail_exponent = s;
        self
    }
    pub fn subdivisions(mut self, n: usize) -> Self {
        self.max_subdivisions = n;
        self
    }

    fn validate(&self, infinite: bool) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::Domain("quadrature tolerances must be positive".into()));
        }
        if self.max_subdivisions < 1 {
            return Err(Error::Domain("max_subdivisions must be at least 1".into()));
        }
        if !(self.left_exponent < 1.0 && self.right_exponent < 1.0) {
            return Err(Error::Domain("endpoint exponents must be below 1".into()));
        }
        if infinite && !(self.tail_exponent > 1.0) {
            return Err(Error::Domain("tail exponent must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn kronrod15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Segment {
    piece: usize,
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

type Piece<'a> = Box<dyn Fn(f64) -> f64 + 'a>;

fn guarded(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

fn left_piece<'a, F: Fn(f64, f64, f64) -> f64>(f: &'a F, a: f64, m: f64, b: f64, p: f64) -> Piece<'a> {
    if p <= 0.0 {
        return Box::new(move |t| {
            let d = (m - a) * t;
            let x = a + d;
            guarded(f(x, d, b - x) * (m - a))
        });
    }
    let q = 1.0 / (1.0 - p);
    Box::new(move |t| {
        let d = (m - a) * t.powf(q);
        if d == 0.0 {
            return 0.0;
        }
        let x = a + d;
        guarded(f(x, d, b - x) * q * d / t)
    })
}

fn right_piece<'a, F: Fn(f64, f64, f64) -> f64>(f: &'a F, a: f64, m: f64, b: f64, p: f64) -> Piece<'a> {
    let q = 1.0 / (1.0 - p);
    Box::new(move |t| {
        let d = (b - m) * t.powf(q);
        if d == 0.0 {
            return 0.0;
        }
        let x = b - d;
        guarded(f(x, x - a, d) * q * d / t)
    })
}

fn tail_piece<'a, F: Fn(f64, f64, f64) -> f64>(f: &'a F, a: f64, c: f64, s: f64) -> Piece<'a> {
    let q = 1.0 / (s - 1.0);
    Box::new(move |u| {
        let x = c * u.powf(-q);
        if !x.is_finite() {
            return 0.0;
        }
        guarded(f(x, x - a, f64::INFINITY) * q * x / u)
    })
}

/// Integrate `f` over [a, b] (b may be +∞) honouring the declared endpoint behaviour.
pub fn integrate_singular<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<Quadrature> {
    integrate_with_distances(|x, _, _| f(x), a, b, spec)
}

/// Like `integrate_singular`, but the integrand also receives x − a and b − x,
/// computed without cancellation near the singular endpoints.
pub fn integrate_with_distances<F: Fn(f64, f64, f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<Quadrature> {
    let infinite = b == f64::INFINITY;
    spec.validate(infinite)?;
    if !(a.is_finite() && b > a) {
        if a == b {
            return Ok(Quadrature { value: 0.0, error: 0.0, evaluations: 0 });
        }
        return Err(Error::Domain(format!("bad interval [{a}, {b}]")));
    }

    let mut pieces: Vec<Piece<'_>> = Vec::with_capacity(2);
    if infinite {
        let c = a + a.abs().max(1.0);
        pieces.push(left_piece(&f, a, c, b, spec.left_exponent));
        pieces.push(tail_piece(&f, a, c, spec.tail_exponent));
    } else if spec.right_exponent > 0.0 {
        let m = 0.5 * (a + b);
        pieces.push(left_piece(&f, a, m, b, spec.left_exponent));
        pieces.push(right_piece(&f, a, m, b, spec.right_exponent));
    } else {
        pieces.push(left_piece(&f, a, b, b, spec.left_exponent));
    }

    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for (i, p) in pieces.iter().enumerate() {
        let (value, error) = kronrod15(p.as_ref(), 0.0, 1.0);
        evaluations += 15;
        heap.push(Segment { piece: i, a: 0.0, b: 1.0, value, error });
    }

    let totals = |heap: &BinaryHeap<Segment>| {
        let mut v = 0.0;
        let mut comp = 0.0;
        let mut e = 0.0;
        for s in heap.iter() {
            let y = s.value - comp;
            let t = v + y;
            comp = (t - v) - y;
            v = t;
            e += s.error;
        }
        (v, e)
    };

    let mut splits = 0;
    loop {
        let (value, error) = totals(&heap);
        if error <= spec.abs_tol.max(spec.rel_tol * value.abs()) {
            return Ok(Quadrature { value, error, evaluations });
        }
        if splits >= spec.max_subdivisions {
            return Err(Error::NonConvergence { estimate: value, error });
        }
        let worst = heap.pop().expect("heap never empty");
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b {
            // interval exhausted at machine precision
            heap.push(Segment { error: 0.0, ..worst });
            continue;
        }
        let g = pieces[worst.piece].as_ref();
        let (v1, e1) = kronrod15(g, worst.a, m);
        let (v2, e2) = kronrod15(g, m, worst.b);
        evaluations += 30;
        heap.push(Segment { piece: worst.piece, a: worst.a, b: m, value: v1, error: e1 });
        heap.push(Segment { piece: worst.piece, a: m, b: worst.b, value: v2, error: e2 });
        splits += 1;
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_singularity_at_left() {
        let spec = QuadratureSpec::default().left(0.8);
        let q = integrate_singular(|x: f64| x.powf(-0.8), 0.0, 1.0, &spec).unwrap();
        assert!((q.value - 5.0).abs() < 1e-10, "{}", q.value);
    }

    #[test]
    fn phi_defining_integral() {
        let sigma = 1.8;
        let spec = QuadratureSpec::default().left(sigma - 1.0).right(2.0 - sigma);
        let f = |e: f64, _: f64, r: f64| {
            let bracket = if e < 0.5 { ((sigma - 2.0) * (-e).ln_1p()).exp_m1() } else { r.powf(sigma - 2.0) - 1.0 };
            e.powf(-sigma) * bracket
        };
        let q = integrate_with_distances(f, 0.0, 1.0, &spec).unwrap();
        assert!((q.value - 1.25).abs() < 1e-8, "{}", q.value);
    }

    #[test]
    fn regular_and_right_singular_on_long_intervals() {
        let q = integrate_singular(|x: f64| x * x, 0.0, 3.0, &QuadratureSpec::default()).unwrap();
        assert!((q.value - 9.0).abs() < 1e-12, "{}", q.value);
        let spec = QuadratureSpec::default().right(0.2);
        let q = integrate_with_distances(|_, _, d: f64| d.powf(-0.2), 0.0, 1.0, &spec).unwrap();
        assert!((q.value - 1.25).abs() < 1e-10, "{}", q.value);
        let q = integrate_with_distances(|_, _, d: f64| d.powf(-0.2), 2.0, 4.0, &spec).unwrap();
        assert!((q.value - 1.25 * 2f64.powf(0.8)).abs() < 1e-10, "{}", q.value);
    }

    #[test]
    fn infinite_tail() {
        let spec = QuadratureSpec::default().tail(1.8);
        let q = integrate_singular(|v: f64| (1.0 + v).powf(-1.8), 0.0, f64::INFINITY, &spec).unwrap();
        assert!((q.value - 1.25).abs() < 1e-9, "{}", q.value);
    }

    #[test]
    fn nonconvergence_reports_estimate() {
        let spec = QuadratureSpec::default().subdivisions(2);
        let r = integrate_singular(|x: f64| (50.0 * x).sin() / x.sqrt(), 0.0, 1.0, &spec);
        assert!(matches!(r, Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn rejects_bad_spec() {
        let spec = QuadratureSpec::default().tolerances(0.0, 1e-8);
        assert!(integrate_singular(|x| x, 0.0, 1.0, &spec).is_err());
    }

    #[test]
    fn gauss_legendre_exact_on_polynomials() {
        let (x, w) = gauss_legendre(10);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((s - 2.0 / 19.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }
}
