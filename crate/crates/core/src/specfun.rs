//! Special functions behind the closed-form likelihood ratios.
//!
//! Everything that can overflow has a log-space twin (`ln_*`); the plain
//! variants just exponentiate. The chi moment generating function is the
//! workhorse: the noncentral-t density, the regression direction density and
//! the Wishart lower-triangular MGF all reduce to it.

use std::f64::consts::{LN_2, PI, SQRT_2};

use crate::error::{Error, Result};
use crate::quad::{self, Hint, QuadOptions};

/// Truncation controls for the Kummer M series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPolicy {
    pub rel_tol: f64,
    pub max_terms: usize,
    /// Above this argument the large-z asymptotic expansion is tried first.
    pub switch_z: f64,
}

impl Default for EvalPolicy {
    fn default() -> Self {
        EvalPolicy {
            rel_tol: 1e-15,
            max_terms: 10_000,
            switch_z: 50.0,
        }
    }
}

impl EvalPolicy {
    pub fn new(rel_tol: f64, max_terms: usize, switch_z: f64) -> Result<Self> {
        if !(rel_tol > 0.0) || max_terms == 0 || !(switch_z > 0.0) {
            return Err(Error::domain(
                "EvalPolicy::new",
                "need rel_tol > 0, max_terms >= 1, switch_z > 0",
            ));
        }
        Ok(EvalPolicy {
            rel_tol,
            max_terms,
            switch_z,
        })
    }
}

pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain("ln_gamma", format!("x = {x} must be positive")));
    }
    Ok(libm::lgamma(x))
}

/// `ln Γ_d(a) = d(d−1)/4 · ln π + Σ_{i=1..d} ln Γ(a − (i−1)/2)`.
pub fn ln_multivariate_gamma(d: usize, a: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::domain("ln_multivariate_gamma", "d must be at least 1"));
    }
    if !(a > (d as f64 - 1.0) / 2.0) {
        return Err(Error::domain(
            "ln_multivariate_gamma",
            format!("a = {a} must exceed (d-1)/2 = {}", (d as f64 - 1.0) / 2.0),
        ));
    }
    let df = d as f64;
    let mut acc = df * (df - 1.0) / 4.0 * PI.ln();
    for i in 0..d {
        acc += libm::lgamma(a - i as f64 / 2.0);
    }
    Ok(acc)
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn ln_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x.fract() == 0.0
}

/// A real number stored as sign and log-magnitude.
#[derive(Debug, Clone, Copy)]
struct Signed {
    sign: f64,
    ln_abs: f64,
}

impl Signed {
    fn value(self) -> f64 {
        self.sign * self.ln_abs.exp()
    }
}

const RESCALE: f64 = 1e-280;

fn kummer_m_series(a: f64, b: f64, z: f64, policy: &EvalPolicy) -> Result<Signed> {
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut ln_scale = 0.0f64;
    for s in 0..policy.max_terms {
        let sf = s as f64;
        term *= (a + sf) * z / ((b + sf) * (sf + 1.0));
        sum += term;
        if term == 0.0 {
            break;
        }
        if sum.abs() > 1e280 || term.abs() > 1e280 {
            sum *= RESCALE;
            term *= RESCALE;
            ln_scale -= RESCALE.ln();
        }
        let next = ((a + sf + 1.0) * z / ((b + sf + 1.0) * (sf + 2.0))).abs();
        // Later ratios never exceed this bound once the factorial dominates.
        let bound = if a <= b { next.max(z / (sf + 2.0)) } else { next };
        if sf + 1.0 > a.abs() && bound < 1.0 && term.abs() * bound / (1.0 - bound) <= policy.rel_tol * sum.abs() {
            return finish(sum, ln_scale);
        }
    }
    if term == 0.0 {
        return finish(sum, ln_scale);
    }
    Err(Error::NonConvergence {
        function: "kummer_m",
        terms: policy.max_terms,
    })
}

fn finish(sum: f64, ln_scale: f64) -> Result<Signed> {
    Ok(Signed {
        sign: if sum < 0.0 { -1.0 } else { 1.0 },
        ln_abs: sum.abs().ln() + ln_scale,
    })
}

/// `₁F₁(a,b,z) ~ Γ(b)/Γ(a) e^z z^{a−b} Σ_s (b−a)_s (1−a)_s / (s! z^s)`.
/// Returns `None` when the expansion does not reach the tolerance.
fn kummer_m_asymptotic(a: f64, b: f64, z: f64, policy: &EvalPolicy) -> Option<Signed> {
    if is_nonpositive_integer(a) {
        return None;
    }
    let terminating = is_nonpositive_integer(b - a) || is_nonpositive_integer(1.0 - a);
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut prev = f64::INFINITY;
    let mut converged = false;
    for s in 0..policy.max_terms {
        let sf = s as f64;
        term *= (b - a + sf) * (1.0 - a + sf) / ((sf + 1.0) * z);
        if term == 0.0 {
            converged = true;
            break;
        }
        if !term.is_finite() {
            return None;
        }
        if !terminating && term.abs() > prev {
            return None;
        }
        sum += term;
        prev = term.abs();
        if term.abs() <= policy.rel_tol * sum.abs() && !terminating {
            converged = true;
            break;
        }
    }
    if !converged || !sum.is_finite() || sum == 0.0 {
        return None;
    }
    let (lg_b, sign_b) = libm::lgamma_r(b);
    let (lg_a, sign_a) = libm::lgamma_r(a);
    let sign = sign_b as f64 * sign_a as f64 * sum.signum();
    Some(Signed {
        sign,
        ln_abs: lg_b - lg_a + z + (a - b) * z.ln() + sum.abs().ln(),
    })
}

fn kummer_m_signed(a: f64, b: f64, z: f64, policy: &EvalPolicy) -> Result<Signed> {
    if is_nonpositive_integer(b) {
        return Err(Error::domain("kummer_m", format!("b = {b} is a non-positive integer")));
    }
    if !(z >= 0.0) || !z.is_finite() || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain("kummer_m", format!("need finite a, b and z >= 0 (z = {z})")));
    }
    if z == 0.0 {
        return Ok(Signed { sign: 1.0, ln_abs: 0.0 });
    }
    if z > policy.switch_z {
        if let Some(v) = kummer_m_asymptotic(a, b, z, policy) {
            return Ok(v);
        }
    }
    kummer_m_series(a, b, z, policy)
}

/// Confluent hypergeometric function `₁F₁(a, b, z)` for `z ≥ 0`.
pub fn kummer_m(a: f64, b: f64, z: f64, policy: &EvalPolicy) -> Result<f64> {
    kummer_m_signed(a, b, z, policy).map(Signed::value)
}

/// `ln ₁F₁(a, b, z)`; errors if the function is not positive at the point.
pub fn ln_kummer_m(a: f64, b: f64, z: f64, policy: &EvalPolicy) -> Result<f64> {
    let v = kummer_m_signed(a, b, z, policy)?;
    if v.sign < 0.0 || v.ln_abs == f64::NEG_INFINITY {
        return Err(Error::domain("ln_kummer_m", "function value is not positive"));
    }
    Ok(v.ln_abs)
}

fn softplus(u: f64) -> f64 {
    if u > 35.0 {
        u
    } else {
        u.exp().ln_1p()
    }
}

/// `ln U(a, b, z)` from `U = Γ(a)⁻¹ ∫₀^∞ e^{−zt} t^{a−1} (1+t)^{b−a−1} dt`,
/// integrated over `u = ln t`.
pub fn ln_kummer_u(a: f64, b: f64, z: f64) -> Result<f64> {
    ln_kummer_u_with(a, b, z, &QuadOptions::default())
}

pub fn ln_kummer_u_with(a: f64, b: f64, z: f64, opts: &QuadOptions) -> Result<f64> {
    if !(a > 0.0) || !(z > 0.0) || !b.is_finite() || !a.is_finite() || !z.is_finite() {
        return Err(Error::domain("kummer_u", format!("need a > 0 and z > 0 (a = {a}, z = {z})")));
    }
    let c = b - a - 1.0;
    let guess = (a / (z + (a - c).abs() + 1e-300)).ln();
    let hint = Hint::new(guess, 0.5 / a.sqrt().max(1.0));
    let ln_int = quad::ln_integrate(
        |u| a * u - z * u.exp() + c * softplus(u),
        f64::NEG_INFINITY,
        f64::INFINITY,
        &hint,
        opts,
    )
    .map_err(|e| Error::Quadrature(format!("kummer_u({a}, {b}, {z}): {e}")))?;
    Ok(ln_int - libm::lgamma(a))
}

/// Tricomi confluent hypergeometric function `U(a, b, z)`.
pub fn kummer_u(a: f64, b: f64, z: f64) -> Result<f64> {
    ln_kummer_u(a, b, z).map(f64::exp)
}

/// `ln E[e^{aX}]` for `X` chi-distributed with `k` degrees of freedom.
pub fn ln_chi_mgf(k: usize, a: f64) -> Result<f64> {
    ln_chi_mgf_with(k, a, &EvalPolicy::default())
}

pub fn ln_chi_mgf_with(k: usize, a: f64, policy: &EvalPolicy) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("chi_mgf", "k must be at least 1"));
    }
    if !a.is_finite() {
        return Err(Error::domain("chi_mgf", format!("a = {a} is not finite")));
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    let kf = k as f64;
    let z = 0.5 * a * a;
    if a > 0.0 {
        let even = ln_kummer_m(kf / 2.0, 0.5, z, policy)?;
        let odd = (SQRT_2 * a).ln() + libm::lgamma((kf + 1.0) / 2.0) - libm::lgamma(kf / 2.0)
            + ln_kummer_m((kf + 1.0) / 2.0, 1.5, z, policy)?;
        Ok(quad::log_add_exp(even, odd))
    } else {
        Ok(libm::lgamma(kf) - (kf - 1.0) * LN_2 - libm::lgamma(kf / 2.0) + ln_kummer_u(kf / 2.0, 0.5, z)?)
    }
}

pub fn chi_mgf(k: usize, a: f64) -> Result<f64> {
    ln_chi_mgf(k, a).map(f64::exp)
}
