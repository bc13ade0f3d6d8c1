//! Scale-invariant one-sample t-test e-statistic.
//!
//! The data are `N(δσ, σ²)` with unknown `σ`, and the null and alternative
//! fix the effect size `δ = μ/σ`. The likelihood ratio of the maximal
//! invariant `x/‖x‖` depends on the data only through `n` and the direction
//! statistic `w = Σxᵢ/‖x‖`:
//!
//! `ln T* = −n(δ₁² − δ₀²)/2 + ln E[e^{δ₁wR}] − ln E[e^{δ₀wR}]`, with `R ~ χ_n`.
//!
//! Three independent routes are provided: the Haar integral over `σ`, the
//! noncentral-t density of the t-statistic, and the direction form above.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::{task_rng, McEstimate, MeanAccumulator};
use crate::quad::{self, Hint, QuadOptions};
use crate::specfun::{ln_chi_mgf, ln_gamma};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestHypotheses {
    pub delta0: f64,
    pub delta1: f64,
}

impl TTestHypotheses {
    pub fn new(delta0: f64, delta1: f64) -> Result<Self> {
        if !delta0.is_finite() || !delta1.is_finite() {
            return Err(Error::domain("ttest", "effect sizes must be finite"));
        }
        Ok(TTestHypotheses { delta0, delta1 })
    }
}

/// Running `(n, x̄, Σ(xᵢ − x̄)²)`, updated in O(1) per observation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TSufficientStats {
    n: usize,
    mean: f64,
    sum_sq_dev: f64,
}

impl TSufficientStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_data(data: &[f64]) -> Self {
        let mut s = Self::new();
        data.iter().for_each(|&x| s.push(x));
        s
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.sum_sq_dev += d * (x - self.mean);
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sum_sq_dev(&self) -> f64 {
        self.sum_sq_dev
    }

    /// `Σxᵢ²`.
    pub fn sum_sq(&self) -> f64 {
        self.sum_sq_dev + self.n as f64 * self.mean * self.mean
    }

    /// `w = Σxᵢ / ‖x‖ ∈ [−√n, √n]`.
    pub fn direction(&self) -> Result<f64> {
        let norm = self.sum_sq().sqrt();
        if self.n == 0 || !(norm > 0.0) {
            return Err(Error::DegenerateSample("all observations are zero".into()));
        }
        let nf = self.n as f64;
        Ok((nf * self.mean / norm).clamp(-nf.sqrt(), nf.sqrt()))
    }
}

/// `t = √n x̄ / s` with `s² = Σ(xᵢ − x̄)²/(n − 1)`.
pub fn t_statistic(stats: &TSufficientStats) -> Result<f64> {
    if stats.n < 2 {
        return Err(Error::DegenerateSample("t-statistic needs n >= 2".into()));
    }
    if !(stats.sum_sq_dev > 0.0) {
        return Err(Error::DegenerateSample("zero sample variance".into()));
    }
    let nf = stats.n as f64;
    let s = (stats.sum_sq_dev / (nf - 1.0)).sqrt();
    Ok(nf.sqrt() * stats.mean / s)
}

/// `ln T*` from the direction statistic; valid for every `n ≥ 1`.
pub fn log_evalue_direction(n: usize, w: f64, hyp: &TTestHypotheses) -> Result<f64> {
    if n == 0 {
        return Err(Error::DegenerateSample("no observations".into()));
    }
    if hyp.delta0 == hyp.delta1 {
        return Ok(0.0);
    }
    let nf = n as f64;
    Ok(-0.5 * nf * (hyp.delta1 * hyp.delta1 - hyp.delta0 * hyp.delta0) + ln_chi_mgf(n, hyp.delta1 * w)?
        - ln_chi_mgf(n, hyp.delta0 * w)?)
}

/// `ln T*` for the data summarized by `stats` (`n ≥ 1`, data not all zero).
pub fn log_evalue(stats: &TSufficientStats, hyp: &TTestHypotheses) -> Result<f64> {
    log_evalue_direction(stats.n, stats.direction()?, hyp)
}

/// Log density of the noncentral t distribution,
/// `ln t_ν(t) − λ²/2 + ln E[exp(λt R/√(ν + t²))]` with `R ~ χ_{ν+1}`.
pub fn noncentral_t_logpdf(t: f64, df: usize, noncentrality: f64) -> Result<f64> {
    if df == 0 {
        return Err(Error::domain("noncentral_t_logpdf", "df must be at least 1"));
    }
    if !t.is_finite() || !noncentrality.is_finite() {
        return Err(Error::domain("noncentral_t_logpdf", "arguments must be finite"));
    }
    let nu = df as f64;
    let central = ln_gamma((nu + 1.0) / 2.0)? - ln_gamma(nu / 2.0)? - 0.5 * (nu * PI).ln()
        - 0.5 * (nu + 1.0) * (t * t / nu).ln_1p();
    let lambda = noncentrality;
    let a = lambda * t / (nu + t * t).sqrt();
    Ok(central - 0.5 * lambda * lambda + ln_chi_mgf(df + 1, a)?)
}

pub fn log_evalue_noncentral_t(stats: &TSufficientStats, hyp: &TTestHypotheses) -> Result<f64> {
    let t = t_statistic(stats)?;
    let df = stats.n - 1;
    let root_n = (stats.n as f64).sqrt();
    Ok(noncentral_t_logpdf(t, df, root_n * hyp.delta1)? - noncentral_t_logpdf(t, df, root_n * hyp.delta0)?)
}

/// Likelihood ratio of the t-statistic between `λ = √n δ₁` and `λ = √n δ₀`.
pub fn evalue_noncentral_t(stats: &TSufficientStats, hyp: &TTestHypotheses) -> Result<f64> {
    log_evalue_noncentral_t(stats, hyp).map(f64::exp)
}

/// Integration settings for the `σ` integrals under right Haar measure.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HaarQuadrature {
    pub opts: QuadOptions,
}

/// `ln ∫ σ^{−n} Π φ((xᵢ − δσ)/σ) dσ/σ` up to δ-free constants, integrated over
/// `u = ln σ ∈ [lo, hi]`.
fn ln_haar_integral(n: usize, sum: f64, sum_sq: f64, delta: f64, lo: f64, hi: f64, opts: &QuadOptions) -> Result<f64> {
    let nf = n as f64;
    // Stationary point in y = 1/σ of −n ln σ − (Σx²y² − 2δΣx y + nδ²)/2.
    let y = (delta * sum + (delta * delta * sum * sum + 4.0 * nf * sum_sq).sqrt()) / (2.0 * sum_sq);
    let width = 1.0 / (sum_sq * y * y + nf).sqrt();
    let hint = Hint::new(-y.ln(), width);
    quad::ln_integrate(
        |u| {
            let e = (-u).exp();
            -nf * u - 0.5 * (sum_sq * e * e - 2.0 * delta * sum * e + nf * delta * delta)
        },
        lo,
        hi,
        &hint,
        opts,
    )
}

pub fn log_evalue_haar(data: &[f64], hyp: &TTestHypotheses, quad: &HaarQuadrature) -> Result<f64> {
    if data.len() < 2 {
        return Err(Error::DegenerateSample("Haar e-value needs n >= 2".into()));
    }
    let sum: f64 = data.iter().sum();
    let sum_sq: f64 = data.iter().map(|x| x * x).sum();
    if !(sum_sq > 0.0) || !sum_sq.is_finite() {
        return Err(Error::DegenerateSample("all observations are zero".into()));
    }
    if hyp.delta0 == hyp.delta1 {
        return Ok(0.0);
    }
    let n = data.len();
    let (lo, hi) = (f64::NEG_INFINITY, f64::INFINITY);
    Ok(ln_haar_integral(n, sum, sum_sq, hyp.delta1, lo, hi, &quad.opts)?
        - ln_haar_integral(n, sum, sum_sq, hyp.delta0, lo, hi, &quad.opts)?)
}

/// Ratio of the alternative and null likelihoods integrated against `dσ/σ`.
pub fn evalue_haar(data: &[f64], hyp: &TTestHypotheses, quad: &HaarQuadrature) -> Result<f64> {
    log_evalue_haar(data, hyp, quad).map(f64::exp)
}

/// `ln ∫ N(δ; 0, κ²) T*(δ vs 0) dδ` from `(n, w)`.
pub fn log_mixture_evalue_direction(n: usize, w: f64, kappa: f64, opts: &QuadOptions) -> Result<f64> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::domain("mixture_evalue", format!("kappa = {kappa} must be positive")));
    }
    if n == 0 {
        return Err(Error::DegenerateSample("no observations".into()));
    }
    let nf = n as f64;
    let prec = nf + 1.0 / (kappa * kappa);
    // ln E[e^{aR}] ≈ a²/2 + (n−1) ln a for large a gives the mode and curvature.
    let curv = (prec - w * w).max(1.0 / (kappa * kappa));
    let guess = w.signum() * ((nf - 1.0) / curv).sqrt().min(10.0 * kappa);
    let scale = (1.0 / curv.sqrt()).min(kappa);
    let ln_norm = -kappa.ln() - 0.5 * (2.0 * PI).ln();
    let mut failure = None;
    let ln_int = quad::ln_integrate(
        |d| match ln_chi_mgf(n, d * w) {
            Ok(v) => -0.5 * prec * d * d + v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        f64::NEG_INFINITY,
        f64::INFINITY,
        &Hint::new(guess, scale),
        opts,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(ln_int? + ln_norm)
}

pub fn log_mixture_evalue(data: &[f64], kappa: f64, opts: &QuadOptions) -> Result<f64> {
    let stats = TSufficientStats::from_data(data);
    log_mixture_evalue_direction(stats.n(), stats.direction()?, kappa, opts)
}

/// Normal-prior mixture over the alternative effect size, null `δ₀ = 0`.
pub fn mixture_evalue(data: &[f64], kappa: f64, opts: &QuadOptions) -> Result<f64> {
    log_mixture_evalue(data, kappa, opts).map(f64::exp)
}

/// Closed form of the two-observation normal-prior mixture.
pub fn t2_closed_form(x1: f64, x2: f64, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::domain("t2_closed_form", "kappa must be positive"));
    }
    let ss = x1 * x1 + x2 * x2;
    if !(ss > 0.0) {
        return Err(Error::domain("t2_closed_form", "undefined at the origin"));
    }
    let k2 = kappa * kappa;
    let d = x1 - x2;
    Ok((2.0 * k2 + 1.0).sqrt() * ss / (k2 * d * d + ss))
}

/// KL estimates for the right-Haar prior truncated to `σ ∈ [1/c, c]`, drawn
/// with common random numbers across all `c`, together with the maximal
/// invariant KL on the same draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaarKlTrend {
    pub c: Vec<f64>,
    pub kl: Vec<McEstimate>,
    /// Paired differences `KL_c − KL(Q^M, P^M)`.
    pub gap: Vec<McEstimate>,
    /// Paired differences `KL_{c_i} − KL_{c_{i+1}}` between consecutive truncations.
    pub steps: Vec<McEstimate>,
    pub kl_invariant: McEstimate,
}

/// Draws `σ = c^{2U−1}` and `X = σ(δ₁ + Z)` and averages
/// `ln m_{δ₁}(X) − ln m_{δ₀}(X)` for the truncated-Haar mixtures `m_δ`.
pub fn haar_kl_trend(cs: &[f64], hyp: &TTestHypotheses, n: usize, mc_samples: usize, seed: u64) -> Result<HaarKlTrend> {
    if !(2..=3).contains(&n) {
        return Err(Error::domain("truncated_haar_kl", "n must be 2 or 3"));
    }
    if let Some(c) = cs.iter().find(|&&c| !(c > 1.0) || !c.is_finite()) {
        return Err(Error::domain("truncated_haar_kl", format!("c = {c} must exceed 1")));
    }
    if mc_samples < 2 {
        return Err(Error::domain("truncated_haar_kl", "need at least two samples"));
    }
    let opts = QuadOptions::default();
    let mut rng = task_rng(seed, 0);
    let mut kl = vec![MeanAccumulator::default(); cs.len()];
    let mut gap = vec![MeanAccumulator::default(); cs.len()];
    let mut steps = vec![MeanAccumulator::default(); cs.len().saturating_sub(1)];
    let mut inv = MeanAccumulator::default();
    let mut z = vec![0.0; n];
    let mut row = vec![0.0; cs.len()];
    for i in 0..mc_samples {
        let v: f64 = rand::Rng::random(&mut rng);
        z.iter_mut().for_each(|zi| *zi = StandardNormal.sample(&mut rng));
        let base: Vec<f64> = z.iter().map(|zi| hyp.delta1 + zi).collect();
        let stats = TSufficientStats::from_data(&base);
        let ln_t = log_evalue(&stats, hyp).map_err(|_| Error::NonFinite { index: i })?;
        inv.push(ln_t);
        for (j, &c) in cs.iter().enumerate() {
            let l = c.ln();
            let sigma = ((2.0 * v - 1.0) * l).exp();
            let sum = sigma * base.iter().sum::<f64>();
            let sum_sq = sigma * sigma * stats.sum_sq();
            let ln1 = ln_haar_integral(n, sum, sum_sq, hyp.delta1, -l, l, &opts)?;
            let ln0 = ln_haar_integral(n, sum, sum_sq, hyp.delta0, -l, l, &opts)?;
            let d = ln1 - ln0;
            if !d.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            kl[j].push(d);
            gap[j].push(d - ln_t);
            row[j] = d;
        }
        for (j, s) in steps.iter_mut().enumerate() {
            s.push(row[j] - row[j + 1]);
        }
    }
    let kl: Vec<McEstimate> = kl.iter().map(|a| a.estimate()).collect();
    if hyp.delta0 != hyp.delta1 && kl.iter().any(|e| !(e.std_error > 0.0)) {
        return Err(Error::Quadrature("degenerate Monte Carlo variance".into()));
    }
    Ok(HaarKlTrend {
        c: cs.to_vec(),
        kl,
        gap: gap.iter().map(|a| a.estimate()).collect(),
        steps: steps.iter().map(|a| a.estimate()).collect(),
        kl_invariant: inv.estimate(),
    })
}

/// Monte Carlo estimate of `KL(Π_c Q, Π_c P)` for the truncated right-Haar prior.
pub fn truncated_haar_kl(c: f64, hyp: &TTestHypotheses, n: usize, mc_samples: usize, seed: u64) -> Result<McEstimate> {
    Ok(haar_kl_trend(&[c], hyp, n, mc_samples, seed)?.kl[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hyp(d0: f64, d1: f64) -> TTestHypotheses {
        TTestHypotheses::new(d0, d1).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    /// Density of `(Z + λ)/√(V/ν)` by Simpson's rule over `s = √v`:
    /// `f(t) = ∫ φ(ts/√ν − λ) (s/√ν) χ²_ν(s²) 2s ds`.
    fn nct_pdf_oracle(t: f64, df: usize, lambda: f64) -> f64 {
        let nu = df as f64;
        let f = |s: f64| {
            if s <= 0.0 {
                return 0.0;
            }
            let z = t * s / nu.sqrt() - lambda;
            let ln_chi2 = (nu - 2.0) * s.ln() - s * s / 2.0 - (nu / 2.0) * 2f64.ln() - libm::lgamma(nu / 2.0);
            (-0.5 * z * z - 0.5 * (2.0 * PI).ln() + ln_chi2).exp() * 2.0 * s * s / nu.sqrt()
        };
        let (a, b, m) = (0.0, 20.0, 200_000);
        let h = (b - a) / m as f64;
        let mut acc = f(a) + f(b);
        for i in 1..m {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn t_statistic_examples() {
        assert!(matches!(
            t_statistic(&TSufficientStats::from_data(&[1.0, 1.0])),
            Err(Error::DegenerateSample(_))
        ));
        assert_eq!(t_statistic(&TSufficientStats::from_data(&[1.0, -1.0, 1.0, -1.0])).unwrap(), 0.0);
        let t = t_statistic(&TSufficientStats::from_data(&[1.0, 2.0, 3.0])).unwrap();
        assert!((t - 2.0 * 3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn streaming_stats_match_batch() {
        let data = [0.3, 1.2, -0.4, 0.8, 0.5, 2.2, -1.7];
        let s = TSufficientStats::from_data(&data);
        let mean = data.iter().sum::<f64>() / 7.0;
        let ssd: f64 = data.iter().map(|x| (x - mean) * (x - mean)).sum();
        assert!((s.mean() - mean).abs() < 1e-15);
        assert!((s.sum_sq_dev() - ssd).abs() < 1e-14);
        assert!((s.sum_sq() - data.iter().map(|x| x * x).sum::<f64>()).abs() < 1e-14);
    }

    #[test]
    fn nct_logpdf_examples() {
        let cauchy = noncentral_t_logpdf(0.0, 1, 0.0).unwrap();
        assert!((cauchy - (1.0 / PI).ln()).abs() < 1e-14);
        let a = noncentral_t_logpdf(1.3, 6, 0.7).unwrap();
        let b = noncentral_t_logpdf(-1.3, 6, -0.7).unwrap();
        assert!((a - b).abs() < 1e-14);
        let v = noncentral_t_logpdf(2.0, 4, 1.5).unwrap();
        assert!((v - -1.292_765_891_109_246_2).abs() < 1e-12, "{v}");
    }

    #[test]
    fn nct_logpdf_matches_defining_integral() {
        for &(t, df, lam) in &[(2.0, 4, 1.5), (-0.5, 3, 1.0), (1.0, 10, -2.0), (4.0, 2, 3.0)] {
            let want = nct_pdf_oracle(t, df, lam).ln();
            let got = noncentral_t_logpdf(t, df, lam).unwrap();
            assert!((got - want).abs() < 1e-9, "({t}, {df}, {lam}): {got} vs {want}");
        }
    }

    #[test]
    fn haar_examples() {
        let data = [0.3, 1.2, -0.4, 0.8, 0.5];
        let q = HaarQuadrature::default();
        assert_eq!(evalue_haar(&data, &hyp(0.7, 0.7), &q).unwrap(), 1.0);
        let h = hyp(0.0, 1.0);
        let e = evalue_haar(&data, &h, &q).unwrap();
        let scaled: Vec<f64> = data.iter().map(|x| 37.5 * x).collect();
        assert!(rel(evalue_haar(&scaled, &h, &q).unwrap(), e) < 1e-12);
        let nct = evalue_noncentral_t(&TSufficientStats::from_data(&data), &h).unwrap();
        assert!(rel(e, nct) < 1e-6, "{e} vs {nct}");
    }

    #[test]
    fn noncentral_t_examples() {
        let s = TSufficientStats::from_data(&[0.3, 1.2, -0.4, 0.8, 0.5]);
        assert_eq!(evalue_noncentral_t(&s, &hyp(0.4, 0.4)).unwrap(), 1.0);
        let zero_t = TSufficientStats::from_data(&[1.0, -1.0, 2.0, -2.0]);
        assert!((evalue_noncentral_t(&zero_t, &hyp(-0.8, 0.8)).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn direction_form_agrees_with_noncentral_t() {
        let s = TSufficientStats::from_data(&[0.3, 1.2, -0.4, 0.8, 0.5]);
        for &(d0, d1) in &[(0.0, 1.0), (-1.0, 2.0), (2.0, -2.0)] {
            let h = hyp(d0, d1);
            let a = log_evalue(&s, &h).unwrap();
            let b = log_evalue_noncentral_t(&s, &h).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn single_observation_is_the_sign_ratio() {
        let h = hyp(0.5, 1.5);
        for &x in &[2.0, -0.3] {
            let got = log_evalue(&TSufficientStats::from_data(&[x]), &h).unwrap();
            let s = f64::signum(x);
            let want = (crate::specfun::norm_cdf(1.5 * s) / crate::specfun::norm_cdf(0.5 * s)).ln();
            assert!((got - want).abs() < 1e-13);
        }
    }

    #[test]
    fn mixture_examples() {
        let opts = QuadOptions::default();
        for &x in &[0.1, -1.0, 5.0] {
            assert!((mixture_evalue(&[x], 200.0, &opts).unwrap() - 1.0).abs() < 1e-10);
        }
        let m = mixture_evalue(&[0.7, -1.9], 3.0, &opts).unwrap();
        let c = t2_closed_form(0.7, -1.9, 3.0).unwrap();
        assert!(rel(m, c) < 1e-8, "{m} vs {c}");
        let tiny = mixture_evalue(&[0.7, 2.0, 1.1], 1e-6, &opts).unwrap();
        assert!((tiny - 1.0).abs() < 1e-9);
    }

    #[test]
    fn closed_form_examples() {
        assert!((t2_closed_form(1.0, 1.0, 200.0).unwrap() - 80001f64.sqrt()).abs() < 1e-10);
        assert!((t2_closed_form(1.0, -1.0, 1.0).unwrap() - 3f64.sqrt() / 3.0).abs() < 1e-15);
        assert!((t2_closed_form(0.3, 2.0, 1e-9).unwrap() - 1.0).abs() < 1e-12);
        assert!(t2_closed_form(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn truncated_kl_is_zero_for_equal_hypotheses() {
        let e = truncated_haar_kl(10.0, &hyp(0.5, 0.5), 2, 100, 1).unwrap();
        assert!(e.mean.abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn evalues_are_scale_invariant(
            data in proptest::collection::vec(-5.0f64..5.0, 2..12),
            c in 1e-3f64..1e3,
            d0 in -2.0f64..2.0,
            d1 in -2.0f64..2.0,
        ) {
            prop_assume!(data.iter().map(|x| x * x).sum::<f64>() > 1e-6);
            let h = hyp(d0, d1);
            let scaled: Vec<f64> = data.iter().map(|x| c * x).collect();
            let (s, sc) = (TSufficientStats::from_data(&data), TSufficientStats::from_data(&scaled));
            let a = log_evalue(&s, &h).unwrap();
            let b = log_evalue(&sc, &h).unwrap();
            prop_assert!((a.exp() - b.exp()).abs() <= 1e-12 * a.exp().max(1e-300) + 1e-300);
            let q = HaarQuadrature::default();
            let ha = log_evalue_haar(&data, &h, &q).unwrap();
            let hb = log_evalue_haar(&scaled, &h, &q).unwrap();
            prop_assert!((ha - hb).abs() <= 1e-11, "{} vs {}", ha, hb);
        }
    }
}
