//! Quadrature and Monte Carlo harness producing pass/fail reports.
//!
//! Monte Carlo work is split into fixed-size chunks, each drawing from its own
//! counter-based stream, and partial results are merged in chunk order. Reports
//! are therefore bit-for-bit identical for a given seed whatever the thread
//! count.

mod suites;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::{task_rng, McEstimate, MeanAccumulator};
use crate::quad::{self, Hint, QuadOptions};
use crate::specfun::{ln_norm_pdf, norm_cdf};
use crate::ttest::t2_closed_form;

pub use suites::{run_suite, SuiteOptions, SUITES};

/// Replications per Monte Carlo chunk; also the granularity of parallelism.
pub const CHUNK: usize = 1024;

/// Largest relative change tolerated when the quadrature node count is doubled.
pub const NODE_DOUBLING_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    pub estimate: f64,
    /// Zero for deterministic checks.
    pub std_error: f64,
    pub target: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub replications: usize,
    pub seed: u64,
}

impl VerificationReport {
    /// Passes iff `|estimate − target| ≤ tolerance`.
    pub fn two_sided(name: impl Into<String>, estimate: f64, std_error: f64, target: f64, tolerance: f64) -> Self {
        VerificationReport {
            name: name.into(),
            estimate,
            std_error,
            target,
            tolerance,
            passed: (estimate - target).abs() <= tolerance,
            replications: 0,
            seed: 0,
        }
    }

    /// Passes iff `estimate ≤ target + tolerance`; the name gets a `[<=]` suffix.
    pub fn at_most(name: impl Into<String>, estimate: f64, std_error: f64, target: f64, tolerance: f64) -> Self {
        let mut r = Self::two_sided(format!("{} [<=]", name.into()), estimate, std_error, target, tolerance);
        r.passed = estimate <= target + tolerance;
        r
    }

    /// Passes iff `estimate ≥ target − tolerance`; the name gets a `[>=]` suffix.
    pub fn at_least(name: impl Into<String>, estimate: f64, std_error: f64, target: f64, tolerance: f64) -> Self {
        let mut r = Self::two_sided(format!("{} [>=]", name.into()), estimate, std_error, target, tolerance);
        r.passed = estimate >= target - tolerance;
        r
    }

    /// Two-sided check of a Monte Carlo mean at `n_se` standard errors.
    pub fn mc(name: impl Into<String>, est: &McEstimate, target: f64, n_se: f64) -> Self {
        Self::two_sided(name, est.mean, est.std_error, target, n_se * est.std_error).with_replications(est.samples)
    }

    pub fn with_replications(mut self, replications: usize) -> Self {
        self.replications = replications;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Seed for a named sub-task, stable across platforms and releases.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    // FNV-1a of the label, then one splitmix64 round mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d4_9ba1_33b1_11eb);
    z ^ (z >> 31)
}

/// Means of `width` statistics computed on common draws.
pub fn mc_expectations<S, F, G>(sampler: F, statistic: G, width: usize, replications: usize, seed: u64) -> Result<Vec<McEstimate>>
where
    F: Fn(&mut ChaCha8Rng) -> Result<S> + Sync,
    G: Fn(&S, &mut [f64]) -> Result<()> + Sync,
{
    if replications < 100 {
        return Err(Error::domain("mc_expectation", "need at least 100 replications"));
    }
    if width == 0 {
        return Err(Error::domain("mc_expectation", "need at least one statistic"));
    }
    let chunks = replications.div_ceil(CHUNK);
    let partial: Vec<Result<Vec<MeanAccumulator>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = task_rng(seed, c as u64);
            let mut acc = vec![MeanAccumulator::default(); width];
            let mut out = vec![0.0; width];
            let start = c * CHUNK;
            for index in start..replications.min(start + CHUNK) {
                let s = sampler(&mut rng)?;
                statistic(&s, &mut out)?;
                for (a, &v) in acc.iter_mut().zip(&out) {
                    if !v.is_finite() {
                        return Err(Error::NonFinite { index });
                    }
                    a.push(v);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![MeanAccumulator::default(); width];
    for part in partial {
        for (t, a) in total.iter_mut().zip(part?) {
            *t = t.merge(a);
        }
    }
    Ok(total.iter().map(MeanAccumulator::estimate).collect())
}

/// Sample mean and standard error of `statistic(sampler(rng))`.
pub fn mc_expectation<S, F, G>(sampler: F, statistic: G, replications: usize, seed: u64) -> Result<McEstimate>
where
    F: Fn(&mut ChaCha8Rng) -> Result<S> + Sync,
    G: Fn(&S) -> Result<f64> + Sync,
{
    let est = mc_expectations(
        sampler,
        |s: &S, out: &mut [f64]| {
            out[0] = statistic(s)?;
            Ok(())
        },
        1,
        replications,
        seed,
    )?;
    Ok(est[0])
}

/// Runs `eval` at the given options and with doubled nodes; fails when the
/// two disagree by more than `NODE_DOUBLING_TOL` relative.
pub fn node_doubling_checked(what: &str, opts: &QuadOptions, mut eval: impl FnMut(&QuadOptions) -> Result<f64>) -> Result<f64> {
    let base = eval(opts)?;
    let fine = eval(&opts.refined(2))?;
    let change = ((fine - base) / base).abs();
    if !(change <= NODE_DOUBLING_TOL) {
        return Err(Error::Quadrature(format!(
            "{what}: relative change {change:e} under node doubling"
        )));
    }
    Ok(fine)
}

fn f_function_with(x: f64, kappa: f64, opts: &QuadOptions) -> Result<f64> {
    if x == 0.0 || !x.is_finite() {
        return Err(Error::domain("f_function", format!("x = {x} must be finite and nonzero")));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::domain("f_function", format!("kappa = {kappa} must be positive")));
    }
    // T̃₂(x, ·) has a spike of height √(2κ²+1) and width ≈ √2|x|/κ at y = x.
    let hint = Hint::new(0.0, 1.0).with_peak(x, std::f64::consts::SQRT_2 * x.abs() / kappa);
    let mut failure = None;
    let ln_int = quad::ln_integrate(
        |y| match t2_closed_form(x, y, kappa) {
            Ok(t) => ln_norm_pdf(y) + t.ln(),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        f64::NEG_INFINITY,
        f64::INFINITY,
        &hint,
        opts,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(ln_int?.exp())
}

/// `f(x) = E[T̃₂(x, X₂)]` for `X₂ ~ N(0, 1)` and the two-observation mixture
/// e-value with prior scale `kappa`.
pub fn f_function(x: f64, kappa: f64) -> Result<f64> {
    node_doubling_checked("f_function", &QuadOptions::default(), |o| f_function_with(x, kappa, o))
}

/// Grid scanned for sign changes of `f − 1`.
const CROSSING_GRID: (f64, f64, usize) = (0.01, 10.0, 1000);

/// The two roots `a < b` of `f(x) = 1` on the positive axis, with `f > 1`
/// between them. The sign changes are located on a grid first and then
/// refined by bisection to `1e-10`.
pub fn find_unit_crossings(kappa: f64) -> Result<(f64, f64)> {
    let (lo, hi, steps) = CROSSING_GRID;
    let g = |x: f64| f_function(x, kappa).map(|f| f - 1.0);
    let h = (hi - lo) / steps as f64;
    let xs: Vec<f64> = (0..=steps).map(|i| lo + h * i as f64).collect();
    let gs: Vec<f64> = xs.par_iter().map(|&x| g(x)).collect::<Result<_>>()?;
    let up = (1..xs.len()).find(|&i| gs[i - 1] < 0.0 && gs[i] >= 0.0);
    let up = up.ok_or(Error::NoSignChange { lo, hi })?;
    let down = (up + 1..xs.len()).find(|&i| gs[i - 1] > 0.0 && gs[i] <= 0.0);
    let down = down.ok_or(Error::NoSignChange { lo: xs[up], hi })?;
    let a = bisect(&g, xs[up - 1], xs[up], gs[up - 1])?;
    let b = bisect(&g, xs[down - 1], xs[down], gs[down - 1])?;
    Ok((a, b))
}

fn bisect(g: &impl Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, g_lo: f64) -> Result<f64> {
    let lo_sign = g_lo.signum();
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        let v = g(mid)?;
        if v == 0.0 {
            return Ok(mid);
        }
        if v.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn window_integral(kappa: f64, a: f64, b: f64, opts: &QuadOptions) -> Result<f64> {
    let mut failure = None;
    let hint = Hint::new(0.5 * (a + b), 0.25 * (b - a));
    let v = quad::integrate_positive(
        |x| match f_function_with(x, kappa, opts) {
            Ok(f) => (ln_norm_pdf(x)).exp() * f,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        a,
        b,
        &hint,
        opts,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    v
}

/// `E[T̃_N]` under `N(0, 1)` data for the rule that stops after one
/// observation iff `|X₁| ∉ [a, b]`:
/// `P(|X₁| ∉ [a, b]) + 2∫_a^b φ(x) f(x) dx`.
pub fn counterexample_expectation(kappa: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0) || !(b >= a) || !b.is_finite() {
        return Err(Error::domain("counterexample_expectation", format!("need 0 < a <= b (a = {a}, b = {b})")));
    }
    let outside = 1.0 - 2.0 * (norm_cdf(b) - norm_cdf(a));
    if a == b {
        return Ok(outside);
    }
    let inside = node_doubling_checked("counterexample_expectation", &QuadOptions::default(), |o| {
        window_integral(kappa, a, b, o)
    })?;
    Ok(outside + 2.0 * inside)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn f_is_even_and_straddles_one() {
        for x in [0.3, 1.0, 2.5] {
            let (p, m) = (f_function(x, 200.0).unwrap(), f_function(-x, 200.0).unwrap());
            assert!((p - m).abs() < 1e-10, "{x}: {p} vs {m}");
        }
        assert!(f_function(1.0, 200.0).unwrap() > 1.0);
        assert!(f_function(3.0, 200.0).unwrap() < 1.0);
        assert!(f_function(0.0, 200.0).is_err());
    }

    #[test]
    fn f_matches_a_plain_riemann_sum() {
        // Independent check: midpoint rule on a fine uniform grid around the spike.
        let (x, kappa) = (0.9, 20.0);
        let mut s = 0.0;
        let h = 1e-4;
        let mut y: f64 = -12.0 + 0.5 * h;
        while y < 12.0 {
            s += (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt() * t2_closed_form(x, y, kappa).unwrap() * h;
            y += h;
        }
        let f = f_function(x, kappa).unwrap();
        assert!(((f - s) / s).abs() < 1e-7, "{f} vs {s}");
    }

    #[test]
    fn crossings_bracket_the_window() {
        let (a, b) = find_unit_crossings(200.0).unwrap();
        assert!((0.43..=0.45).contains(&a), "a = {a}");
        assert!((1.69..=1.71).contains(&b), "b = {b}");
        assert!((f_function(a, 200.0).unwrap() - 1.0).abs() <= 1e-4);
        assert!((f_function(b, 200.0).unwrap() - 1.0).abs() <= 1e-4);
        assert!(f_function(0.5 * (a + b), 200.0).unwrap() > 1.0);
    }

    #[test]
    fn counterexample_value() {
        let v = counterexample_expectation(200.0, 0.44, 1.70).unwrap();
        assert!((1.17..=1.21).contains(&v), "{v}");
        assert_eq!(counterexample_expectation(200.0, 0.8, 0.8).unwrap(), 1.0);
        // f < 1 on the window, so the stopped mean drops below 1.
        assert!(counterexample_expectation(200.0, 2.0, 3.0).unwrap() < 1.0);
        assert!(counterexample_expectation(200.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn counterexample_against_monte_carlo() {
        let (a, b, kappa) = (0.44, 1.70, 200.0);
        let est = mc_expectation(
            |rng| Ok((rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))),
            |&(x1, x2): &(f64, f64)| {
                if (a..=b).contains(&x1.abs()) {
                    t2_closed_form(x1, x2, kappa)
                } else {
                    Ok(1.0)
                }
            },
            400_000,
            11,
        )
        .unwrap();
        let exact = counterexample_expectation(kappa, a, b).unwrap();
        assert!(est.within(exact, 4.0), "{est:?} vs {exact}");
    }

    #[test]
    fn mc_expectation_basics() {
        let c = mc_expectation(|_| Ok(()), |_| Ok(1.0), 500, 3).unwrap();
        assert_eq!((c.mean, c.std_error), (1.0, 0.0));
        let z = mc_expectation(|rng| Ok(rng.sample::<f64, _>(StandardNormal)), |&x| Ok(x), 1_000_000, 5).unwrap();
        assert!((z.std_error - 1e-3).abs() < 2e-5);
        assert!(z.mean.abs() <= 3.0 * z.std_error);
        assert!(mc_expectation(|_| Ok(()), |_| Ok(1.0), 99, 3).is_err());
    }

    #[test]
    fn mc_expectation_reports_bad_index() {
        // A single worker runs the chunks in order, so the counter is the index.
        let counter = std::sync::atomic::AtomicUsize::new(0);
        let r = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| {
            mc_expectation(
                |_| Ok(counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst)),
                |&i: &usize| Ok(if i == 1500 { f64::NAN } else { 0.0 }),
                3000,
                1,
            )
        });
        assert!(matches!(r, Err(Error::NonFinite { index: 1500 })), "{r:?}");
    }

    #[test]
    fn mc_expectation_ignores_thread_count() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                mc_expectation(|rng| Ok(rng.random::<f64>()), |&u: &f64| Ok(u * u), 10_000, 9).unwrap()
            })
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn report_sides() {
        assert!(VerificationReport::two_sided("x", 1.0, 0.0, 1.1, 0.1 + 1e-12).passed);
        let up = VerificationReport::at_most("x", 0.5, 0.0, 1.0, 0.0);
        assert!(up.passed && up.name.ends_with("[<=]"));
        assert!(!VerificationReport::at_least("x", 0.5, 0.0, 1.0, 0.0).passed);
        assert!(!VerificationReport::two_sided("x", f64::NAN, 0.0, 1.0, 1.0).passed);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(7, "a"), derive_seed(7, "b"));
        assert_ne!(derive_seed(7, "a"), derive_seed(8, "a"));
        assert_eq!(derive_seed(7, "a"), derive_seed(7, "a"));
    }
}
