//! The named verification batteries.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{
    counterexample_expectation, derive_seed, f_function, find_unit_crossings, mc_expectation, mc_expectations,
    node_doubling_checked, VerificationReport,
};
use crate::eprocess::{run_with_stopping, ClosedFormMixtureModel, EProcess, StoppingRule, TTestModel};
use crate::error::{Error, Result};
use crate::finite_group::{
    growth_by_element, invariant_lr, joint_kl, joint_kl_minimize, kl_maximal_invariant, null_expectations,
    random_e_statistic, random_instance, random_prior_pair, worst_case_growth, PriorPair,
};
use crate::lt_group::{evalue_lt, sample_bartlett, sample_normal_rows, wishart_lt_mgf, LTSampleSummary, LowerTriangular};
use crate::mc::{task_rng, McEstimate};
use crate::quad::QuadOptions;
use crate::regression::{
    direction_log_density, log_evalue_with_basis, residual_basis, sample_response, sample_sphere, RegressionData,
};
use crate::ttest::{
    haar_kl_trend, log_evalue, log_evalue_haar, log_evalue_noncentral_t, log_mixture_evalue, t2_closed_form,
    HaarQuadrature, TSufficientStats, TTestHypotheses,
};

pub const SUITES: [&str; 10] = [
    "finite_duality",
    "ttest_equivalence",
    "ttest_estat",
    "lt_mgf",
    "lt_estat",
    "regression_estat",
    "anytime",
    "optional_stopping",
    "counterexample",
    "haar_kl_trend",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    /// Cut replication counts for a quick run. Smoke reports are tagged in
    /// their names and are not evidence for anything.
    pub smoke: bool,
}

impl SuiteOptions {
    pub fn new(seed: u64) -> Self {
        SuiteOptions {
            seed,
            threads: 0,
            smoke: false,
        }
    }

    fn reps(&self, full: usize) -> usize {
        if self.smoke {
            (full / 50).max(1000)
        } else {
            full
        }
    }
}

/// Runs the named battery. Reports are identical for identical options.
pub fn run_suite(name: &str, opts: &SuiteOptions) -> Result<Vec<VerificationReport>> {
    let run: fn(&SuiteOptions, u64) -> Result<Vec<VerificationReport>> = match name {
        "finite_duality" => finite_duality,
        "ttest_equivalence" => ttest_equivalence,
        "ttest_estat" => ttest_estat,
        "lt_mgf" => lt_mgf,
        "lt_estat" => lt_estat,
        "regression_estat" => regression_estat,
        "anytime" => anytime,
        "optional_stopping" => optional_stopping,
        "counterexample" => counterexample,
        "haar_kl_trend" => haar_kl_trend_suite,
        other => return Err(Error::UnknownSuite(other.to_string())),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::domain("run_suite", e.to_string()))?;
    let seed = derive_seed(opts.seed, name);
    let reports = pool.install(|| run(opts, seed))?;
    let tag = if opts.smoke { "(smoke)" } else { "" };
    Ok(reports
        .into_iter()
        .map(|mut r| {
            r.name = format!("{name}{tag}/{}", r.name);
            r.with_seed(opts.seed)
        })
        .collect())
}

fn normals(rng: &mut ChaCha8Rng, n: usize, mean: f64, sd: f64) -> Vec<f64> {
    (0..n).map(|_| sd * (mean + rng.sample::<f64, _>(StandardNormal))).collect()
}

fn fold_max(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

fn finite_duality(opts: &SuiteOptions, seed: u64) -> Result<Vec<VerificationReport>> {
    let (instances, priors, probes) = if opts.smoke { (20, 100, 10) } else { (200, 1000, 100) };
    let rows: Vec<[f64; 6]> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, i as u64);
            let pair = random_instance(&mut rng);
            let order = pair.group().order();
            let kl_m = kl_maximal_invariant(&pair);
            let uniform = (joint_kl(&pair, &PriorPair::uniform(order)) - kl_m).abs();
            let minimizer = (joint_kl_minimize(&pair, 1e-12, 100_000)?.value - kl_m).abs();
            let shortfall = fold_max((0..priors).map(|_| kl_m - joint_kl(&pair, &random_prior_pair(order, &mut rng))));
            let excess =
                fold_max((0..probes).map(|_| worst_case_growth(&pair, &random_e_statistic(&pair, &mut rng)) - kl_m));
            let t = invariant_lr(&pair)?;
            let null = fold_max(null_expectations(&pair, &t).iter().map(|e| (e - 1.0).abs()));
            let growth = fold_max(growth_by_element(&pair, &t).iter().map(|g| (g - kl_m).abs()));
            Ok([uniform, minimizer, shortfall, excess, null, growth])
        })
        .collect::<Result<_>>()?;
    let worst = |k: usize| fold_max(rows.iter().map(|r| r[k]));
    Ok(vec![
        VerificationReport::two_sided("uniform_prior_joint_kl", worst(0), 0.0, 0.0, 1e-12),
        VerificationReport::two_sided("minimized_joint_kl", worst(1), 0.0, 0.0, 1e-8),
        VerificationReport::at_most("random_prior_shortfall", worst(2), 0.0, 0.0, 1e-12),
        VerificationReport::at_most("probe_growth_excess", worst(3), 0.0, 0.0, 1e-12),
        VerificationReport::two_sided("invariant_lr_null_mean", worst(4), 0.0, 0.0, 1e-12),
        VerificationReport::two_sided("invariant_lr_growth", worst(5), 0.0, 0.0, 1e-12),
    ]
    .into_iter()
    .map(|r| r.with_replications(instances))
    .collect())
}

fn ttest_equivalence(opts: &SuiteOptions, seed: u64) -> Result<Vec<VerificationReport>> {
    let datasets = if opts.smoke { 10 } else { 100 };
    let deltas = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let quad = HaarQuadrature::default();
    let fine = HaarQuadrature {
        opts: quad.opts.refined(2),
    };
    let tasks: Vec<(usize, usize)> = (2..=50).flat_map(|n| (0..datasets).map(move |j| (n, j))).collect();
    let haar: Vec<(f64, f64)> = tasks
        .par_iter()
        .map(|&(n, j)| {
            let mut rng = task_rng(seed, (n * 1000 + j) as u64);
            let mu = rng.random_range(-2.0..2.0);
            let sigma = rng.random_range(-2.0f64..2.0).exp();
            let data = normals(&mut rng, n, mu, sigma);
            let stats = TSufficientStats::from_data(&data);
            let mut worst = (0.0f64, 0.0f64);
            for &d0 in &deltas {
                for &d1 in &deltas {
                    let hyp = TTestHypotheses::new(d0, d1)?;
                    let h = log_evalue_haar(&data, &hyp, &quad)?;
                    let hf = log_evalue_haar(&data, &hyp, &fine)?;
                    let t = log_evalue_noncentral_t(&stats, &hyp)?;
                    worst.0 = worst.0.max((h - t).exp_m1().abs());
                    worst.1 = worst.1.max((hf - h).exp_m1().abs());
                }
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;

    let triples = if opts.smoke { 100 } else { 1000 };
    let mixture: Vec<(f64, f64)> = (0..triples)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(seed, 1_000_000 + i as u64);
            let x1 = 2.0 * rng.sample::<f64, _>(StandardNormal);
            let x2 = 2.0 * rng.sample::<f64, _>(StandardNormal);
            let kappa = rng.random_range(0.1f64.ln()..300f64.ln()).exp();
            let base = QuadOptions::default();
            let m = log_mixture_evalue(&[x1, x2], kappa, &base)?;
            let mf = log_mixture_evalue(&[x1, x2], kappa, &base.refined(2))?;
            let t = t2_closed_form(x1, x2, kappa)?.ln();
            Ok(((m - t).exp_m1().abs(), (mf - m).exp_m1().abs()))
        })
        .collect::<Result<_>>()?;

    let grid = tasks.len() * deltas.len() * deltas.len();
    Ok(vec![
        VerificationReport::two_sided("haar_vs_noncentral_t", fold_max(haar.iter().map(|r| r.0)), 0.0, 0.0, 1e-6)
            .with_replications(grid),
        VerificationReport::two_sided("haar_node_doubling", fold_max(haar.iter().map(|r| r.1)), 0.0, 0.0, 1e-8)
            .with_replications(grid),
        VerificationReport::two_sided("mixture_vs_closed_form", fold_max(mixture.iter().map(|r| r.0)), 0.0, 0.0, 1e-6)
            .with_replications(triples),
        VerificationReport::two_sided("mixture_node_doubling", fold_max(mixture.iter().map(|r| r.1)), 0.0, 0.0, 1e-8)
            .with_replications(triples),
    ])
}

fn ttest_estat(opts: &SuiteOptions, seed: u64) -> Result<Vec<VerificationReport>> {
    let reps = opts.reps(100_000);
    let n = 10;
    let hyp = TTestHypotheses::new(0.3, 0.8)?;
    let mut out = Vec::new();
    for (i, sigma) in [0.1, 1.0, 10.0].into_iter().enumerate() {
        let est = mc_expectation(
            |rng| Ok(normals(rng, n, hyp.delta0, sigma)),
            |x: &Vec<f64>| Ok(log_evalue(&TSufficientStats::from_data(x), &hyp)?.exp()),
            reps,
            derive_seed(seed, &format!("sigma{i}")),
        )?;
        out.push(VerificationReport::mc(format!("null_mean_n{n}_sigma{sigma}"), &est, 1.0, 3.0));
    }

    // Normal-prior mixture over the alternative, null δ = 0.
    let quad = QuadOptions::default();
    let est = mc_expectation(
        |rng| Ok(normals(rng, n, 0.0, 2.5)),
        |x: &Vec<f64>| Ok(log_mixture_evalue(x, 1.0, &quad)?.exp()),
        reps,
        derive_seed(seed, "mixture"),
    )?;
    out.push(VerificationReport::mc(format!("mixture_null_mean_n{n}_kappa1"), &est, 1.0, 3.0));

    // One step of the martingale given the maximal invariant of the first four
    // observations. With δ₀ = 0 the norm of the prefix is χ₄-distributed and
    // independent of its direction, so redrawing it samples the conditional law.
    let hyp0 = TTestHypotheses::new(0.0, 0.5)?;
    let dir = DVector::from_vec(vec![1.0, 0.3, -0.5, 0.8]).normalize();
    let prefix = TSufficientStats::from_data(dir.as_slice());
    let ln_prev = log_evalue(&prefix, &hyp0)?;
    let est = mc_expectation(
        |rng| {
            let r = normals(rng, 4, 0.0, 1.0).iter().map(|z| z * z).sum::<f64>().sqrt();
            let mut x: Vec<f64> = dir.iter().map(|u| r * u).collect();
            x.push(rng.sample(StandardNormal));
            Ok(x)
        },
        |x: &Vec<f64>| Ok((log_evalue(&TSufficientStats::from_data(x), &hyp0)? - ln_prev).exp()),
        reps,
        derive_seed(seed, "martingale"),
    )?;
    out.push(VerificationReport::mc("martingale_step_n5", &est, 1.0, 3.0));
    Ok(out)
}

fn lt_mgf(opts: &SuiteOptions, seed: u64) -> Result<Vec<VerificationReport>> {
    let reps = if opts.smoke { 20_000 } else { 1_000_000 };
    let pairs = 20;
    let mut out = Vec::new();
    for d in 1..=3usize {
        let mut rng = task_rng(seed, d as u64);
        let xy: Vec<(Vec<f64>, Vec<f64>)> =
            (0..pairs).map(|_| (normals(&mut rng, d, 0.0, 0.5), normals(&mut rng, d, 0.0, 0.5))).collect();
        for dof in d..=10 {
            let analytic: Vec<f64> = xy.iter().map(|(x, y)| wishart_lt_mgf(x, y, dof)).collect::<Result<_>>()?;
            let est = mc_expectations(
                |rng| sample_bartlett(dof, d, rng),
                |t: &LowerTriangular, out: &mut [f64]| {
                    let m = t.matrix();
                    for (o, (x, y)) in out.iter_mut().zip(&xy) {
                        let mut s = 0.0;
                        for i in 0..d {
                            s += x[i] * (0..=i).map(|j| m[(i, j)] * y[j]).sum::<f64>();
                        }
                        *o = s.exp();
                    }
                    Ok(())
                },
                pairs,
                reps,
                derive_seed(seed, &format!("d{d}_dof{dof}")),
            )?;
            for (j, (e, a)) in est.iter().zip(&analytic).enumerate() {
                out.push(VerificationReport::mc(format!("d{d}_dof{dof}_pair{j}"), e, *a, 3.0));
            }
        }
    }
    Ok(out)
}

fn lt_estat(opts: &SuiteOptions, seed: u64) -> Result<Vec<VerificationReport>> {
    let reps = opts.reps(100_000);
    let n = 8;
    let mut out = Vec::new();
    for d in 2..=3usize {
        let delta0: Vec<f64> = [0.3, -0.2, 0.1][..d].to_vec();
        let delta1: Vec<f64> = delta0.iter().map(|v| v + 0.3).collect();
        let mut rng = task_rng(seed, d as u64);
        for k in 0..5 {
            let lambda = LowerTriangular::random(d, &mut rng);
            let est = mc_expectation(
                |rng| LTSampleSummary::from_rows(&sample_normal_rows(n, &lambda, &delta0, rng)),
                |s: &LTSampleSummary| evalue_lt(s, &delta0, &delta1),
                reps,
                derive_seed(seed, &format!("d{d}_lambda{k}")),
            )?;
            out.push(VerificationReport::mc(format!("null_mean_d{d}_n{n}_lambda{k}"), &est, 1.0, 3.0));
        }
    }
    Ok(out)
}

fn regression_estat(opts: &SuiteOptions, seed: u64) -> Result<Vec<VerificationReport>> {
    let reps = opts.reps(100_000);
    let (n, d) = (12, 3);
    let (delta0, delta1) = (0.2, 0.6);
    let mut rng = task_rng(seed, 0);
    let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let z = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let basis = residual_basis(&z)?;
    let template = RegressionData::new(DVector::zeros(n), x.clone(), z.clone())?;
    let mut out = Vec::new();
    for (k, sigma) in [0.1, 0.5, 1.0, 3.0, 20.0].into_iter().enumerate() {
        let beta = DVector::from_fn(d, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
        let est = mc_expectation(
            |rng| template.with_response(sample_response(&x, &z, delta0, &beta, sigma, rng)),
            |data: &RegressionData| Ok(log_evalue_with_basis(data, &basis, delta0, delta1)?.exp()),
            reps,
            derive_seed(seed, &format!("nuisance{k}")),
        )?;
        out.push(VerificationReport::mc(format!("null_mean_n{n}_d{d}_nuisance{k}"), &est, 1.0, 3.0));
    }

    // Direction densities integrate to one over the sphere.
    for (k, uniform) in [(2usize, 1.0 / (2.0 * PI)), (3, 1.0 / (4.0 * PI)), (5, 3.0 / (8.0 * PI * PI))] {
        let ax = sample_sphere(k, &mut rng) * 2.0;
        let u = sample_sphere(k, &mut rng);
        let exact = direction_log_density(&u, 0.0, &ax)?;
        out.push(VerificationReport::two_sided(
            format!("sphere_uniform_density_k{k}"),
            exact.exp(),
            0.0,
            uniform,
            1e-12 * uniform,
        ));
        let ln_uniform = uniform.ln();
        for delta in [0.5, 1.0] {
            let est = mc_expectation(
                |rng| Ok(sample_sphere(k, rng)),
                |u: &DVector<f64>| Ok((direction_log_density(u, delta, &ax)? - ln_uniform).exp()),
                reps,
                derive_seed(seed, &format!("sphere_k{k}_delta{delta}")),
            )?;
            out.push(VerificationReport::mc(format!("sphere_integral_k{k}_delta{delta}"), &est, 1.0, 3.0));
        }
    }
    Ok(out)
}

fn anytime(opts: &SuiteOptions, seed: u64) -> Result<Vec<VerificationReport>> {
    let streams = opts.reps(100_000);
    let (horizon, alpha) = (100, 0.05);
    // Fixed-n means are checked only where the statistic has a usable
    // variance; at larger n the mean of T*ₙ is dominated by rare paths.
    let checkpoints = [1usize, 2, 5, 10];
    let last = checkpoints[checkpoints.len() - 1];
    let model = TTestModel {
        hyp: TTestHypotheses::new(0.0, 0.5)?,
    };
    let est = mc_expectations(
        |rng| Ok(normals(rng, horizon, 0.0, 1.0)),
        |xs: &Vec<f64>, out: &mut [f64]| {
            let mut p = EProcess::new(model, alpha)?;
            for x in xs {
                let s = p.update(x)?;
                if let Some(k) = checkpoints.iter().position(|&c| c == s.n) {
                    out[k + 1] = s.log_evalue.exp();
                }
                if s.rejected_at.is_some() && s.n >= last {
                    break;
                }
            }
            out[0] = if p.state().rejected_at.is_some() { 1.0 } else { 0.0 };
            Ok(())
        },
        checkpoints.len() + 1,
        streams,
        seed,
    )?;
    let rate = est[0];
    let mut out = vec![VerificationReport::at_most(
        format!("rejection_rate_by_{horizon}"),
        rate.mean,
        rate.std_error,
        alpha,
        3.0 * rate.std_error,
    )
    .with_replications(streams)];
    for (c, e) in checkpoints.iter().zip(&est[1..]) {
        out.push(VerificationReport::mc(format!("null_mean_n{c}"), e, 1.0, 3.0));
    }
    Ok(out)
}

fn stopped_mean<M>(model: M, rule: &StoppingRule<f64>, len: usize, reps: usize, seed: u64) -> Result<McEstimate>
where
    M: crate::eprocess::InvariantLr<Obs = f64> + Clone + Sync,
{
    mc_expectation(
        |rng| Ok(normals(rng, len, 0.0, 1.0)),
        |xs: &Vec<f64>| Ok(run_with_stopping(model.clone(), xs, rule, 0.05)?.evalue()),
        reps,
        seed,
    )
}

fn optional_stopping(opts: &SuiteOptions, seed: u64) -> Result<Vec<VerificationReport>> {
    let reps = opts.reps(100_000);
    let model = TTestModel {
        hyp: TTestHypotheses::new(0.0, 0.5)?,
    };
    let band = 20f64.ln();
    // A fixed horizon is a martingale at a fixed time: two-sided.
    let fixed = stopped_mean(model, &StoppingRule::FixedHorizon(10), 10, reps, derive_seed(seed, "fixed"))?;
    let mut out = vec![VerificationReport::mc("ttest_fixed_horizon_10", &fixed, 1.0, 3.0)];
    let rules: Vec<(&str, StoppingRule<f64>, usize)> = vec![
        ("threshold_crossing_cap50", StoppingRule::ThresholdCrossing, 50),
        ("evalue_band_cap50", StoppingRule::invariant(move |v| v.log_evalue.abs() >= band), 50),
        (
            "abs_t_above_2_cap20",
            StoppingRule::invariant(|v| v.statistic.is_some_and(|t| t.abs() > 2.0)),
            20,
        ),
    ];
    for (i, (name, rule, len)) in rules.iter().enumerate() {
        let est = stopped_mean(model, rule, *len, reps, derive_seed(seed, &format!("rule{i}")))?;
        out.push(
            VerificationReport::at_most(format!("ttest_{name}"), est.mean, est.std_error, 1.0, 3.0 * est.std_error)
                .with_replications(reps),
        );
    }

    // The two-observation mixture: safe at a fixed horizon, unsafe under a
    // rule that looks at |X₁|.
    let mixture = ClosedFormMixtureModel { kappa: 200.0 };
    let big = opts.reps(1_000_000);
    let est = stopped_mean(mixture, &StoppingRule::FixedHorizon(2), 2, big, derive_seed(seed, "mixture_fixed"))?;
    out.push(
        VerificationReport::at_most("mixture_fixed_horizon_2", est.mean, est.std_error, 1.0, 3.0 * est.std_error)
            .with_replications(big),
    );
    let window = StoppingRule::magnitude_window(0.44, 1.70);
    let est = stopped_mean(mixture, &window, 2, big, derive_seed(seed, "mixture_window"))?;
    out.push(
        VerificationReport::at_least("mixture_full_data_window_expected_violation", est.mean, est.std_error, 1.1, 0.0)
            .with_replications(big),
    );
    Ok(out)
}

fn counterexample(_opts: &SuiteOptions, _seed: u64) -> Result<Vec<VerificationReport>> {
    let kappa = 200.0;
    let mut out = vec![VerificationReport::two_sided(
        "stopped_mean_a0.44_b1.70",
        counterexample_expectation(kappa, 0.44, 1.70)?,
        0.0,
        1.19,
        0.02,
    )];
    let (a, b) = find_unit_crossings(kappa)?;
    out.push(VerificationReport::two_sided("crossing_a", a, 0.0, 0.44, 0.01));
    out.push(VerificationReport::two_sided("crossing_b", b, 0.0, 1.70, 0.01));
    let residual = (f_function(a, kappa)? - 1.0).abs().max((f_function(b, kappa)? - 1.0).abs());
    out.push(VerificationReport::two_sided("f_at_crossings", residual, 0.0, 0.0, 1e-4));
    out.push(VerificationReport::at_least("f_inside_window", f_function(0.5 * (a + b), kappa)?, 0.0, 1.0, 0.0));
    out.push(VerificationReport::at_least("f_at_1", f_function(1.0, kappa)?, 0.0, 1.0, 0.0));
    out.push(VerificationReport::at_most("f_at_3", f_function(3.0, kappa)?, 0.0, 1.0, 0.0));
    let mut asym = 0.0f64;
    for x in [0.1, 0.44, 1.0, 1.7, 3.0] {
        asym = asym.max((f_function(x, kappa)? - f_function(-x, kappa)?).abs());
    }
    out.push(VerificationReport::two_sided("f_even", asym, 0.0, 0.0, 1e-10));
    let mut single = 0.0f64;
    for x in [0.1, -0.1, 1.0, -1.0, 5.0, -5.0] {
        let v = node_doubling_checked("single observation mixture", &QuadOptions::default(), |o| {
            log_mixture_evalue(&[x], kappa, o).map(f64::exp)
        })?;
        single = single.max((v - 1.0).abs());
    }
    out.push(VerificationReport::two_sided("single_observation_mixture", single, 0.0, 0.0, 1e-8));
    Ok(out)
}

fn haar_kl_trend_suite(opts: &SuiteOptions, seed: u64) -> Result<Vec<VerificationReport>> {
    let reps = opts.reps(100_000);
    let cs = [2.0, 10.0, 100.0];
    let hyp = TTestHypotheses::new(0.0, 1.0)?;
    let trend = haar_kl_trend(&cs, &hyp, 2, reps, seed)?;
    let mut out = Vec::new();
    for (c, gap) in cs.iter().zip(&trend.gap) {
        out.push(
            VerificationReport::at_least(format!("c{c}_minus_invariant_kl"), gap.mean, gap.std_error, 0.0, 3.0 * gap.std_error)
                .with_replications(reps),
        );
    }
    for (w, step) in cs.windows(2).zip(&trend.steps) {
        out.push(
            VerificationReport::at_least(format!("step_c{}_to_c{}", w[0], w[1]), step.mean, step.std_error, 0.0, 0.0)
                .with_replications(reps),
        );
    }
    Ok(out)
}
