//! Chi moment generating function against plain Monte Carlo over chi draws.

use grow_core::mc::{task_rng, MeanAccumulator};
use grow_core::specfun::chi_mgf;
use rand_distr::{ChiSquared, Distribution};

const SAMPLES: usize = 1_000_000;

#[test]
fn chi_mgf_matches_monte_carlo_grid() {
    let grid: Vec<f64> = (0..=8).map(|i| -2.0 + 0.5 * i as f64).collect();
    let mut failures = Vec::new();
    for k in 1..=6usize {
        // Common draws across the grid of a for each k.
        let mut rng = task_rng(7, k as u64);
        let chi2 = ChiSquared::new(k as f64).unwrap();
        let mut acc = vec![MeanAccumulator::default(); grid.len()];
        for _ in 0..SAMPLES {
            let r = chi2.sample(&mut rng).sqrt();
            for (m, &a) in acc.iter_mut().zip(&grid) {
                m.push((a * r).exp());
            }
        }
        for (m, &a) in acc.iter().zip(&grid) {
            let est = m.estimate();
            let exact = chi_mgf(k, a).unwrap();
            let ok = (est.mean - exact).abs() <= 3.0 * est.std_error;
            println!("k={k} a={a:+.1}: exact {exact:.10} mc {:.10} ± {:.2e} {}", est.mean, est.std_error, if ok { "ok" } else { "FAIL" });
            if !ok {
                failures.push((k, a, est.z_score(exact)));
            }
        }
    }
    assert!(failures.is_empty(), "outside 3 SE: {failures:?}");
}

#[test]
fn chi_mgf_at_one_is_the_half_normal_mgf() {
    // E[e^{|Z|}] = 2 e^{1/2} Φ(1), Φ(1) to 20 digits.
    let phi1 = 0.841_344_746_068_542_948_6;
    let expected = 2.0 * 0.5f64.exp() * phi1;
    assert!((chi_mgf(1, 1.0).unwrap() - expected).abs() < 1e-13);
}
