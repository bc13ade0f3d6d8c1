//! Multivariate mean test invariant under the lower-triangular group LT⁺(d).
//!
//! Data are `N(Λδ, ΛΛ′)` with `Λ ∈ LT⁺(d)` unknown. The maximal invariant of
//! `(X̄ₙ, V̄ₙ = LₙLₙ′)` is `M = √(n/(n−1)) Lₙ⁻¹X̄ₙ`, and its likelihood ratio
//! reduces to a product of independent Bartlett-entry moment generating
//! functions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::specfun::ln_chi_mgf;

/// Member of LT⁺(d): lower triangular with a strictly positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    m: DMatrix<f64>,
}

impl LowerTriangular {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::domain("lower_triangular", "matrix must be square and non-empty"));
        }
        let d = m.nrows();
        for i in 0..d {
            if !(m[(i, i)] > 0.0) || !m[(i, i)].is_finite() {
                return Err(Error::domain("lower_triangular", format!("diagonal entry {i} is not positive")));
            }
            for j in 0..d {
                if j > i && m[(i, j)] != 0.0 {
                    return Err(Error::domain("lower_triangular", format!("nonzero entry above the diagonal at ({i}, {j})")));
                }
                if !m[(i, j)].is_finite() {
                    return Err(Error::domain("lower_triangular", "entries must be finite"));
                }
            }
        }
        Ok(LowerTriangular { m })
    }

    pub fn identity(d: usize) -> Self {
        LowerTriangular {
            m: DMatrix::identity(d, d),
        }
    }

    pub fn d(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// `L⁻¹ v` by forward substitution.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.m
            .solve_lower_triangular(v)
            .expect("positive diagonal makes the system nonsingular")
    }

    /// Random member of LT⁺(d) with log-normal diagonal and normal subdiagonal.
    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            m[(i, i)] = (0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
            for j in 0..i {
                m[(i, j)] = rng.sample(StandardNormal);
            }
        }
        LowerTriangular { m }
    }
}

/// Cholesky factor `L` with `LL′ = spd`.
pub fn cholesky(spd: &DMatrix<f64>) -> Result<LowerTriangular> {
    if !spd.is_square() || spd.nrows() == 0 {
        return Err(Error::domain("cholesky", "matrix must be square and non-empty"));
    }
    let d = spd.nrows();
    let scale = spd.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..d {
        for j in 0..i {
            if (spd[(i, j)] - spd[(j, i)]).abs() > 1e-12 * scale.max(1.0) {
                return Err(Error::domain("cholesky", "matrix is not symmetric"));
            }
        }
    }
    // Row-by-row factorization so a failing pivot can be reported.
    let mut l = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let mut s = spd[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(s > 1e-14 * scale) {
                    return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(LowerTriangular { m: l })
}

/// `(n, X̄ₙ, V̄ₙ)` with the unbiased covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct LTSampleSummary {
    n: usize,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl LTSampleSummary {
    pub fn new(n: usize, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::domain("lt_summary", "dimension must be at least 1"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::domain("lt_summary", "covariance shape does not match the mean"));
        }
        if n < d + 1 {
            return Err(Error::DegenerateSample(format!("need n >= d + 1 = {} observations, got {n}", d + 1)));
        }
        Ok(LTSampleSummary { n, mean, cov })
    }

    /// Summary of the rows of `data` (one observation per row).
    pub fn from_rows(data: &DMatrix<f64>) -> Result<Self> {
        let mut acc = LTAccumulator::new(data.ncols());
        for row in data.row_iter() {
            acc.push(row.iter().copied().collect::<Vec<_>>())?;
        }
        acc.summary()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Summary of `GX` for `G ∈ LT⁺(d)`: `(G X̄, G V̄ G′)`.
    pub fn transformed(&self, g: &LowerTriangular) -> Self {
        let gm = g.matrix();
        LTSampleSummary {
            n: self.n,
            mean: gm * &self.mean,
            cov: gm * &self.cov * gm.transpose(),
        }
    }
}

/// Streaming mean and scatter matrix (Welford), one observation at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct LTAccumulator {
    n: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl LTAccumulator {
    pub fn new(d: usize) -> Self {
        LTAccumulator {
            n: 0,
            mean: DVector::zeros(d),
            scatter: DMatrix::zeros(d, d),
        }
    }

    pub fn d(&self) -> usize {
        self.mean.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, x: impl AsRef<[f64]>) -> Result<()> {
        let x = x.as_ref();
        if x.len() != self.d() {
            return Err(Error::domain("lt_summary", format!("expected {} coordinates, got {}", self.d(), x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("lt_summary", "observation is not finite"));
        }
        let x = DVector::from_column_slice(x);
        self.n += 1;
        let delta = &x - &self.mean;
        self.mean += &delta / self.n as f64;
        let after = &x - &self.mean;
        self.scatter += &delta * after.transpose();
        Ok(())
    }

    pub fn summary(&self) -> Result<LTSampleSummary> {
        if self.n < 2 {
            return LTSampleSummary::new(self.n, self.mean.clone(), self.scatter.clone());
        }
        let mut cov = &self.scatter / (self.n - 1) as f64;
        // Symmetrize away rounding from the rank-one updates.
        cov = (&cov + cov.transpose()) * 0.5;
        LTSampleSummary::new(self.n, self.mean.clone(), cov)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LTMaxInvariant {
    pub m_vec: DVector<f64>,
}

/// `√(n/(n−1)) Lₙ⁻¹ X̄ₙ` with `V̄ₙ = LₙLₙ′`.
pub fn max_invariant(summary: &LTSampleSummary) -> Result<LTMaxInvariant> {
    let l = cholesky(&summary.cov)?;
    let nf = summary.n as f64;
    Ok(LTMaxInvariant {
        m_vec: l.solve(&summary.mean) * (nf / (nf - 1.0)).sqrt(),
    })
}

/// `ln E[exp⟨x, T y⟩]` for `TT′ ~ W(dof, I)` with Bartlett factor `T`.
pub fn ln_wishart_lt_mgf(x: &[f64], y: &[f64], dof: usize) -> Result<f64> {
    let d = x.len();
    if y.len() != d || d == 0 {
        return Err(Error::domain("wishart_lt_mgf", "x and y must have the same positive length"));
    }
    if dof < d {
        return Err(Error::domain("wishart_lt_mgf", format!("dof = {dof} must be at least d = {d}")));
    }
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..i {
            let a = x[i] * y[j];
            total += 0.5 * a * a;
        }
        total += ln_chi_mgf(dof - i, x[i] * y[i])?;
    }
    Ok(total)
}

pub fn wishart_lt_mgf(x: &[f64], y: &[f64], dof: usize) -> Result<f64> {
    ln_wishart_lt_mgf(x, y, dof).map(f64::exp)
}

/// Bartlett factor: `T_ii² ~ χ²(dof − i)` (0-based `i`), `T_ij ~ N(0, 1)` below
/// the diagonal.
pub fn sample_bartlett<R: Rng + ?Sized>(dof: usize, d: usize, rng: &mut R) -> Result<LowerTriangular> {
    if d == 0 || dof < d {
        return Err(Error::domain("sample_bartlett", format!("need 1 <= d <= dof (d = {d}, dof = {dof})")));
    }
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi2 = ChiSquared::new((dof - i) as f64).expect("positive degrees of freedom");
        m[(i, i)] = chi2.sample(rng).sqrt();
        for j in 0..i {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    // A zero chi-square draw has probability zero but is representable.
    for i in 0..d {
        if m[(i, i)] == 0.0 {
            m[(i, i)] = f64::MIN_POSITIVE;
        }
    }
    Ok(LowerTriangular { m })
}

/// `(x, y) = (√n δ, A⁻¹M)` with `AA′ = I + MM′`.
fn mgf_arguments(inv: &LTMaxInvariant, n: usize, delta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = inv.m_vec.len();
    if delta.len() != d {
        return Err(Error::domain("lr_lt", format!("delta has length {}, expected {d}", delta.len())));
    }
    if n < d + 1 {
        return Err(Error::DegenerateSample(format!("need n >= d + 1 = {}", d + 1)));
    }
    let outer = DMatrix::identity(d, d) + &inv.m_vec * inv.m_vec.transpose();
    let a = cholesky(&outer)?;
    let y = a.solve(&inv.m_vec);
    let root_n = (n as f64).sqrt();
    Ok((delta.iter().map(|v| root_n * v).collect(), y.iter().copied().collect()))
}

/// `ln p_δ(M)/p_0(M) = −n‖δ‖²/2 + ln E[exp⟨√nδ, TA⁻¹M⟩]`, `TT′ ~ W(n, I)`.
pub fn ln_lr_lt(inv: &LTMaxInvariant, n: usize, delta: &[f64]) -> Result<f64> {
    let (x, y) = mgf_arguments(inv, n, delta)?;
    let norm2: f64 = delta.iter().map(|v| v * v).sum();
    Ok(-0.5 * n as f64 * norm2 + ln_wishart_lt_mgf(&x, &y, n)?)
}

pub fn lr_lt(inv: &LTMaxInvariant, n: usize, delta: &[f64]) -> Result<f64> {
    ln_lr_lt(inv, n, delta).map(f64::exp)
}

pub fn log_evalue_lt(summary: &LTSampleSummary, delta0: &[f64], delta1: &[f64]) -> Result<f64> {
    let inv = max_invariant(summary)?;
    if delta0 == delta1 {
        if delta0.len() != summary.d() {
            return Err(Error::domain("evalue_lt", "delta has the wrong length"));
        }
        return Ok(0.0);
    }
    let ln0 = ln_lr_lt(&inv, summary.n, delta0)?;
    if ln0 == f64::NEG_INFINITY {
        return Err(Error::domain("evalue_lt", "null likelihood ratio is zero"));
    }
    Ok(ln_lr_lt(&inv, summary.n, delta1)? - ln0)
}

/// `p^M_{δ₁}(M) / p^M_{δ₀}(M)` for the LT⁺(d)-invariant mean test.
pub fn evalue_lt(summary: &LTSampleSummary, delta0: &[f64], delta1: &[f64]) -> Result<f64> {
    log_evalue_lt(summary, delta0, delta1).map(f64::exp)
}

/// `n` draws from `N(Λδ, ΛΛ′)`, one per row.
pub fn sample_normal_rows<R: Rng + ?Sized>(n: usize, lambda: &LowerTriangular, delta: &[f64], rng: &mut R) -> DMatrix<f64> {
    let d = lambda.d();
    let shift = DVector::from_column_slice(delta);
    let mut out = DMatrix::zeros(n, d);
    for r in 0..n {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = lambda.matrix() * (&z + &shift);
        out.row_mut(r).copy_from(&x.transpose());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::{task_rng, McEstimate};
    use crate::ttest::{log_evalue, TSufficientStats, TTestHypotheses};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn cholesky_examples() {
        assert_eq!(cholesky(&DMatrix::identity(3, 3)).unwrap(), LowerTriangular::identity(3));
        let l = cholesky(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0])).unwrap();
        assert_eq!(l.matrix(), &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]));
        assert!(matches!(
            cholesky(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
        assert!(cholesky(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
    }

    #[test]
    fn max_invariant_examples() {
        let cov = DMatrix::identity(2, 2);
        let zero = LTSampleSummary::new(5, DVector::zeros(2), cov.clone()).unwrap();
        assert_eq!(max_invariant(&zero).unwrap().m_vec, DVector::zeros(2));
        let e1 = LTSampleSummary::new(3, DVector::from_column_slice(&[1.0, 0.0]), cov).unwrap();
        let m = max_invariant(&e1).unwrap().m_vec;
        assert!((m[0] - 1.5f64.sqrt()).abs() < 1e-15 && m[1] == 0.0);
        assert!(LTSampleSummary::new(2, DVector::zeros(2), DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn accumulator_matches_two_pass() {
        let rows = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.0, -2.0, 1.5]);
        let s = LTSampleSummary::from_rows(&rows).unwrap();
        let mean = rows.row_mean().transpose();
        let mut cov = DMatrix::zeros(2, 2);
        for r in rows.row_iter() {
            let c = r.transpose() - &mean;
            cov += &c * c.transpose();
        }
        cov /= 3.0;
        assert!((s.mean() - &mean).norm() < 1e-14);
        assert!((s.cov() - cov).norm() < 1e-14);
    }

    #[test]
    fn wishart_mgf_examples() {
        assert_eq!(wishart_lt_mgf(&[0.0, 0.0], &[0.3, 0.7], 5).unwrap(), 1.0);
        let one = wishart_lt_mgf(&[0.8], &[-1.1], 4).unwrap();
        assert_eq!(one, crate::specfun::chi_mgf(4, 0.8 * -1.1).unwrap());
        assert!(wishart_lt_mgf(&[1.0, 1.0], &[1.0, 1.0], 1).is_err());
    }

    #[test]
    fn wishart_mgf_matches_bartlett_monte_carlo() {
        let (x, y) = ([1.0, -0.5], [0.3, 0.7]);
        let analytic = wishart_lt_mgf(&x, &y, 5).unwrap();
        let mut rng = task_rng(11, 0);
        let draws: Vec<f64> = (0..200_000)
            .map(|_| {
                let t = sample_bartlett(5, 2, &mut rng).unwrap();
                let ty = t.matrix() * DVector::from_column_slice(&y);
                (x[0] * ty[0] + x[1] * ty[1]).exp()
            })
            .collect();
        let e = McEstimate::from_samples(&draws);
        assert!(e.within(analytic, 3.0), "{analytic} vs {e:?}");
    }

    #[test]
    fn bartlett_mean_is_dof_identity() {
        let (dof, d) = (6, 3);
        let mut rng = task_rng(12, 0);
        let mut sums = vec![Vec::new(); d * d];
        for _ in 0..100_000 {
            let t = sample_bartlett(dof, d, &mut rng).unwrap();
            let w = t.matrix() * t.matrix().transpose();
            for (k, v) in w.iter().enumerate() {
                sums[k].push(*v);
            }
            assert!((0..d).all(|i| t.matrix()[(i, i)] > 0.0));
        }
        for i in 0..d {
            for j in 0..d {
                let e = McEstimate::from_samples(&sums[i + d * j]);
                let want = if i == j { dof as f64 } else { 0.0 };
                assert!(e.within(want, 4.0), "({i}, {j}): {e:?}");
            }
        }
    }

    #[test]
    fn bartlett_one_dimensional_is_chi_square() {
        // Kolmogorov–Smirnov against the χ²(3) CDF P(3/2, x/2), computed from
        // the χ²(3) closed form 2Φ(√x) − 1 − √(2x/π) e^{−x/2}.
        let mut rng = task_rng(13, 0);
        let n = 20_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| sample_bartlett(3, 1, &mut rng).unwrap().matrix()[(0, 0)].powi(2))
            .collect();
        xs.sort_by(f64::total_cmp);
        let cdf = |x: f64| {
            2.0 * crate::specfun::norm_cdf(x.sqrt()) - 1.0 - (2.0 * x / std::f64::consts::PI).sqrt() * (-x / 2.0).exp()
        };
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // Critical value at level 0.01.
        assert!(ks < 1.628 / (n as f64).sqrt(), "KS = {ks}");
    }

    #[test]
    fn lr_examples() {
        let inv = LTMaxInvariant {
            m_vec: DVector::from_column_slice(&[0.4, -1.2]),
        };
        assert_eq!(lr_lt(&inv, 8, &[0.0, 0.0]).unwrap(), 1.0);
        let (x, y) = mgf_arguments(&inv, 8, &[0.5, -0.3]).unwrap();
        let mut rng = task_rng(14, 0);
        let draws: Vec<f64> = (0..200_000)
            .map(|_| {
                let t = sample_bartlett(8, 2, &mut rng).unwrap();
                let ty = t.matrix() * DVector::from_column_slice(&y);
                (x[0] * ty[0] + x[1] * ty[1] - 0.5 * 8.0 * (0.25 + 0.09)).exp()
            })
            .collect();
        let e = McEstimate::from_samples(&draws);
        let lr = lr_lt(&inv, 8, &[0.5, -0.3]).unwrap();
        assert!(e.within(lr, 3.0), "{lr} vs {e:?}");
    }

    #[test]
    fn one_dimension_reduces_to_the_t_test() {
        let data = [0.3, 1.2, -0.4, 0.8, 0.5, 1.9];
        let rows = DMatrix::from_column_slice(6, 1, &data);
        let s = LTSampleSummary::from_rows(&rows).unwrap();
        let lt = log_evalue_lt(&s, &[-0.5], &[1.0]).unwrap();
        let t = log_evalue(&TSufficientStats::from_data(&data), &TTestHypotheses::new(-0.5, 1.0).unwrap()).unwrap();
        assert!((lt - t).abs() < 1e-12, "{lt} vs {t}");
    }

    #[test]
    fn evalue_examples() {
        let mut rng = task_rng(15, 0);
        let lambda = LowerTriangular::random(3, &mut rng);
        let rows = sample_normal_rows(9, &lambda, &[0.2, 0.0, -0.4], &mut rng);
        let s = LTSampleSummary::from_rows(&rows).unwrap();
        assert_eq!(evalue_lt(&s, &[0.3, 0.1, 0.0], &[0.3, 0.1, 0.0]).unwrap(), 1.0);
        assert!(evalue_lt(&s, &[0.0; 2], &[1.0; 2]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn evalue_is_lt_invariant(seed in any::<u64>(), d in 1usize..=3) {
            let mut rng = task_rng(seed, 0);
            let lambda = LowerTriangular::random(d, &mut rng);
            let delta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rows = sample_normal_rows(d + 3, &lambda, &delta, &mut rng);
            let s = LTSampleSummary::from_rows(&rows).unwrap();
            let g = LowerTriangular::random(d, &mut rng);
            let d0 = vec![0.0; d];
            let d1: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let a = log_evalue_lt(&s, &d0, &d1).unwrap();
            let b = log_evalue_lt(&s.transformed(&g), &d0, &d1).unwrap();
            prop_assert!((a.exp() - b.exp()).abs() <= 1e-10 * a.exp(), "{} vs {}", a, b);
            let m0 = max_invariant(&s).unwrap().m_vec;
            let m1 = max_invariant(&s.transformed(&g)).unwrap().m_vec;
            prop_assert!((&m0 - &m1).norm() <= 1e-10 * (1.0 + m0.norm()));
        }
    }
}
