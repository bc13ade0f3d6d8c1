//! Exact laboratory for invariant testing with a finite group acting freely
//! on a finite sample space.
//!
//! With `p_g(x) = p₁(g⁻¹x)` and `q_g(x) = q₁(g⁻¹x)`, the likelihood ratio of the
//! maximal invariant is the ratio of group averages. Everything here is plain
//! double-precision summation over tables, so the duality between the GROW
//! problem and the joint information projection can be checked to rounding
//! error.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteGroup {
    order: usize,
    compose: Vec<Vec<usize>>,
    identity: usize,
    inverse: Vec<usize>,
}

impl FiniteGroup {
    /// Validates the multiplication table exhaustively.
    pub fn new(compose: Vec<Vec<usize>>, identity: usize, inverse: Vec<usize>) -> Result<Self> {
        let order = compose.len();
        let bad = |m: String| Err(Error::InvalidInstance(m));
        if order == 0 {
            return bad("group has no elements".into());
        }
        if compose.iter().any(|row| row.len() != order || row.iter().any(|&c| c >= order)) {
            return bad("compose table must be order x order with entries < order".into());
        }
        if identity >= order || inverse.len() != order || inverse.iter().any(|&i| i >= order) {
            return bad("identity or inverse table out of range".into());
        }
        for g in 0..order {
            if compose[identity][g] != g || compose[g][identity] != g {
                return bad(format!("element {identity} is not an identity for {g}"));
            }
            if compose[g][inverse[g]] != identity || compose[inverse[g]][g] != identity {
                return bad(format!("inverse[{g}] = {} is not an inverse", inverse[g]));
            }
        }
        for a in 0..order {
            for b in 0..order {
                for c in 0..order {
                    if compose[compose[a][b]][c] != compose[a][compose[b][c]] {
                        return bad(format!("composition not associative at ({a}, {b}, {c})"));
                    }
                }
            }
        }
        Ok(FiniteGroup {
            order,
            compose,
            identity,
            inverse,
        })
    }

    pub fn cyclic(n: usize) -> Self {
        assert!(n >= 1);
        let compose = (0..n).map(|a| (0..n).map(|b| (a + b) % n).collect()).collect();
        let inverse = (0..n).map(|a| (n - a) % n).collect();
        FiniteGroup::new(compose, 0, inverse).expect("cyclic table is a group")
    }

    pub fn trivial() -> Self {
        FiniteGroup::cyclic(1)
    }

    /// `{+1, −1}` under multiplication; element 1 is `−1`.
    pub fn sign() -> Self {
        FiniteGroup::cyclic(2)
    }

    pub fn klein_four() -> Self {
        let compose = (0..4).map(|a| (0..4).map(|b| a ^ b).collect()).collect();
        FiniteGroup::new(compose, 0, vec![0, 1, 2, 3]).expect("Klein table is a group")
    }

    /// Dihedral group of order 6, elements `r^k s^m` stored as `k + 3m`.
    pub fn dihedral6() -> Self {
        let decode = |e: usize| (e % 3, e / 3);
        let encode = |k: usize, m: usize| k % 3 + 3 * (m % 2);
        // (r^a s^b)(r^c s^d) = r^{a + (-1)^b c} s^{b+d}
        let mul = |x: usize, y: usize| {
            let (a, b) = decode(x);
            let (c, d) = decode(y);
            let rot = if b == 0 { a + c } else { a + 3 - c };
            encode(rot, b + d)
        };
        let compose: Vec<Vec<usize>> = (0..6).map(|x| (0..6).map(|y| mul(x, y)).collect()).collect();
        let inverse = (0..6)
            .map(|x| (0..6).find(|&y| mul(x, y) == 0).expect("every element is invertible"))
            .collect();
        FiniteGroup::new(compose, 0, inverse).expect("dihedral table is a group")
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    pub fn compose(&self, a: usize, b: usize) -> usize {
        self.compose[a][b]
    }

    pub fn inverse(&self, g: usize) -> usize {
        self.inverse[g]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteAction {
    group: FiniteGroup,
    space_size: usize,
    act: Vec<Vec<usize>>,
}

impl FiniteAction {
    /// `act[g][x]` is the image of point `x` under `g`. The action must be a
    /// homomorphism into permutations and free.
    pub fn new(group: FiniteGroup, act: Vec<Vec<usize>>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidInstance(m));
        if act.len() != group.order() {
            return bad(format!("action has {} rows, group order is {}", act.len(), group.order()));
        }
        let space_size = act[0].len();
        if space_size == 0 {
            return bad("sample space is empty".into());
        }
        for (g, row) in act.iter().enumerate() {
            if row.len() != space_size {
                return bad(format!("action row {g} has the wrong length"));
            }
            let mut seen = vec![false; space_size];
            for &y in row {
                if y >= space_size || seen[y] {
                    return bad(format!("action row {g} is not a permutation"));
                }
                seen[y] = true;
            }
        }
        for x in 0..space_size {
            if act[group.identity()][x] != x {
                return bad(format!("identity moves point {x}"));
            }
        }
        for g in 0..group.order() {
            for h in 0..group.order() {
                let gh = group.compose(g, h);
                for x in 0..space_size {
                    if act[g][act[h][x]] != act[gh][x] {
                        return bad(format!("action incompatible with composition at ({g}, {h}, {x})"));
                    }
                }
            }
            if g != group.identity() {
                if let Some(x) = (0..space_size).find(|&x| act[g][x] == x) {
                    return bad(format!("action is not free: element {g} fixes point {x}"));
                }
            }
        }
        Ok(FiniteAction {
            group,
            space_size,
            act,
        })
    }

    /// The free action of `group` on `copies` disjoint copies of itself by
    /// left multiplication, with points renamed through `relabel`.
    pub fn regular(group: FiniteGroup, copies: usize, relabel: &[usize]) -> Result<Self> {
        let n = group.order();
        let size = n * copies;
        if relabel.len() != size {
            return Err(Error::InvalidInstance("relabel has the wrong length".into()));
        }
        let mut act = vec![vec![0; size]; n];
        for (g, row) in act.iter_mut().enumerate() {
            for c in 0..copies {
                for h in 0..n {
                    row[relabel[c * n + h]] = relabel[c * n + group.compose(g, h)];
                }
            }
        }
        FiniteAction::new(group, act)
    }

    pub fn group(&self) -> &FiniteGroup {
        &self.group
    }

    pub fn space_size(&self) -> usize {
        self.space_size
    }

    pub fn act(&self, g: usize, x: usize) -> usize {
        self.act[g][x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteInvariantPair {
    action: FiniteAction,
    p1: Vec<f64>,
    q1: Vec<f64>,
}

fn check_density(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::InvalidInstance(format!("{name} has length {}, expected {len}", v.len())));
    }
    if v.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidInstance(format!("{name} has a negative or non-finite entry")));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInstance(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

impl FiniteInvariantPair {
    pub fn new(action: FiniteAction, p1: Vec<f64>, q1: Vec<f64>) -> Result<Self> {
        check_density("p1", &p1, action.space_size())?;
        check_density("q1", &q1, action.space_size())?;
        Ok(FiniteInvariantPair { action, p1, q1 })
    }

    pub fn action(&self) -> &FiniteAction {
        &self.action
    }

    pub fn group(&self) -> &FiniteGroup {
        self.action.group()
    }

    pub fn p1(&self) -> &[f64] {
        &self.p1
    }

    pub fn q1(&self) -> &[f64] {
        &self.q1
    }

    fn translate(&self, base: &[f64], g: usize) -> Vec<f64> {
        let ginv = self.group().inverse(g);
        (0..self.action.space_size())
            .map(|x| base[self.action.act(ginv, x)])
            .collect()
    }

    /// Null density `p_g(x) = p₁(g⁻¹x)`.
    pub fn p_g(&self, g: usize) -> Vec<f64> {
        self.translate(&self.p1, g)
    }

    pub fn q_g(&self, g: usize) -> Vec<f64> {
        self.translate(&self.q1, g)
    }

    fn orbit_masses(&self, labels: &[usize], base: &[f64]) -> Vec<f64> {
        let count = labels.iter().max().map_or(0, |m| m + 1);
        let mut mass = vec![0.0; count];
        for (x, &l) in labels.iter().enumerate() {
            mass[l] += base[x];
        }
        mass
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorPair {
    pub pi0: Vec<f64>,
    pub pi1: Vec<f64>,
}

impl PriorPair {
    pub fn new(pi0: Vec<f64>, pi1: Vec<f64>) -> Result<Self> {
        let len = pi0.len();
        check_density("pi0", &pi0, len)?;
        check_density("pi1", &pi1, len)?;
        Ok(PriorPair { pi0, pi1 })
    }

    pub fn uniform(order: usize) -> Self {
        let w = vec![1.0 / order as f64; order];
        PriorPair {
            pi0: w.clone(),
            pi1: w,
        }
    }

    pub fn point_mass(order: usize, g: usize) -> Self {
        let mut w = vec![0.0; order];
        w[g] = 1.0;
        PriorPair {
            pi0: w.clone(),
            pi1: w,
        }
    }
}

/// Orbit labels, numbered in order of first appearance. The label function is
/// a maximal invariant.
pub fn orbits(action: &FiniteAction) -> Vec<usize> {
    let mut labels = vec![usize::MAX; action.space_size()];
    let mut next = 0;
    for x in 0..action.space_size() {
        if labels[x] != usize::MAX {
            continue;
        }
        for g in 0..action.group().order() {
            labels[action.act(g, x)] = next;
        }
        next += 1;
    }
    labels
}

/// Group-averaged likelihood ratio, one value per sample point.
pub fn invariant_lr(pair: &FiniteInvariantPair) -> Result<Vec<f64>> {
    let labels = orbits(pair.action());
    let pm = pair.orbit_masses(&labels, pair.p1());
    let qm = pair.orbit_masses(&labels, pair.q1());
    labels
        .iter()
        .enumerate()
        .map(|(x, &l)| match (qm[l], pm[l]) {
            (_, p) if p > 0.0 => Ok(qm[l] / p),
            (q, _) if q > 0.0 => Err(Error::AbsoluteContinuity { point: x }),
            _ => Ok(1.0),
        })
        .collect()
}

fn kl(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .map(|(&q, &p)| {
            if q == 0.0 {
                0.0
            } else if p == 0.0 {
                f64::INFINITY
            } else {
                q * (q / p).ln()
            }
        })
        .sum()
}

/// `KL(Q^M, P^M)` over orbit masses.
pub fn kl_maximal_invariant(pair: &FiniteInvariantPair) -> f64 {
    let labels = orbits(pair.action());
    kl(
        &pair.orbit_masses(&labels, pair.q1()),
        &pair.orbit_masses(&labels, pair.p1()),
    )
}

fn mixture(pair: &FiniteInvariantPair, base: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; pair.action().space_size()];
    for (g, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(pair.translate(base, g)) {
            *o += w * v;
        }
    }
    out
}

/// `KL(Π₁Q, Π₀P)` between the prior mixtures over the full sample space.
pub fn joint_kl(pair: &FiniteInvariantPair, priors: &PriorPair) -> f64 {
    kl(
        &mixture(pair, pair.q1(), &priors.pi1),
        &mixture(pair, pair.p1(), &priors.pi0),
    )
}

/// `E_{Q_g}[ln T]` for every group element.
pub fn growth_by_element(pair: &FiniteInvariantPair, t: &[f64]) -> Vec<f64> {
    (0..pair.group().order())
        .map(|g| {
            pair.q_g(g)
                .iter()
                .zip(t)
                .map(|(&q, &tv)| if q == 0.0 { 0.0 } else { q * tv.ln() })
                .sum()
        })
        .collect()
}

/// Worst-case expected log value `min_g E_{Q_g}[ln T]`.
pub fn worst_case_growth(pair: &FiniteInvariantPair, t: &[f64]) -> f64 {
    growth_by_element(pair, t).into_iter().fold(f64::INFINITY, f64::min)
}

/// `E_{P_g}[T]` for every group element.
pub fn null_expectations(pair: &FiniteInvariantPair, t: &[f64]) -> Vec<f64> {
    (0..pair.group().order())
        .map(|g| pair.p_g(g).iter().zip(t).map(|(p, tv)| p * tv).sum())
        .collect()
}

pub fn is_e_statistic(pair: &FiniteInvariantPair, t: &[f64], tol: f64) -> bool {
    t.iter().all(|&v| v >= 0.0)
        && null_expectations(pair, t)
            .into_iter()
            .all(|e| e <= 1.0 + tol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointKlMinimum {
    pub priors: PriorPair,
    pub value: f64,
    pub iterations: usize,
}

/// Alternating minimization of the joint KL from a fixed non-uniform start.
pub fn joint_kl_minimize(pair: &FiniteInvariantPair, tol: f64, max_iters: usize) -> Result<JointKlMinimum> {
    let order = pair.group().order();
    let total = (order * (order + 1) / 2) as f64;
    let ramp: Vec<f64> = (0..order).map(|g| (g + 1) as f64 / total).collect();
    let reversed: Vec<f64> = ramp.iter().rev().copied().collect();
    joint_kl_minimize_from(pair, PriorPair { pi0: ramp, pi1: reversed }, tol, max_iters)
}

/// Block-coordinate descent on `(Π₀, Π₁) ↦ KL(Π₁Q, Π₀P)`.
///
/// The `Π₀` block is a mixture-weight maximum-likelihood problem and takes
/// EM fixed-point steps; the `Π₁` block takes exponentiated-gradient steps
/// with backtracking. Iterates until one sweep improves the objective by less
/// than `tol`.
pub fn joint_kl_minimize_from(
    pair: &FiniteInvariantPair,
    start: PriorPair,
    tol: f64,
    max_iters: usize,
) -> Result<JointKlMinimum> {
    let order = pair.group().order();
    let pg: Vec<Vec<f64>> = (0..order).map(|g| pair.p_g(g)).collect();
    let qg: Vec<Vec<f64>> = (0..order).map(|g| pair.q_g(g)).collect();
    let mix = |parts: &[Vec<f64>], w: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; pair.action().space_size()];
        for (part, &wg) in parts.iter().zip(w) {
            for (o, v) in out.iter_mut().zip(part) {
                *o += wg * v;
            }
        }
        out
    };
    let mut pi0 = start.pi0;
    let mut pi1 = start.pi1;
    let mut qbar = mix(&qg, &pi1);
    let mut pbar = mix(&pg, &pi0);
    let mut value = kl(&qbar, &pbar);
    if !value.is_finite() {
        return Err(Error::InvalidInstance("starting priors give infinite joint KL".into()));
    }
    let mut step = 1.0f64;
    for iter in 1..=max_iters {
        let before = value;

        // Π₀: EM update for mixture weights fitted to q̄.
        let ratio: Vec<f64> = qbar
            .iter()
            .zip(&pbar)
            .map(|(&q, &p)| if q == 0.0 { 0.0 } else { q / p })
            .collect();
        for (g, w) in pi0.iter_mut().enumerate() {
            *w *= pg[g].iter().zip(&ratio).map(|(p, r)| p * r).sum::<f64>();
        }
        let s: f64 = pi0.iter().sum();
        pi0.iter_mut().for_each(|w| *w /= s);
        pbar = mix(&pg, &pi0);
        value = kl(&qbar, &pbar);

        // Π₁: exponentiated gradient with backtracking.
        let log_ratio: Vec<f64> = qbar
            .iter()
            .zip(&pbar)
            .map(|(&q, &p)| if q == 0.0 { 0.0 } else { (q / p).ln() })
            .collect();
        let grad: Vec<f64> = qg
            .iter()
            .map(|qv| qv.iter().zip(&log_ratio).map(|(q, l)| q * l).sum())
            .collect();
        let mean_grad: f64 = grad.iter().zip(&pi1).map(|(g, w)| g * w).sum();
        step = (step * 2.0).min(1e6);
        loop {
            let mut cand: Vec<f64> = pi1
                .iter()
                .zip(&grad)
                .map(|(w, g)| w * (-step * (g - mean_grad)).exp())
                .collect();
            let s: f64 = cand.iter().sum();
            cand.iter_mut().for_each(|w| *w /= s);
            let cand_q = mix(&qg, &cand);
            let cand_value = kl(&cand_q, &pbar);
            if cand_value <= value {
                pi1 = cand;
                qbar = cand_q;
                value = cand_value;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                break;
            }
        }

        // Alternation alone crawls when the blocks are strongly coupled.
        if let Some((n0, n1, nv)) = newton_step(&pg, &qg, &pi0, &pi1, value) {
            pi0 = n0;
            pi1 = n1;
            value = nv;
            pbar = mix(&pg, &pi0);
            qbar = mix(&qg, &pi1);
        }

        if before - value < tol {
            return Ok(JointKlMinimum {
                priors: PriorPair { pi0, pi1 },
                value,
                iterations: iter,
            });
        }
    }
    Err(Error::MaxIterations {
        iterations: max_iters,
        best: value,
    })
}

/// Damped Newton step on the product of simplices, accepted only if it lowers
/// the objective.
fn newton_step(
    pg: &[Vec<f64>],
    qg: &[Vec<f64>],
    pi0: &[f64],
    pi1: &[f64],
    value: f64,
) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let m = pi0.len();
    if m < 2 {
        return None;
    }
    let size = pg[0].len();
    let mix = |parts: &[Vec<f64>], w: &[f64]| -> Vec<f64> {
        (0..size)
            .map(|x| parts.iter().zip(w).map(|(p, wg)| wg * p[x]).sum())
            .collect()
    };
    let pbar = mix(pg, pi0);
    let qbar = mix(qg, pi1);
    // Variables ordered (π₀, π₁).
    let dim = 2 * m;
    let mut grad = DVector::<f64>::zeros(dim);
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    for x in 0..size {
        let (p, q) = (pbar[x], qbar[x]);
        if q == 0.0 {
            continue;
        }
        let lr = (q / p).ln() + 1.0;
        for a in 0..m {
            grad[a] -= q * pg[a][x] / p;
            grad[m + a] += qg[a][x] * lr;
            for b in 0..m {
                hess[(a, b)] += q * pg[a][x] * pg[b][x] / (p * p);
                hess[(m + a, m + b)] += qg[a][x] * qg[b][x] / q;
                let cross = -qg[a][x] * pg[b][x] / p;
                hess[(m + a, b)] += cross;
                hess[(b, m + a)] += cross;
            }
        }
    }
    let scale = hess.trace().max(1e-300);
    let mut ridge = 1e-12 * scale;
    let current: Vec<f64> = pi0.iter().chain(pi1).copied().collect();
    while ridge < scale {
        let mut kkt = DMatrix::<f64>::zeros(dim + 2, dim + 2);
        let mut rhs = DVector::<f64>::zeros(dim + 2);
        for i in 0..dim {
            for j in 0..dim {
                kkt[(i, j)] = hess[(i, j)];
            }
            kkt[(i, i)] += ridge;
            let block = dim + i / m;
            kkt[(i, block)] = 1.0;
            kkt[(block, i)] = 1.0;
            rhs[i] = -grad[i];
        }
        let dir = kkt.lu().solve(&rhs)?;
        // Stay strictly inside the simplices.
        let mut t: f64 = 1.0;
        for i in 0..dim {
            if dir[i] < 0.0 {
                t = t.min(-0.9 * current[i] / dir[i]);
            }
        }
        for _ in 0..30 {
            let c0: Vec<f64> = (0..m).map(|a| pi0[a] + t * dir[a]).collect();
            let c1: Vec<f64> = (0..m).map(|a| pi1[a] + t * dir[m + a]).collect();
            let s0: f64 = c0.iter().sum();
            let s1: f64 = c1.iter().sum();
            let c0: Vec<f64> = c0.iter().map(|w| w / s0).collect();
            let c1: Vec<f64> = c1.iter().map(|w| w / s1).collect();
            let v = kl(&mix(qg, &c1), &mix(pg, &c0));
            if v < value {
                return Some((c0, c1, v));
            }
            t *= 0.5;
        }
        ridge *= 100.0;
    }
    None
}

fn dirichlet_one<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Groups used by the random instance generator.
pub fn group_catalog() -> Vec<FiniteGroup> {
    let mut groups: Vec<FiniteGroup> = (3..=8).map(FiniteGroup::cyclic).collect();
    groups.push(FiniteGroup::sign());
    groups.push(FiniteGroup::dihedral6());
    groups.push(FiniteGroup::klein_four());
    groups
}

/// Random instance: catalog group, free action on up to 24 points with a
/// random relabelling, Dirichlet(1) base densities.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R) -> FiniteInvariantPair {
    let catalog = group_catalog();
    let group = catalog[rng.random_range(0..catalog.len())].clone();
    let copies = rng.random_range(1..=24 / group.order());
    let size = copies * group.order();
    let mut relabel: Vec<usize> = (0..size).collect();
    relabel.shuffle(rng);
    let action = FiniteAction::regular(group, copies, &relabel).expect("regular action is free");
    let p1 = dirichlet_one(size, rng);
    let q1 = dirichlet_one(size, rng);
    FiniteInvariantPair::new(action, p1, q1).expect("Dirichlet draws are densities")
}

pub fn random_prior_pair<R: Rng + ?Sized>(order: usize, rng: &mut R) -> PriorPair {
    PriorPair {
        pi0: dirichlet_one(order, rng),
        pi1: dirichlet_one(order, rng),
    }
}

/// Scales a nonnegative function so that `max_g E_{P_g}[T] = 1`.
pub fn normalize_e_statistic(pair: &FiniteInvariantPair, h: &[f64]) -> Vec<f64> {
    let worst = null_expectations(pair, h).into_iter().fold(0.0, f64::max);
    h.iter().map(|v| v / worst).collect()
}

/// A random e-statistic: half the time an arbitrary nonnegative function,
/// otherwise a perturbation of the invariant likelihood ratio.
pub fn random_e_statistic<R: Rng + ?Sized>(pair: &FiniteInvariantPair, rng: &mut R) -> Vec<f64> {
    let n = pair.action().space_size();
    let h: Vec<f64> = if rng.random_bool(0.5) {
        (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect()
    } else {
        let t = invariant_lr(pair).unwrap_or_else(|_| vec![1.0; n]);
        let scale = 10f64.powf(rng.random_range(-4.0..0.0));
        t.iter()
            .map(|v| v * (1.0 + scale * rng.random_range(-1.0..1.0)))
            .collect()
    };
    normalize_e_statistic(pair, &h)
}

/// JSON layout of an instance document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDocument {
    pub group: GroupDocument,
    pub action: Vec<Vec<usize>>,
    pub p1: Vec<f64>,
    pub q1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDocument {
    pub order: usize,
    pub compose: Vec<Vec<usize>>,
    pub inverse: Vec<usize>,
    pub identity: usize,
}

impl InstanceDocument {
    pub fn into_pair(self) -> Result<FiniteInvariantPair> {
        if self.group.order != self.group.compose.len() {
            return Err(Error::InvalidInstance(format!(
                "order {} does not match the compose table ({} rows)",
                self.group.order,
                self.group.compose.len()
            )));
        }
        let group = FiniteGroup::new(self.group.compose, self.group.identity, self.group.inverse)?;
        let action = FiniteAction::new(group, self.action)?;
        FiniteInvariantPair::new(action, self.p1, self.q1)
    }
}

impl From<&FiniteInvariantPair> for InstanceDocument {
    fn from(pair: &FiniteInvariantPair) -> Self {
        let g = pair.group();
        InstanceDocument {
            group: GroupDocument {
                order: g.order,
                compose: g.compose.clone(),
                inverse: g.inverse.clone(),
                identity: g.identity,
            },
            action: pair.action().act.clone(),
            p1: pair.p1.clone(),
            q1: pair.q1.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Sign group acting on {−2, −1, 1, 2} by negation (points in that order).
    fn sign_instance() -> FiniteInvariantPair {
        let act = vec![vec![0, 1, 2, 3], vec![3, 2, 1, 0]];
        let action = FiniteAction::new(FiniteGroup::sign(), act).unwrap();
        FiniteInvariantPair::new(action, vec![0.1, 0.4, 0.3, 0.2], vec![0.25; 4]).unwrap()
    }

    #[test]
    fn catalog_tables_are_groups() {
        for g in group_catalog() {
            assert!(g.order() <= 8);
        }
        let d6 = FiniteGroup::dihedral6();
        // Non-abelian: r s != s r.
        assert_ne!(d6.compose(1, 3), d6.compose(3, 1));
    }

    #[test]
    fn rejects_broken_tables() {
        // Not associative / no identity.
        assert!(FiniteGroup::new(vec![vec![0, 0], vec![0, 1]], 0, vec![0, 1]).is_err());
        assert!(FiniteGroup::new(vec![vec![0, 1], vec![1, 0]], 0, vec![0, 0]).is_err());
        // Action fixing a point under a non-identity element.
        let act = vec![vec![0, 1, 2], vec![0, 2, 1]];
        assert!(FiniteAction::new(FiniteGroup::sign(), act).is_err());
    }

    #[test]
    fn orbit_examples() {
        let pair = sign_instance();
        assert_eq!(orbits(pair.action()), vec![0, 1, 1, 0]);
        let trivial = FiniteAction::new(FiniteGroup::trivial(), vec![vec![0, 1, 2]]).unwrap();
        assert_eq!(orbits(&trivial), vec![0, 1, 2]);
        let c3 = FiniteAction::regular(FiniteGroup::cyclic(3), 1, &[0, 1, 2]).unwrap();
        assert_eq!(orbits(&c3), vec![0, 0, 0]);
    }

    #[test]
    fn invariant_lr_examples() {
        let pair = sign_instance();
        let t = invariant_lr(&pair).unwrap();
        assert!((t[1] - 5.0 / 7.0).abs() < 1e-15 && (t[2] - 5.0 / 7.0).abs() < 1e-15);
        assert!((t[0] - 5.0 / 3.0).abs() < 1e-15 && (t[3] - 5.0 / 3.0).abs() < 1e-15);
        for e in null_expectations(&pair, &t) {
            assert!((e - 1.0).abs() < 1e-15);
        }
        let same = FiniteInvariantPair::new(pair.action().clone(), pair.p1().to_vec(), pair.p1().to_vec())
            .unwrap();
        assert!(invariant_lr(&same).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn absolute_continuity_violation_is_reported() {
        let action = FiniteAction::new(FiniteGroup::sign(), vec![vec![0, 1, 2, 3], vec![3, 2, 1, 0]]).unwrap();
        let pair = FiniteInvariantPair::new(action, vec![0.5, 0.0, 0.0, 0.5], vec![0.25; 4]).unwrap();
        assert!(matches!(invariant_lr(&pair), Err(Error::AbsoluteContinuity { .. })));
        assert_eq!(kl_maximal_invariant(&pair), f64::INFINITY);
    }

    #[test]
    fn kl_examples() {
        let pair = sign_instance();
        let want = 0.5 * (5.0f64 / 3.0).ln() + 0.5 * (5.0f64 / 7.0).ln();
        assert!((kl_maximal_invariant(&pair) - want).abs() < 1e-15);
        assert!((want - 0.087_176_7).abs() < 1e-7);
        let trivial = FiniteAction::new(FiniteGroup::trivial(), vec![vec![0, 1, 2]]).unwrap();
        let (p, q) = (vec![0.2, 0.3, 0.5], vec![0.5, 0.25, 0.25]);
        let tp = FiniteInvariantPair::new(trivial, p.clone(), q.clone()).unwrap();
        assert!((kl_maximal_invariant(&tp) - kl(&q, &p)).abs() < 1e-15);
    }

    #[test]
    fn joint_kl_examples() {
        let pair = sign_instance();
        let uniform = joint_kl(&pair, &PriorPair::uniform(2));
        assert!((uniform - kl_maximal_invariant(&pair)).abs() < 1e-12);
        let point = joint_kl(&pair, &PriorPair::point_mass(2, 0));
        assert!((point - kl(pair.q1(), pair.p1())).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let priors = random_prior_pair(2, &mut rng);
            assert!(joint_kl(&pair, &priors) >= kl_maximal_invariant(&pair) - 1e-12);
        }
    }

    #[test]
    fn worst_case_growth_examples() {
        let pair = sign_instance();
        assert_eq!(worst_case_growth(&pair, &[1.0; 4]), 0.0);
        let t = invariant_lr(&pair).unwrap();
        assert!((worst_case_growth(&pair, &t) - kl_maximal_invariant(&pair)).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let probe = random_e_statistic(&pair, &mut rng);
            assert!(is_e_statistic(&pair, &probe, 1e-12));
            assert!(worst_case_growth(&pair, &probe) <= kl_maximal_invariant(&pair) + 1e-12);
        }
        let mut zeroed = t.clone();
        zeroed[0] = 0.0;
        assert_eq!(worst_case_growth(&pair, &zeroed), f64::NEG_INFINITY);
    }

    #[test]
    fn e_statistic_examples() {
        let pair = sign_instance();
        assert!(is_e_statistic(&pair, &[1.0; 4], 0.0));
        assert!(is_e_statistic(&pair, &invariant_lr(&pair).unwrap(), 1e-12));
        assert!(!is_e_statistic(&pair, &[2.0; 4], 1e-12));
    }

    #[test]
    fn minimizer_examples() {
        let pair = sign_instance();
        let kl_m = kl_maximal_invariant(&pair);
        let res = joint_kl_minimize(&pair, 1e-12, 100_000).unwrap();
        assert!(res.value >= kl_m - 1e-12);
        assert!(res.value - kl_m < 1e-8, "{} vs {kl_m}", res.value);

        let same = FiniteInvariantPair::new(pair.action().clone(), pair.p1().to_vec(), pair.p1().to_vec())
            .unwrap();
        assert!(joint_kl_minimize(&same, 1e-12, 100_000).unwrap().value < 1e-8);

        let trivial = FiniteAction::new(FiniteGroup::trivial(), vec![vec![0, 1, 2]]).unwrap();
        let (p, q) = (vec![0.2, 0.3, 0.5], vec![0.5, 0.25, 0.25]);
        let tp = FiniteInvariantPair::new(trivial, p.clone(), q.clone()).unwrap();
        assert!((joint_kl_minimize(&tp, 1e-15, 10).unwrap().value - kl(&q, &p)).abs() < 1e-15);
    }

    #[test]
    fn minimizer_reports_iteration_cap() {
        let pair = sign_instance();
        assert!(matches!(
            joint_kl_minimize(&pair, 0.0, 3),
            Err(Error::MaxIterations { iterations: 3, .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let pair = sign_instance();
        let doc = InstanceDocument::from(&pair);
        let text = serde_json::to_string(&doc).unwrap();
        let back: InstanceDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_pair().unwrap(), pair);
    }

    #[test]
    fn random_instances_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let pair = random_instance(&mut rng);
            assert!(pair.action().space_size() <= 24);
            assert!(pair.group().order() <= 8);
        }
    }
}
