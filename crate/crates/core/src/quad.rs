//! Adaptive Gauss–Kronrod integration of positive integrands given in log space.
//!
//! Every integral in this crate has the form `ln ∫ exp(g(x)) dx` where `g` can
//! range over hundreds of nats. The integrator locates the mode of `g`, walks
//! outward with geometrically growing steps until `g` has dropped by
//! [`QuadOptions::tail_drop`] below its maximum, and then runs a globally
//! adaptive 7/15-point Gauss–Kronrod scheme on `exp(g - max g)` over the
//! resulting partition.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    /// Target relative error of the integral (not of its logarithm).
    pub rel_tol: f64,
    /// Maximum number of panels held by the adaptive scheme.
    pub max_panels: usize,
    /// Nats below the maximum at which the integrand is treated as zero.
    pub tail_drop: f64,
    /// Each initial panel is split into this many equal parts. Setting it to
    /// 2 doubles the node count, which is how convergence is cross-checked.
    pub refine: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            rel_tol: 1e-12,
            max_panels: 4000,
            tail_drop: 46.0,
            refine: 1,
        }
    }
}

impl QuadOptions {
    pub fn refined(mut self, factor: usize) -> Self {
        self.refine = self.refine.max(1) * factor.max(1);
        self
    }
}

/// Where to start looking for the mass of the integrand.
#[derive(Debug, Clone, Default)]
pub struct Hint {
    pub guess: f64,
    /// Rough width of the peak; only sets the first step of the mode search.
    pub scale: f64,
    /// Narrow secondary peaks as `(location, width)`; the partition is
    /// graded geometrically around each so the nodes resolve it.
    pub peaks: Vec<(f64, f64)>,
}

impl Hint {
    pub fn new(guess: f64, scale: f64) -> Self {
        Hint {
            guess,
            scale,
            peaks: Vec::new(),
        }
    }

    pub fn with_peak(mut self, location: f64, width: f64) -> Self {
        self.peaks.push((location, width));
        self
    }
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<Panel> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let sum = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * sum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * sum;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    if !value.is_finite() || !error.is_finite() {
        return Err(Error::Quadrature(format!(
            "non-finite integrand on [{a}, {b}]"
        )));
    }
    Ok(Panel { a, b, value, error })
}

fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Returns `ln ∫_lo^hi exp(ln_f(x)) dx`. Bounds may be infinite.
pub fn ln_integrate<F>(mut ln_f: F, lo: f64, hi: f64, hint: &Hint, opts: &QuadOptions) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::Quadrature(format!("empty interval [{lo}, {hi}]")));
    }
    let scale = if hint.scale.is_finite() && hint.scale > 0.0 {
        hint.scale
    } else {
        1.0
    };

    // Mode search: expanding pattern search, shrinking on failure.
    let mut x = clamp(hint.guess, lo, hi);
    let mut fx = ln_f(x);
    if fx.is_nan() {
        return Err(Error::Quadrature(format!("NaN integrand at {x}")));
    }
    if fx == f64::NEG_INFINITY {
        let mut found = false;
        let mut h = scale;
        for _ in 0..200 {
            for cand in [clamp(x + h, lo, hi), clamp(x - h, lo, hi)] {
                let fc = ln_f(cand);
                if fc.is_finite() {
                    x = cand;
                    fx = fc;
                    found = true;
                    break;
                }
            }
            if found {
                break;
            }
            h *= 2.0;
        }
        if !found {
            return Err(Error::Quadrature("integrand vanishes everywhere probed".into()));
        }
    }
    let mut h = scale;
    let mut width = scale;
    for _ in 0..2000 {
        let xr = clamp(x + h, lo, hi);
        let xl = clamp(x - h, lo, hi);
        let fr = if xr != x { ln_f(xr) } else { f64::NEG_INFINITY };
        let fl = if xl != x { ln_f(xl) } else { f64::NEG_INFINITY };
        if fr.is_nan() || fl.is_nan() {
            return Err(Error::Quadrature("NaN integrand during mode search".into()));
        }
        if fr > fx && fr >= fl {
            x = xr;
            fx = fr;
            h *= 2.0;
        } else if fl > fx {
            x = xl;
            fx = fl;
            h *= 2.0;
        } else {
            let drop = fx - 0.5 * (fl.max(fx - 1e3) + fr.max(fx - 1e3));
            if drop < 0.5 || h < 1e-300 {
                width = if drop > 1e-12 {
                    (h / (2.0 * drop).sqrt()).min(h)
                } else {
                    h
                };
                break;
            }
            h *= 0.25;
        }
    }
    if !fx.is_finite() {
        return Err(Error::Quadrature("integrand maximum is not finite".into()));
    }
    let width = width.max(f64::MIN_POSITIVE);

    // Tail walks.
    let mut fmax = fx;
    let mut points = vec![x];
    for dir in [1.0f64, -1.0] {
        let limit = if dir > 0.0 { hi } else { lo };
        let mut cur = x;
        let mut step = width;
        let mut walked = 0;
        while cur != limit {
            let next = clamp(cur + dir * step, lo, hi);
            let fnext = ln_f(next);
            if fnext.is_nan() {
                return Err(Error::Quadrature(format!("NaN integrand at {next}")));
            }
            points.push(next);
            fmax = fmax.max(fnext);
            if fnext < fmax - opts.tail_drop {
                break;
            }
            cur = next;
            step *= 2.0;
            walked += 1;
            if walked > 2100 {
                return Err(Error::Quadrature("integrand tail does not decay".into()));
            }
        }
    }
    let (left, right) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, r), &p| (l.min(p), r.max(p)));
    for &(center, w) in &hint.peaks {
        if !(center.is_finite() && w > 0.0) {
            continue;
        }
        points.push(center);
        let mut offset = w;
        while offset < right - left {
            points.push(center + offset);
            points.push(center - offset);
            offset *= 2.0;
        }
    }
    points.retain(|p| *p >= left && *p <= right);
    points.sort_by(f64::total_cmp);
    points.dedup();

    let offset = fmax;
    let mut integrand = |t: f64| (ln_f(t) - offset).exp();
    let refine = opts.refine.max(1);
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for pair in points.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let step = (b - a) / refine as f64;
        for k in 0..refine {
            let pa = a + step * k as f64;
            let pb = if k + 1 == refine { b } else { pa + step };
            if pb > pa {
                let panel = gauss_kronrod(&mut integrand, pa, pb)?;
                total += panel.value;
                total_err += panel.error;
                heap.push(panel);
            }
        }
    }
    while total_err > opts.rel_tol * total.abs() {
        if heap.len() >= opts.max_panels {
            return Err(Error::Quadrature(format!(
                "no convergence with {} panels (rel. error {:e})",
                heap.len(),
                total_err / total.abs()
            )));
        }
        let worst = heap.pop().expect("at least one panel");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel cannot be split further in floating point.
            heap.push(Panel {
                error: 0.0,
                ..worst
            });
            total_err -= worst.error;
            continue;
        }
        let left = gauss_kronrod(&mut integrand, worst.a, mid)?;
        let right = gauss_kronrod(&mut integrand, mid, worst.b)?;
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    if total <= 0.0 {
        return Err(Error::Quadrature("integral is not positive".into()));
    }
    Ok(total.ln() + offset)
}

/// Integrates a positive function over `[lo, hi]` and returns the value
/// itself rather than its logarithm.
pub fn integrate_positive<F>(mut f: F, lo: f64, hi: f64, hint: &Hint, opts: &QuadOptions) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    ln_integrate(|x| f(x).ln(), lo, hi, hint, opts).map(f64::exp)
}

/// Numerically stable `ln(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}
