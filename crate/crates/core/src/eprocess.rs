//! Sequential e-processes, Ville's threshold test and stopping rules.
//!
//! `ln T*ₙ` is recomputed from the running sufficient statistic after every
//! observation rather than accumulated from increments. Stopping rules that
//! claim to be adapted to the invariant filtration are only ever shown an
//! [`InvariantView`], so they cannot peek at the raw observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lt_group::{log_evalue_lt, LTAccumulator};
use crate::quad::QuadOptions;
use crate::ttest::{self, TSufficientStats, TTestHypotheses};

/// Longest stream accepted by the engine.
pub const MAX_STREAM: usize = 1_000_000;

/// Likelihood ratio of a maximal invariant, computed from a running summary.
pub trait InvariantLr {
    type Obs;
    type Summary: Clone;

    fn empty(&self) -> Self::Summary;

    fn push(&self, summary: &mut Self::Summary, obs: &Self::Obs) -> Result<()>;

    /// `ln T*ₙ` for the prefix summarized by `summary`.
    fn log_evalue(&self, summary: &Self::Summary) -> Result<f64>;

    /// A scalar maximal invariant for stopping rules, when defined.
    fn statistic(&self, _summary: &Self::Summary) -> Option<f64> {
        None
    }
}

fn push_scalar(s: &mut TSufficientStats, x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::domain("ttest", "observation is not finite"));
    }
    s.push(x);
    Ok(())
}

/// Simple-vs-simple t-test. `T*₁` is the likelihood ratio of the sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestModel {
    pub hyp: TTestHypotheses,
}

impl InvariantLr for TTestModel {
    type Obs = f64;
    type Summary = TSufficientStats;

    fn empty(&self) -> TSufficientStats {
        TSufficientStats::new()
    }

    fn push(&self, s: &mut TSufficientStats, x: &f64) -> Result<()> {
        push_scalar(s, *x)
    }

    fn log_evalue(&self, s: &TSufficientStats) -> Result<f64> {
        if s.n() == 0 {
            return Ok(0.0);
        }
        ttest::log_evalue(s, &self.hyp)
    }

    fn statistic(&self, s: &TSufficientStats) -> Option<f64> {
        ttest::t_statistic(s).ok()
    }
}

/// Normal-prior mixture over the alternative effect size (`δ₀ = 0`), by
/// quadrature. `T̃₁ = 1` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub kappa: f64,
    pub opts: QuadOptions,
}

impl MixtureModel {
    pub fn new(kappa: f64) -> Self {
        MixtureModel {
            kappa,
            opts: QuadOptions::default(),
        }
    }
}

impl InvariantLr for MixtureModel {
    type Obs = f64;
    type Summary = TSufficientStats;

    fn empty(&self) -> TSufficientStats {
        TSufficientStats::new()
    }

    fn push(&self, s: &mut TSufficientStats, x: &f64) -> Result<()> {
        push_scalar(s, *x)
    }

    fn log_evalue(&self, s: &TSufficientStats) -> Result<f64> {
        match s.n() {
            0 | 1 => Ok(0.0),
            n => ttest::log_mixture_evalue_direction(n, s.direction()?, self.kappa, &self.opts),
        }
    }

    fn statistic(&self, s: &TSufficientStats) -> Option<f64> {
        ttest::t_statistic(s).ok()
    }
}

/// The same mixture through its two-observation closed form; defined for
/// `n ≤ 2` only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormMixtureModel {
    pub kappa: f64,
}

impl InvariantLr for ClosedFormMixtureModel {
    type Obs = f64;
    type Summary = TSufficientStats;

    fn empty(&self) -> TSufficientStats {
        TSufficientStats::new()
    }

    fn push(&self, s: &mut TSufficientStats, x: &f64) -> Result<()> {
        if s.n() >= 2 {
            return Err(Error::domain("closed_form_mixture", "closed form covers two observations"));
        }
        push_scalar(s, *x)
    }

    fn log_evalue(&self, s: &TSufficientStats) -> Result<f64> {
        match s.n() {
            0 | 1 => Ok(0.0),
            _ => {
                // x₁² + x₂² and (x₁ − x₂)² from the summary.
                let ss = s.sum_sq();
                let k2 = self.kappa * self.kappa;
                if !(ss > 0.0) {
                    return Err(Error::DegenerateSample("all observations are zero".into()));
                }
                let d2 = 2.0 * s.sum_sq_dev();
                Ok(0.5 * (2.0 * k2 + 1.0).ln() + ss.ln() - (k2 * d2 + ss).ln())
            }
        }
    }
}

/// LT⁺(d)-invariant mean test. `T* = 1` while `n ≤ d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtModel {
    pub delta0: Vec<f64>,
    pub delta1: Vec<f64>,
}

impl LtModel {
    pub fn new(delta0: Vec<f64>, delta1: Vec<f64>) -> Result<Self> {
        if delta0.len() != delta1.len() || delta0.is_empty() {
            return Err(Error::domain("ltmean", "delta0 and delta1 must have the same positive length"));
        }
        if delta0.iter().chain(&delta1).any(|v| !v.is_finite()) {
            return Err(Error::domain("ltmean", "effect sizes must be finite"));
        }
        Ok(LtModel { delta0, delta1 })
    }

    pub fn d(&self) -> usize {
        self.delta0.len()
    }
}

impl InvariantLr for LtModel {
    type Obs = Vec<f64>;
    type Summary = LTAccumulator;

    fn empty(&self) -> LTAccumulator {
        LTAccumulator::new(self.d())
    }

    fn push(&self, s: &mut LTAccumulator, x: &Vec<f64>) -> Result<()> {
        s.push(x)
    }

    fn log_evalue(&self, s: &LTAccumulator) -> Result<f64> {
        if s.n() <= self.d() {
            return Ok(0.0);
        }
        log_evalue_lt(&s.summary()?, &self.delta0, &self.delta1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Continue,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EProcessState {
    pub n: usize,
    pub log_evalue: f64,
    pub log_history: Vec<f64>,
    pub running_max_log: f64,
    pub alpha: f64,
    pub rejected_at: Option<usize>,
}

impl EProcessState {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::domain("eprocess", format!("alpha = {alpha} must lie in (0, 1)")));
        }
        Ok(EProcessState {
            n: 0,
            log_evalue: 0.0,
            log_history: Vec::new(),
            running_max_log: f64::NEG_INFINITY,
            alpha,
            rejected_at: None,
        })
    }

    /// `ln(1/α)`.
    pub fn log_threshold(&self) -> f64 {
        -self.alpha.ln()
    }

    fn record(&mut self, log_evalue: f64) {
        self.n += 1;
        self.log_evalue = log_evalue;
        self.log_history.push(log_evalue);
        self.running_max_log = self.running_max_log.max(log_evalue);
        if self.rejected_at.is_none() && log_evalue >= self.log_threshold() {
            self.rejected_at = Some(self.n);
        }
    }
}

/// Reject once the e-process has reached `1/α`; the decision is sticky.
pub fn ville_decision(state: &EProcessState) -> Decision {
    if state.running_max_log >= state.log_threshold() {
        Decision::Reject
    } else {
        Decision::Continue
    }
}

/// What an invariant-adapted stopping rule may look at.
#[derive(Debug, Clone, Copy)]
pub struct InvariantView<'a> {
    pub n: usize,
    pub log_evalue: f64,
    pub log_history: &'a [f64],
    pub statistic: Option<f64>,
}

pub type InvariantPredicate = Box<dyn Fn(&InvariantView<'_>) -> bool + Send + Sync>;
pub type FullDataPredicate<O> = Box<dyn Fn(&[O], &InvariantView<'_>) -> bool + Send + Sync>;

pub enum StoppingRule<O> {
    FixedHorizon(usize),
    /// Stop at the first `n` with `T*ₙ ≥ 1/α`.
    ThresholdCrossing,
    Invariant(InvariantPredicate),
    /// May inspect the raw observations; not covered by the optional
    /// stopping guarantee.
    FullData(FullDataPredicate<O>),
}

impl<O> StoppingRule<O> {
    pub fn adapted_to_invariant(&self) -> bool {
        !matches!(self, StoppingRule::FullData(_))
    }

    pub fn invariant(pred: impl Fn(&InvariantView<'_>) -> bool + Send + Sync + 'static) -> Self {
        StoppingRule::Invariant(Box::new(pred))
    }

    pub fn full_data(pred: impl Fn(&[O], &InvariantView<'_>) -> bool + Send + Sync + 'static) -> Self {
        StoppingRule::FullData(Box::new(pred))
    }
}

impl StoppingRule<f64> {
    /// Stop after one observation iff `|x₁| ∉ [a, b]`, otherwise after two.
    pub fn magnitude_window(a: f64, b: f64) -> Self {
        StoppingRule::full_data(move |xs: &[f64], view| view.n >= 2 || !(a..=b).contains(&xs[0].abs()))
    }
}

impl<O> std::fmt::Debug for StoppingRule<O> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StoppingRule::FixedHorizon(n) => write!(f, "FixedHorizon({n})"),
            StoppingRule::ThresholdCrossing => write!(f, "ThresholdCrossing"),
            StoppingRule::Invariant(_) => write!(f, "Invariant(..)"),
            StoppingRule::FullData(_) => write!(f, "FullData(..)"),
        }
    }
}

/// A running e-process for one stream.
#[derive(Debug, Clone)]
pub struct EProcess<M: InvariantLr> {
    model: M,
    summary: M::Summary,
    state: EProcessState,
}

impl<M: InvariantLr> EProcess<M> {
    pub fn new(model: M, alpha: f64) -> Result<Self> {
        Ok(EProcess {
            summary: model.empty(),
            model,
            state: EProcessState::new(alpha)?,
        })
    }

    pub fn state(&self) -> &EProcessState {
        &self.state
    }

    pub fn summary(&self) -> &M::Summary {
        &self.summary
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    /// Absorbs one observation and recomputes `ln T*ₙ` from the summary.
    /// Errors carry the 0-based index of the offending observation.
    pub fn update(&mut self, obs: &M::Obs) -> Result<&EProcessState> {
        let index = self.state.n;
        if index >= MAX_STREAM {
            return Err(Error::StreamTooLong { limit: MAX_STREAM });
        }
        let mut next = self.summary.clone();
        let at = |e| Error::AtObservation {
            index,
            source: Box::new(e),
        };
        self.model.push(&mut next, obs).map_err(at)?;
        let log_e = self.model.log_evalue(&next).map_err(at)?;
        if log_e.is_nan() {
            return Err(at(Error::NonFinite { index }));
        }
        self.summary = next;
        self.state.record(log_e);
        Ok(&self.state)
    }

    pub fn view(&self) -> InvariantView<'_> {
        InvariantView {
            n: self.state.n,
            log_evalue: self.state.log_evalue,
            log_history: &self.state.log_history,
            statistic: self.model.statistic(&self.summary),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopOutcome {
    pub stopped_n: usize,
    pub log_evalue: f64,
    /// Whether the rule was adapted to the invariant filtration.
    pub safe: bool,
    /// False when the stream ran out before the rule fired.
    pub stopped: bool,
    pub state: EProcessState,
}

impl StopOutcome {
    pub fn evalue(&self) -> f64 {
        self.log_evalue.exp()
    }
}

/// Feeds `stream` until `rule` fires or the stream ends.
pub fn run_with_stopping<M: InvariantLr>(
    model: M,
    stream: &[M::Obs],
    rule: &StoppingRule<M::Obs>,
    alpha: f64,
) -> Result<StopOutcome> {
    if stream.len() > MAX_STREAM {
        return Err(Error::StreamTooLong { limit: MAX_STREAM });
    }
    if let StoppingRule::FixedHorizon(0) = rule {
        return Err(Error::domain("run_with_stopping", "fixed horizon must be at least 1"));
    }
    let mut process = EProcess::new(model, alpha)?;
    let mut stopped = false;
    for (i, obs) in stream.iter().enumerate() {
        process.update(obs)?;
        let view = process.view();
        stopped = match rule {
            StoppingRule::FixedHorizon(h) => view.n >= *h,
            StoppingRule::ThresholdCrossing => process.state.rejected_at.is_some(),
            StoppingRule::Invariant(pred) => pred(&view),
            StoppingRule::FullData(pred) => pred(&stream[..=i], &view),
        };
        if stopped {
            break;
        }
    }
    let state = process.state;
    Ok(StopOutcome {
        stopped_n: state.n,
        log_evalue: state.log_evalue,
        safe: rule.adapted_to_invariant(),
        stopped,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::task_rng;
    use crate::specfun::norm_cdf;
    use crate::ttest::t2_closed_form;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn tmodel(d0: f64, d1: f64) -> TTestModel {
        TTestModel {
            hyp: TTestHypotheses::new(d0, d1).unwrap(),
        }
    }

    #[test]
    fn first_update_is_the_sign_ratio() {
        let mut p = EProcess::new(tmodel(0.0, 1.0), 0.05).unwrap();
        p.update(&0.7).unwrap();
        assert!((p.state().log_evalue - (norm_cdf(1.0) / 0.5).ln()).abs() < 1e-14);
        let mut m = EProcess::new(MixtureModel::new(200.0), 0.05).unwrap();
        m.update(&0.7).unwrap();
        assert_eq!(m.state().log_evalue, 0.0);
    }

    #[test]
    fn equal_hypotheses_stay_at_zero() {
        let mut p = EProcess::new(tmodel(0.4, 0.4), 0.05).unwrap();
        for x in [1.0, -2.0, 0.5, 3.0] {
            assert_eq!(p.update(&x).unwrap().log_evalue, 0.0);
        }
        assert_eq!(ville_decision(p.state()), Decision::Continue);
    }

    #[test]
    fn ville_examples() {
        let mut s = EProcessState::new(0.05).unwrap();
        s.record(25f64.ln());
        assert_eq!(ville_decision(&s), Decision::Reject);
        assert_eq!(s.rejected_at, Some(1));
        s.record(-3.0);
        assert_eq!(ville_decision(&s), Decision::Reject);
        assert_eq!(s.rejected_at, Some(1));
        let mut low = EProcessState::new(0.05).unwrap();
        for _ in 0..100 {
            low.record(19f64.ln());
        }
        assert_eq!(ville_decision(&low), Decision::Continue);
        assert!(EProcessState::new(1.0).is_err());
    }

    #[test]
    fn state_tracks_history() {
        let mut rng = task_rng(1, 0);
        let mut p = EProcess::new(tmodel(0.0, 0.8), 0.1).unwrap();
        let mut data = Vec::new();
        for _ in 0..60 {
            let x: f64 = rng.sample::<f64, _>(StandardNormal) + 0.8;
            data.push(x);
            let s = p.update(&x).unwrap().clone();
            assert_eq!(s.log_history.len(), s.n);
            let max = s.log_history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(s.running_max_log, max);
            assert_eq!(s.rejected_at.is_some(), max >= s.log_threshold());
            let fresh = ttest::log_evalue(&TSufficientStats::from_data(&data), &p.model().hyp).unwrap();
            assert!((fresh - s.log_evalue).abs() < 1e-10);
        }
    }

    #[test]
    fn errors_name_the_observation() {
        let mut p = EProcess::new(tmodel(0.0, 1.0), 0.05).unwrap();
        p.update(&1.0).unwrap();
        match p.update(&f64::NAN) {
            Err(Error::AtObservation { index: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert_eq!(p.state().n, 1);
    }

    #[test]
    fn closed_form_model_matches_quadrature() {
        let (a, b) = (0.9, -0.2);
        let cf = run_with_stopping(ClosedFormMixtureModel { kappa: 5.0 }, &[a, b], &StoppingRule::FixedHorizon(2), 0.05)
            .unwrap();
        let q = run_with_stopping(MixtureModel::new(5.0), &[a, b], &StoppingRule::FixedHorizon(2), 0.05).unwrap();
        assert!((cf.log_evalue - q.log_evalue).abs() < 1e-9);
        assert!((cf.log_evalue - t2_closed_form(a, b, 5.0).unwrap().ln()).abs() < 1e-14);
    }

    #[test]
    fn stopping_rules_fire() {
        let data: Vec<f64> = (0..50).map(|i| 1.0 + 0.1 * (i as f64).sin()).collect();
        let fixed = run_with_stopping(tmodel(0.0, 1.0), &data, &StoppingRule::FixedHorizon(10), 0.05).unwrap();
        assert!(fixed.stopped && fixed.safe && fixed.stopped_n == 10);
        let cross = run_with_stopping(tmodel(0.0, 1.0), &data, &StoppingRule::ThresholdCrossing, 0.05).unwrap();
        assert!(cross.stopped && cross.state.rejected_at == Some(cross.stopped_n));
        let tstat = StoppingRule::invariant(|v| v.statistic.is_some_and(|t| t.abs() > 2.0));
        let t = run_with_stopping(tmodel(0.0, 1.0), &data, &tstat, 0.05).unwrap();
        assert!(t.stopped && t.stopped_n == 2);
        let window = StoppingRule::magnitude_window(0.44, 1.70);
        let w = run_with_stopping(MixtureModel::new(200.0), &[2.0, 0.1], &window, 0.05).unwrap();
        assert!(w.stopped && !w.safe && w.stopped_n == 1 && w.log_evalue == 0.0);
        let w = run_with_stopping(MixtureModel::new(200.0), &[1.0, 0.1, 5.0], &window, 0.05).unwrap();
        assert_eq!(w.stopped_n, 2);
        let never = run_with_stopping(tmodel(0.0, 1.0), &data[..3], &StoppingRule::FixedHorizon(10), 0.05).unwrap();
        assert!(!never.stopped && never.stopped_n == 3);
    }

    #[test]
    fn lt_model_waits_for_identifiability() {
        let model = LtModel::new(vec![0.0, 0.0], vec![0.5, 0.5]).unwrap();
        let mut p = EProcess::new(model, 0.05).unwrap();
        assert_eq!(p.update(&vec![1.0, 2.0]).unwrap().log_evalue, 0.0);
        assert_eq!(p.update(&vec![0.3, -1.0]).unwrap().log_evalue, 0.0);
        assert_ne!(p.update(&vec![0.9, 0.4]).unwrap().log_evalue, 0.0);
        assert!(p.update(&vec![1.0]).is_err());
    }

    #[test]
    fn state_serializes() {
        let mut p = EProcess::new(tmodel(0.0, 1.0), 0.05).unwrap();
        p.update(&1.2).unwrap();
        let json = serde_json::to_value(p.state()).unwrap();
        for key in ["n", "log_evalue", "log_history", "running_max_log", "alpha", "rejected_at"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
