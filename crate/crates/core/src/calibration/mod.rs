//! Homogeneity-enforced equalization.
//!
//! The converter sees every test sample twice, once as `x` and once scaled as
//! `alpha x`. A linear converter would satisfy `y_ax = alpha y_x`; the
//! estimator adjusts the correction offsets `theta` so that the corrected
//! outputs do, by stochastic gradient descent on
//!
//! ```text
//! J[k] = (delta_y[k] + delta_h[k]^T theta)^2
//! theta[k] = theta[k-1] - mu * delta_h[k] * (delta_y[k] + delta_h[k]^T theta[k-1])
//! ```
//!
//! On average the iterate approaches the MMSE solution
//! `theta_0 = -R_hh^-1 r_hy` as long as `mu` keeps every per-sample map
//! `I - mu delta_h delta_h^T` non-expansive, i.e. `mu < 2 / max ||delta_h||^2`.
//! With unit-weight selection vectors this becomes `mu < 2 / ((1 + alpha^2) q)`.

mod linalg;
mod sampler;

pub use sampler::PairSampler;

use thiserror::Error;

use crate::adc::AdcError;
use crate::correction::{
    CorrectionError, CorrectionMode, ParameterLayout, ParameterVector, SamplePair,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Adc(#[from] AdcError),
    #[error("non-finite estimator input")]
    NonFinite,
    #[error("step size must be finite and non-negative, got {0}")]
    InvalidStepSize(f64),
    #[error("the a-priori step-size bound only exists for unit-weight selection vectors")]
    BoundUnavailable,
    #[error("no samples supplied")]
    NoSamples,
    #[error("every sample has an all-zero regressor")]
    NoExcitation,
    #[error("sample stream ended after {got} of {needed} pairs")]
    StreamExhausted { needed: u64, got: u64 },
    #[error("{0} consecutive pairs over-ranged the converter")]
    NoUsablePairs(u64),
    #[error("{0}")]
    InvalidArgument(String),
}

/// How a single sample pair moves the estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpdateRule {
    /// Fixed step-size gradient step.
    Sgd,
    /// Kaczmarz projection onto the sample's hyperplane.
    Als,
}

/// Adaptive estimator state.
#[derive(Debug, Clone, PartialEq)]
pub struct HeeEstimator<T> {
    theta: ParameterVector<T>,
    mu: T,
    alpha: T,
    layout: ParameterLayout,
    k: u64,
}

impl<T: Scalar> HeeEstimator<T> {
    /// Starts from `theta = 0`, the uncorrected converter.
    ///
    /// `alpha = 1` is accepted but carries no information: every pair then
    /// yields `delta_y = 0` and `delta_h = 0`.
    pub fn new(layout: ParameterLayout, mu: T, alpha: T) -> Result<Self, CalibrationError> {
        if !mu.is_finite() || mu < T::zero() {
            return Err(CalibrationError::InvalidStepSize(mu.as_f64()));
        }
        if !alpha.is_finite() {
            return Err(CalibrationError::InvalidArgument(format!(
                "alpha must be finite, got {alpha}"
            )));
        }
        Ok(Self {
            theta: ParameterVector::zeros(&layout),
            mu,
            alpha,
            layout,
            k: 0,
        })
    }

    pub fn with_theta(mut self, theta: ParameterVector<T>) -> Result<Self, CalibrationError> {
        if theta.len() != self.layout.len() {
            return Err(CorrectionError::DimensionMismatch {
                expected: self.layout.len(),
                actual: theta.len(),
            }
            .into());
        }
        self.theta = theta;
        Ok(self)
    }

    pub fn theta(&self) -> &ParameterVector<T> {
        &self.theta
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn set_mu(&mut self, mu: T) -> Result<(), CalibrationError> {
        if !mu.is_finite() || mu < T::zero() {
            return Err(CalibrationError::InvalidStepSize(mu.as_f64()));
        }
        self.mu = mu;
        Ok(())
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    /// Number of pairs processed.
    pub fn k(&self) -> u64 {
        self.k
    }

    fn innovation(&self, pair: &SamplePair<T>) -> Result<T, CalibrationError> {
        if !pair.delta_y.is_finite() || !pair.delta_h.is_finite() {
            return Err(CalibrationError::NonFinite);
        }
        Ok(pair.innovation(&self.theta)?)
    }

    /// Gradient step; only the entries in the support of `delta_h` move.
    /// Returns the pre-update innovation `delta_y + delta_h^T theta[k-1]`.
    pub fn hee_update(&mut self, pair: &SamplePair<T>) -> Result<T, CalibrationError> {
        let e = self.innovation(pair)?;
        let theta = self.theta.values_mut();
        for &(i, w) in pair.delta_h.entries() {
            theta[i] -= self.mu * w * e;
        }
        self.k += 1;
        Ok(e)
    }

    /// Kaczmarz step: projects `theta` onto `{delta_y + delta_h^T theta = 0}`.
    /// Pairs with `delta_h = 0` carry no information and leave `theta` alone.
    pub fn als_update(&mut self, pair: &SamplePair<T>) -> Result<T, CalibrationError> {
        let e = self.innovation(pair)?;
        let norm = pair.delta_h.norm_sq();
        if norm > T::zero() {
            let theta = self.theta.values_mut();
            for &(i, w) in pair.delta_h.entries() {
                theta[i] -= w * e / norm;
            }
        }
        self.k += 1;
        Ok(e)
    }

    pub fn update(
        &mut self,
        rule: UpdateRule,
        pair: &SamplePair<T>,
    ) -> Result<T, CalibrationError> {
        match rule {
            UpdateRule::Sgd => self.hee_update(pair),
            UpdateRule::Als => self.als_update(pair),
        }
    }
}

/// Empirical MMSE solution.
#[derive(Debug, Clone, PartialEq)]
pub struct MmseSolution<T> {
    pub theta0: ParameterVector<T>,
    /// `mean(delta_h delta_h^T)`, dense.
    pub autocorrelation: Vec<Vec<T>>,
    /// `mean(delta_h delta_y)`.
    pub crosscorrelation: Vec<T>,
    pub sample_count: u64,
    /// Numerical rank of the autocorrelation matrix.
    pub rank: usize,
}

impl<T: Scalar> MmseSolution<T> {
    /// Parameters no sample ever excited; their `theta0` entry is zero.
    pub fn unexercised(&self) -> Vec<usize> {
        (0..self.crosscorrelation.len())
            .filter(|&i| self.autocorrelation[i][i] == T::zero())
            .collect()
    }
}

/// Streaming accumulator for the correlation statistics.
#[derive(Debug, Clone)]
pub struct CorrelationAccumulator<T> {
    r_hh: Vec<Vec<T>>,
    r_hy: Vec<T>,
    count: u64,
}

impl<T: Scalar> CorrelationAccumulator<T> {
    pub fn new(len: usize) -> Self {
        Self {
            r_hh: vec![vec![T::zero(); len]; len],
            r_hy: vec![T::zero(); len],
            count: 0,
        }
    }

    pub fn add(&mut self, pair: &SamplePair<T>) -> Result<(), CalibrationError> {
        if pair.delta_h.len() != self.r_hy.len() {
            return Err(CorrectionError::DimensionMismatch {
                expected: self.r_hy.len(),
                actual: pair.delta_h.len(),
            }
            .into());
        }
        if !pair.delta_y.is_finite() || !pair.delta_h.is_finite() {
            return Err(CalibrationError::NonFinite);
        }
        let entries = pair.delta_h.entries();
        for &(i, wi) in entries {
            self.r_hy[i] += wi * pair.delta_y;
            for &(j, wj) in entries {
                self.r_hh[i][j] += wi * wj;
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Minimum-norm solution of `R_hh theta = -r_hy` over the accumulated samples.
    pub fn solve(&self) -> Result<MmseSolution<T>, CalibrationError> {
        if self.count == 0 {
            return Err(CalibrationError::NoSamples);
        }
        let n = T::lit(self.count as f64);
        let autocorrelation: Vec<Vec<T>> = self
            .r_hh
            .iter()
            .map(|row| row.iter().map(|&v| v / n).collect())
            .collect();
        let crosscorrelation: Vec<T> = self.r_hy.iter().map(|&v| v / n).collect();
        let rhs: Vec<T> = crosscorrelation.iter().map(|&v| -v).collect();
        let (theta0, rank) = linalg::min_norm_solve(&autocorrelation, &rhs);
        Ok(MmseSolution {
            theta0: ParameterVector::from_values(theta0),
            autocorrelation,
            crosscorrelation,
            sample_count: self.count,
            rank,
        })
    }
}

/// Batch MMSE solution over `samples`.
pub fn mmse_solve<'s, T: Scalar>(
    samples: impl IntoIterator<Item = &'s SamplePair<T>>,
) -> Result<MmseSolution<T>, CalibrationError> {
    let mut samples = samples.into_iter().peekable();
    let first = samples.peek().ok_or(CalibrationError::NoSamples)?;
    let mut acc = CorrelationAccumulator::new(first.delta_h.len());
    for s in samples {
        acc.add(s)?;
    }
    acc.solve()
}

/// A-priori stability bound `2 / ((1 + alpha^2) q)`.
///
/// Only valid for unit-weight selection vectors; extended mode weights depend
/// on the unknown converter errors, so no a-priori bound exists.
pub fn step_size_bound<T: Scalar>(
    q: usize,
    alpha: T,
    mode: CorrectionMode,
) -> Result<T, CalibrationError> {
    if mode == CorrectionMode::Extended {
        return Err(CalibrationError::BoundUnavailable);
    }
    if q == 0 {
        return Err(CalibrationError::InvalidArgument(
            "q must be at least 1".into(),
        ));
    }
    Ok(T::lit(2.0) / ((T::one() + alpha * alpha) * T::from_count(q)))
}

/// Deterministic bound `2 / max_k ||delta_h[k]||^2` over observed samples.
pub fn empirical_step_size_bound<'s, T: Scalar>(
    samples: impl IntoIterator<Item = &'s SamplePair<T>>,
) -> Result<T, CalibrationError> {
    let mut any = false;
    let mut max = T::zero();
    for s in samples {
        any = true;
        max = max.max(s.delta_h.norm_sq());
    }
    if !any {
        return Err(CalibrationError::NoSamples);
    }
    if max == T::zero() {
        return Err(CalibrationError::NoExcitation);
    }
    Ok(T::lit(2.0) / max)
}

/// Error-norm and cost history of a calibration run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace<T> {
    /// Update count at each record.
    pub steps: Vec<u64>,
    /// `||theta[k] - theta_0||_2`; empty without an oracle.
    pub error_norms: Vec<T>,
    /// Instantaneous cost `J[k]` of the recorded update.
    pub cost_samples: Vec<T>,
    pub record_stride: u64,
    /// Error norm before the first update, when an oracle was supplied.
    pub initial_error_norm: Option<T>,
}

impl<T: Scalar> ConvergenceTrace<T> {
    fn new(stride: u64) -> Self {
        Self {
            steps: Vec::new(),
            error_norms: Vec::new(),
            cost_samples: Vec::new(),
            record_stride: stride,
            initial_error_norm: None,
        }
    }

    pub fn final_error_norm(&self) -> Option<T> {
        self.error_norms.last().copied()
    }

    /// Mean error norm over the records with `from <= k <= to`.
    pub fn mean_error_norm(&self, from: u64, to: u64) -> Option<T> {
        let vals: Vec<T> = self
            .steps
            .iter()
            .zip(&self.error_norms)
            .filter(|(&k, _)| k >= from && k <= to)
            .map(|(_, &e)| e)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().copied().sum::<T>() / T::from_count(vals.len()))
    }
}

/// Runs `steps` updates of `est` over `source`, recording every `stride` updates.
pub fn run_calibration<T: Scalar>(
    source: impl IntoIterator<Item = SamplePair<T>>,
    est: &mut HeeEstimator<T>,
    rule: UpdateRule,
    oracle: Option<&ParameterVector<T>>,
    steps: u64,
    stride: u64,
) -> Result<ConvergenceTrace<T>, CalibrationError> {
    if steps == 0 {
        return Err(CalibrationError::InvalidArgument(
            "steps must be at least 1".into(),
        ));
    }
    let stride = stride.max(1);
    let mut trace = ConvergenceTrace::new(stride);
    if let Some(o) = oracle {
        trace.initial_error_norm = Some(est.theta.distance(o)?);
    }
    let mut source = source.into_iter();
    for step in 1..=steps {
        let pair = source.next().ok_or(CalibrationError::StreamExhausted {
            needed: steps,
            got: step - 1,
        })?;
        let e = est.update(rule, &pair)?;
        if step % stride == 0 {
            trace.steps.push(est.k);
            trace.cost_samples.push(e * e);
            if let Some(o) = oracle {
                trace.error_norms.push(est.theta.distance(o)?);
            }
        }
    }
    Ok(trace)
}

/// Calibration phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    /// Foreground start-up calibration from the signal generator.
    Initial,
    /// Background tracking on the held application signal.
    Background,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::Initial => 1,
            Phase::Background => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPhaseConfig {
    pub phase1_steps: u64,
    pub phase2_steps: u64,
    /// Fraction of application pairs used for background updates, in (0, 1].
    pub duty: f64,
    pub stride: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseRecord<T> {
    pub phase: Phase,
    /// Total updates so far, across both phases.
    pub k: u64,
    /// Pairs drawn from this phase's source so far.
    pub samples: u64,
    pub error_norm: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseTrace<T> {
    pub records: Vec<TwoPhaseRecord<T>>,
    pub phase1_samples: u64,
    pub phase2_samples: u64,
}

impl<T: Scalar> TwoPhaseTrace<T> {
    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &TwoPhaseRecord<T>> {
        self.records.iter().filter(move |r| r.phase == phase)
    }
}

fn duty_selects(index: u64, duty: f64) -> bool {
    ((index + 1) as f64 * duty).floor() > (index as f64 * duty).floor()
}

/// Kaczmarz start-up on the generator stream, then gradient tracking on the
/// application stream using only a `duty` fraction of its pairs.
///
/// `oracle(phase, samples)` supplies the reference `theta_0` in effect after
/// `samples` pairs of that phase's source, so that drifting profiles can be
/// scored against the right target.
pub fn run_two_phase<'o, T, A, B, F>(
    sg_source: A,
    sa_source: B,
    est: &mut HeeEstimator<T>,
    config: TwoPhaseConfig,
    oracle: F,
) -> Result<TwoPhaseTrace<T>, CalibrationError>
where
    T: Scalar,
    A: IntoIterator<Item = SamplePair<T>>,
    B: IntoIterator<Item = SamplePair<T>>,
    F: Fn(Phase, u64) -> Option<&'o ParameterVector<T>>,
{
    if !(config.duty > 0.0 && config.duty <= 1.0) {
        return Err(CalibrationError::InvalidArgument(format!(
            "duty must be in (0, 1], got {}",
            config.duty
        )));
    }
    if config.phase1_steps + config.phase2_steps == 0 {
        return Err(CalibrationError::InvalidArgument(
            "both phases are empty".into(),
        ));
    }
    let stride = config.stride.max(1);
    let mut trace = TwoPhaseTrace {
        records: Vec::new(),
        phase1_samples: 0,
        phase2_samples: 0,
    };

    let record = |trace: &mut TwoPhaseTrace<T>,
                  est: &HeeEstimator<T>,
                  phase,
                  samples|
     -> Result<(), CalibrationError> {
        let error_norm = oracle(phase, samples)
            .map(|o| est.theta.distance(o))
            .transpose()?;
        trace.records.push(TwoPhaseRecord {
            phase,
            k: est.k,
            samples,
            error_norm,
        });
        Ok(())
    };

    let mut sg = sg_source.into_iter();
    for step in 1..=config.phase1_steps {
        let pair = sg.next().ok_or(CalibrationError::StreamExhausted {
            needed: config.phase1_steps,
            got: step - 1,
        })?;
        est.als_update(&pair)?;
        trace.phase1_samples += 1;
        if step % stride == 0 {
            let samples = trace.phase1_samples;
            record(&mut trace, est, Phase::Initial, samples)?;
        }
    }

    let mut sa = sa_source.into_iter();
    let mut updates = 0;
    while updates < config.phase2_steps {
        let pair = sa.next().ok_or(CalibrationError::StreamExhausted {
            needed: config.phase2_steps,
            got: updates,
        })?;
        let index = trace.phase2_samples;
        trace.phase2_samples += 1;
        if !duty_selects(index, config.duty) {
            continue;
        }
        est.hee_update(&pair)?;
        updates += 1;
        if updates % stride == 0 {
            let samples = trace.phase2_samples;
            record(&mut trace, est, Phase::Background, samples)?;
        }
    }
    Ok(trace)
}
