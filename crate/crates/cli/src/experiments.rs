//! The four harness commands, as library functions returning their results.

use std::path::Path;
use std::thread;

use pipecal::metrics::{compute_inl, correction_inl, remove_overall_gain, residual_inl};
use pipecal::{
    build_layout, empirical_step_size_bound, run_calibration, run_two_phase, step_size_bound,
    AdcSpec64, CalibrationError, ConvergenceTrace, CorrelationAccumulator, HeeEstimator,
    InlCurve64, MmseSolution64, NonidealityProfile64, PairSampler, PairSource64, ParameterLayout,
    ParameterVector64, Phase, TwoPhaseConfig, TwoPhaseTrace, UpdateRule,
};

use crate::config::{EstimatorName, ExperimentConfig};
use crate::error::CliError;
use crate::output;

/// Converter, mismatch profile and parameter layout of one experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub spec: AdcSpec64,
    pub profile: NonidealityProfile64,
    pub layout: ParameterLayout,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let spec = cfg.adc_spec()?;
        let profile = cfg.profile(&spec)?;
        let layout = build_layout(&spec, cfg.calibration.q, cfg.mode())
            .map_err(|e| CliError::Config(format!("calibration.q: {e}")))?;
        Ok(Self {
            spec,
            profile,
            layout,
        })
    }

    pub fn sampler(
        &self,
        profile: &NonidealityProfile64,
        source: PairSource64,
    ) -> Result<PairSampler<'_, f64>, CliError> {
        Ok(PairSampler::new(
            &self.spec,
            profile.clone(),
            &self.layout,
            source,
        )?)
    }
}

/// Reference MMSE solution for `profile` from the `oracle` signal stream,
/// which is independent of the calibration stream.
pub fn reference_solution(
    cfg: &ExperimentConfig,
    setup: &Setup,
    profile: &NonidealityProfile64,
) -> Result<MmseSolution64, CliError> {
    let mut sampler = setup.sampler(profile, cfg.signal_source("oracle")?)?;
    let mut acc = CorrelationAccumulator::new(setup.layout.len());
    for _ in 0..cfg.calibration.oracle_pairs {
        acc.add(&sampler.next_pair()?)?;
    }
    Ok(acc.solve()?)
}

fn rule(cfg: &ExperimentConfig) -> UpdateRule {
    match cfg.calibration.estimator {
        EstimatorName::Sgd => UpdateRule::Sgd,
        EstimatorName::Als => UpdateRule::Als,
    }
}

/// Calibrates from zero with step size `mu` on the `signal` stream.
pub fn calibrate(
    cfg: &ExperimentConfig,
    setup: &Setup,
    mu: f64,
    oracle: &ParameterVector64,
) -> Result<(HeeEstimator<f64>, ConvergenceTrace<f64>), CliError> {
    let sampler = setup.sampler(&setup.profile, cfg.signal_source("signal")?)?;
    let mut est = HeeEstimator::new(setup.layout.clone(), mu, cfg.calibration.alpha)?;
    let trace = run_calibration(
        sampler,
        &mut est,
        rule(cfg),
        Some(oracle),
        cfg.calibration.steps,
        cfg.calibration.stride,
    )?;
    Ok((est, trace))
}

/// A run counts as converged when the estimate stays finite and ends closer
/// to the reference than it started.
pub fn converged(est: &HeeEstimator<f64>, trace: &ConvergenceTrace<f64>) -> bool {
    let finite = est.theta().is_finite() && trace.error_norms.iter().all(|e| e.is_finite());
    match (trace.initial_error_norm, trace.final_error_norm()) {
        (Some(a), Some(b)) => finite && b <= a,
        _ => finite,
    }
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub mu: f64,
    pub trace: ConvergenceTrace<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub entries: Vec<SweepEntry>,
    pub reference: MmseSolution64,
}

/// Error-norm traces for every step size of the sweep. Sweep entries run on
/// separate threads; results come back in sweep order.
pub fn convergence(cfg: &ExperimentConfig) -> Result<ConvergenceReport, CliError> {
    let setup = Setup::new(cfg)?;
    let reference = reference_solution(cfg, &setup, &setup.profile)?;
    let entries = thread::scope(|s| {
        let handles: Vec<_> = cfg
            .calibration
            .mu_sweep
            .iter()
            .map(|&mu| {
                let setup = &setup;
                let theta0 = &reference.theta0;
                s.spawn(move || -> Result<SweepEntry, CliError> {
                    let (est, trace) = calibrate(cfg, setup, mu, theta0)?;
                    let converged = converged(&est, &trace);
                    Ok(SweepEntry {
                        mu,
                        trace,
                        converged,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(CliError::Runtime("worker panicked".into())))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(ConvergenceReport { entries, reference })
}

#[derive(Debug, Clone)]
pub struct InlReport {
    /// Gain-removed INL of the uncorrected converter.
    pub true_inl: InlCurve64,
    /// Gain-removed INL implied by the estimated parameters.
    pub estimated_inl: InlCurve64,
    /// `true_inl - estimated_inl`.
    pub residual: InlCurve64,
    /// Gain-removed INL of the corrected converter, simulated directly.
    pub corrected_inl: InlCurve64,
    pub theta: ParameterVector64,
    pub trace: ConvergenceTrace<f64>,
    pub converged: bool,
}

impl InlReport {
    pub fn max_residual(&self) -> f64 {
        self.residual.max_abs()
    }
}

/// Calibrates with the configured step size, then compares true and
/// estimated INL.
pub fn inl(cfg: &ExperimentConfig) -> Result<InlReport, CliError> {
    let setup = Setup::new(cfg)?;
    let reference = reference_solution(cfg, &setup, &setup.profile)?;
    let (est, trace) = calibrate(cfg, &setup, cfg.calibration.mu, &reference.theta0)?;
    let converged = converged(&est, &trace);
    let grid = cfg.grid_points(&setup.spec);
    let true_inl = remove_overall_gain(&compute_inl(&setup.spec, &setup.profile, None, grid)?);
    let estimated_inl = remove_overall_gain(&correction_inl(
        &setup.spec,
        &setup.profile,
        &setup.layout,
        est.theta(),
        grid,
    )?);
    let residual = residual_inl(&true_inl, &estimated_inl)?;
    let corrected_inl = remove_overall_gain(&compute_inl(
        &setup.spec,
        &setup.profile,
        Some((&setup.layout, est.theta())),
        grid,
    )?);
    Ok(InlReport {
        true_inl,
        estimated_inl,
        residual,
        corrected_inl,
        theta: est.theta().clone(),
        trace,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    /// `None` in extended mode, where no a-priori bound exists.
    pub analytic: Option<f64>,
    /// `None` when no scanned pair excites any parameter.
    pub empirical: Option<f64>,
    pub max_regressor_norm_sq: f64,
    pub scanned: u64,
}

/// A-priori and empirical step-size bounds over `oracle_pairs` pairs of the
/// calibration stream.
pub fn bound(cfg: &ExperimentConfig) -> Result<BoundReport, CliError> {
    let setup = Setup::new(cfg)?;
    let analytic = match step_size_bound(cfg.calibration.q, cfg.calibration.alpha, cfg.mode()) {
        Ok(b) => Some(b),
        Err(CalibrationError::BoundUnavailable) => None,
        Err(e) => return Err(e.into()),
    };
    let sampler = setup.sampler(&setup.profile, cfg.signal_source("signal")?)?;
    let samples: Vec<_> = sampler
        .take(cfg.calibration.oracle_pairs as usize)
        .collect();
    let max = samples
        .iter()
        .fold(0.0f64, |m, s| m.max(s.delta_h.norm_sq()));
    let empirical = match empirical_step_size_bound(&samples) {
        Ok(b) => Some(b),
        Err(CalibrationError::NoExcitation) => None,
        Err(e) => return Err(e.into()),
    };
    let scanned = samples.len() as u64;
    Ok(BoundReport {
        analytic,
        empirical,
        max_regressor_norm_sq: max,
        scanned,
    })
}

#[derive(Debug, Clone)]
pub struct TwoPhaseReport {
    pub trace: TwoPhaseTrace<f64>,
    pub drift_applied: bool,
}

/// Kaczmarz start-up on the generator stream, gradient tracking on the held
/// application signal, with an optional DAC drift during tracking.
///
/// Every record is scored against the generator-stream MMSE solution of the
/// profile in effect, so both phases share one reference.
pub fn twophase(cfg: &ExperimentConfig) -> Result<TwoPhaseReport, CliError> {
    let setup = Setup::new(cfg)?;
    let t = &cfg.twophase;
    let before = setup.profile.clone();
    let drift = t.drift_after > 0;
    let mut after = before.clone();
    if drift {
        after.dac_errors[t.drift_stage - 1][t.drift_level] += t.drift_lsb * setup.spec.lsb();
    }

    let ref_before = reference_solution(cfg, &setup, &before)?.theta0;
    let ref_after = if drift {
        reference_solution(cfg, &setup, &after)?.theta0
    } else {
        ref_before.clone()
    };

    let sg = setup.sampler(&before, cfg.signal_source("signal")?)?;
    let mut sa = setup.sampler(&before, cfg.application_source("application")?)?;
    if drift {
        sa = sa.with_drift(t.drift_after, after)?;
    }
    let mut est = HeeEstimator::new(
        setup.layout.clone(),
        cfg.calibration.mu,
        cfg.calibration.alpha,
    )?;
    let config = TwoPhaseConfig {
        phase1_steps: t.phase1_steps,
        phase2_steps: t.phase2_steps,
        duty: t.duty,
        stride: cfg.calibration.stride,
    };
    let trace = run_two_phase(sg, sa, &mut est, config, |phase, samples| {
        Some(
            if drift && phase == Phase::Background && samples > t.drift_after {
                &ref_after
            } else {
                &ref_before
            },
        )
    })?;
    Ok(TwoPhaseReport {
        trace,
        drift_applied: drift,
    })
}

/// Subcommand selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Convergence,
    Inl,
    Bound,
    TwoPhase,
}

/// Runs `command`, writes its CSV into `out` and returns the summary text.
pub fn execute(command: Command, cfg: &ExperimentConfig, out: &Path) -> Result<String, CliError> {
    match command {
        Command::Convergence => {
            let report = convergence(cfg)?;
            std::fs::create_dir_all(out)?;
            output::write_convergence(&out.join("convergence.csv"), &report.entries)?;
            let mut text = String::new();
            for e in &report.entries {
                let last = e.trace.final_error_norm().unwrap_or(f64::NAN);
                text += &format!("mu {}: final error norm {last:.6e}", e.mu);
                if !e.converged {
                    text += " (did not converge)";
                }
                text.push('\n');
            }
            Ok(text)
        }
        Command::Inl => {
            let report = inl(cfg)?;
            std::fs::create_dir_all(out)?;
            output::write_inl(&out.join("inl.csv"), &report)?;
            let mut text = format!(
                "max |true INL| {:.3} LSB\nmax |residual INL| {:.3} LSB\n\
                 max |corrected INL| {:.3} LSB\n",
                report.true_inl.max_abs(),
                report.max_residual(),
                report.corrected_inl.max_abs()
            );
            if !report.converged {
                text += "warning: calibration did not converge; residual is not meaningful\n";
            }
            Ok(text)
        }
        Command::Bound => {
            let r = bound(cfg)?;
            let analytic = match r.analytic {
                Some(b) => format!("{b:.6}"),
                None => "unavailable (extended selection vectors)".into(),
            };
            let empirical = match r.empirical {
                Some(b) => format!("{b:.6}"),
                None => "unavailable (no excitation)".into(),
            };
            Ok(format!(
                "analytic bound: {analytic}\nempirical bound: {empirical} \
                 (max |dh|^2 {:.6} over {} pairs)\n",
                r.max_regressor_norm_sq, r.scanned
            ))
        }
        Command::TwoPhase => {
            let report = twophase(cfg)?;
            std::fs::create_dir_all(out)?;
            output::write_twophase(&out.join("twophase.csv"), &report.trace)?;
            let last = |p| {
                report
                    .trace
                    .phase(p)
                    .last()
                    .and_then(|r| r.error_norm)
                    .unwrap_or(f64::NAN)
            };
            Ok(format!(
                "phase 1: {} pairs, final error norm {:.6e}\n\
                 phase 2: {} pairs, final error norm {:.6e}{}\n",
                report.trace.phase1_samples,
                last(Phase::Initial),
                report.trace.phase2_samples,
                last(Phase::Background),
                if report.drift_applied {
                    " (with drift)"
                } else {
                    ""
                }
            ))
        }
    }
}
