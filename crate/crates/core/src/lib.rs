//! Behavioral pipelined ADC model with homogeneity-enforced equalization
//! (HEE) calibration of stage gain and DAC mismatches.
//!
//! The crate is generic over the scalar type; the `*64` aliases below fix it
//! to `f64`, which is what the experiment harness uses.

pub mod adc;
pub mod calibration;
pub mod correction;
pub mod metrics;
pub mod scalar;
pub mod signals;

pub use adc::{
    convert, output_error_decomposition, quantize_stage, random_profile, AdcError, AdcSpec,
    ConversionRecord, Converter, NonidealityProfile, StageConfig,
};
pub use calibration::{
    empirical_step_size_bound, mmse_solve, run_calibration, run_two_phase, step_size_bound,
    CalibrationError, ConvergenceTrace, CorrelationAccumulator, HeeEstimator, MmseSolution,
    PairSampler, Phase, TwoPhaseConfig, TwoPhaseTrace, UpdateRule,
};
pub use correction::{
    apply_correction, build_layout, build_selection_vector, delta_regressor, CorrectionError,
    CorrectionMode, ParamSlot, ParameterLayout, ParameterVector, SamplePair, SelectionVector,
};
pub use metrics::{
    compute_inl, correction_inl, remove_overall_gain, residual_inl, InlCurve, MetricsError,
};
pub use scalar::Scalar;
pub use signals::{PairSource, SignalError, SourceKind, Waveform};

pub type AdcSpec64 = AdcSpec<f64>;
pub type StageConfig64 = StageConfig<f64>;
pub type NonidealityProfile64 = NonidealityProfile<f64>;
pub type ConversionRecord64 = ConversionRecord<f64>;
pub type ParameterVector64 = ParameterVector<f64>;
pub type SelectionVector64 = SelectionVector<f64>;
pub type SamplePair64 = SamplePair<f64>;
pub type HeeEstimator64 = HeeEstimator<f64>;
pub type MmseSolution64 = MmseSolution<f64>;
pub type InlCurve64 = InlCurve<f64>;
pub type PairSource64 = PairSource<f64>;
