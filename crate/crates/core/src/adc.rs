//! Behavioral model of an n-stage pipelined ADC.
//!
//! Each converting stage quantizes its input with a coarse sub-ADC, subtracts
//! the (possibly mismatched) DAC level and amplifies the remainder with a
//! (possibly mismatched) residue gain. The digital backend recombines the
//! stage decisions with the *ideal* gains, so any analog mismatch shows up as
//! a distortion of the output transfer curve:
//!
//! ```text
//! x_r[i] = G_i (1 + zeta_i) (x_r[i-1] - x_s[i] - e_da[i](x_s[i]))
//! y      = sum_i x_s[i] / (G_1 ... G_{i-1}) + x_s[F] / (G_1 ... G_n)
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdcError {
    #[error("stage {stage}: {reason}")]
    InvalidStage { stage: usize, reason: String },
    #[error("invalid converter: {0}")]
    InvalidSpec(String),
    #[error("profile does not match converter: {0}")]
    ProfileMismatch(String),
    #[error("conversion record does not match converter: {0}")]
    RecordMismatch(String),
    #[error("mismatch bound must be finite and non-negative, got {0}")]
    InvalidBound(f64),
}

/// Ideal geometry of one stage: the sub-ADC code alphabet, its decision
/// thresholds and the nominal residue gain.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig<T> {
    stage_index: usize,
    level_values: Vec<T>,
    thresholds: Vec<T>,
    ideal_gain: T,
}

impl<T: Scalar> StageConfig<T> {
    /// Builds a converting stage and checks that, for every input within
    /// `±half_range`, the ideal residue stays within `±half_range` of the
    /// next stage.
    pub fn new(
        stage_index: usize,
        level_values: Vec<T>,
        thresholds: Vec<T>,
        ideal_gain: T,
        half_range: T,
    ) -> Result<Self, AdcError> {
        let stage = Self::unchecked(stage_index, level_values, thresholds, ideal_gain)?;
        if !(ideal_gain > T::zero()) || !ideal_gain.is_finite() {
            return Err(stage.invalid("ideal gain must be positive and finite"));
        }
        let tol = half_range * T::lit(1e-12);
        for code in 0..stage.num_levels() {
            let (lo, hi) = stage.region(code, half_range);
            if lo > hi {
                continue;
            }
            let level = stage.level_values[code];
            let worst = ((lo - level) * ideal_gain)
                .abs()
                .max(((hi - level) * ideal_gain).abs());
            if worst > half_range + tol {
                return Err(stage.invalid(&format!(
                    "residue of code {code} reaches {worst}, exceeding the next stage range ±{half_range}"
                )));
            }
        }
        Ok(stage)
    }

    /// Builds the final flash quantizer. The gain is irrelevant and set to one.
    pub fn new_flash(
        stage_index: usize,
        level_values: Vec<T>,
        thresholds: Vec<T>,
    ) -> Result<Self, AdcError> {
        Self::unchecked(stage_index, level_values, thresholds, T::one())
    }

    fn unchecked(
        stage_index: usize,
        level_values: Vec<T>,
        thresholds: Vec<T>,
        ideal_gain: T,
    ) -> Result<Self, AdcError> {
        let stage = Self {
            stage_index,
            level_values,
            thresholds,
            ideal_gain,
        };
        if stage.level_values.is_empty() {
            return Err(stage.invalid("at least one output level is required"));
        }
        if stage.thresholds.len() + 1 != stage.level_values.len() {
            return Err(stage.invalid("expected exactly num_levels - 1 thresholds"));
        }
        if !strictly_increasing(&stage.level_values) {
            return Err(stage.invalid("level values must be finite and strictly increasing"));
        }
        if !strictly_increasing(&stage.thresholds) {
            return Err(stage.invalid("thresholds must be finite and strictly increasing"));
        }
        Ok(stage)
    }

    /// Canonical 2.5-bit stage: seven levels at `k * full_scale / 8`,
    /// thresholds midway between them and a nominal gain of 4.
    pub fn reference_2p5_bit(stage_index: usize, full_scale: T) -> Result<Self, AdcError> {
        let step = full_scale / T::lit(8.0);
        let levels = (-3..=3).map(|k| T::lit(k as f64) * step).collect();
        let thresholds = (-3..3)
            .map(|k| (T::lit(k as f64) + T::lit(0.5)) * step)
            .collect();
        Self::new(
            stage_index,
            levels,
            thresholds,
            T::lit(4.0),
            full_scale / T::lit(2.0),
        )
    }

    /// Uniform mid-tread flash with `num_levels` codes spanning the
    /// `±full_scale / 2` residue range; the most negative level sits on the
    /// lower range limit.
    pub fn uniform_flash(
        stage_index: usize,
        num_levels: usize,
        full_scale: T,
    ) -> Result<Self, AdcError> {
        let step = full_scale / T::from_count(num_levels);
        let offset = T::from_count(num_levels / 2);
        let levels: Vec<T> = (0..num_levels)
            .map(|k| (T::from_count(k) - offset) * step)
            .collect();
        let thresholds = levels
            .windows(2)
            .map(|w| (w[0] + w[1]) / T::lit(2.0))
            .collect();
        Self::new_flash(stage_index, levels, thresholds)
    }

    fn invalid(&self, reason: &str) -> AdcError {
        AdcError::InvalidStage {
            stage: self.stage_index,
            reason: reason.to_string(),
        }
    }

    /// 1-based position in the pipeline.
    pub fn stage_index(&self) -> usize {
        self.stage_index
    }

    pub fn num_levels(&self) -> usize {
        self.level_values.len()
    }

    pub fn level_values(&self) -> &[T] {
        &self.level_values
    }

    pub fn thresholds(&self) -> &[T] {
        &self.thresholds
    }

    pub fn ideal_gain(&self) -> T {
        self.ideal_gain
    }

    /// Input interval mapped to `code`, clipped to `±half_range`.
    fn region(&self, code: usize, half_range: T) -> (T, T) {
        let lo = if code == 0 {
            -half_range
        } else {
            self.thresholds[code - 1].max(-half_range)
        };
        let hi = if code + 1 == self.num_levels() {
            half_range
        } else {
            self.thresholds[code].min(half_range)
        };
        (lo, hi)
    }

    /// Largest |quantization error| over inputs within `±half_range`,
    /// including the end segments.
    pub fn max_quant_error(&self, half_range: T) -> T {
        (0..self.num_levels())
            .filter_map(|code| {
                let (lo, hi) = self.region(code, half_range);
                (lo <= hi).then(|| {
                    let level = self.level_values[code];
                    (lo - level).abs().max((hi - level).abs())
                })
            })
            .fold(T::zero(), T::max)
    }

    /// Largest |quantization error| between two thresholds, i.e. ignoring
    /// the unbounded end segments.
    pub fn interior_quant_error(&self) -> T {
        let mut worst = T::zero();
        for (i, &t) in self.thresholds.iter().enumerate() {
            worst = worst
                .max((t - self.level_values[i]).abs())
                .max((self.level_values[i + 1] - t).abs());
        }
        worst
    }
}

fn strictly_increasing<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] < w[1])
}

/// Threshold comparison of the stage sub-ADC.
///
/// The code is the number of thresholds strictly below `residue_in`; inputs
/// beyond the outermost thresholds saturate at the extreme codes.
pub fn quantize_stage<T: Scalar>(residue_in: T, stage: &StageConfig<T>) -> (usize, T) {
    let code = stage.thresholds.partition_point(|&t| t < residue_in);
    (code, stage.level_values[code])
}

/// Complete converter geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcSpec<T> {
    stages: Vec<StageConfig<T>>,
    flash: StageConfig<T>,
    total_bits: u32,
    full_scale: T,
}

impl<T: Scalar> AdcSpec<T> {
    /// Assembles a converter. The resolution follows from the gains and the
    /// flash size: `2^total_bits = flash_levels * prod(G_i)`.
    pub fn new(
        stages: Vec<StageConfig<T>>,
        flash: StageConfig<T>,
        full_scale: T,
    ) -> Result<Self, AdcError> {
        if !(full_scale > T::zero()) || !full_scale.is_finite() {
            return Err(AdcError::InvalidSpec("full scale must be positive".into()));
        }
        for (i, s) in stages.iter().enumerate() {
            if s.stage_index != i + 1 {
                return Err(AdcError::InvalidSpec(format!(
                    "stage at position {} carries index {}",
                    i + 1,
                    s.stage_index
                )));
            }
        }
        let codes = stages
            .iter()
            .fold(T::from_count(flash.num_levels()), |acc, s| {
                acc * s.ideal_gain
            });
        let bits = codes.log2();
        let rounded = bits.round();
        if (bits - rounded).abs() > T::lit(1e-6) || rounded < T::one() {
            return Err(AdcError::InvalidSpec(format!(
                "stage gains and flash size resolve {bits} bits, not an integer"
            )));
        }
        Ok(Self {
            stages,
            flash,
            total_bits: rounded.to_u32().unwrap_or(0),
            full_scale,
        })
    }

    /// `n_stages` reference 2.5-bit stages followed by an 8-level flash.
    /// Five stages give the 13-bit converter used throughout the experiments.
    pub fn reference(n_stages: usize, full_scale: T) -> Result<Self, AdcError> {
        let stages = (1..=n_stages)
            .map(|i| StageConfig::reference_2p5_bit(i, full_scale))
            .collect::<Result<Vec<_>, _>>()?;
        let flash = StageConfig::uniform_flash(n_stages + 1, 8, full_scale)?;
        Self::new(stages, flash, full_scale)
    }

    pub fn stages(&self) -> &[StageConfig<T>] {
        &self.stages
    }

    pub fn flash(&self) -> &StageConfig<T> {
        &self.flash
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn full_scale(&self) -> T {
        self.full_scale
    }

    pub fn half_range(&self) -> T {
        self.full_scale / T::lit(2.0)
    }

    pub fn lsb(&self) -> T {
        self.full_scale / T::lit(2.0).powi(self.total_bits as i32)
    }

    /// Ideal gain products `prod_{j<i} G_j` for `i = 1..=n+1`; the last entry
    /// weights the flash.
    pub fn stage_weights(&self) -> Vec<T> {
        let mut w = Vec::with_capacity(self.stages.len() + 1);
        let mut acc = T::one();
        w.push(acc);
        for s in &self.stages {
            acc *= s.ideal_gain;
            w.push(acc);
        }
        w
    }
}

/// Injected stage mismatches.
#[derive(Debug, Clone, PartialEq)]
pub struct NonidealityProfile<T> {
    /// Relative residue-gain errors, `G~_i = G_i (1 + zeta_i)`.
    pub relative_gain_errors: Vec<T>,
    /// Per stage, one static DAC offset per output level (full-scale units).
    pub dac_errors: Vec<Vec<T>>,
    pub seed: Option<u64>,
}

impl<T: Scalar> NonidealityProfile<T> {
    /// The mismatch-free profile.
    pub fn zero(spec: &AdcSpec<T>) -> Self {
        Self {
            relative_gain_errors: vec![T::zero(); spec.num_stages()],
            dac_errors: spec
                .stages
                .iter()
                .map(|s| vec![T::zero(); s.num_levels()])
                .collect(),
            seed: None,
        }
    }

    pub fn validate(&self, spec: &AdcSpec<T>) -> Result<(), AdcError> {
        let n = spec.num_stages();
        if self.relative_gain_errors.len() != n {
            return Err(AdcError::ProfileMismatch(format!(
                "{} gain errors for {n} stages",
                self.relative_gain_errors.len()
            )));
        }
        if self.dac_errors.len() != n {
            return Err(AdcError::ProfileMismatch(format!(
                "{} DAC error lists for {n} stages",
                self.dac_errors.len()
            )));
        }
        for (s, errs) in spec.stages.iter().zip(&self.dac_errors) {
            if errs.len() != s.num_levels() {
                return Err(AdcError::ProfileMismatch(format!(
                    "stage {} has {} levels but {} DAC errors",
                    s.stage_index,
                    s.num_levels(),
                    errs.len()
                )));
            }
        }
        let finite = self
            .relative_gain_errors
            .iter()
            .chain(self.dac_errors.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(AdcError::ProfileMismatch(
                "non-finite mismatch value".into(),
            ));
        }
        Ok(())
    }
}

/// Trace of a single conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionRecord<T> {
    pub x_in: T,
    pub y_x: T,
    /// Active level per stage, the flash code last.
    pub stage_codes: Vec<usize>,
    /// `x_s[i]` per stage, the flash output last.
    pub stage_outputs: Vec<T>,
    /// Residues `x_r[i]` of the converting stages.
    pub residues: Vec<T>,
    /// `e_q[i] = x_r[i-1] - x_s[i]` of the converting stages.
    pub stage_quant_errors: Vec<T>,
    /// `e_q[F] = x_r[n] - x_s[F]`.
    pub flash_quant_error: T,
}

impl<T: Scalar> ConversionRecord<T> {
    /// Code index of the raw output on the LSB grid.
    pub fn output_code(&self, spec: &AdcSpec<T>) -> i64 {
        (self.y_x / spec.lsb()).round().to_i64().unwrap_or(i64::MAX)
    }

    /// True when the flash input fell outside its non-saturating range, i.e.
    /// the output no longer tracks the input to within half an LSB plus the
    /// stage errors.
    pub fn is_overrange(&self, spec: &AdcSpec<T>) -> bool {
        self.flash_quant_error.abs() > spec.flash.interior_quant_error() * T::lit(1.0 + 1e-9)
    }
}

/// A spec/profile pair validated once, for repeated conversions.
#[derive(Debug, Clone)]
pub struct Converter<'a, T> {
    spec: &'a AdcSpec<T>,
    profile: &'a NonidealityProfile<T>,
    weights: Vec<T>,
}

impl<'a, T: Scalar> Converter<'a, T> {
    pub fn new(spec: &'a AdcSpec<T>, profile: &'a NonidealityProfile<T>) -> Result<Self, AdcError> {
        profile.validate(spec)?;
        Ok(Self {
            spec,
            profile,
            weights: spec.stage_weights(),
        })
    }

    pub fn spec(&self) -> &'a AdcSpec<T> {
        self.spec
    }

    pub fn profile(&self) -> &'a NonidealityProfile<T> {
        self.profile
    }

    pub fn convert(&self, x_in: T) -> ConversionRecord<T> {
        let n = self.spec.num_stages();
        let mut rec = ConversionRecord {
            x_in,
            y_x: T::zero(),
            stage_codes: Vec::with_capacity(n + 1),
            stage_outputs: Vec::with_capacity(n + 1),
            residues: Vec::with_capacity(n),
            stage_quant_errors: Vec::with_capacity(n),
            flash_quant_error: T::zero(),
        };
        let mut residue = x_in;
        let mut y = T::zero();
        for (i, stage) in self.spec.stages.iter().enumerate() {
            let (code, level) = quantize_stage(residue, stage);
            let gain = stage.ideal_gain * (T::one() + self.profile.relative_gain_errors[i]);
            let dac = self.profile.dac_errors[i][code];
            rec.stage_codes.push(code);
            rec.stage_outputs.push(level);
            rec.stage_quant_errors.push(residue - level);
            residue = gain * (residue - level - dac);
            rec.residues.push(residue);
            y += level / self.weights[i];
        }
        let (code, level) = quantize_stage(residue, &self.spec.flash);
        rec.stage_codes.push(code);
        rec.stage_outputs.push(level);
        rec.flash_quant_error = residue - level;
        rec.y_x = y + level / self.weights[n];
        rec
    }
}

/// Converts one sample. Prefer [`Converter`] when converting many samples.
pub fn convert<T: Scalar>(
    x_in: T,
    spec: &AdcSpec<T>,
    profile: &NonidealityProfile<T>,
) -> Result<ConversionRecord<T>, AdcError> {
    Ok(Converter::new(spec, profile)?.convert(x_in))
}

/// Splits `y_x - x_in` into its additive mismatch terms:
/// `[zeta_1 e_q1, -(1+zeta_1) e_da1, zeta_2 e_q2 / G_1, -(1+zeta_2) e_da2 / G_1, ..., -e_qF / prod(G)]`.
///
/// The terms sum to `y_x - x_in`.
pub fn output_error_decomposition<T: Scalar>(
    record: &ConversionRecord<T>,
    spec: &AdcSpec<T>,
    profile: &NonidealityProfile<T>,
) -> Result<Vec<T>, AdcError> {
    profile.validate(spec)?;
    let n = spec.num_stages();
    if record.stage_quant_errors.len() != n || record.stage_codes.len() != n + 1 {
        return Err(AdcError::RecordMismatch(format!(
            "record traces {} stages, converter has {n}",
            record.stage_quant_errors.len()
        )));
    }
    let weights = spec.stage_weights();
    let mut terms = Vec::with_capacity(2 * n + 1);
    for i in 0..n {
        let code = record.stage_codes[i];
        let dac = *profile.dac_errors[i].get(code).ok_or_else(|| {
            AdcError::RecordMismatch(format!("stage {} code {code} out of range", i + 1))
        })?;
        let zeta = profile.relative_gain_errors[i];
        terms.push(zeta * record.stage_quant_errors[i] / weights[i]);
        terms.push(-(T::one() + zeta) * dac / weights[i]);
    }
    terms.push(-record.flash_quant_error / weights[n]);
    Ok(terms)
}

/// Draws a random mismatch profile.
///
/// Errors are uniform. The first-stage widths are chosen such that the
/// worst-case contributions are exactly `gain_lsb_bound` LSB for the gain term
/// `zeta_1 e_q1` (taken over the full input range) and `dac_lsb_bound` LSB for
/// the DAC term `(1 + zeta_1) e_da1`. The widths of stage `i` are divided by
/// the ideal gain product `W_i` of the stages ahead of it.
pub fn random_profile<T: Scalar>(
    spec: &AdcSpec<T>,
    gain_lsb_bound: T,
    dac_lsb_bound: T,
    seed: u64,
) -> Result<NonidealityProfile<T>, AdcError> {
    for b in [gain_lsb_bound, dac_lsb_bound] {
        if !(b >= T::zero()) || !b.is_finite() {
            return Err(AdcError::InvalidBound(b.as_f64()));
        }
    }
    let lsb = spec.lsb();
    let max_eq = spec
        .stages
        .first()
        .map_or(T::one(), |s| s.max_quant_error(spec.half_range()));
    let zeta_bound = gain_lsb_bound * lsb / max_eq;
    let dac_bound = dac_lsb_bound * lsb / (T::one() + zeta_bound);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |bound: T| -> T {
        let b = bound.as_f64();
        if b > 0.0 {
            T::lit(rng.gen_range(-b..=b))
        } else {
            T::zero()
        }
    };
    let weights = spec.stage_weights();
    let mut relative_gain_errors = Vec::with_capacity(spec.num_stages());
    let mut dac_errors = Vec::with_capacity(spec.num_stages());
    for (s, &w) in spec.stages.iter().zip(&weights) {
        relative_gain_errors.push(draw(zeta_bound / w));
        dac_errors.push((0..s.num_levels()).map(|_| draw(dac_bound / w)).collect());
    }
    Ok(NonidealityProfile {
        relative_gain_errors,
        dac_errors,
        seed: Some(seed),
    })
}
