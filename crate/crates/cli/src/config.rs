//! Experiment configuration.
//!
//! The file is TOML restricted to one level of sections, so every key can be
//! written either under a `[section]` header or as a dotted `section.key`.
//! Unknown keys are rejected. Every field defaults to the reference
//! experiment: a 13-bit converter with five 2.5-bit stages and a 3-bit
//! flash, calibrated on its three leading stages with a full-scale
//! 10.77 MHz sine sampled at 100 MHz.

use std::path::{Path, PathBuf};

use pipecal::{
    AdcSpec64, CorrectionMode, NonidealityProfile64, PairSource64, SourceKind, StageConfig,
    Waveform,
};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random draw uses a named sub-seed of it.
    pub seed: u64,
    pub adc: AdcSection,
    pub profile: ProfileSection,
    pub calibration: CalibrationSection,
    pub signal: SignalSection,
    pub inl: InlSection,
    pub twophase: TwoPhaseSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdcSection {
    pub stages: usize,
    /// Resolution of every pipeline stage; must be `m + 0.5` for integer `m >= 1`.
    pub stage_bits: f64,
    pub flash_bits: u32,
    pub full_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    /// Worst-case first-stage gain-error contribution, LSB.
    pub gain_lsb: f64,
    /// Worst-case first-stage DAC-error contribution, LSB.
    pub dac_lsb: f64,
    /// Explicit relative gain errors, one per stage. Overrides the random draw
    /// together with `dac_errors`.
    pub gain_errors: Option<Vec<f64>>,
    /// Explicit DAC errors in full-scale units, one list per stage.
    pub dac_errors: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Plain,
    Extended,
}

impl From<ModeName> for CorrectionMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Plain => CorrectionMode::Plain,
            ModeName::Extended => CorrectionMode::Extended,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    Sgd,
    Als,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub q: usize,
    pub mode: ModeName,
    pub alpha: f64,
    pub mu: f64,
    /// Step sizes of the convergence sweep.
    pub mu_sweep: Vec<f64>,
    pub estimator: EstimatorName,
    pub steps: u64,
    pub stride: u64,
    /// Pairs used for the reference MMSE solution.
    pub oracle_pairs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformName {
    Sine,
    Ramp,
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSection {
    pub kind: WaveformName,
    pub amplitude: f64,
    pub frequency: f64,
    pub sample_rate: f64,
    pub ramp_period: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InlSection {
    /// Ramp points; 0 picks eight per code.
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoPhaseSection {
    pub phase1_steps: u64,
    pub phase2_steps: u64,
    pub duty: f64,
    /// Held application signal used in the background phase.
    pub app_kind: WaveformName,
    pub app_amplitude: f64,
    pub app_frequency: f64,
    /// Application pairs after which the drift is applied; 0 disables drift.
    pub drift_after: u64,
    /// 1-based stage and 0-based level receiving the DAC drift.
    pub drift_stage: usize,
    pub drift_level: usize,
    pub drift_lsb: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            adc: AdcSection::default(),
            profile: ProfileSection::default(),
            calibration: CalibrationSection::default(),
            signal: SignalSection::default(),
            inl: InlSection::default(),
            twophase: TwoPhaseSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl Default for AdcSection {
    fn default() -> Self {
        Self {
            stages: 5,
            stage_bits: 2.5,
            flash_bits: 3,
            full_scale: 2.0,
        }
    }
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self {
            gain_lsb: 25.0,
            dac_lsb: 15.0,
            gain_errors: None,
            dac_errors: None,
        }
    }
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            q: 3,
            mode: ModeName::Extended,
            alpha: 0.5,
            mu: 0.2,
            mu_sweep: vec![0.05, 0.2, 0.4],
            estimator: EstimatorName::Sgd,
            steps: 100_000,
            stride: 100,
            oracle_pairs: 100_000,
        }
    }
}

impl Default for SignalSection {
    fn default() -> Self {
        Self {
            kind: WaveformName::Sine,
            amplitude: 1.0,
            frequency: 10.77e6,
            sample_rate: 100e6,
            ramp_period: 65_536,
        }
    }
}

impl Default for InlSection {
    fn default() -> Self {
        Self { grid_points: 0 }
    }
}

impl Default for TwoPhaseSection {
    fn default() -> Self {
        Self {
            phase1_steps: 30_000,
            phase2_steps: 100_000,
            duty: 1.0,
            app_kind: WaveformName::Sine,
            app_amplitude: 0.9,
            app_frequency: 1.3e6,
            drift_after: 0,
            drift_stage: 1,
            drift_level: 3,
            drift_lsb: 5.0,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

fn invalid(key: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {why}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let a = &self.adc;
        if a.stages == 0 {
            return Err(invalid("adc.stages", "must be at least 1"));
        }
        let m = a.stage_bits - 0.5;
        if !(m >= 1.0 && m <= 8.0 && m.fract() == 0.0) {
            return Err(invalid("adc.stage_bits", "must be 1.5, 2.5, ..., 8.5"));
        }
        if !(1..=16).contains(&a.flash_bits) {
            return Err(invalid("adc.flash_bits", "must be in 1..=16"));
        }
        if !(a.full_scale > 0.0 && a.full_scale.is_finite()) {
            return Err(invalid("adc.full_scale", "must be positive"));
        }

        let p = &self.profile;
        for (key, v) in [
            ("profile.gain_lsb", p.gain_lsb),
            ("profile.dac_lsb", p.dac_lsb),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(key, "must be finite and non-negative"));
            }
        }
        match (&p.gain_errors, &p.dac_errors) {
            (None, None) => {}
            (Some(g), Some(d)) => {
                if g.len() != a.stages {
                    return Err(invalid("profile.gain_errors", "needs one entry per stage"));
                }
                let levels = self.stage_levels();
                if d.len() != a.stages || d.iter().any(|l| l.len() != levels) {
                    return Err(invalid(
                        "profile.dac_errors",
                        format!("needs {} lists of {levels} entries", a.stages),
                    ));
                }
                if g.iter().chain(d.iter().flatten()).any(|v| !v.is_finite()) {
                    return Err(invalid("profile", "explicit errors must be finite"));
                }
            }
            _ => {
                return Err(invalid(
                    "profile",
                    "gain_errors and dac_errors must be given together",
                ))
            }
        }

        let c = &self.calibration;
        if c.q == 0 || c.q > a.stages {
            return Err(invalid(
                "calibration.q",
                format!("must be in 1..={}", a.stages),
            ));
        }
        // alpha = 1 is accepted but makes every regressor vanish.
        if !(c.alpha.is_finite() && c.alpha.abs() <= 1.0 && c.alpha != 0.0) {
            return Err(invalid(
                "calibration.alpha",
                "must satisfy 0 < |alpha| <= 1",
            ));
        }
        if !(c.mu.is_finite() && c.mu >= 0.0) {
            return Err(invalid("calibration.mu", "must be finite and non-negative"));
        }
        if c.mu_sweep.is_empty() || c.mu_sweep.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(invalid(
                "calibration.mu_sweep",
                "must be a non-empty list of non-negative step sizes",
            ));
        }
        for (key, v) in [
            ("calibration.steps", c.steps),
            ("calibration.stride", c.stride),
            ("calibration.oracle_pairs", c.oracle_pairs),
        ] {
            if v == 0 {
                return Err(invalid(key, "must be at least 1"));
            }
        }

        let s = &self.signal;
        if !(s.amplitude > 0.0 && s.amplitude <= a.full_scale / 2.0) {
            return Err(invalid(
                "signal.amplitude",
                "must be in (0, full_scale / 2]",
            ));
        }
        if !(s.sample_rate > 0.0 && s.sample_rate.is_finite()) {
            return Err(invalid("signal.sample_rate", "must be positive"));
        }
        if !s.frequency.is_finite() {
            return Err(invalid("signal.frequency", "must be finite"));
        }
        if s.ramp_period < 2 {
            return Err(invalid("signal.ramp_period", "must be at least 2"));
        }

        let t = &self.twophase;
        if t.phase1_steps + t.phase2_steps == 0 {
            return Err(invalid("twophase.phase1_steps", "both phases are empty"));
        }
        if !(t.duty > 0.0 && t.duty <= 1.0) {
            return Err(invalid("twophase.duty", "must be in (0, 1]"));
        }
        if !(t.app_amplitude > 0.0 && t.app_amplitude <= a.full_scale / 2.0) {
            return Err(invalid(
                "twophase.app_amplitude",
                "must be in (0, full_scale / 2]",
            ));
        }
        if !t.app_frequency.is_finite() {
            return Err(invalid("twophase.app_frequency", "must be finite"));
        }
        // The drift target only matters once drift is enabled.
        let drift = t.drift_after > 0;
        if drift && (t.drift_stage == 0 || t.drift_stage > a.stages) {
            return Err(invalid(
                "twophase.drift_stage",
                format!("must be in 1..={}", a.stages),
            ));
        }
        if drift && t.drift_level >= self.stage_levels() {
            return Err(invalid(
                "twophase.drift_level",
                format!("must be below {}", self.stage_levels()),
            ));
        }
        if !t.drift_lsb.is_finite() {
            return Err(invalid("twophase.drift_lsb", "must be finite"));
        }
        Ok(())
    }

    fn stage_levels(&self) -> usize {
        (1usize << (self.adc.stage_bits + 0.5) as u32) - 1
    }

    pub fn mode(&self) -> CorrectionMode {
        self.calibration.mode.into()
    }

    /// Builds the converter: `m.5`-bit stages with `2^(m+1) - 1` levels spaced
    /// `FS / 2^(m+1)` apart and gain `2^m`, then a uniform flash.
    pub fn adc_spec(&self) -> Result<AdcSpec64, CliError> {
        let a = &self.adc;
        let m = (a.stage_bits - 0.5) as u32;
        let fs = a.full_scale;
        let step = fs / f64::from(1u32 << (m + 1));
        let n = self.stage_levels() as i64;
        let half = n / 2;
        let levels: Vec<f64> = (-half..=half).map(|k| k as f64 * step).collect();
        let thresholds: Vec<f64> = (-half..half).map(|k| (k as f64 + 0.5) * step).collect();
        let gain = f64::from(1u32 << m);
        let stages = (1..=a.stages)
            .map(|i| StageConfig::new(i, levels.clone(), thresholds.clone(), gain, fs / 2.0))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| invalid("adc", e))?;
        let flash = StageConfig::uniform_flash(a.stages + 1, 1usize << a.flash_bits, fs)
            .map_err(|e| invalid("adc.flash_bits", e))?;
        AdcSpec64::new(stages, flash, fs).map_err(|e| invalid("adc", e))
    }

    /// Mismatch profile: explicit values if given, otherwise a random draw
    /// seeded by the `profile` sub-seed.
    pub fn profile(&self, spec: &AdcSpec64) -> Result<NonidealityProfile64, CliError> {
        let p = &self.profile;
        match (&p.gain_errors, &p.dac_errors) {
            (Some(g), Some(d)) => {
                let profile = NonidealityProfile64 {
                    relative_gain_errors: g.clone(),
                    dac_errors: d.clone(),
                    seed: None,
                };
                profile.validate(spec).map_err(|e| invalid("profile", e))?;
                Ok(profile)
            }
            _ => pipecal::random_profile(spec, p.gain_lsb, p.dac_lsb, self.sub_seed("profile"))
                .map_err(|e| invalid("profile", e)),
        }
    }

    fn waveform(&self, kind: WaveformName, frequency: f64, phase: f64) -> Waveform {
        match kind {
            WaveformName::Sine => Waveform::Sine {
                frequency,
                sample_rate: self.signal.sample_rate,
                phase,
            },
            WaveformName::Ramp => Waveform::Ramp {
                period: self.signal.ramp_period,
            },
            WaveformName::UniformRandom => Waveform::UniformRandom,
        }
    }

    /// Calibration signal. Streams with different names are independent: the
    /// sub-seed feeds the random waveform and sets the sine phase.
    pub fn signal_source(&self, name: &str) -> Result<PairSource64, CliError> {
        let seed = self.sub_seed(name);
        let s = &self.signal;
        PairSource64::new(
            self.waveform(s.kind, s.frequency, phase_from_seed(seed)),
            SourceKind::Generator,
            s.amplitude,
            self.calibration.alpha,
            self.adc.full_scale / 2.0,
            seed,
        )
        .map_err(|e| invalid("signal", e))
    }

    /// Held application signal for the background phase.
    pub fn application_source(&self, name: &str) -> Result<PairSource64, CliError> {
        let seed = self.sub_seed(name);
        let t = &self.twophase;
        PairSource64::new(
            self.waveform(t.app_kind, t.app_frequency, phase_from_seed(seed)),
            SourceKind::Application,
            t.app_amplitude,
            self.calibration.alpha,
            self.adc.full_scale / 2.0,
            seed,
        )
        .map_err(|e| invalid("twophase", e))
    }

    pub fn grid_points(&self, spec: &AdcSpec64) -> usize {
        match self.inl.grid_points {
            0 => pipecal::metrics::default_grid_points(spec),
            n => n,
        }
    }

    /// Named sub-seed of the master seed.
    pub fn sub_seed(&self, name: &str) -> u64 {
        sub_seed(self.seed, name)
    }
}

/// `splitmix64(seed ^ fnv1a(name))`.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = (seed ^ h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn phase_from_seed(seed: u64) -> f64 {
    (seed >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_describe_the_reference_converter() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let spec = cfg.adc_spec().unwrap();
        assert_eq!(spec.total_bits(), 13);
        assert_eq!(spec.num_stages(), 5);
        assert_eq!(spec.stages()[0].num_levels(), 7);
        assert_eq!(spec.stages()[0].ideal_gain(), 4.0);
        let reference = AdcSpec64::reference(5, 2.0).unwrap();
        for (a, b) in spec.stages().iter().zip(reference.stages()) {
            assert_eq!(a.level_values(), b.level_values());
            assert_eq!(a.thresholds(), b.thresholds());
        }
    }

    #[test]
    fn dotted_keys_and_sections_are_equivalent() {
        let a = ExperimentConfig::from_toml("calibration.mu = 0.1\nadc.stages = 4\n").unwrap();
        let b =
            ExperimentConfig::from_toml("[calibration]\nmu = 0.1\n[adc]\nstages = 4\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.calibration.mu, 0.1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("calibration.muu = 0.1").unwrap_err();
        assert!(err.to_string().contains("muu"), "{err}");
        assert!(ExperimentConfig::from_toml("[bogus]\nx = 1").is_err());
    }

    #[test]
    fn validation_names_the_key() {
        for (text, key) in [
            ("calibration.steps = 0", "calibration.steps"),
            ("calibration.q = 9", "calibration.q"),
            ("calibration.alpha = 1.5", "calibration.alpha"),
            ("adc.stage_bits = 2.0", "adc.stage_bits"),
            ("twophase.duty = 0.0", "twophase.duty"),
            ("signal.amplitude = 1.5", "signal.amplitude"),
            ("profile.gain_errors = [0.0]", "profile"),
        ] {
            let err = ExperimentConfig::from_toml(text).unwrap_err();
            assert!(matches!(err, CliError::Config(_)));
            assert!(err.to_string().contains(key), "{text}: {err}");
        }
    }

    #[test]
    fn one_and_a_half_bit_stages() {
        let cfg = ExperimentConfig::from_toml("adc.stage_bits = 1.5\nadc.flash_bits = 2").unwrap();
        let spec = cfg.adc_spec().unwrap();
        assert_eq!(spec.stages()[0].level_values(), &[-0.5, 0.0, 0.5]);
        assert_eq!(spec.stages()[0].ideal_gain(), 2.0);
        assert_eq!(spec.total_bits(), 7);
    }

    #[test]
    fn sub_seeds_differ_by_name_and_seed() {
        assert_ne!(sub_seed(0, "profile"), sub_seed(0, "signal"));
        assert_ne!(sub_seed(0, "profile"), sub_seed(1, "profile"));
        assert_eq!(sub_seed(7, "oracle"), sub_seed(7, "oracle"));
    }

    #[test]
    fn explicit_profile_overrides_draw() {
        let text = "profile.gain_errors = [0.01, 0, 0, 0, 0]\n\
                    profile.dac_errors = [[0,0,0,0,0,0,0],[0,0,0,0,0,0,0],[0,0,0,0,0,0,0],\
                    [0,0,0,0,0,0,0],[0,0,0,0,0,0,0]]";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let spec = cfg.adc_spec().unwrap();
        let p = cfg.profile(&spec).unwrap();
        assert_eq!(p.relative_gain_errors[0], 0.01);
        assert_eq!(p.seed, None);
    }
}
