//! Test-signal sources emitting `(x, alpha x)` input pairs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("amplitude {amplitude} exceeds the input range ±{half_range}")]
    AmplitudeOutOfRange { amplitude: f64, half_range: f64 },
    #[error("invalid signal parameter: {0}")]
    InvalidParameter(String),
}

/// Waveform driving the converter.
#[derive(Debug, Clone, PartialEq)]
pub enum Waveform {
    Sine {
        frequency: f64,
        sample_rate: f64,
        phase: f64,
    },
    /// Triangle sweeping `-amplitude..amplitude..-amplitude` over `period` samples.
    Ramp {
        period: u64,
    },
    UniformRandom,
}

/// Who supplies the samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    /// Dedicated signal generator: one waveform sample per pair.
    Generator,
    /// Application signal held in a sample-and-hold and converted twice. Every
    /// pair occupies two conversion slots, so the waveform is sampled at half
    /// the converter rate.
    Application,
}

/// Deterministic stream of `(x, alpha x)` pairs.
#[derive(Debug, Clone)]
pub struct PairSource<T> {
    waveform: Waveform,
    kind: SourceKind,
    amplitude: T,
    alpha: T,
    seed: u64,
    index: u64,
    rng: ChaCha8Rng,
}

impl<T: Scalar> PairSource<T> {
    pub fn new(
        waveform: Waveform,
        kind: SourceKind,
        amplitude: T,
        alpha: T,
        half_range: T,
        seed: u64,
    ) -> Result<Self, SignalError> {
        if !amplitude.is_finite() || amplitude.abs() > half_range {
            return Err(SignalError::AmplitudeOutOfRange {
                amplitude: amplitude.as_f64(),
                half_range: half_range.as_f64(),
            });
        }
        if !alpha.is_finite() {
            return Err(SignalError::InvalidParameter("alpha must be finite".into()));
        }
        match waveform {
            Waveform::Sine {
                frequency,
                sample_rate,
                phase,
            } => {
                if !(sample_rate > 0.0) || !frequency.is_finite() || !phase.is_finite() {
                    return Err(SignalError::InvalidParameter(
                        "sine needs a positive sample rate and finite frequency/phase".into(),
                    ));
                }
            }
            Waveform::Ramp { period } if period < 2 => {
                return Err(SignalError::InvalidParameter(
                    "ramp period must be at least 2".into(),
                ));
            }
            _ => {}
        }
        Ok(Self {
            waveform,
            kind,
            amplitude,
            alpha,
            seed,
            index: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Full-scale sine at `frequency` sampled at `sample_rate`.
    pub fn sine(
        amplitude: T,
        frequency: f64,
        sample_rate: f64,
        alpha: T,
        half_range: T,
    ) -> Result<Self, SignalError> {
        Self::new(
            Waveform::Sine {
                frequency,
                sample_rate,
                phase: 0.0,
            },
            SourceKind::Generator,
            amplitude,
            alpha,
            half_range,
            0,
        )
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn kind(&self) -> SourceKind {
        self.kind
    }

    /// Pairs emitted so far.
    pub fn emitted(&self) -> u64 {
        self.index
    }

    /// Rate at which new input values enter, relative to the converter rate.
    pub fn effective_rate(&self, converter_rate: f64) -> f64 {
        match self.kind {
            SourceKind::Generator => converter_rate,
            SourceKind::Application => converter_rate / 2.0,
        }
    }

    /// Restarts the stream from its first pair.
    pub fn reset(&mut self) {
        self.index = 0;
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }

    fn sample(&mut self, n: u64) -> f64 {
        let a = self.amplitude.as_f64();
        match self.waveform {
            Waveform::Sine {
                frequency,
                sample_rate,
                phase,
            } => a * (phase + 2.0 * PI * frequency / sample_rate * n as f64).sin(),
            Waveform::Ramp { period } => {
                let pos = (n % period) as f64 / period as f64;
                let tri = if pos < 0.5 {
                    4.0 * pos - 1.0
                } else {
                    3.0 - 4.0 * pos
                };
                a * tri
            }
            Waveform::UniformRandom => {
                if a == 0.0 {
                    0.0
                } else {
                    self.rng.gen_range(-a.abs()..=a.abs())
                }
            }
        }
    }

    pub fn next_pair(&mut self) -> (T, T) {
        let n = match self.kind {
            SourceKind::Generator => self.index,
            SourceKind::Application => 2 * self.index,
        };
        let x = T::lit(self.sample(n));
        self.index += 1;
        (x, self.alpha * x)
    }
}

impl<T: Scalar> Iterator for PairSource<T> {
    type Item = (T, T);

    fn next(&mut self) -> Option<(T, T)> {
        Some(self.next_pair())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adc::{AdcSpec, Converter, NonidealityProfile};

    #[test]
    fn exact_scaling() {
        let mut s = PairSource::<f64>::new(
            Waveform::UniformRandom,
            SourceKind::Generator,
            1.0,
            0.5,
            1.0,
            9,
        )
        .unwrap();
        for _ in 0..1000 {
            let (x, ax) = s.next_pair();
            assert_eq!(ax, 0.5 * x);
            assert!(x.abs() <= 1.0);
        }
        let mut c = PairSource::<f64>::new(
            Waveform::Ramp { period: 10 },
            SourceKind::Generator,
            0.8,
            0.5,
            1.0,
            0,
        )
        .unwrap();
        let pairs: Vec<_> = c.by_ref().take(10).collect();
        assert_eq!(pairs[0], (-0.8, -0.4));
        assert!((pairs[5].0 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn random_stream_is_deterministic() {
        let mk = || {
            PairSource::<f64>::new(
                Waveform::UniformRandom,
                SourceKind::Generator,
                1.0,
                0.5,
                1.0,
                77,
            )
            .unwrap()
        };
        let a: Vec<_> = mk().take(500).collect();
        let b: Vec<_> = mk().take(500).collect();
        assert_eq!(a, b);
        let mut s = mk();
        let first: Vec<_> = s.by_ref().take(10).collect();
        s.reset();
        assert_eq!(first, s.take(10).collect::<Vec<_>>());
    }

    #[test]
    fn full_scale_sine_traces_a_sine() {
        let fs = 100e6;
        let f = 10.77e6;
        let mut s = PairSource::<f64>::sine(1.0, f, fs, 0.5, 1.0).unwrap();
        let xs: Vec<f64> = s.by_ref().take(30_000).map(|(x, _)| x).collect();
        for (n, &x) in xs.iter().enumerate().step_by(997) {
            assert!((x - (2.0 * PI * f / fs * n as f64).sin()).abs() < 1e-12);
        }
        let max = xs.iter().cloned().fold(f64::MIN, f64::max);
        let min = xs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max > 0.9999 && min < -0.9999);
        assert_eq!(s.effective_rate(fs), fs);
    }

    #[test]
    fn application_source_halves_rate() {
        let fs = 100e6;
        let wf = Waveform::Sine {
            frequency: 1e6,
            sample_rate: fs,
            phase: 0.0,
        };
        let mut app =
            PairSource::<f64>::new(wf.clone(), SourceKind::Application, 1.0, 0.5, 1.0, 0).unwrap();
        let mut gen = PairSource::<f64>::new(wf, SourceKind::Generator, 1.0, 0.5, 1.0, 0).unwrap();
        let g: Vec<_> = gen.by_ref().take(20).collect();
        let a: Vec<_> = app.by_ref().take(10).collect();
        for k in 0..10 {
            assert_eq!(a[k], g[2 * k]);
        }
        assert_eq!(app.effective_rate(fs), fs / 2.0);
    }

    #[test]
    fn rejects_out_of_range_amplitude() {
        assert!(PairSource::<f64>::sine(1.2, 1.0, 10.0, 0.5, 1.0).is_err());
        assert!(PairSource::<f64>::sine(1.0, 1.0, 0.0, 0.5, 1.0).is_err());
        assert!(PairSource::<f64>::new(
            Waveform::Ramp { period: 1 },
            SourceKind::Generator,
            1.0,
            0.5,
            1.0,
            0
        )
        .is_err());
    }

    #[test]
    fn sine_covers_first_two_stage_alphabets() {
        let spec = AdcSpec::<f64>::reference(5, 2.0).unwrap();
        let profile = NonidealityProfile::zero(&spec);
        let conv = Converter::new(&spec, &profile).unwrap();
        let src = PairSource::<f64>::sine(1.0, 10.77e6, 100e6, 0.5, 1.0).unwrap();
        let mut seen = [[false; 7]; 2];
        for (x, _) in src.take(30_000) {
            let rec = conv.convert(x);
            seen[0][rec.stage_codes[0]] = true;
            seen[1][rec.stage_codes[1]] = true;
        }
        assert!(seen.iter().flatten().all(|&b| b));
    }
}
