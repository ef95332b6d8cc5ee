use crate::adc::{AdcSpec, Converter, NonidealityProfile};
use crate::correction::{delta_regressor, ParameterLayout, SamplePair};
use crate::scalar::Scalar;
use crate::signals::PairSource;

use super::CalibrationError;

const MAX_CONSECUTIVE_DROPS: u64 = 1_000_000;

/// Turns a [`PairSource`] into a stream of estimator inputs by converting both
/// inputs of each pair.
///
/// The mismatch profile may change over time (piecewise-constant drift): a
/// profile registered with [`PairSampler::with_drift`] takes effect once the
/// given number of source pairs has been consumed.
///
/// Pairs where either conversion over-ranges the final flash are dropped; the
/// flash out-of-range comparators make this condition visible to the digital
/// backend.
#[derive(Debug, Clone)]
pub struct PairSampler<'a, T> {
    spec: &'a AdcSpec<T>,
    layout: &'a ParameterLayout,
    source: PairSource<T>,
    schedule: Vec<(u64, NonidealityProfile<T>)>,
    active: usize,
    consumed: u64,
    skipped: u64,
    skip_overrange: bool,
}

impl<'a, T: Scalar> PairSampler<'a, T> {
    pub fn new(
        spec: &'a AdcSpec<T>,
        profile: NonidealityProfile<T>,
        layout: &'a ParameterLayout,
        source: PairSource<T>,
    ) -> Result<Self, CalibrationError> {
        profile.validate(spec)?;
        if layout.q() > spec.num_stages() {
            return Err(CalibrationError::InvalidArgument(format!(
                "layout calibrates {} stages, converter has {}",
                layout.q(),
                spec.num_stages()
            )));
        }
        Ok(Self {
            spec,
            layout,
            source,
            schedule: vec![(0, profile)],
            active: 0,
            consumed: 0,
            skipped: 0,
            skip_overrange: true,
        })
    }

    /// Switches to `profile` once `after_pairs` source pairs have been consumed.
    pub fn with_drift(
        mut self,
        after_pairs: u64,
        profile: NonidealityProfile<T>,
    ) -> Result<Self, CalibrationError> {
        profile.validate(self.spec)?;
        let pos = self.schedule.partition_point(|(at, _)| *at <= after_pairs);
        self.schedule.insert(pos, (after_pairs, profile));
        Ok(self)
    }

    /// Keep over-ranged pairs instead of dropping them.
    pub fn keep_overrange(mut self) -> Self {
        self.skip_overrange = false;
        self
    }

    /// Source pairs consumed so far, including dropped ones.
    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    /// Pairs dropped because of flash over-range.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Index of the profile currently in effect.
    pub fn segment(&self) -> usize {
        self.active
    }

    pub fn profile(&self) -> &NonidealityProfile<T> {
        &self.schedule[self.active].1
    }

    pub fn next_pair(&mut self) -> Result<SamplePair<T>, CalibrationError> {
        let mut dropped_in_row = 0u64;
        loop {
            while self.active + 1 < self.schedule.len()
                && self.schedule[self.active + 1].0 <= self.consumed
            {
                self.active += 1;
            }
            let converter = Converter::new(self.spec, &self.schedule[self.active].1)?;
            let (x, ax) = self.source.next_pair();
            self.consumed += 1;
            let rx = converter.convert(x);
            let rax = converter.convert(ax);
            if self.skip_overrange && (rx.is_overrange(self.spec) || rax.is_overrange(self.spec)) {
                self.skipped += 1;
                dropped_in_row += 1;
                if dropped_in_row >= MAX_CONSECUTIVE_DROPS {
                    return Err(CalibrationError::NoUsablePairs(dropped_in_row));
                }
                continue;
            }
            return Ok(delta_regressor(
                &rx,
                &rax,
                self.source.alpha(),
                self.layout,
                self.spec,
            )?);
        }
    }
}

impl<T: Scalar> Iterator for PairSampler<'_, T> {
    type Item = SamplePair<T>;

    /// Never ends for a validated sampler.
    fn next(&mut self) -> Option<SamplePair<T>> {
        self.next_pair().ok()
    }
}
