//! Integral nonlinearity from an oversampled input ramp.
//!
//! For every ramp sample the (optionally corrected) output minus the input
//! minus the final-flash quantization term is attributed to the raw output
//! code; the INL of a code is the mean over its samples, in LSB.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::adc::{AdcError, AdcSpec, ConversionRecord, Converter, NonidealityProfile};
use crate::correction::{
    build_selection_vector, CorrectionError, ParameterLayout, ParameterVector,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("ramp of {got} points is too coarse, need at least {min}")]
    GridTooCoarse { got: usize, min: usize },
    #[error("code axes differ")]
    AxisMismatch,
    #[error(transparent)]
    Adc(#[from] AdcError),
    #[error(transparent)]
    Correction(#[from] CorrectionError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InlCurve<T> {
    pub codes: Vec<i64>,
    pub inl_lsb: Vec<T>,
    /// Mean input level of each code, in LSB. Straight-line fits run against
    /// this axis: the raw code axis is itself bent by the INL being measured.
    pub input_lsb: Vec<T>,
    pub gain_removed: bool,
    /// Codes inside the covered span that no ramp sample produced.
    pub missing_codes: Vec<i64>,
    /// Ramp samples dropped because they over-ranged the flash.
    pub overrange_samples: usize,
}

impl<T: Scalar> InlCurve<T> {
    /// Largest magnitude; NaN if any entry is NaN.
    pub fn max_abs(&self) -> T {
        self.inl_lsb.iter().fold(T::zero(), |m, v| {
            if m.is_nan() || v.is_nan() {
                T::nan()
            } else {
                m.max(v.abs())
            }
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Oversampling factor applied by [`default_grid_points`].
pub const DEFAULT_OVERSAMPLING: usize = 8;

/// Minimum ramp length for a converter: four samples per code.
pub fn min_grid_points<T: Scalar>(spec: &AdcSpec<T>) -> usize {
    4usize << spec.total_bits()
}

pub fn default_grid_points<T: Scalar>(spec: &AdcSpec<T>) -> usize {
    DEFAULT_OVERSAMPLING << spec.total_bits()
}

/// Ramp covering `[-FS/2, FS/2)` at cell centres.
fn ramp<T: Scalar>(spec: &AdcSpec<T>, points: usize) -> impl Iterator<Item = T> + '_ {
    let fs = spec.full_scale();
    let n = T::from_count(points);
    (0..points).map(move |i| -spec.half_range() + fs * (T::from_count(i) + T::lit(0.5)) / n)
}

fn sweep<T: Scalar>(
    spec: &AdcSpec<T>,
    profile: &NonidealityProfile<T>,
    grid_points: usize,
    mut value: impl FnMut(&ConversionRecord<T>) -> Result<T, MetricsError>,
) -> Result<InlCurve<T>, MetricsError> {
    let min = min_grid_points(spec);
    if grid_points < min {
        return Err(MetricsError::GridTooCoarse {
            got: grid_points,
            min,
        });
    }
    let conv = Converter::new(spec, profile)?;
    let lsb = spec.lsb();
    let mut bins: BTreeMap<i64, (T, T, usize)> = BTreeMap::new();
    let mut overrange = 0;
    for x in ramp(spec, grid_points) {
        let rec = conv.convert(x);
        if rec.is_overrange(spec) {
            overrange += 1;
            continue;
        }
        let v = value(&rec)? / lsb;
        let bin = bins
            .entry(rec.output_code(spec))
            .or_insert((T::zero(), T::zero(), 0));
        bin.0 += v;
        bin.1 += x / lsb;
        bin.2 += 1;
    }
    let codes: Vec<i64> = bins.keys().copied().collect();
    let inl_lsb = bins
        .values()
        .map(|&(s, _, n)| s / T::from_count(n))
        .collect();
    let input_lsb = bins
        .values()
        .map(|&(_, x, n)| x / T::from_count(n))
        .collect();
    let missing_codes = match (codes.first(), codes.last()) {
        (Some(&lo), Some(&hi)) => (lo..=hi).filter(|c| !bins.contains_key(c)).collect(),
        _ => Vec::new(),
    };
    Ok(InlCurve {
        codes,
        inl_lsb,
        input_lsb,
        gain_removed: false,
        missing_codes,
        overrange_samples: overrange,
    })
}

/// INL of the converter, optionally after post-correction with `theta`.
pub fn compute_inl<T: Scalar>(
    spec: &AdcSpec<T>,
    profile: &NonidealityProfile<T>,
    correction: Option<(&ParameterLayout, &ParameterVector<T>)>,
    grid_points: usize,
) -> Result<InlCurve<T>, MetricsError> {
    let flash_weight = spec.stage_weights().last().copied().unwrap_or(T::one());
    sweep(spec, profile, grid_points, |rec| {
        let corrected = match correction {
            Some((layout, theta)) => {
                let h = build_selection_vector(rec, layout, spec)?;
                rec.y_x + h.dot(theta.values())?
            }
            None => rec.y_x,
        };
        Ok(corrected - rec.x_in + rec.flash_quant_error / flash_weight)
    })
}

/// The INL implied by the correction alone: per code, the mean of `-h^T theta`.
pub fn correction_inl<T: Scalar>(
    spec: &AdcSpec<T>,
    profile: &NonidealityProfile<T>,
    layout: &ParameterLayout,
    theta: &ParameterVector<T>,
    grid_points: usize,
) -> Result<InlCurve<T>, MetricsError> {
    sweep(spec, profile, grid_points, |rec| {
        let h = build_selection_vector(rec, layout, spec)?;
        Ok(-h.dot(theta.values())?)
    })
}

/// Least-squares line `offset + slope * input` through the curve, with the
/// input level in LSB.
pub fn line_fit<T: Scalar>(curve: &InlCurve<T>) -> (T, T) {
    let n = curve.codes.len();
    if n == 0 {
        return (T::zero(), T::zero());
    }
    let nf = T::from_count(n);
    let xs = &curve.input_lsb;
    let mx = xs.iter().copied().sum::<T>() / nf;
    let my = curve.inl_lsb.iter().copied().sum::<T>() / nf;
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let sxy: T = xs
        .iter()
        .zip(&curve.inl_lsb)
        .map(|(&x, &y)| (x - mx) * (y - my))
        .sum();
    let slope = if sxx > T::zero() {
        sxy / sxx
    } else {
        T::zero()
    };
    (my - slope * mx, slope)
}

/// Removes the best-fit straight line (overall gain and offset).
pub fn remove_overall_gain<T: Scalar>(curve: &InlCurve<T>) -> InlCurve<T> {
    let (offset, slope) = line_fit(curve);
    let inl_lsb = curve
        .input_lsb
        .iter()
        .zip(&curve.inl_lsb)
        .map(|(&x, &v)| v - offset - slope * x)
        .collect();
    InlCurve {
        inl_lsb,
        gain_removed: true,
        ..curve.clone()
    }
}

/// Pointwise `true - estimated`.
pub fn residual_inl<T: Scalar>(
    true_curve: &InlCurve<T>,
    estimated: &InlCurve<T>,
) -> Result<InlCurve<T>, MetricsError> {
    if true_curve.codes != estimated.codes {
        return Err(MetricsError::AxisMismatch);
    }
    Ok(InlCurve {
        codes: true_curve.codes.clone(),
        inl_lsb: true_curve
            .inl_lsb
            .iter()
            .zip(&estimated.inl_lsb)
            .map(|(&a, &b)| a - b)
            .collect(),
        input_lsb: true_curve.input_lsb.clone(),
        gain_removed: true_curve.gain_removed && estimated.gain_removed,
        missing_codes: true_curve.missing_codes.clone(),
        overrange_samples: true_curve.overrange_samples,
    })
}
