//! Post-correction model: parameter layout, sparse selection vectors and the
//! corrected output `y_c = y + h^T theta`.
//!
//! Every level of each calibrated stage owns one offset parameter. Offsetting
//! all levels of a stage by a constant is indistinguishable from offsetting
//! the next stage, so the lowest level of every stage but the last is
//! dropped, leaving `p - (q - 1)` parameters. In extended mode the slot of
//! each stage's highest level is repurposed as a gain parameter that is
//! active on every conversion with weight `z_j = G_{j-1} z_{j-1} + x_s[j]`.

use thiserror::Error;

use crate::adc::{AdcSpec, ConversionRecord};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrectionError {
    #[error("number of calibrated stages must be in 1..={max}, got {q}")]
    StageCountOutOfRange { q: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("selection index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("record covers {covered} stages, layout calibrates {q}")]
    RecordTooShort { covered: usize, q: usize },
    #[error("scaled input {scaled} is not alpha times {x} (alpha = {alpha})")]
    ScalingMismatch { x: f64, scaled: f64, alpha: f64 },
}

/// Whether selection vectors carry only unit weights or also per-stage gain
/// entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorrectionMode {
    Plain,
    Extended,
}

/// Meaning of one entry of the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamSlot {
    /// Offset of `level` (0-based) in `stage` (1-based).
    Level { stage: usize, level: usize },
    /// Gain parameter of `stage`, weighted by `z_stage`.
    Gain { stage: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterLayout {
    q: usize,
    mode: CorrectionMode,
    levels_per_stage: Vec<usize>,
    excluded_index_per_stage: Vec<Option<usize>>,
    replaced_index_per_stage: Vec<Option<usize>>,
    level_slots: Vec<Vec<Option<usize>>>,
    gain_slots: Vec<Option<usize>>,
    slots: Vec<ParamSlot>,
}

impl ParameterLayout {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn mode(&self) -> CorrectionMode {
        self.mode
    }

    /// Number of parameters, `p - (q - 1)`.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn levels_per_stage(&self) -> &[usize] {
        &self.levels_per_stage
    }

    pub fn excluded_index_per_stage(&self) -> &[Option<usize>] {
        &self.excluded_index_per_stage
    }

    pub fn replaced_index_per_stage(&self) -> &[Option<usize>] {
        &self.replaced_index_per_stage
    }

    /// Parameter index of the offset for `level` of `stage` (1-based), if
    /// that level owns one.
    pub fn level_index(&self, stage: usize, level: usize) -> Option<usize> {
        self.level_slots
            .get(stage.checked_sub(1)?)?
            .get(level)
            .copied()
            .flatten()
    }

    /// Parameter index of the gain entry of `stage` (extended mode only).
    pub fn gain_index(&self, stage: usize) -> Option<usize> {
        self.gain_slots
            .get(stage.checked_sub(1)?)
            .copied()
            .flatten()
    }

    pub fn slot(&self, index: usize) -> Option<ParamSlot> {
        self.slots.get(index).copied()
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }
}

/// Lays out the parameter vector for the `q` most significant stages.
pub fn build_layout<T: Scalar>(
    spec: &AdcSpec<T>,
    q: usize,
    mode: CorrectionMode,
) -> Result<ParameterLayout, CorrectionError> {
    let max = spec.num_stages();
    if q == 0 || q > max {
        return Err(CorrectionError::StageCountOutOfRange { q, max });
    }
    let levels_per_stage: Vec<usize> = spec.stages()[..q].iter().map(|s| s.num_levels()).collect();
    let mut excluded_index_per_stage = Vec::with_capacity(q);
    let mut replaced_index_per_stage = Vec::with_capacity(q);
    let mut level_slots = Vec::with_capacity(q);
    let mut gain_slots = Vec::with_capacity(q);
    let mut slots = Vec::new();

    for (j, &levels) in levels_per_stage.iter().enumerate() {
        let stage = j + 1;
        let excluded = (stage < q && levels > 1).then_some(0);
        let replaced = (mode == CorrectionMode::Extended)
            .then_some(levels - 1)
            .filter(|&r| Some(r) != excluded);
        let mut per_level = vec![None; levels];
        let mut gain = None;
        for (level, entry) in per_level.iter_mut().enumerate() {
            if Some(level) == excluded {
                continue;
            }
            if Some(level) == replaced {
                gain = Some(slots.len());
                slots.push(ParamSlot::Gain { stage });
            } else {
                *entry = Some(slots.len());
                slots.push(ParamSlot::Level { stage, level });
            }
        }
        excluded_index_per_stage.push(excluded);
        replaced_index_per_stage.push(replaced);
        level_slots.push(per_level);
        gain_slots.push(gain);
    }

    Ok(ParameterLayout {
        q,
        mode,
        levels_per_stage,
        excluded_index_per_stage,
        replaced_index_per_stage,
        level_slots,
        gain_slots,
        slots,
    })
}

/// Correction offsets `theta`, in full-scale units.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector<T>(Vec<T>);

impl<T: Scalar> ParameterVector<T> {
    pub fn zeros(layout: &ParameterLayout) -> Self {
        Self(vec![T::zero(); layout.len()])
    }

    pub fn from_values(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn into_values(self) -> Vec<T> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> T {
        self.0.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &Self) -> Result<T, CorrectionError> {
        check_dim(self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt())
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<(), CorrectionError> {
    if expected == actual {
        Ok(())
    } else {
        Err(CorrectionError::DimensionMismatch { expected, actual })
    }
}

/// Sparse regressor: sorted `(index, weight)` pairs of a vector of length `len`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionVector<T> {
    entries: Vec<(usize, T)>,
    len: usize,
}

impl<T: Scalar> SelectionVector<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            entries: Vec::new(),
            len,
        }
    }

    /// Builds a vector from unordered entries; weights at repeated indices
    /// are summed.
    pub fn from_entries(
        len: usize,
        entries: impl IntoIterator<Item = (usize, T)>,
    ) -> Result<Self, CorrectionError> {
        let mut v = Self::zeros(len);
        for (index, weight) in entries {
            if index >= len {
                return Err(CorrectionError::IndexOutOfRange { index, len });
            }
            v.add(index, weight);
        }
        Ok(v)
    }

    fn add(&mut self, index: usize, weight: T) {
        match self.entries.binary_search_by_key(&index, |&(i, _)| i) {
            Ok(pos) => self.entries[pos].1 += weight,
            Err(pos) => self.entries.insert(pos, (index, weight)),
        }
    }

    /// Dense length.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Stored entries, sorted by index.
    pub fn entries(&self) -> &[(usize, T)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().filter(|(_, w)| *w != T::zero()).count()
    }

    pub fn norm_sq(&self) -> T {
        self.entries.iter().map(|&(_, w)| w * w).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, w)| w.is_finite())
    }

    /// `h^T theta`.
    pub fn dot(&self, theta: &[T]) -> Result<T, CorrectionError> {
        check_dim(self.len, theta.len())?;
        Ok(self.entries.iter().map(|&(i, w)| w * theta[i]).sum())
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut dense = vec![T::zero(); self.len];
        for &(i, w) in &self.entries {
            dense[i] = w;
        }
        dense
    }

    /// `self - scale * other`, merging coinciding indices.
    pub fn sub_scaled(&self, scale: T, other: &Self) -> Result<Self, CorrectionError> {
        check_dim(self.len, other.len)?;
        let mut out = self.clone();
        for &(i, w) in &other.entries {
            out.add(i, -scale * w);
        }
        Ok(out)
    }
}

/// Selection vector of one conversion.
pub fn build_selection_vector<T: Scalar>(
    record: &ConversionRecord<T>,
    layout: &ParameterLayout,
    spec: &AdcSpec<T>,
) -> Result<SelectionVector<T>, CorrectionError> {
    let q = layout.q;
    let covered = record.stage_codes.len().min(record.stage_outputs.len());
    if covered < q || spec.num_stages() < q {
        return Err(CorrectionError::RecordTooShort { covered, q });
    }
    let mut h = SelectionVector::zeros(layout.len());
    let mut z = T::zero();
    for j in 0..q {
        let x_s = record.stage_outputs[j];
        z = if j == 0 {
            x_s
        } else {
            spec.stages()[j - 1].ideal_gain() * z + x_s
        };
        let code = record.stage_codes[j];
        if let Some(index) = layout.level_slots[j].get(code).copied().flatten() {
            h.add(index, T::one());
        }
        if let Some(index) = layout.gain_slots[j] {
            h.add(index, z);
        }
    }
    Ok(h)
}

/// `y + h^T theta`.
pub fn apply_correction<T: Scalar>(
    y: T,
    h: &SelectionVector<T>,
    theta: &ParameterVector<T>,
) -> Result<T, CorrectionError> {
    Ok(y + h.dot(theta.values())?)
}

/// A conversion pair `(x, alpha x)` reduced to the estimator inputs
/// `delta_y = y_ax - alpha y_x` and `delta_h = h_ax - alpha h_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair<T> {
    pub delta_y: T,
    pub delta_h: SelectionVector<T>,
}

impl<T: Scalar> SamplePair<T> {
    /// Homogeneity residual of the corrected output, `delta_y + delta_h^T theta`.
    pub fn innovation(&self, theta: &ParameterVector<T>) -> Result<T, CorrectionError> {
        Ok(self.delta_y + self.delta_h.dot(theta.values())?)
    }
}

/// Relative tolerance on `x_ax = alpha * x`.
pub const SCALING_TOLERANCE: f64 = 1e-9;

pub fn delta_regressor<T: Scalar>(
    record_x: &ConversionRecord<T>,
    record_ax: &ConversionRecord<T>,
    alpha: T,
    layout: &ParameterLayout,
    spec: &AdcSpec<T>,
) -> Result<SamplePair<T>, CorrectionError> {
    let expected = alpha * record_x.x_in;
    let tol = T::lit(SCALING_TOLERANCE) * expected.abs().max(record_ax.x_in.abs());
    if !((record_ax.x_in - expected).abs() <= tol) {
        return Err(CorrectionError::ScalingMismatch {
            x: record_x.x_in.as_f64(),
            scaled: record_ax.x_in.as_f64(),
            alpha: alpha.as_f64(),
        });
    }
    let h_x = build_selection_vector(record_x, layout, spec)?;
    let h_ax = build_selection_vector(record_ax, layout, spec)?;
    Ok(SamplePair {
        delta_y: record_ax.y_x - alpha * record_x.y_x,
        delta_h: h_ax.sub_scaled(alpha, &h_x)?,
    })
}
