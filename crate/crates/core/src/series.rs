//! Weekly surveillance time series and their provenance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Whether a series counts all cases or one variant's attributable cases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    Tc,
    Vac,
}

impl SeriesKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SeriesKind::Tc => "tc",
            SeriesKind::Vac => "vac",
        }
    }
}

/// Observation-model provenance attached to augmented series.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizationMeta {
    pub realization_id: u32,
    pub noised: bool,
    pub outliered: bool,
}

/// A weekly, nonnegative case time series.
///
/// `values[w]` is the count for week `w`; the cadence is always weekly.
/// `variant_id` is set for VAC series and identifies the antigenic type.
#[derive(Clone, Debug, PartialEq)]
pub struct SurveillanceSeries {
    pub id: String,
    pub kind: SeriesKind,
    pub variant_id: Option<u32>,
    pub values: Vec<f64>,
    pub realization: Option<RealizationMeta>,
}

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("series {id}: empty")]
    Empty { id: String },
    #[error("series {id}: non-finite value at week {week}")]
    NonFinite { id: String, week: usize },
    #[error("series {id}: negative value {value} at week {week}")]
    Negative { id: String, week: usize, value: f64 },
}

impl SurveillanceSeries {
    pub fn new_tc(id: impl Into<String>, values: Vec<f64>) -> Self {
        Self { id: id.into(), kind: SeriesKind::Tc, variant_id: None, values, realization: None }
    }

    pub fn new_vac(id: impl Into<String>, variant_id: u32, values: Vec<f64>) -> Self {
        Self { id: id.into(), kind: SeriesKind::Vac, variant_id: Some(variant_id), values, realization: None }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Checks the series invariants: nonempty, finite, nonnegative.
    pub fn validate(&self) -> Result<(), SeriesError> {
        if self.values.is_empty() {
            return Err(SeriesError::Empty { id: self.id.clone() });
        }
        for (week, &v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(SeriesError::NonFinite { id: self.id.clone(), week });
            }
            if v < 0.0 {
                return Err(SeriesError::Negative { id: self.id.clone(), week, value: v });
            }
        }
        Ok(())
    }

    /// Same series with new id and values, keeping kind/variant metadata.
    pub fn with_values(&self, id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            kind: self.kind,
            variant_id: self.variant_id,
            values,
            realization: self.realization,
        }
    }
}
