//! Forecast evaluation: MAE, interval score, WIS, coverage, the
//! persistence baseline, and relative metrics.

mod bootstrap;

pub use bootstrap::{
    block_bootstrap, iid_bootstrap, BootstrapConfig, BootstrapMode, BootstrapResult, MetricDraws,
    PairedDiff,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::EVAL_LEVELS;
use crate::stats::empirical_quantile;

/// WIS interval configuration: K central intervals with weights
/// `w_0 = 0.5`, `w_k = alpha_k / 2`, normalized by `1 / (K + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    /// Interval alphas, strictly decreasing; default 50/80/95% intervals.
    pub alphas: Vec<f64>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { alphas: vec![0.5, 0.2, 0.05] }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.alphas.is_empty() {
            return Err(ScoreError::BadConfig("at least one interval alpha required".into()));
        }
        if self.alphas.iter().any(|a| !(0.0 < *a && *a < 1.0)) {
            return Err(ScoreError::BadConfig("alphas must lie in (0,1)".into()));
        }
        if self.alphas.windows(2).any(|w| w[0] <= w[1]) {
            return Err(ScoreError::BadConfig("alphas must be strictly decreasing".into()));
        }
        Ok(())
    }
}

/// One scored forecast: observation plus the 7 evaluation quantiles.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastRecord {
    pub location: String,
    pub date: u32,
    /// 1-based horizon.
    pub horizon: u32,
    pub model: String,
    pub observed: f64,
    /// Values at [`EVAL_LEVELS`] order.
    pub quantiles: [f64; 7],
}

impl ForecastRecord {
    pub fn median(&self) -> f64 {
        self.quantiles[3]
    }

    /// (lower, upper) bounds of the central (1 - alpha) interval.
    pub fn interval(&self, alpha: f64) -> Result<(f64, f64), ScoreError> {
        let lo_level = alpha / 2.0;
        let hi_level = 1.0 - alpha / 2.0;
        let find = |target: f64| {
            EVAL_LEVELS
                .iter()
                .position(|l| (l - target).abs() < 1e-9)
                .ok_or(ScoreError::MissingLevel { level: target })
        };
        Ok((self.quantiles[find(lo_level)?], self.quantiles[find(hi_level)?]))
    }
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("no records to score")]
    Empty,
    #[error("invalid score config: {0}")]
    BadConfig(String),
    #[error("interval bounds inverted: lower {lower} > upper {upper}")]
    InvertedInterval { lower: f64, upper: f64 },
    #[error("evaluation grid lacks quantile level {level}")]
    MissingLevel { level: f64 },
    #[error("baseline model {0} not present in records")]
    MissingBaseline(String),
}

/// Mean absolute error of the median forecast.
pub fn mae(records: &[&ForecastRecord]) -> Result<f64, ScoreError> {
    if records.is_empty() {
        return Err(ScoreError::Empty);
    }
    Ok(records.iter().map(|r| (r.median() - r.observed).abs()).sum::<f64>() / records.len() as f64)
}

/// Ratio to a baseline metric. A zero baseline yields 1 when the metric is
/// also zero (a model scored against itself), +inf otherwise.
pub fn relative(metric: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        if metric == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        metric / baseline
    }
}

/// Interval score: width plus out-of-interval penalties scaled by 2/alpha.
pub fn interval_score(y: f64, lower: f64, upper: f64, alpha: f64) -> Result<f64, ScoreError> {
    if lower > upper {
        return Err(ScoreError::InvertedInterval { lower, upper });
    }
    let width = upper - lower;
    let below = if y < lower { lower - y } else { 0.0 };
    let above = if y > upper { y - upper } else { 0.0 };
    Ok(width + (2.0 / alpha) * (below + above))
}

/// Weighted interval score over the configured central intervals.
pub fn wis(record: &ForecastRecord, cfg: &ScoreConfig) -> Result<f64, ScoreError> {
    cfg.validate()?;
    let k = cfg.alphas.len() as f64;
    let mut acc = 0.5 * (record.observed - record.median()).abs();
    for &alpha in &cfg.alphas {
        let (lower, upper) = record.interval(alpha)?;
        acc += (alpha / 2.0) * interval_score(record.observed, lower, upper, alpha)?;
    }
    Ok(acc / (k + 0.5))
}

/// Fraction of observations inside the central (1 - alpha) interval.
pub fn coverage(records: &[&ForecastRecord], alpha: f64) -> Result<f64, ScoreError> {
    if records.is_empty() {
        return Err(ScoreError::Empty);
    }
    let mut inside = 0usize;
    for r in records {
        let (lower, upper) = r.interval(alpha)?;
        if lower <= r.observed && r.observed <= upper {
            inside += 1;
        }
    }
    Ok(inside as f64 / records.len() as f64)
}

/// Persistence forecast with intervals from historical h-step changes.
#[derive(Clone, Debug, PartialEq)]
pub struct PersistenceForecast {
    /// Point forecast: the last observation.
    pub point: f64,
    /// Quantiles at [`EVAL_LEVELS`], clamped at zero.
    pub quantiles: [f64; 7],
    /// Set when fewer changes than the requested lookback were available.
    pub fallback: bool,
}

/// Builds the persistence forecast from `history` (all observations up to
/// and including the forecast date). Quantile at level tau is
/// `max(0, y_t + Q_tau({y_s - y_{s-h}}))` over the expanding history.
/// With fewer changes than `min_changes` the widest available set is used
/// and the forecast is flagged; with no changes at all the intervals
/// collapse to the point forecast.
pub fn persistence_forecast(
    history: &[f64],
    horizon: usize,
    min_changes: usize,
) -> Result<PersistenceForecast, ScoreError> {
    if history.is_empty() {
        return Err(ScoreError::Empty);
    }
    let last = *history.last().expect("nonempty");
    if history.len() <= horizon {
        return Ok(PersistenceForecast {
            point: last,
            quantiles: [last.max(0.0); 7],
            fallback: true,
        });
    }
    let changes: Vec<f64> = (horizon..history.len()).map(|s| history[s] - history[s - horizon]).collect();
    let fallback = changes.len() < min_changes;
    let mut quantiles = [0.0; 7];
    for (k, &tau) in EVAL_LEVELS.iter().enumerate() {
        quantiles[k] = (last + empirical_quantile(&changes, tau)).max(0.0);
    }
    Ok(PersistenceForecast { point: last, quantiles, fallback })
}

/// One aggregate score row.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub model: String,
    /// None aggregates all horizons.
    pub horizon: Option<u32>,
    pub metric: String,
    pub value: f64,
}

/// Per-model, per-horizon MAE/WIS/coverage plus relative metrics against
/// the baseline model scored on the same slice.
pub fn score_report(
    records: &[ForecastRecord],
    cfg: &ScoreConfig,
    baseline_model: &str,
) -> Result<Vec<ScoreRow>, ScoreError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(ScoreError::Empty);
    }
    let mut models: Vec<&str> = records.iter().map(|r| r.model.as_str()).collect();
    models.sort_unstable();
    models.dedup();
    if !models.contains(&baseline_model) {
        return Err(ScoreError::MissingBaseline(baseline_model.to_string()));
    }
    let mut horizons: Vec<Option<u32>> = records.iter().map(|r| Some(r.horizon)).collect();
    horizons.sort_unstable();
    horizons.dedup();
    horizons.push(None);

    let slice = |model: &str, horizon: Option<u32>| -> Vec<&ForecastRecord> {
        records
            .iter()
            .filter(|r| r.model == model && horizon.map_or(true, |h| r.horizon == h))
            .collect()
    };

    let mut rows = Vec::new();
    for &h in &horizons {
        let base_records = slice(baseline_model, h);
        let base_mae = mae(&base_records)?;
        let base_wis = base_records.iter().map(|r| wis(r, cfg)).sum::<Result<f64, _>>()?
            / base_records.len() as f64;
        for &model in &models {
            let recs = slice(model, h);
            if recs.is_empty() {
                continue;
            }
            let m = mae(&recs)?;
            let w = recs.iter().map(|r| wis(r, cfg)).sum::<Result<f64, _>>()? / recs.len() as f64;
            rows.push(ScoreRow { model: model.into(), horizon: h, metric: "mae".into(), value: m });
            rows.push(ScoreRow { model: model.into(), horizon: h, metric: "wis".into(), value: w });
            rows.push(ScoreRow {
                model: model.into(),
                horizon: h,
                metric: "rmae".into(),
                value: relative(m, base_mae),
            });
            rows.push(ScoreRow {
                model: model.into(),
                horizon: h,
                metric: "rwis".into(),
                value: relative(w, base_wis),
            });
            for &alpha in &cfg.alphas {
                let c = coverage(&recs, alpha)?;
                let name = format!("coverage_{:02.0}", (1.0 - alpha) * 100.0);
                rows.push(ScoreRow { model: model.into(), horizon: h, metric: name, value: c });
            }
        }
    }
    Ok(rows)
}
