//! Forecast production from a trained checkpoint: direct total-cases
//! forecasts, and variant-sum forecasts via inverse-CDF Monte Carlo.

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::EVAL_LEVELS;
use crate::model::{forward, to_quantiles, Checkpoint, ModelError, Workspace};
use crate::rng::substream;
use crate::stats::empirical_quantile_sorted;
use rand::Rng;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("input length {got} does not match model context {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("non-finite input value at position {0}")]
    NonFinite(usize),
    #[error("negative input value {value} at position {pos}")]
    Negative { pos: usize, value: f64 },
    #[error("quantile values are not monotone at index {0}")]
    NonMonotone(usize),
    #[error("draw probability {0} outside (0, 1)")]
    BadDraw(f64),
    #[error("variant input set is empty")]
    NoVariants,
    #[error("levels and values differ in length")]
    LevelMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A probabilistic forecast for one (location, date, horizon), in original
/// case units, at the 7 evaluation levels.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileForecast {
    pub location: String,
    pub forecast_date: u32,
    /// 1-based horizon.
    pub horizon: u32,
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
}

fn validate_context(y_in: &[f64], context: usize) -> Result<(), ForecastError> {
    if y_in.len() != context {
        return Err(ForecastError::BadLength { expected: context, got: y_in.len() });
    }
    for (pos, &v) in y_in.iter().enumerate() {
        if !v.is_finite() {
            return Err(ForecastError::NonFinite(pos));
        }
        if v < 0.0 {
            return Err(ForecastError::Negative { pos, value: v });
        }
    }
    Ok(())
}

/// Full dense-grid forecast: `H x |T|` rescaled, zero-clamped quantiles
/// (row per horizon).
pub fn forecast_tc_dense(ckpt: &Checkpoint, y_in: &[f64]) -> Result<Vec<Vec<f64>>, ForecastError> {
    let cfg = ckpt.config;
    validate_context(y_in, cfg.context)?;
    let m = y_in.iter().cloned().fold(0.0f64, f64::max);
    let rescale = m > 0.0 && m.is_finite();
    let z_in: Vec<f64> = if rescale { y_in.iter().map(|v| v / m).collect() } else { y_in.to_vec() };

    let params = ckpt.params()?;
    let mut ws = Workspace::new(cfg);
    forward(&params, &z_in, &mut ws)?;
    let quant = to_quantiles(ws.raw(), cfg.horizon, cfg.n_quantiles);
    let scale = if rescale { m } else { 1.0 };
    Ok((0..cfg.horizon)
        .map(|h| {
            quant[h * cfg.n_quantiles..(h + 1) * cfg.n_quantiles]
                .iter()
                .map(|v| (v * scale).max(0.0))
                .collect()
        })
        .collect())
}

/// Total-cases forecast at the 7 evaluation levels, one row per horizon.
pub fn forecast_tc(ckpt: &Checkpoint, y_in: &[f64]) -> Result<Vec<Vec<f64>>, ForecastError> {
    let dense = forecast_tc_dense(ckpt, y_in)?;
    let idx = ckpt
        .grid
        .eval_indices()
        .ok_or_else(|| ModelError::CheckpointFormat("grid lacks the evaluation levels".into()))?;
    Ok(dense.into_iter().map(|row| idx.iter().map(|&i| row[i]).collect()).collect())
}

/// Inverse CDF by linear interpolation between (level, value) knots.
/// Draws outside the level range clamp to the extreme quantile values.
pub fn invert_cdf(levels: &[f64], values: &[f64], u: f64) -> Result<f64, ForecastError> {
    if levels.len() != values.len() || levels.is_empty() {
        return Err(ForecastError::LevelMismatch);
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(ForecastError::BadDraw(u));
    }
    for k in 1..values.len() {
        if values[k] < values[k - 1] {
            return Err(ForecastError::NonMonotone(k));
        }
    }
    if u <= levels[0] {
        return Ok(values[0]);
    }
    if u >= levels[levels.len() - 1] {
        return Ok(values[values.len() - 1]);
    }
    let hi = levels.partition_point(|&l| l < u);
    let lo = hi - 1;
    if levels[hi] == levels[lo] {
        return Ok(values[lo]);
    }
    let t = (u - levels[lo]) / (levels[hi] - levels[lo]);
    Ok(values[lo] + t * (values[hi] - values[lo]))
}

const DRAW_CHUNK: usize = 8192;

/// Variant-sum forecast: per horizon, draws one inverse-CDF realization
/// per variant, sums across variants, repeats `n_draws` times, and reports
/// the 7 sample quantiles of the sums. Draws use counter-based chunk
/// substreams, so results depend only on `(seed, n_draws)`, not on
/// scheduling.
pub fn forecast_vac(
    ckpt: &Checkpoint,
    contexts: &[Vec<f64>],
    n_draws: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, ForecastError> {
    if contexts.is_empty() {
        return Err(ForecastError::NoVariants);
    }
    let cfg = ckpt.config;
    let levels = ckpt.grid.levels().to_vec();

    // Dense quantiles per variant, validated monotone.
    let mut per_variant: Vec<Vec<Vec<f64>>> = Vec::with_capacity(contexts.len());
    for ctx in contexts {
        let dense = forecast_tc_dense(ckpt, ctx)?;
        for row in &dense {
            for k in 1..row.len() {
                if row[k] < row[k - 1] {
                    return Err(ForecastError::NonMonotone(k));
                }
            }
        }
        per_variant.push(dense);
    }

    let n_chunks = n_draws.div_ceil(DRAW_CHUNK);
    let mut out = Vec::with_capacity(cfg.horizon);
    for h in 0..cfg.horizon {
        let rows: Vec<&[f64]> = per_variant.iter().map(|v| v[h].as_slice()).collect();
        let mut sums: Vec<f64> = (0..n_chunks)
            .into_par_iter()
            .flat_map_iter(|chunk| {
                let lo = chunk * DRAW_CHUNK;
                let hi = ((chunk + 1) * DRAW_CHUNK).min(n_draws);
                let mut rng = substream(seed, "vac-draws", ((h as u64) << 32) | chunk as u64);
                let levels = &levels;
                let rows = &rows;
                (lo..hi).map(move |_| {
                    let mut total = 0.0;
                    for row in rows.iter() {
                        let u: f64 = rng.gen();
                        total += invert_cdf(levels, row, u).expect("validated monotone");
                    }
                    total
                })
            })
            .collect();
        sums.sort_by(|a, b| a.partial_cmp(b).expect("finite sums"));
        out.push(EVAL_LEVELS.iter().map(|&tau| empirical_quantile_sorted(&sums, tau)).collect());
    }
    Ok(out)
}

/// Wraps per-horizon rows into labelled forecasts.
pub fn label_forecasts(
    location: &str,
    forecast_date: u32,
    rows: Vec<Vec<f64>>,
) -> Vec<QuantileForecast> {
    rows.into_iter()
        .enumerate()
        .map(|(h, values)| QuantileForecast {
            location: location.to_string(),
            forecast_date,
            horizon: (h + 1) as u32,
            levels: EVAL_LEVELS.to_vec(),
            values,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::QuantileGrid;
    use crate::model::{ModelConfig, ModelParams, CHECKPOINT_VERSION};
    use crate::rng::substream;

    fn test_ckpt() -> Checkpoint {
        let cfg = ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 12, context: 10, horizon: 4, n_quantiles: 27 };
        let params = ModelParams::init(cfg, &mut substream(21, "fc", 0));
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: cfg,
            grid: QuantileGrid::dense27(),
            ema: params.data,
            updates_done: 0,
            val_loss: f64::INFINITY,
        }
    }

    #[test]
    fn tc_forecast_is_monotone_and_nonnegative() {
        let ckpt = test_ckpt();
        let mut rng = substream(1, "in", 0);
        for _ in 0..50 {
            let y: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..500.0)).collect();
            let rows = forecast_tc(&ckpt, &y).unwrap();
            assert_eq!(rows.len(), 4);
            for row in rows {
                assert_eq!(row.len(), 7);
                for k in 1..7 {
                    assert!(row[k] >= row[k - 1]);
                }
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn tc_forecast_scales_linearly_with_input() {
        // Max-normalization makes z_in identical for y and c*y, so the
        // forecasts are exactly c times apart.
        let ckpt = test_ckpt();
        let y: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let yc: Vec<f64> = y.iter().map(|v| v * 37.5).collect();
        let a = forecast_tc(&ckpt, &y).unwrap();
        let b = forecast_tc(&ckpt, &yc).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (va, vb) in ra.iter().zip(rb) {
                assert!((va * 37.5 - vb).abs() < 1e-9 * (1.0 + vb.abs()));
            }
        }
    }

    #[test]
    fn zero_context_forecasts_finite() {
        let ckpt = test_ckpt();
        let rows = forecast_tc(&ckpt, &vec![0.0; 10]).unwrap();
        for row in rows {
            assert!(row.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn bad_inputs_rejected() {
        let ckpt = test_ckpt();
        assert!(matches!(forecast_tc(&ckpt, &[1.0; 9]), Err(ForecastError::BadLength { .. })));
        let mut y = vec![1.0; 10];
        y[2] = f64::INFINITY;
        assert!(matches!(forecast_tc(&ckpt, &y), Err(ForecastError::NonFinite(2))));
        y[2] = -1.0;
        assert!(matches!(forecast_tc(&ckpt, &y), Err(ForecastError::Negative { pos: 2, .. })));
    }

    #[test]
    fn invert_cdf_knots_interpolation_and_clamps() {
        let levels = [0.25, 0.75];
        let values = [1.0, 3.0];
        assert_eq!(invert_cdf(&levels, &values, 0.25).unwrap(), 1.0);
        assert_eq!(invert_cdf(&levels, &values, 0.75).unwrap(), 3.0);
        assert_eq!(invert_cdf(&levels, &values, 0.5).unwrap(), 2.0);
        assert_eq!(invert_cdf(&levels, &values, 0.01).unwrap(), 1.0);
        assert_eq!(invert_cdf(&levels, &values, 0.99999).unwrap(), 3.0);
        assert!(matches!(
            invert_cdf(&levels, &[3.0, 1.0], 0.5),
            Err(ForecastError::NonMonotone(1))
        ));
    }

    #[test]
    fn vac_sum_of_degenerate_variants_is_exact() {
        let ckpt = test_ckpt();
        // Bypass the model: exercise the summation path directly through
        // invert_cdf semantics by checking that constant quantile rows sum
        // deterministically inside forecast_vac's sampler. Degenerate rows
        // come from constant contexts only via the model, so test the
        // sampler math on hand-built rows.
        let levels = ckpt.grid.levels();
        let rows = [vec![3.0; 27], vec![4.0; 27]];
        let mut rng = substream(0, "deg", 0);
        for _ in 0..100 {
            let total: f64 = rows
                .iter()
                .map(|r| invert_cdf(levels, r, rng.gen::<f64>()).unwrap())
                .sum();
            assert_eq!(total, 7.0);
        }
    }

    #[test]
    fn vac_single_variant_matches_tc_at_median() {
        let ckpt = test_ckpt();
        let y: Vec<f64> = (0..10).map(|i| 20.0 + (i as f64 * 0.7).sin().abs() * 80.0).collect();
        let direct = forecast_tc(&ckpt, &y).unwrap();
        let mc = forecast_vac(&ckpt, &[y.clone()], 100_000, 7).unwrap();
        for h in 0..4 {
            let med_direct = direct[h][3];
            let med_mc = mc[h][3];
            let tol = 0.01 * med_direct.abs().max(1e-9);
            assert!(
                (med_direct - med_mc).abs() <= tol,
                "h{h}: direct {med_direct} vs mc {med_mc}"
            );
        }
    }

    #[test]
    fn vac_draws_are_deterministic_given_seed() {
        let ckpt = test_ckpt();
        let contexts = vec![
            (0..10).map(|i| i as f64 + 1.0).collect::<Vec<f64>>(),
            (0..10).map(|i| 2.0 * i as f64 + 3.0).collect(),
        ];
        let a = forecast_vac(&ckpt, &contexts, 20_000, 5).unwrap();
        let b = forecast_vac(&ckpt, &contexts, 20_000, 5).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            forecast_vac(&ckpt, &[], 100, 0),
            Err(ForecastError::NoVariants)
        ));
    }
}
