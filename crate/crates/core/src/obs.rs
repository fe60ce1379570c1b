//! Stochastic observation model: scaling, multiplicative noise, outliers.
//!
//! Clean weekly series are degraded in three stages. Scaling resamples the
//! series onto a shorter uniform time grid (same dynamics, faster time
//! scale), noise multiplies each point by a bounded random factor, and the
//! outlier stage spikes or suppresses a handful of positions. Each clean
//! TC series yields 20 realizations; each sampled VAC series yields two.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{RealizationMeta, SurveillanceSeries};

/// Observation-model parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObsConfig {
    /// Minimum output length; also the minimum eligible input length.
    pub t_prime_min: usize,
    pub kappa_range: (f64, f64),
    pub outlier_count_range: (usize, usize),
    pub high_mult_range: (f64, f64),
    pub low_mult_range: (f64, f64),
    /// Chance for a TC realization to receive outliers.
    pub outlier_probability: f64,
    /// Realizations per TC input.
    pub tc_realizations: usize,
    /// How many of those additionally receive noise.
    pub tc_noised: usize,
    /// At most this many variants are sampled per run.
    pub vac_max_variants: usize,
}

impl Default for ObsConfig {
    fn default() -> Self {
        Self {
            t_prime_min: 52,
            kappa_range: (1.5, 3.5),
            outlier_count_range: (5, 10),
            high_mult_range: (2.0, 10.0),
            low_mult_range: (0.0, 0.05),
            outlier_probability: 0.25,
            tc_realizations: 20,
            tc_noised: 10,
            vac_max_variants: 10,
        }
    }
}

#[derive(Debug, Error)]
pub enum ObsError {
    #[error("series {id}: length {len} is below the scaling minimum {min}")]
    TooShort { id: String, len: usize, min: usize },
    #[error("invalid observation config: {0}")]
    BadConfig(String),
}

impl ObsConfig {
    pub fn validate(&self) -> Result<(), ObsError> {
        let ranges = [
            ("kappa_range", self.kappa_range),
            ("high_mult_range", self.high_mult_range),
            ("low_mult_range", self.low_mult_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo <= hi) {
                return Err(ObsError::BadConfig(format!("{name}: {lo} > {hi}")));
            }
        }
        if self.outlier_count_range.0 > self.outlier_count_range.1 {
            return Err(ObsError::BadConfig("outlier_count_range inverted".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_probability) {
            return Err(ObsError::BadConfig("outlier_probability outside [0,1]".into()));
        }
        if self.tc_noised > self.tc_realizations {
            return Err(ObsError::BadConfig("tc_noised exceeds tc_realizations".into()));
        }
        if self.t_prime_min < 2 {
            return Err(ObsError::BadConfig("t_prime_min must be at least 2".into()));
        }
        Ok(())
    }
}

/// Resamples `values` onto `t_prime` points uniformly spanning the
/// original index range, by linear interpolation. Endpoints are preserved.
pub fn scale_to(values: &[f64], t_prime: usize) -> Vec<f64> {
    let t = values.len();
    debug_assert!(t >= 2 && t_prime >= 2);
    let stretch = (t - 1) as f64 / (t_prime - 1) as f64;
    (0..t_prime)
        .map(|j| {
            if j == t_prime - 1 {
                return values[t - 1]; // endpoint exact despite rounding
            }
            let x = j as f64 * stretch;
            let i = (x.floor() as usize).min(t - 2);
            let frac = x - i as f64;
            values[i] + frac * (values[i + 1] - values[i])
        })
        .collect()
}

/// Scaling stage: draws `T' ~ Uniform{min..=T}` and resamples.
pub fn scale(
    y: &SurveillanceSeries,
    cfg: &ObsConfig,
    rng: &mut impl Rng,
) -> Result<SurveillanceSeries, ObsError> {
    let t = y.len();
    if t < cfg.t_prime_min {
        return Err(ObsError::TooShort { id: y.id.clone(), len: t, min: cfg.t_prime_min });
    }
    let t_prime = rng.gen_range(cfg.t_prime_min..=t);
    Ok(y.with_values(y.id.clone(), scale_to(&y.values, t_prime)))
}

/// Noise stage: one kappa per series, independent bounded factors per point.
pub fn add_noise(x: &SurveillanceSeries, cfg: &ObsConfig, rng: &mut impl Rng) -> SurveillanceSeries {
    let kappa = rng.gen_range(cfg.kappa_range.0..=cfg.kappa_range.1);
    let values = x
        .values
        .iter()
        .map(|&v| {
            let eps = rng.gen_range(kappa.recip()..=kappa);
            v * eps
        })
        .collect();
    x.with_values(x.id.clone(), values)
}

/// Outlier stage: 5..=10 distinct positions, high multipliers for the
/// first half (rounded up), low for the rest. Series shorter than the
/// maximum outlier count pass through unchanged.
pub fn add_outliers(
    v: &SurveillanceSeries,
    cfg: &ObsConfig,
    rng: &mut impl Rng,
) -> SurveillanceSeries {
    let t = v.len();
    if t < cfg.outlier_count_range.1 {
        log::warn!("series {}: length {} too short for outliers, passing through", v.id, t);
        return v.clone();
    }
    let n_out = rng.gen_range(cfg.outlier_count_range.0..=cfg.outlier_count_range.1);
    let mut positions: Vec<usize> = (0..t).collect();
    let (chosen, _) = positions.partial_shuffle(rng, n_out);
    let n_high = n_out.div_ceil(2);
    let mut values = v.values.clone();
    for (k, &pos) in chosen.iter().enumerate() {
        let mult = if k < n_high {
            rng.gen_range(cfg.high_mult_range.0..=cfg.high_mult_range.1)
        } else {
            rng.gen_range(cfg.low_mult_range.0..=cfg.low_mult_range.1)
        };
        values[pos] *= mult;
    }
    v.with_values(v.id.clone(), values)
}

/// Applies the TC rules: 20 realizations, all scaled, the first 10 noised,
/// each independently outliered with probability 0.25.
pub fn realize_tc(
    y: &SurveillanceSeries,
    cfg: &ObsConfig,
    rng: &mut impl Rng,
) -> Result<Vec<SurveillanceSeries>, ObsError> {
    let mut out = Vec::with_capacity(cfg.tc_realizations);
    for r in 0..cfg.tc_realizations {
        let scaled = scale(y, cfg, rng)?;
        let noised = r < cfg.tc_noised;
        let v = if noised { add_noise(&scaled, cfg, rng) } else { scaled };
        let outliered = rng.gen::<f64>() < cfg.outlier_probability;
        let mut z = if outliered { add_outliers(&v, cfg, rng) } else { v };
        z.id = format!("{}_o{r:02}", y.id);
        z.realization = Some(RealizationMeta {
            realization_id: r as u32,
            noised,
            outliered: outliered && z.len() >= cfg.outlier_count_range.1,
        });
        out.push(z);
    }
    Ok(out)
}

/// Applies the VAC rules: up to `vac_max_variants` variants sampled
/// without replacement, weighted by total attributable cases; each yields
/// a scale+outliers realization and a scale+noise+outliers realization.
/// Variants shorter than the scaling minimum are skipped.
pub fn realize_vac(
    vacs: &[SurveillanceSeries],
    cfg: &ObsConfig,
    rng: &mut impl Rng,
) -> Vec<SurveillanceSeries> {
    let mut eligible: Vec<&SurveillanceSeries> = Vec::new();
    for v in vacs {
        if v.len() >= cfg.t_prime_min {
            eligible.push(v);
        } else {
            log::warn!("variant series {}: shorter than {} weeks, skipped", v.id, cfg.t_prime_min);
        }
    }
    let chosen = weighted_sample_without_replacement(
        &eligible,
        cfg.vac_max_variants,
        |s| s.total(),
        rng,
    );

    let mut out = Vec::with_capacity(chosen.len() * 2);
    for v in chosen {
        for (r, with_noise) in [(0u32, false), (1u32, true)] {
            let scaled = scale(v, cfg, rng).expect("eligibility checked above");
            let pre = if with_noise { add_noise(&scaled, cfg, rng) } else { scaled };
            let mut z = add_outliers(&pre, cfg, rng);
            z.id = format!("{}_o{r}", v.id);
            z.realization = Some(RealizationMeta {
                realization_id: r,
                noised: with_noise,
                outliered: z.len() >= cfg.outlier_count_range.1,
            });
            out.push(z);
        }
    }
    out
}

/// Samples up to `k` items without replacement, selection probability
/// proportional to `weight`. Falls back to uniform when all remaining
/// weights are zero.
fn weighted_sample_without_replacement<'a, T>(
    items: &[&'a T],
    k: usize,
    weight: impl Fn(&T) -> f64,
    rng: &mut impl Rng,
) -> Vec<&'a T> {
    let mut pool: Vec<(&T, f64)> = items.iter().map(|&x| (x, weight(x).max(0.0))).collect();
    let mut picked = Vec::with_capacity(k.min(pool.len()));
    while picked.len() < k && !pool.is_empty() {
        let total: f64 = pool.iter().map(|(_, w)| w).sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = pool.len() - 1;
            for (i, (_, w)) in pool.iter().enumerate() {
                if target < *w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.gen_range(0..pool.len())
        };
        picked.push(pool.swap_remove(idx).0);
    }
    picked
}
