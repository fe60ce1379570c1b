//! Grouped block bootstrap and the iid comparator.
//!
//! The block procedure resamples locations with replacement, then per
//! sampled location resamples blocks of consecutive forecast dates,
//! keeping all horizons and all models for every sampled cell. The iid
//! procedure resamples (location, date, horizon) units ignoring grouping.
//! Both recompute each model's MAE/WIS per replicate, with relative
//! metrics against the baseline scored on the same resample.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::substream;
use crate::stats::empirical_quantile;

use super::{wis, ForecastRecord, ScoreConfig, ScoreError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapMode {
    Block,
    Iid,
}

impl BootstrapMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BootstrapMode::Block => "block",
            BootstrapMode::Iid => "iid",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub n_reps: usize,
    /// Blocks drawn per sampled location (block mode).
    pub blocks_per_location: usize,
    /// Consecutive forecast dates per block (block mode); shrinks with a
    /// warning when a location has fewer dates.
    pub block_len: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { n_reps: 5_000, blocks_per_location: 9, block_len: 15 }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.n_reps == 0 || self.blocks_per_location == 0 || self.block_len == 0 {
            return Err(ScoreError::BadConfig("bootstrap sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Replicate draws of one metric for one model.
#[derive(Clone, Debug, Default)]
pub struct MetricDraws {
    pub mae: Vec<f64>,
    pub wis: Vec<f64>,
    pub rmae: Vec<f64>,
    pub rwis: Vec<f64>,
}

/// Within-replicate paired difference `metric(A) - metric(B)`;
/// positive values mean model B did better.
#[derive(Clone, Debug)]
pub struct PairedDiff {
    pub model_a: String,
    pub model_b: String,
    pub metric: String,
    pub diffs: Vec<f64>,
    pub ci: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct BootstrapResult {
    pub mode: BootstrapMode,
    pub models: Vec<String>,
    pub draws: BTreeMap<String, MetricDraws>,
    /// Percentile 2.5/97.5 intervals keyed by (model, metric).
    pub cis: BTreeMap<(String, String), (f64, f64)>,
    pub paired: Vec<PairedDiff>,
    /// Records per model per replicate (varies when locations differ in
    /// date counts).
    pub resample_counts: Vec<usize>,
    /// Smallest per-location effective block length used.
    pub effective_block_len: usize,
}

struct Indexed {
    models: Vec<String>,
    /// Sorted unique locations; per location sorted unique dates.
    locations: Vec<String>,
    dates_per_loc: Vec<Vec<u32>>,
    /// cells[loc][date_idx] -> record indices (all models, horizons).
    cells: Vec<Vec<Vec<u32>>>,
    /// All (loc, date_idx, horizon) units for iid resampling.
    units: Vec<Vec<u32>>,
    /// Precomputed per-record absolute median error and WIS.
    abs_err: Vec<f64>,
    wis: Vec<f64>,
    model_of: Vec<u32>,
}

fn build_index(records: &[ForecastRecord], cfg: &ScoreConfig) -> Result<Indexed, ScoreError> {
    if records.is_empty() {
        return Err(ScoreError::Empty);
    }
    let mut models: Vec<String> = records.iter().map(|r| r.model.clone()).collect();
    models.sort();
    models.dedup();
    let mut locations: Vec<String> = records.iter().map(|r| r.location.clone()).collect();
    locations.sort();
    locations.dedup();

    let loc_idx: BTreeMap<&str, usize> =
        locations.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let model_idx: BTreeMap<&str, u32> =
        models.iter().enumerate().map(|(i, m)| (m.as_str(), i as u32)).collect();

    let mut dates_per_loc: Vec<Vec<u32>> = vec![Vec::new(); locations.len()];
    for r in records {
        dates_per_loc[loc_idx[r.location.as_str()]].push(r.date);
    }
    for dates in &mut dates_per_loc {
        dates.sort_unstable();
        dates.dedup();
    }

    let mut cells: Vec<Vec<Vec<u32>>> =
        dates_per_loc.iter().map(|d| vec![Vec::new(); d.len()]).collect();
    // (loc, date_idx, horizon) -> unit id, insertion-ordered by record scan.
    let mut unit_map: BTreeMap<(usize, usize, u32), usize> = BTreeMap::new();
    let mut abs_err = Vec::with_capacity(records.len());
    let mut wis_pre = Vec::with_capacity(records.len());
    let mut model_of = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let li = loc_idx[r.location.as_str()];
        let di = dates_per_loc[li].binary_search(&r.date).expect("date indexed above");
        cells[li][di].push(i as u32);
        let next_unit = unit_map.len();
        unit_map.entry((li, di, r.horizon)).or_insert(next_unit);
        abs_err.push((r.median() - r.observed).abs());
        wis_pre.push(wis(r, cfg)?);
        model_of.push(model_idx[r.model.as_str()]);
    }
    let mut units: Vec<Vec<u32>> = vec![Vec::new(); unit_map.len()];
    for (i, r) in records.iter().enumerate() {
        let li = loc_idx[r.location.as_str()];
        let di = dates_per_loc[li].binary_search(&r.date).expect("date indexed above");
        units[unit_map[&(li, di, r.horizon)]].push(i as u32);
    }

    Ok(Indexed {
        models,
        locations,
        dates_per_loc,
        cells,
        units,
        abs_err,
        wis: wis_pre,
        model_of,
    })
}

struct RepAccumulator {
    abs_sum: Vec<f64>,
    wis_sum: Vec<f64>,
    count: Vec<u64>,
}

impl RepAccumulator {
    fn new(n_models: usize) -> Self {
        Self { abs_sum: vec![0.0; n_models], wis_sum: vec![0.0; n_models], count: vec![0; n_models] }
    }

    fn add(&mut self, idx: &Indexed, rec: u32) {
        let m = idx.model_of[rec as usize] as usize;
        self.abs_sum[m] += idx.abs_err[rec as usize];
        self.wis_sum[m] += idx.wis[rec as usize];
        self.count[m] += 1;
    }
}

fn run_bootstrap(
    records: &[ForecastRecord],
    score_cfg: &ScoreConfig,
    boot_cfg: &BootstrapConfig,
    mode: BootstrapMode,
    baseline_model: &str,
    seed: u64,
) -> Result<BootstrapResult, ScoreError> {
    score_cfg.validate()?;
    boot_cfg.validate()?;
    let idx = build_index(records, score_cfg)?;
    let n_models = idx.models.len();
    let baseline = idx
        .models
        .iter()
        .position(|m| m == baseline_model)
        .ok_or_else(|| ScoreError::MissingBaseline(baseline_model.to_string()))?;

    let min_dates = idx.dates_per_loc.iter().map(Vec::len).min().unwrap_or(0);
    let effective_block_len = boot_cfg.block_len.min(min_dates.max(1));
    if mode == BootstrapMode::Block && effective_block_len < boot_cfg.block_len {
        log::warn!(
            "block length shrank from {} to {} (shortest location has {} forecast dates)",
            boot_cfg.block_len,
            effective_block_len,
            min_dates
        );
    }

    let reps: Vec<(Vec<f64>, Vec<f64>, Vec<u64>)> = (0..boot_cfg.n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(seed, "bootstrap-rep", rep as u64);
            let mut acc = RepAccumulator::new(n_models);
            match mode {
                BootstrapMode::Block => {
                    let n_loc = idx.locations.len();
                    for _ in 0..n_loc {
                        let li = rng.gen_range(0..n_loc);
                        let n_dates = idx.dates_per_loc[li].len();
                        let eff = boot_cfg.block_len.min(n_dates);
                        for _ in 0..boot_cfg.blocks_per_location {
                            let start = rng.gen_range(0..=n_dates - eff);
                            for di in start..start + eff {
                                for &rec in &idx.cells[li][di] {
                                    acc.add(&idx, rec);
                                }
                            }
                        }
                    }
                }
                BootstrapMode::Iid => {
                    let n_units = idx.units.len();
                    for _ in 0..n_units {
                        let u = rng.gen_range(0..n_units);
                        for &rec in &idx.units[u] {
                            acc.add(&idx, rec);
                        }
                    }
                }
            }
            let mae: Vec<f64> = (0..n_models)
                .map(|m| if acc.count[m] > 0 { acc.abs_sum[m] / acc.count[m] as f64 } else { f64::NAN })
                .collect();
            let wis: Vec<f64> = (0..n_models)
                .map(|m| if acc.count[m] > 0 { acc.wis_sum[m] / acc.count[m] as f64 } else { f64::NAN })
                .collect();
            (mae, wis, acc.count)
        })
        .collect();

    let mut draws: BTreeMap<String, MetricDraws> =
        idx.models.iter().map(|m| (m.clone(), MetricDraws::default())).collect();
    let mut resample_counts = Vec::with_capacity(boot_cfg.n_reps);
    for (mae, wis, count) in &reps {
        resample_counts.push(count[baseline] as usize);
        for (m, name) in idx.models.iter().enumerate() {
            let d = draws.get_mut(name).expect("model key inserted above");
            d.mae.push(mae[m]);
            d.wis.push(wis[m]);
            d.rmae.push(super::relative(mae[m], mae[baseline]));
            d.rwis.push(super::relative(wis[m], wis[baseline]));
        }
    }

    let percentile_ci = |v: &[f64]| -> (f64, f64) {
        (empirical_quantile(v, 0.025), empirical_quantile(v, 0.975))
    };
    let mut cis = BTreeMap::new();
    for (name, d) in &draws {
        for (metric, v) in
            [("mae", &d.mae), ("wis", &d.wis), ("rmae", &d.rmae), ("rwis", &d.rwis)]
        {
            cis.insert((name.clone(), metric.to_string()), percentile_ci(v));
        }
    }

    let mut paired = Vec::new();
    if n_models >= 2 {
        for a in 0..n_models {
            for b in a + 1..n_models {
                for metric in ["mae", "wis"] {
                    let diffs: Vec<f64> = reps
                        .iter()
                        .map(|(mae, wis, _)| {
                            let v = if metric == "mae" { mae } else { wis };
                            v[a] - v[b]
                        })
                        .collect();
                    let ci = percentile_ci(&diffs);
                    paired.push(PairedDiff {
                        model_a: idx.models[a].clone(),
                        model_b: idx.models[b].clone(),
                        metric: metric.to_string(),
                        diffs,
                        ci,
                    });
                }
            }
        }
    }

    Ok(BootstrapResult {
        mode,
        models: idx.models,
        draws,
        cis,
        paired,
        resample_counts,
        effective_block_len,
    })
}

/// Grouped bootstrap preserving location and time-block structure.
pub fn block_bootstrap(
    records: &[ForecastRecord],
    score_cfg: &ScoreConfig,
    boot_cfg: &BootstrapConfig,
    baseline_model: &str,
    seed: u64,
) -> Result<BootstrapResult, ScoreError> {
    run_bootstrap(records, score_cfg, boot_cfg, BootstrapMode::Block, baseline_model, seed)
}

/// Vanilla bootstrap over (location, date, horizon) units.
pub fn iid_bootstrap(
    records: &[ForecastRecord],
    score_cfg: &ScoreConfig,
    boot_cfg: &BootstrapConfig,
    baseline_model: &str,
    seed: u64,
) -> Result<BootstrapResult, ScoreError> {
    run_bootstrap(records, score_cfg, boot_cfg, BootstrapMode::Iid, baseline_model, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_records(
        n_loc: usize,
        n_dates: usize,
        horizons: &[u32],
        models: &[&str],
        value: impl Fn(usize, usize, u32, &str) -> (f64, f64),
    ) -> Vec<ForecastRecord> {
        let mut out = Vec::new();
        for l in 0..n_loc {
            for d in 0..n_dates {
                for &h in horizons {
                    for &m in models {
                        let (observed, median) = value(l, d, h, m);
                        let q = [
                            median - 3.0,
                            median - 2.0,
                            median - 1.0,
                            median,
                            median + 1.0,
                            median + 2.0,
                            median + 3.0,
                        ];
                        out.push(ForecastRecord {
                            location: format!("loc{l:02}"),
                            date: d as u32,
                            horizon: h,
                            model: m.to_string(),
                            observed,
                            quantiles: q,
                        });
                    }
                }
            }
        }
        out
    }

    #[test]
    fn full_size_block_structure_resamples_27540_records_per_model() {
        let records =
            grid_records(51, 135, &[1, 2, 3, 4], &["m", "base"], |l, d, h, _| {
                ((l + d) as f64 + h as f64, (l + d) as f64)
            });
        let cfg = BootstrapConfig { n_reps: 3, ..BootstrapConfig::default() };
        let res =
            block_bootstrap(&records, &ScoreConfig::default(), &cfg, "base", 0).unwrap();
        assert_eq!(res.effective_block_len, 15);
        for &c in &res.resample_counts {
            assert_eq!(c, 51 * 9 * 15 * 4);
        }
    }

    #[test]
    fn identical_records_give_zero_width_cis() {
        let records = grid_records(4, 20, &[1], &["m", "base"], |_, _, _, _| (5.0, 5.0));
        let cfg = BootstrapConfig { n_reps: 50, ..BootstrapConfig::default() };
        let res = block_bootstrap(&records, &ScoreConfig::default(), &cfg, "base", 1).unwrap();
        let (lo, hi) = res.cis[&("m".to_string(), "mae".to_string())];
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 0.0);
        let (lo, hi) = res.cis[&("m".to_string(), "rmae".to_string())];
        assert_eq!((lo, hi), (1.0, 1.0));
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let records = grid_records(5, 18, &[1, 2], &["m", "base"], |l, d, h, m| {
            let obs = (l * 3 + d) as f64 + h as f64;
            let bump = ((l * 7 + d * 13 + h as usize * 3) % 11) as f64 / 3.0;
            let med = obs + if m == "m" { 0.5 } else { 1.0 } * bump;
            (obs, med)
        });
        let cfg = BootstrapConfig { n_reps: 40, ..BootstrapConfig::default() };
        let a = block_bootstrap(&records, &ScoreConfig::default(), &cfg, "base", 9).unwrap();
        let b = block_bootstrap(&records, &ScoreConfig::default(), &cfg, "base", 9).unwrap();
        assert_eq!(a.draws["m"].mae, b.draws["m"].mae);
        assert_eq!(a.cis, b.cis);
        let c = block_bootstrap(&records, &ScoreConfig::default(), &cfg, "base", 10).unwrap();
        assert_ne!(a.draws["m"].mae, c.draws["m"].mae);
    }

    #[test]
    fn paired_differences_follow_the_sign_convention() {
        // Model "worse" has double the error of "better": worse - better > 0,
        // positive meaning the second model performed better.
        let records = grid_records(6, 16, &[1], &["worse", "better"], |l, d, _, m| {
            let obs = (10 + l + d) as f64;
            let err = if m == "worse" { 4.0 } else { 2.0 };
            (obs, obs + err)
        });
        let cfg = BootstrapConfig { n_reps: 30, ..BootstrapConfig::default() };
        let res = block_bootstrap(&records, &ScoreConfig::default(), &cfg, "better", 2).unwrap();
        let diff = res
            .paired
            .iter()
            .find(|p| p.metric == "mae" && p.model_a == "better" && p.model_b == "worse")
            .unwrap();
        // a = "better", b = "worse": better - worse = -2 < 0 (b did worse).
        assert!(diff.diffs.iter().all(|&d| d < 0.0));

        let single = grid_records(3, 16, &[1], &["only"], |_, d, _, _| (d as f64, d as f64));
        let res = block_bootstrap(&single, &ScoreConfig::default(), &cfg, "only", 3).unwrap();
        assert!(res.paired.is_empty());
    }

    #[test]
    fn short_locations_shrink_block_length() {
        let records = grid_records(3, 6, &[1], &["m", "base"], |l, d, _, _| {
            ((l + d) as f64, l as f64)
        });
        let cfg = BootstrapConfig { n_reps: 5, ..BootstrapConfig::default() };
        let res = block_bootstrap(&records, &ScoreConfig::default(), &cfg, "base", 4).unwrap();
        assert_eq!(res.effective_block_len, 6);
    }
}
