//! Rolling-window training corpus with per-window normalization.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::substream;
use crate::series::SurveillanceSeries;

/// The dense quantile grid used for training plus the 7-level evaluation
/// subset (median, 50%, 80%, and 95% intervals).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    levels: Vec<f64>,
}

/// Evaluation levels: median and the 50/80/95% central intervals.
pub const EVAL_LEVELS: [f64; 7] = [0.025, 0.1, 0.25, 0.5, 0.75, 0.9, 0.975];

impl QuantileGrid {
    /// The 27-level dense grid: tails at 0.0005..0.05, interior on a 0.05
    /// step from 0.1 to 0.9, tails at 0.95..0.9995.
    pub fn dense27() -> Self {
        let mut levels = vec![0.0005, 0.005, 0.01, 0.025, 0.05];
        for k in 2..=18 {
            levels.push(k as f64 * 0.05);
        }
        levels.extend([0.95, 0.975, 0.99, 0.995, 0.9995]);
        debug_assert_eq!(levels.len(), 27);
        Self { levels }
    }

    pub fn from_levels(levels: Vec<f64>) -> Result<Self, DatasetError> {
        if levels.is_empty()
            || levels.windows(2).any(|w| w[0] >= w[1])
            || levels.iter().any(|&t| !(0.0 < t && t < 1.0))
        {
            return Err(DatasetError::BadGrid);
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Positions of the 7 evaluation levels within this grid.
    pub fn eval_indices(&self) -> Option<[usize; 7]> {
        let mut out = [0usize; 7];
        for (k, target) in EVAL_LEVELS.iter().enumerate() {
            out[k] = self.levels.iter().position(|t| (t - target).abs() < 1e-12)?;
        }
        Some(out)
    }
}

impl Default for QuantileGrid {
    fn default() -> Self {
        Self::dense27()
    }
}

/// Windows available in a series of length `len`: `max(0, T - C - H + 1)`.
pub fn enumerate_windows(len: usize, context: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(context + horizon)
}

/// One training/inference unit: a length-C input, length-H target, and
/// the normalization scalar (the input maximum).
#[derive(Clone, Debug, PartialEq)]
pub struct WindowExample {
    pub source: String,
    pub start: usize,
    pub y_in: Vec<f64>,
    pub y_out: Vec<f64>,
    /// max(y_in); zero or non-finite means the window is left unscaled.
    pub norm: f64,
    pub z_in: Vec<f64>,
    pub z_out: Vec<f64>,
}

impl WindowExample {
    pub fn from_slice(source: &str, start: usize, y_in: &[f64], y_out: &[f64]) -> Self {
        let norm = y_in.iter().cloned().fold(0.0f64, f64::max);
        let rescale = norm > 0.0 && norm.is_finite();
        let z = |v: &[f64]| -> Vec<f64> {
            if rescale {
                v.iter().map(|x| x / norm).collect()
            } else {
                v.to_vec()
            }
        };
        Self {
            source: source.to_string(),
            start,
            y_in: y_in.to_vec(),
            y_out: y_out.to_vec(),
            norm,
            z_in: z(y_in),
            z_out: z(y_out),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("corpus has no usable windows")]
    EmptyCorpus,
    #[error("context and horizon must be at least 1")]
    BadWindowShape,
    #[error("quantile grid must be strictly increasing within (0,1)")]
    BadGrid,
}

enum WindowIndex {
    /// Every start in 0..count is valid.
    All(usize),
    /// Only these starts are valid (series contains non-finite values).
    Explicit(Vec<u32>),
}

impl WindowIndex {
    fn count(&self) -> usize {
        match self {
            WindowIndex::All(n) => *n,
            WindowIndex::Explicit(v) => v.len(),
        }
    }

    fn nth(&self, i: usize) -> usize {
        match self {
            WindowIndex::All(_) => i,
            WindowIndex::Explicit(v) => v[i] as usize,
        }
    }
}

struct CorpusSeries {
    id: String,
    values: Vec<f64>,
    windows: WindowIndex,
}

/// An immutable window corpus over a set of series.
///
/// Batch sampling draws a series with probability proportional to its
/// window count, then a window uniformly within it — jointly uniform over
/// all windows.
pub struct Corpus {
    series: Vec<CorpusSeries>,
    cumulative: Vec<u64>,
    total_windows: u64,
    context: usize,
    horizon: usize,
}

impl Corpus {
    pub fn build(
        mut input: Vec<SurveillanceSeries>,
        context: usize,
        horizon: usize,
    ) -> Result<Self, DatasetError> {
        if context == 0 || horizon == 0 {
            return Err(DatasetError::BadWindowShape);
        }
        // Stable ingestion order regardless of upstream collection order.
        input.sort_by(|a, b| a.id.cmp(&b.id));
        let mut series = Vec::new();
        for s in input {
            let n = enumerate_windows(s.len(), context, horizon);
            if n == 0 {
                continue;
            }
            let windows = if s.values.iter().all(|v| v.is_finite()) {
                WindowIndex::All(n)
            } else {
                // Drop windows touching non-finite values at ingestion.
                let ok: Vec<u32> = (0..n)
                    .filter(|&start| {
                        s.values[start..start + context + horizon].iter().all(|v| v.is_finite())
                    })
                    .map(|start| start as u32)
                    .collect();
                log::warn!(
                    "series {}: non-finite values, kept {}/{} windows",
                    s.id,
                    ok.len(),
                    n
                );
                WindowIndex::Explicit(ok)
            };
            if windows.count() == 0 {
                continue;
            }
            series.push(CorpusSeries { id: s.id, values: s.values, windows });
        }
        let mut cumulative = Vec::with_capacity(series.len());
        let mut total = 0u64;
        for s in &series {
            total += s.windows.count() as u64;
            cumulative.push(total);
        }
        Ok(Self { series, cumulative, total_windows: total, context, horizon })
    }

    pub fn total_windows(&self) -> u64 {
        self.total_windows
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    pub fn context(&self) -> usize {
        self.context
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Per-series (id, window count), for reproducibility audits.
    pub fn window_counts(&self) -> Vec<(&str, usize)> {
        self.series.iter().map(|s| (s.id.as_str(), s.windows.count())).collect()
    }

    fn example(&self, series_idx: usize, window_idx: usize) -> WindowExample {
        let s = &self.series[series_idx];
        let start = s.windows.nth(window_idx);
        WindowExample::from_slice(
            &s.id,
            start,
            &s.values[start..start + self.context],
            &s.values[start + self.context..start + self.context + self.horizon],
        )
    }

    /// Draws one window uniformly over all windows.
    pub fn sample_window(&self, rng: &mut impl Rng) -> Result<WindowExample, DatasetError> {
        if self.total_windows == 0 {
            return Err(DatasetError::EmptyCorpus);
        }
        let t = rng.gen_range(0..self.total_windows);
        let series_idx = self.cumulative.partition_point(|&c| c <= t);
        let before = if series_idx == 0 { 0 } else { self.cumulative[series_idx - 1] };
        Ok(self.example(series_idx, (t - before) as usize))
    }

    /// Draws a batch; normalization is applied per window.
    pub fn sample_batch(
        &self,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<WindowExample>, DatasetError> {
        if self.total_windows == 0 {
            return Err(DatasetError::EmptyCorpus);
        }
        (0..batch_size).map(|_| self.sample_window(rng)).collect()
    }

    /// Splits off a frozen validation set: whole series are reserved for
    /// validation when the corpus is large enough, and `n_windows` windows
    /// are sampled from them with the reserved seed. Returns the training
    /// corpus and the validation windows.
    pub fn split_validation(
        self,
        n_windows: usize,
        seed: u64,
        min_series_for_split: usize,
    ) -> (Corpus, Vec<WindowExample>) {
        let mut rng = substream(seed, "validation", 0);
        if self.series.len() < min_series_for_split {
            log::warn!(
                "corpus has {} series (< {min_series_for_split}); validation windows overlap training",
                self.series.len()
            );
            let val = (0..n_windows)
                .map(|_| self.sample_window(&mut rng).expect("nonempty corpus"))
                .collect();
            return (self, val);
        }

        // Reserve series until validation holds ~10% of windows, capped at
        // 25% of series so training keeps the bulk of the corpus.
        let mut order: Vec<usize> = (0..self.series.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let target = (self.total_windows / 10).max(1);
        let max_series = (self.series.len() / 4).max(1);
        let mut reserved: Vec<bool> = vec![false; self.series.len()];
        let mut reserved_windows = 0u64;
        let mut reserved_count = 0usize;
        for &i in &order {
            if reserved_windows >= target || reserved_count >= max_series {
                break;
            }
            reserved[i] = true;
            reserved_windows += self.series[i].windows.count() as u64;
            reserved_count += 1;
        }

        let mut train_series = Vec::new();
        let mut val_series = Vec::new();
        for (i, s) in self.series.into_iter().enumerate() {
            if reserved[i] {
                val_series.push(s);
            } else {
                train_series.push(s);
            }
        }
        let rebuild = |series: Vec<CorpusSeries>| {
            let mut cumulative = Vec::with_capacity(series.len());
            let mut total = 0u64;
            for s in &series {
                total += s.windows.count() as u64;
                cumulative.push(total);
            }
            Corpus {
                series,
                cumulative,
                total_windows: total,
                context: self.context,
                horizon: self.horizon,
            }
        };
        let train = rebuild(train_series);
        let val_corpus = rebuild(val_series);
        let val = (0..n_windows)
            .map(|_| val_corpus.sample_window(&mut rng).expect("reserved series nonempty"))
            .collect();
        (train, val)
    }
}

/// Doubles a batch by appending, for every example, a copy whose input is
/// perturbed elementwise by Uniform(0.85, 1.15) factors. Targets and the
/// normalization scalar are unchanged.
pub fn perturb_duplicate(batch: &[WindowExample], rng: &mut impl Rng) -> Vec<WindowExample> {
    let mut out = Vec::with_capacity(batch.len() * 2);
    for ex in batch {
        out.push(ex.clone());
        let mut copy = ex.clone();
        for i in 0..copy.z_in.len() {
            let u = rng.gen_range(0.85..=1.15);
            copy.z_in[i] *= u;
            copy.y_in[i] *= u;
        }
        out.push(copy);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn tc(id: &str, values: Vec<f64>) -> SurveillanceSeries {
        SurveillanceSeries::new_tc(id, values)
    }

    #[test]
    fn grid_has_27_strictly_increasing_levels_with_eval_subset() {
        let g = QuantileGrid::dense27();
        assert_eq!(g.len(), 27);
        assert!(g.levels().windows(2).all(|w| w[0] < w[1]));
        assert!(g.levels().iter().all(|&t| 0.0 < t && t < 1.0));
        let idx = g.eval_indices().unwrap();
        for (k, &i) in idx.iter().enumerate() {
            assert!((g.levels()[i] - EVAL_LEVELS[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn window_count_matches_worked_example() {
        assert_eq!(enumerate_windows(100, 20, 4), 77);
        assert_eq!(enumerate_windows(23, 20, 4), 0);
        assert_eq!(enumerate_windows(24, 20, 4), 1);
    }

    #[test]
    fn window_count_matches_brute_force() {
        let mut rng = substream(0, "wc", 0);
        for _ in 0..1000 {
            let t = rng.gen_range(1usize..200);
            let c = rng.gen_range(1usize..30);
            let h = rng.gen_range(1usize..10);
            let brute = (0..t).filter(|&s| s + c + h <= t).count();
            assert_eq!(enumerate_windows(t, c, h), brute, "T={t} C={c} H={h}");
        }
    }

    #[test]
    fn normalization_round_trip_and_zero_window() {
        let ex = WindowExample::from_slice("s", 0, &[2.0, 4.0, 8.0], &[4.0]);
        assert_eq!(ex.norm, 8.0);
        assert_eq!(ex.z_in, vec![0.25, 0.5, 1.0]);
        assert_eq!(ex.z_out, vec![0.5]);
        for (z, y) in ex.z_in.iter().zip(&ex.y_in) {
            assert_eq!(z * ex.norm, *y);
        }

        let zero = WindowExample::from_slice("s", 0, &[0.0, 0.0], &[1.0]);
        assert_eq!(zero.norm, 0.0);
        assert_eq!(zero.z_in, vec![0.0, 0.0]);
        assert_eq!(zero.z_out, vec![1.0]); // unscaled
    }

    #[test]
    fn two_stage_sampling_is_window_proportional() {
        let corpus = Corpus::build(
            vec![tc("a", vec![1.0; 10 + 6 - 1]), tc("b", vec![1.0; 30 + 6 - 1])],
            4,
            2,
        )
        .unwrap();
        assert_eq!(corpus.total_windows(), 40);
        let mut rng = substream(1, "prop", 0);
        let draws = 100_000;
        let mut from_b = 0usize;
        for _ in 0..draws {
            if corpus.sample_window(&mut rng).unwrap().source == "b" {
                from_b += 1;
            }
        }
        let frac = from_b as f64 / draws as f64;
        assert!((frac - 0.75).abs() < 0.01, "series-b fraction {frac}");
    }

    #[test]
    fn empty_corpus_and_empty_batch() {
        let corpus = Corpus::build(vec![tc("a", vec![1.0; 5])], 20, 4).unwrap();
        assert_eq!(corpus.total_windows(), 0);
        assert!(matches!(
            corpus.sample_batch(4, &mut substream(0, "x", 0)),
            Err(DatasetError::EmptyCorpus)
        ));

        let corpus = Corpus::build(vec![tc("a", vec![1.0; 30])], 20, 4).unwrap();
        let batch = corpus.sample_batch(0, &mut substream(0, "x", 0)).unwrap();
        assert!(batch.is_empty());
    }

    #[test]
    fn non_finite_windows_dropped_at_ingestion() {
        let mut values = vec![1.0; 30];
        values[10] = f64::NAN;
        let corpus = Corpus::build(vec![tc("a", values)], 4, 2).unwrap();
        // Starts 5..=10 touch the NaN at index 10 (window spans start..start+6).
        assert_eq!(corpus.total_windows(), 25 - 6);
        let mut rng = substream(2, "nf", 0);
        for _ in 0..200 {
            let ex = corpus.sample_window(&mut rng).unwrap();
            assert!(ex.y_in.iter().chain(&ex.y_out).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn perturbation_doubles_batch_and_keeps_targets() {
        let corpus = Corpus::build(vec![tc("a", (1..60).map(f64::from).collect())], 20, 4).unwrap();
        let mut rng = substream(3, "pd", 0);
        let batch = corpus.sample_batch(8, &mut rng).unwrap();
        let doubled = perturb_duplicate(&batch, &mut rng);
        assert_eq!(doubled.len(), 16);
        for pair in doubled.chunks(2) {
            let (orig, pert) = (&pair[0], &pair[1]);
            assert_eq!(orig.z_out, pert.z_out);
            assert_eq!(orig.y_out, pert.y_out);
            assert_eq!(orig.norm, pert.norm);
            for (o, p) in orig.z_in.iter().zip(&pert.z_in) {
                if *o > 0.0 {
                    let r = p / o;
                    assert!((0.85..=1.15).contains(&r), "ratio {r}");
                }
            }
        }
    }

    #[test]
    fn validation_split_is_frozen_and_disjoint() {
        let series: Vec<SurveillanceSeries> = (0..40)
            .map(|i| tc(&format!("s{i:02}"), (0..80).map(|w| (w + i) as f64).collect()))
            .collect();
        let build = || Corpus::build(series.clone(), 20, 4).unwrap();
        let (train_a, val_a) = build().split_validation(64, 7, 10);
        let (_, val_b) = build().split_validation(64, 7, 10);
        assert_eq!(val_a, val_b, "validation set not frozen");
        assert_eq!(val_a.len(), 64);

        let train_ids: std::collections::HashSet<&str> =
            train_a.window_counts().iter().map(|&(id, _)| id).collect();
        assert!(val_a.iter().all(|ex| !train_ids.contains(ex.source.as_str())));
    }

    proptest! {
        #[test]
        fn enumerate_windows_never_overflows_series(
            t in 0usize..400, c in 1usize..40, h in 1usize..10
        ) {
            let n = enumerate_windows(t, c, h);
            prop_assert!(n == 0 || n + c + h - 1 == t);
        }
    }
}
