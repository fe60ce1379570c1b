//! Latin hypercube experiment design.
//!
//! For `n` samples over `k` dimensions, each dimension's range is split
//! into `n` equal-width strata and every stratum receives exactly one
//! sample, uniformly placed within it. Strata are paired across dimensions
//! by independent random permutations.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::rng::substream;

/// One named design dimension with inclusive bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct Dimension {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl Dimension {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self { name: name.into(), lower, upper }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Stratum index of `value` when the range is split into `n` bins.
    /// Degenerate (zero-width) dimensions have no meaningful strata.
    pub fn stratum_of(&self, value: f64, n: usize) -> Option<usize> {
        if self.width() <= 0.0 || n == 0 {
            return None;
        }
        let t = (value - self.lower) / self.width();
        Some(((t * n as f64) as usize).min(n - 1))
    }
}

#[derive(Debug, Error)]
pub enum LhsError {
    #[error("dimension {name}: lower bound {lower} exceeds upper bound {upper}")]
    InvalidBounds { name: String, lower: f64, upper: f64 },
    #[error("dimension {name}: non-finite bound")]
    NonFiniteBounds { name: String },
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("design needs at least one dimension")]
    NoDimensions,
}

/// A stratified design: `points[i]` is the i-th sample over all dimensions.
#[derive(Clone, Debug)]
pub struct LhsDesign {
    pub n_samples: usize,
    pub dims: Vec<Dimension>,
    pub seed: u64,
    pub points: Vec<Vec<f64>>,
}

impl LhsDesign {
    pub fn n_dims(&self) -> usize {
        self.dims.len()
    }
}

/// Draws a Latin hypercube sample of size `n` over `dims`.
///
/// Deterministic for a fixed `(dims, n, seed)`. Zero-width dimensions are
/// allowed and produce the constant bound value.
pub fn lhs_sample(dims: &[Dimension], n: usize, seed: u64) -> Result<LhsDesign, LhsError> {
    if n == 0 {
        return Err(LhsError::NoSamples);
    }
    if dims.is_empty() {
        return Err(LhsError::NoDimensions);
    }
    for d in dims {
        if !d.lower.is_finite() || !d.upper.is_finite() {
            return Err(LhsError::NonFiniteBounds { name: d.name.clone() });
        }
        if d.lower > d.upper {
            return Err(LhsError::InvalidBounds { name: d.name.clone(), lower: d.lower, upper: d.upper });
        }
    }

    let mut points = vec![vec![0.0; dims.len()]; n];
    for (j, dim) in dims.iter().enumerate() {
        let mut rng = substream(seed, "lhs-dim", j as u64);
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        let step = dim.width() / n as f64;
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.gen(); // in [0, 1)
            points[i][j] = dim.lower + (s as f64 + u) * step;
        }
    }
    Ok(LhsDesign { n_samples: n, dims: dims.to_vec(), seed, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_dim() -> Dimension {
        Dimension::new("x", 0.0, 1.0)
    }

    #[test]
    fn one_point_per_stratum_1d() {
        let design = lhs_sample(&[unit_dim()], 4, 9).unwrap();
        let mut seen = vec![false; 4];
        for p in &design.points {
            let s = design.dims[0].stratum_of(p[0], 4).unwrap();
            assert!(!seen[s], "stratum {s} hit twice");
            seen[s] = true;
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn stratification_holds_in_every_dimension() {
        let dims = vec![
            Dimension::new("a", -2.0, 3.0),
            Dimension::new("b", 0.143, 2.25),
            Dimension::new("c", 1e-4, 1e-3),
        ];
        let n = 128;
        let design = lhs_sample(&dims, n, 1234).unwrap();
        for (j, dim) in dims.iter().enumerate() {
            let mut counts = vec![0usize; n];
            for p in &design.points {
                counts[dim.stratum_of(p[j], n).unwrap()] += 1;
            }
            assert!(counts.iter().all(|&c| c == 1), "dim {j} not stratified");
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let dims = vec![unit_dim(), Dimension::new("y", 5.0, 6.0)];
        let a = lhs_sample(&dims, 10, 77).unwrap();
        let b = lhs_sample(&dims, 10, 77).unwrap();
        assert_eq!(a.points, b.points);
        let c = lhs_sample(&dims, 10, 78).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn bounds_respected() {
        let dim = Dimension::new("beta", 1.43e-1, 2.25);
        let design = lhs_sample(&[dim.clone()], 4000, 3).unwrap();
        for p in &design.points {
            assert!(p[0] >= dim.lower && p[0] <= dim.upper);
        }
    }

    #[test]
    fn degenerate_dimension_is_constant() {
        let design = lhs_sample(&[Dimension::new("n", 1e4, 1e4)], 16, 0).unwrap();
        assert!(design.points.iter().all(|p| p[0] == 1e4));
    }

    #[test]
    fn invalid_bounds_rejected() {
        let err = lhs_sample(&[Dimension::new("bad", 2.0, 1.0)], 4, 0).unwrap_err();
        assert!(matches!(err, LhsError::InvalidBounds { .. }));
        assert!(lhs_sample(&[unit_dim()], 0, 0).is_err());
    }
}
