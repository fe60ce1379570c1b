//! Strain-structured stochastic epidemic simulator.
//!
//! Hosts are either susceptible or infected and carry an immune history of
//! antigenic positions they have cleared. Strains live in a one-dimensional
//! antigenic space and additionally carry a deleterious mutation load that
//! penalizes transmission. The daily update is a tau-leap: event counts per
//! class are drawn from the start-of-day state and applied in a fixed order
//! (deaths, recoveries, contacts, external seeding).
//!
//! Weekly total cases (TC) and per-antigenic-type variant-attributable
//! cases (VAC) are accumulated every `print_step` days; the VAC series sum
//! to the TC series exactly, by construction.

mod engine;
mod sweep;

pub use engine::{run_sim, Simulation};
pub use sweep::{classify_turnover, replicate_sweep, ScreenRecord, SweepResult, DEFAULT_TURNOVER_WEEKS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lhs::Dimension;
use crate::series::SurveillanceSeries;

/// Simulator constants that are not part of the sampled parameter space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConstants {
    /// Per-individual daily birth and death rate (population swap keeps N).
    pub birth_death_rate: f64,
    /// Days per output step; weekly aggregation.
    pub print_step: u32,
    /// Total days to simulate.
    pub end_day: u32,
    /// Shape of the gamma distribution of antigenic mutation sizes.
    pub antigenic_gamma_shape: f64,
    /// Antigenic mutations smaller than this are discarded.
    pub threshold_antigenic_size: f64,
    /// Multiplier converting antigenic distance into lost cross-immunity.
    pub smith_conversion: f64,
    /// Immunity conferred by an antigenically identical strain.
    pub homologous_immunity: f64,
    /// Baseline seasonal forcing.
    pub deme_baseline: f64,
    /// Seasonal phase offset in days.
    pub deme_offset: f64,
    /// Replace dead hosts with naive newborns, keeping N constant.
    pub swap_demography: bool,
    /// Baseline beneficial mutation rate per transmission.
    pub epsilon: f64,
    /// Fraction of hosts starting with immunity to the founder strain.
    pub initial_pr_r: f64,
    /// External infected pressure, expressed per 1e7 hosts and scaled to N.
    pub external_per_1e7: f64,
}

impl Default for SimConstants {
    fn default() -> Self {
        Self {
            birth_death_rate: 0.000091,
            print_step: 7,
            end_day: 3650,
            antigenic_gamma_shape: 2.0,
            threshold_antigenic_size: 0.012,
            smith_conversion: 0.1,
            homologous_immunity: 0.95,
            deme_baseline: 1.0,
            deme_offset: 0.0,
            swap_demography: true,
            epsilon: 0.16,
            initial_pr_r: 0.5088,
            external_per_1e7: 200.0,
        }
    }
}

/// One point in the sampled parameter space plus the fixed constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Number of hosts (N).
    pub population_size: u32,
    /// Seasonal forcing amplitude.
    pub deme_amplitude: f64,
    /// Antigenic mutations per transmission.
    pub lambda_antigenic: f64,
    /// Mean antigenic effect size (antigenic-distance units).
    pub mean_antigenic_size: f64,
    /// Deleterious mutations per genome per transmission.
    pub lambda_deleterious: f64,
    /// Fitness cost per deleterious mutation.
    pub mut_cost: f64,
    /// Transmission contacts per individual per day.
    pub beta: f64,
    /// Recoveries per individual per day.
    pub nu: f64,
    /// Multiplier on the baseline beneficial-mutation rate.
    pub epsilon_mut: f64,
    /// Initial infected proportion of N.
    pub initial_i_prop: f64,
    #[serde(default)]
    pub constants: SimConstants,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameter {name}: {value} ({reason})")]
    InvalidParam { name: &'static str, value: f64, reason: &'static str },
    #[error("wall budget must be positive")]
    ZeroWallBudget,
    #[error("design point has {got} values, expected {expected}")]
    DesignArity { got: usize, expected: usize },
}

impl SimParams {
    /// Validates the invariants every sampled point must satisfy.
    pub fn validate(&self) -> Result<(), SimError> {
        fn check(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<(), SimError> {
            if ok {
                Ok(())
            } else {
                Err(SimError::InvalidParam { name, value, reason })
            }
        }
        check("population_size", self.population_size as f64, self.population_size >= 1, "N >= 1")?;
        check("beta", self.beta, self.beta > 0.0 && self.beta.is_finite(), "beta > 0")?;
        check("nu", self.nu, self.nu > 0.0 && self.nu.is_finite(), "nu > 0")?;
        check(
            "initial_i_prop",
            self.initial_i_prop,
            (0.0..=1.0).contains(&self.initial_i_prop),
            "0 <= initial_i_prop <= 1",
        )?;
        check("deme_amplitude", self.deme_amplitude, self.deme_amplitude >= 0.0, "amplitude >= 0")?;
        check("lambda_antigenic", self.lambda_antigenic, self.lambda_antigenic >= 0.0, "rate >= 0")?;
        check("lambda_deleterious", self.lambda_deleterious, self.lambda_deleterious >= 0.0, "rate >= 0")?;
        check("mean_antigenic_size", self.mean_antigenic_size, self.mean_antigenic_size > 0.0, "size > 0")?;
        check("mut_cost", self.mut_cost, (0.0..1.0).contains(&self.mut_cost), "0 <= cost < 1")?;
        check("epsilon_mut", self.epsilon_mut, self.epsilon_mut >= 0.0, "multiplier >= 0")?;
        Ok(())
    }

    /// Builds params from one design-matrix row in [`table_s1_dimensions`] order.
    pub fn from_design_point(point: &[f64], constants: SimConstants) -> Result<Self, SimError> {
        if point.len() != 10 {
            return Err(SimError::DesignArity { got: point.len(), expected: 10 });
        }
        let params = Self {
            population_size: point[0].round() as u32,
            deme_amplitude: point[1],
            lambda_antigenic: point[2],
            mean_antigenic_size: point[3],
            lambda_deleterious: point[4],
            mut_cost: point[5],
            beta: point[6],
            nu: point[7],
            epsilon_mut: point[8],
            initial_i_prop: point[9],
            constants,
        };
        params.validate()?;
        Ok(params)
    }
}

/// The sampled 10-dimensional parameter space with its default bounds.
pub fn table_s1_dimensions() -> Vec<Dimension> {
    vec![
        Dimension::new("population_size", 1.0e4, 1.0e4),
        Dimension::new("deme_amplitude", 0.0, 2.0e-1),
        Dimension::new("lambda_antigenic", 8.57e-5, 2.57e-3),
        Dimension::new("mean_antigenic_size", 1.2e-3, 1.2e-1),
        Dimension::new("lambda_deleterious", 9.5e-3, 4.08),
        Dimension::new("mut_cost", 8.0e-4, 8.0e-2),
        Dimension::new("beta", 1.43e-1, 2.25),
        Dimension::new("nu", 7.14e-2, 2.5e-1),
        Dimension::new("epsilon_mut", 5.0e-1, 1.5),
        Dimension::new("initial_i_prop", 1.0e-4, 1.0e-3),
    ]
}

/// A viral strain: a point in antigenic space plus a deleterious load.
///
/// Antigenic mutations move the position by at least the retention
/// threshold and open a new antigenic type; load mutations keep the type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Strain {
    pub id: u64,
    pub parent_id: Option<u64>,
    pub antigenic_type: u32,
    pub antigenic_position: f64,
    pub deleterious_load: u32,
}

/// Terminal state of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimStatus {
    Completed,
    WallTimeExceeded,
    Extinct,
}

/// Weekly output of one run.
#[derive(Clone, Debug)]
pub struct SimOutput {
    /// Seed the run was started with.
    pub seed: u64,
    /// Index of the design point this run came from, when swept.
    pub param_index: Option<u32>,
    pub status: SimStatus,
    /// Whether the run shows dominant-type turnover (set for completed runs).
    pub turnover_flag: bool,
    /// Weekly total cases.
    pub tc: SurveillanceSeries,
    /// Weekly per-antigenic-type cases, ascending by type id.
    pub vacs: Vec<SurveillanceSeries>,
    /// Wall time the run took.
    pub wall_time: std::time::Duration,
}

impl SimOutput {
    pub fn weeks(&self) -> usize {
        self.tc.len()
    }

    /// Re-labels the run's series ids with a stable prefix.
    pub fn relabel(&mut self, label: &str) {
        self.tc.id = format!("{label}_tc");
        for v in &mut self.vacs {
            let vid = v.variant_id.unwrap_or(0);
            v.id = format!("{label}_v{vid}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_point_round_trip() {
        let dims = table_s1_dimensions();
        let point: Vec<f64> = dims.iter().map(|d| 0.5 * (d.lower + d.upper)).collect();
        let p = SimParams::from_design_point(&point, SimConstants::default()).unwrap();
        assert_eq!(p.population_size, 10_000);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn invalid_params_rejected() {
        let dims = table_s1_dimensions();
        let mut point: Vec<f64> = dims.iter().map(|d| d.lower).collect();
        point[6] = 0.0; // beta
        assert!(SimParams::from_design_point(&point, SimConstants::default()).is_err());
        assert!(SimParams::from_design_point(&point[..4], SimConstants::default()).is_err());
    }
}
