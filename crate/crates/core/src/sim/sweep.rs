//! Turnover classification and the screen-then-replicate sweep.

use std::collections::BTreeSet;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_sim, SimConstants, SimError, SimOutput, SimParams, SimStatus};
use crate::lhs::LhsDesign;
use crate::rng::derive_seed;

/// Default minimum consecutive weeks a type must dominate to count.
pub const DEFAULT_TURNOVER_WEEKS: usize = 8;

/// True when at least two distinct antigenic types each hold the weekly
/// VAC argmax for `w_min` or more consecutive weeks. Weeks without cases
/// have no dominant type and break runs.
pub fn classify_turnover(out: &SimOutput, w_min: usize) -> bool {
    let weeks = out.weeks();
    let mut dominant: Vec<Option<u32>> = vec![None; weeks];
    for w in 0..weeks {
        let mut best: Option<(u32, f64)> = None;
        for vac in &out.vacs {
            let v = vac.values[w];
            if v <= 0.0 {
                continue;
            }
            // Ties keep the earlier (lower-id) type.
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((vac.variant_id.unwrap_or(0), v));
            }
        }
        dominant[w] = best.map(|(t, _)| t);
    }

    let mut qualified: BTreeSet<u32> = BTreeSet::new();
    let mut run: Option<(u32, usize)> = None;
    for &d in &dominant {
        run = match (run, d) {
            (Some((t, len)), Some(cur)) if cur == t => Some((t, len + 1)),
            (_, Some(cur)) => Some((cur, 1)),
            (_, None) => None,
        };
        if let Some((t, len)) = run {
            if len >= w_min {
                qualified.insert(t);
            }
        }
    }
    qualified.len() >= 2
}

/// Screening outcome for one design point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScreenRecord {
    pub param_index: u32,
    pub seed: u64,
    pub status: SimStatus,
    pub turnover: bool,
    pub wall_time_secs: f64,
}

/// Output of [`replicate_sweep`].
#[derive(Debug)]
pub struct SweepResult {
    pub screen: Vec<ScreenRecord>,
    /// Design-point indices that completed with turnover.
    pub keepers: Vec<u32>,
    /// Replicate runs for every keeper, tagged with the source index.
    pub replicates: Vec<SimOutput>,
}

/// Runs every design point once, keeps the turnover-positive completions,
/// and reruns each keeper `reps_per_keeper` times with distinct seeds.
/// Runs are independent and execute in parallel; results are keyed by
/// (param index, replicate), never by completion order.
pub fn replicate_sweep(
    design: &LhsDesign,
    constants: SimConstants,
    reps_per_keeper: u32,
    wall_budget: Duration,
    turnover_weeks: usize,
    master_seed: u64,
) -> Result<SweepResult, SimError> {
    let params: Vec<SimParams> = design
        .points
        .iter()
        .map(|p| SimParams::from_design_point(p, constants))
        .collect::<Result<_, _>>()?;

    let screen: Vec<ScreenRecord> = params
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let seed = derive_seed(master_seed, "sim-screen", i as u64);
            let out = run_sim(p, seed, wall_budget).expect("params validated above");
            ScreenRecord {
                param_index: i as u32,
                seed,
                status: out.status,
                turnover: out.status == SimStatus::Completed
                    && classify_turnover(&out, turnover_weeks),
                wall_time_secs: out.wall_time.as_secs_f64(),
            }
        })
        .collect();

    let keepers: Vec<u32> = screen
        .iter()
        .filter(|r| r.status == SimStatus::Completed && r.turnover)
        .map(|r| r.param_index)
        .collect();

    let jobs: Vec<(u32, u32)> = keepers
        .iter()
        .flat_map(|&i| (0..reps_per_keeper).map(move |r| (i, r)))
        .collect();
    let replicates: Vec<SimOutput> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let seed = derive_seed(master_seed, "sim-rep", (u64::from(i) << 32) | u64::from(r));
            let mut out =
                run_sim(&params[i as usize], seed, wall_budget).expect("params validated above");
            out.param_index = Some(i);
            out.turnover_flag =
                out.status == SimStatus::Completed && classify_turnover(&out, turnover_weeks);
            out.relabel(&format!("p{i:04}r{r:02}"));
            out
        })
        .collect();

    Ok(SweepResult { screen, keepers, replicates })
}
