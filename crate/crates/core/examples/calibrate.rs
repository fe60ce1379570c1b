//! Scratch calibration of desk-scale simulation bounds (temporary).

use std::time::{Duration, Instant};

use epicast::lhs::{lhs_sample, Dimension};
use epicast::sim::{classify_turnover, run_sim, SimConstants, SimParams, SimStatus};

fn summarize(name: &str, dims: &[Dimension], n: usize, seed: u64) {
    let design = lhs_sample(dims, n, seed).unwrap();
    let mut completed = 0;
    let mut turnover = 0;
    let mut extinct = 0;
    let mut wall = 0;
    let mut total_time = Duration::ZERO;
    let mut max_time = Duration::ZERO;
    let mut n_types_sum = 0usize;
    for (i, point) in design.points.iter().enumerate() {
        let params = SimParams::from_design_point(point, SimConstants::default()).unwrap();
        let t0 = Instant::now();
        let out = run_sim(&params, 1000 + i as u64, Duration::from_secs(20)).unwrap();
        let dt = t0.elapsed();
        total_time += dt;
        max_time = max_time.max(dt);
        match out.status {
            SimStatus::Completed => {
                completed += 1;
                n_types_sum += out.vacs.len();
                if classify_turnover(&out, 8) {
                    turnover += 1;
                }
            }
            SimStatus::Extinct => extinct += 1,
            SimStatus::WallTimeExceeded => wall += 1,
        }
    }
    println!(
        "{name}: n={n} completed={completed} turnover={turnover} extinct={extinct} wall={wall} \
         avg_types={:.1} total={:.1}s max={:.2}s",
        n_types_sum as f64 / completed.max(1) as f64,
        total_time.as_secs_f64(),
        max_time.as_secs_f64()
    );
}

fn main() {
    let full = epicast::sim::table_s1_dimensions();
    summarize("full-s1", &full, 24, 7);

    let desk = vec![
        Dimension::new("population_size", 1.0e4, 1.0e4),
        Dimension::new("deme_amplitude", 0.05, 0.2),
        Dimension::new("lambda_antigenic", 1.0e-3, 2.57e-3),
        Dimension::new("mean_antigenic_size", 0.05, 0.12),
        Dimension::new("lambda_deleterious", 9.5e-3, 0.5),
        Dimension::new("mut_cost", 8.0e-4, 0.02),
        Dimension::new("beta", 0.25, 0.7),
        Dimension::new("nu", 0.1, 0.2),
        Dimension::new("epsilon_mut", 0.5, 1.5),
        Dimension::new("initial_i_prop", 1.0e-4, 1.0e-3),
    ];
    summarize("desk", &desk, 24, 7);
    summarize("desk-seed2", &desk, 24, 8);
}
