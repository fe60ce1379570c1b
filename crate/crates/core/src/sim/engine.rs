//! Daily tau-leap engine and the `run_sim` driver.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};

use super::{SimError, SimOutput, SimParams, SimStatus, Strain, DEFAULT_TURNOVER_WEEKS};
use crate::series::SurveillanceSeries;
use crate::sim::classify_turnover;

const DAYS_PER_YEAR: f64 = 365.0;

struct Host {
    infection: Option<Strain>,
    /// Antigenic positions of cleared infections, deduplicated.
    history: Vec<f64>,
    /// Index into `Simulation::infected`; valid only while infected.
    infected_slot: u32,
}

impl Host {
    fn naive() -> Self {
        Self { infection: None, history: Vec::new(), infected_slot: u32::MAX }
    }
}

/// A running simulation. `run_sim` drives it day by day; tests can step it
/// directly to observe intermediate state.
pub struct Simulation {
    params: SimParams,
    rng: ChaCha8Rng,
    hosts: Vec<Host>,
    infected: Vec<u32>,
    susceptible: u32,
    day: u32,
    next_strain_id: u64,
    next_type_id: u32,
    /// External infected pressure in equivalent hosts (scaled to N).
    external_pressure: f64,
    founder: Strain,
    week_tc: u64,
    week_vac: BTreeMap<u32, u64>,
    tc_weeks: Vec<f64>,
    vac_weeks: BTreeMap<u32, Vec<f64>>,
    antigenic_sizes: Gamma<f64>,
    p_death: f64,
    p_recover: f64,
}

impl Simulation {
    pub fn new(params: SimParams, seed: u64) -> Result<Self, SimError> {
        params.validate()?;
        let n = params.population_size as usize;
        let c = params.constants;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let founder = Strain {
            id: 0,
            parent_id: None,
            antigenic_type: 0,
            antigenic_position: 0.0,
            deleterious_load: 0,
        };

        let mut hosts: Vec<Host> = (0..n).map(|_| Host::naive()).collect();
        let n_immune = (c.initial_pr_r * n as f64).round() as usize;
        for host in hosts.iter_mut().take(n_immune.min(n)) {
            host.history.push(founder.antigenic_position);
        }

        let mut sim = Self {
            external_pressure: c.external_per_1e7 * n as f64 / 1.0e7,
            antigenic_sizes: Gamma::new(
                c.antigenic_gamma_shape,
                params.mean_antigenic_size / c.antigenic_gamma_shape,
            )
            .expect("validated gamma parameters"),
            p_death: -(-c.birth_death_rate).exp_m1(),
            p_recover: -(-params.nu).exp_m1(),
            rng: ChaCha8Rng::seed_from_u64(0), // replaced below; rng consumed for seeding
            hosts,
            infected: Vec::new(),
            susceptible: n as u32,
            day: 0,
            next_strain_id: 1,
            next_type_id: 1,
            founder,
            week_tc: 0,
            week_vac: BTreeMap::new(),
            tc_weeks: Vec::new(),
            vac_weeks: BTreeMap::new(),
            params,
        };

        // Seed initial infections at random hosts, forced (no immunity check).
        let n_init = (sim.params.initial_i_prop * n as f64).round() as usize;
        let mut order: Vec<u32> = (0..n as u32).collect();
        for i in 0..n_init.min(n) {
            let j = rng.gen_range(i..n);
            order.swap(i, j);
            sim.infect(order[i], founder, false);
        }
        sim.rng = rng;
        Ok(sim)
    }

    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn infected_count(&self) -> usize {
        self.infected.len()
    }

    /// Host count from the independently maintained susceptible counter and
    /// the infected roster. Equals N whenever the bookkeeping is intact.
    pub fn population(&self) -> u32 {
        self.susceptible + self.infected.len() as u32
    }

    /// Whether external pressure can re-seed infections after extinction.
    pub fn can_reseed(&self) -> bool {
        self.external_pressure > 0.0
    }

    /// Completed weeks so far.
    pub fn weeks_done(&self) -> usize {
        self.tc_weeks.len()
    }

    /// Full-scan consistency audit: recounts host states and verifies the
    /// infected roster back-pointers. Returns the scanned host total.
    pub fn audit_population(&self) -> Option<u32> {
        let mut scanned_susceptible = 0u32;
        let mut scanned_infected = 0u32;
        for (idx, host) in self.hosts.iter().enumerate() {
            match host.infection {
                None => scanned_susceptible += 1,
                Some(_) => {
                    scanned_infected += 1;
                    let slot = host.infected_slot as usize;
                    if slot >= self.infected.len() || self.infected[slot] != idx as u32 {
                        return None;
                    }
                }
            }
        }
        if scanned_susceptible != self.susceptible || scanned_infected != self.infected.len() as u32 {
            return None;
        }
        Some(scanned_susceptible + scanned_infected)
    }

    fn seasonal_beta(&self, day: u32) -> f64 {
        let c = &self.params.constants;
        let phase = 2.0 * std::f64::consts::PI * (day as f64 - c.deme_offset) / DAYS_PER_YEAR;
        (self.params.beta * (c.deme_baseline + self.params.deme_amplitude * phase.cos())).max(0.0)
    }

    fn poisson_count(&mut self, lambda: f64) -> u64 {
        if lambda <= 0.0 {
            return 0;
        }
        Poisson::new(lambda).expect("positive lambda").sample(&mut self.rng) as u64
    }

    fn binomial_count(&mut self, n: u64, p: f64) -> u64 {
        if n == 0 || p <= 0.0 {
            return 0;
        }
        Binomial::new(n, p.min(1.0)).expect("valid binomial").sample(&mut self.rng)
    }

    /// Probability that `strain` infects a host with the given history on
    /// challenge: (1 - cross-immunity) * (1 - mut_cost)^load.
    fn infection_risk(&self, history: &[f64], strain: &Strain) -> f64 {
        let c = &self.params.constants;
        let mut immunity = 0.0f64;
        for &h in history {
            let level = c.homologous_immunity
                - c.smith_conversion * (strain.antigenic_position - h).abs();
            immunity = immunity.max(level);
        }
        immunity = immunity.clamp(0.0, c.homologous_immunity);
        let load_penalty = (1.0 - self.params.mut_cost).powi(strain.deleterious_load as i32);
        (1.0 - immunity) * load_penalty
    }

    /// Applies per-transmission mutation draws to a parent strain.
    fn mutate(&mut self, parent: Strain) -> Strain {
        let c = self.params.constants;
        let mut load = parent.deleterious_load;
        let mut position = parent.antigenic_position;
        let mut antigenic_type = parent.antigenic_type;
        let mut changed = false;

        let deleterious = self.poisson_count(self.params.lambda_deleterious);
        if deleterious > 0 {
            load += deleterious as u32;
            changed = true;
        }
        let beneficial = self.poisson_count(c.epsilon * self.params.epsilon_mut);
        if beneficial > 0 && load > 0 {
            load = load.saturating_sub(beneficial as u32);
            changed = true;
        }
        let antigenic = self.poisson_count(self.params.lambda_antigenic);
        for _ in 0..antigenic {
            let size = self.antigenic_sizes.sample(&mut self.rng);
            if size < c.threshold_antigenic_size {
                continue; // below the retention threshold, discarded
            }
            let sign = if self.rng.gen::<bool>() { 1.0 } else { -1.0 };
            position += sign * size;
            antigenic_type = self.next_type_id;
            self.next_type_id += 1;
            changed = true;
        }

        if !changed {
            return parent;
        }
        let id = self.next_strain_id;
        self.next_strain_id += 1;
        Strain {
            id,
            parent_id: Some(parent.id),
            antigenic_type,
            antigenic_position: position,
            deleterious_load: load,
        }
    }

    fn infect(&mut self, host_idx: u32, strain: Strain, count_case: bool) {
        let host = &mut self.hosts[host_idx as usize];
        debug_assert!(host.infection.is_none());
        host.infection = Some(strain);
        host.infected_slot = self.infected.len() as u32;
        self.infected.push(host_idx);
        self.susceptible -= 1;
        if count_case {
            self.week_tc += 1;
            *self.week_vac.entry(strain.antigenic_type).or_insert(0) += 1;
        }
    }

    fn remove_from_infected(&mut self, host_idx: u32) {
        let slot = self.hosts[host_idx as usize].infected_slot as usize;
        self.infected.swap_remove(slot);
        if slot < self.infected.len() {
            let moved = self.infected[slot];
            self.hosts[moved as usize].infected_slot = slot as u32;
        }
        self.hosts[host_idx as usize].infected_slot = u32::MAX;
    }

    fn recover(&mut self, host_idx: u32) {
        self.remove_from_infected(host_idx);
        let host = &mut self.hosts[host_idx as usize];
        let strain = host.infection.take().expect("recovering host is infected");
        if !host.history.contains(&strain.antigenic_position) {
            host.history.push(strain.antigenic_position);
        }
        self.susceptible += 1;
    }

    /// One death with demographic swap: the slot is reborn naive.
    fn die_and_replace(&mut self, host_idx: u32) {
        if self.hosts[host_idx as usize].infection.is_some() {
            self.remove_from_infected(host_idx);
            self.susceptible += 1;
        }
        let host = &mut self.hosts[host_idx as usize];
        host.infection = None;
        host.history.clear();
        host.infected_slot = u32::MAX;
    }

    fn challenge(&mut self, target: u32, source_strain: Strain) {
        if self.hosts[target as usize].infection.is_some() {
            return; // only non-infected hosts can be challenged
        }
        let risk = self.infection_risk(&self.hosts[target as usize].history, &source_strain);
        if self.rng.gen::<f64>() < risk {
            let child = self.mutate(source_strain);
            self.infect(target, child, true);
        }
    }

    /// Advances one day: deaths, recoveries, contacts, external seeding,
    /// then weekly aggregation. Event counts are drawn from the
    /// start-of-day state.
    pub fn step_day(&mut self) {
        let n = self.hosts.len();
        let i0 = self.infected.len() as u64;
        let beta_day = self.seasonal_beta(self.day);

        let n_deaths = if self.params.constants.swap_demography {
            self.binomial_count(n as u64, self.p_death)
        } else {
            0
        };
        let n_recoveries = self.binomial_count(i0, self.p_recover);
        let n_contacts = self.poisson_count(beta_day * i0 as f64);
        let n_external = self.poisson_count(beta_day * self.external_pressure);

        for _ in 0..n_deaths {
            let idx = self.rng.gen_range(0..n) as u32;
            self.die_and_replace(idx);
        }

        let k = (n_recoveries as usize).min(self.infected.len());
        for i in 0..k {
            let j = self.rng.gen_range(i..self.infected.len());
            self.infected.swap(i, j);
            let (a, b) = (self.infected[i], self.infected[j]);
            self.hosts[a as usize].infected_slot = i as u32;
            self.hosts[b as usize].infected_slot = j as u32;
        }
        let recovering: Vec<u32> = self.infected[..k].to_vec();
        for host in recovering {
            self.recover(host);
        }

        for _ in 0..n_contacts {
            if self.infected.is_empty() {
                break;
            }
            let source = self.infected[self.rng.gen_range(0..self.infected.len())];
            let strain = self.hosts[source as usize].infection.expect("roster host is infected");
            let target = self.rng.gen_range(0..n) as u32;
            self.challenge(target, strain);
        }

        let founder = self.founder;
        for _ in 0..n_external {
            let target = self.rng.gen_range(0..n) as u32;
            self.challenge(target, founder);
        }

        self.day += 1;
        if self.day % self.params.constants.print_step == 0 {
            self.close_week();
        }
    }

    fn close_week(&mut self) {
        let weeks_done = self.tc_weeks.len();
        self.tc_weeks.push(self.week_tc as f64);
        for &t in self.week_vac.keys() {
            self.vac_weeks.entry(t).or_insert_with(|| vec![0.0; weeks_done]);
        }
        for (t, series) in self.vac_weeks.iter_mut() {
            series.push(self.week_vac.get(t).copied().unwrap_or(0) as f64);
        }
        self.week_tc = 0;
        self.week_vac.clear();
    }

    /// Total whole weeks this run will produce when completed.
    pub fn total_weeks(&self) -> usize {
        (self.params.constants.end_day / self.params.constants.print_step) as usize
    }

    fn finish(mut self, seed: u64, status: SimStatus, wall_time: Duration) -> SimOutput {
        // Extinct runs stay flat at zero; pad to the full length so all
        // outputs of a design share one week indexing.
        if status == SimStatus::Extinct {
            let total = self.total_weeks();
            self.tc_weeks.resize(total, 0.0);
            for series in self.vac_weeks.values_mut() {
                series.resize(total, 0.0);
            }
        }
        let label = format!("sim{seed:016x}");
        let tc = SurveillanceSeries::new_tc(format!("{label}_tc"), self.tc_weeks);
        let vacs = self
            .vac_weeks
            .into_iter()
            .map(|(t, values)| SurveillanceSeries::new_vac(format!("{label}_v{t}"), t, values))
            .collect();
        SimOutput {
            seed,
            param_index: None,
            status,
            turnover_flag: false,
            tc,
            vacs,
            wall_time,
        }
    }
}

/// Runs one simulation to completion, wall-budget exhaustion, or
/// extinction. Pure function of `(params, seed)` apart from the budget.
pub fn run_sim(params: &SimParams, seed: u64, wall_budget: Duration) -> Result<SimOutput, SimError> {
    if wall_budget.is_zero() {
        return Err(SimError::ZeroWallBudget);
    }
    let start = Instant::now();
    let mut sim = Simulation::new(params.clone(), seed)?;
    let total_days = sim.total_weeks() as u32 * params.constants.print_step;
    let mut status = SimStatus::Completed;
    for _ in 0..total_days {
        if start.elapsed() >= wall_budget {
            status = SimStatus::WallTimeExceeded;
            break;
        }
        sim.step_day();
        if sim.infected_count() == 0 && !sim.can_reseed() {
            status = SimStatus::Extinct;
            break;
        }
    }
    let mut out = sim.finish(seed, status, start.elapsed());
    if out.status == SimStatus::Completed {
        out.turnover_flag = classify_turnover(&out, DEFAULT_TURNOVER_WEEKS);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimConstants;

    fn quick_params() -> SimParams {
        SimParams {
            population_size: 2000,
            deme_amplitude: 0.1,
            lambda_antigenic: 1.0e-3,
            mean_antigenic_size: 0.06,
            lambda_deleterious: 0.05,
            mut_cost: 0.01,
            beta: 0.5,
            nu: 0.2,
            epsilon_mut: 1.0,
            initial_i_prop: 5.0e-3,
            constants: SimConstants { end_day: 365, ..SimConstants::default() },
        }
    }

    #[test]
    fn population_is_conserved_daily() {
        let params = quick_params();
        let mut sim = Simulation::new(params.clone(), 11).unwrap();
        let n = params.population_size;
        for day in 0..365 {
            sim.step_day();
            assert_eq!(sim.population(), n, "day {day}");
            if day % 28 == 0 {
                assert_eq!(sim.audit_population(), Some(n), "audit day {day}");
            }
        }
        assert_eq!(sim.audit_population(), Some(n));
    }

    #[test]
    fn vac_sums_to_tc_every_week() {
        let out = run_sim(&quick_params(), 5, Duration::from_secs(60)).unwrap();
        assert!(out.weeks() > 0);
        for w in 0..out.weeks() {
            let vac_sum: f64 = out.vacs.iter().map(|v| v.values[w]).sum();
            assert_eq!(vac_sum, out.tc.values[w], "week {w}");
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let params = quick_params();
        let a = run_sim(&params, 99, Duration::from_secs(60)).unwrap();
        let b = run_sim(&params, 99, Duration::from_secs(60)).unwrap();
        assert_eq!(a.tc.values, b.tc.values);
        assert_eq!(a.vacs.len(), b.vacs.len());
        for (x, y) in a.vacs.iter().zip(&b.vacs) {
            assert_eq!(x.variant_id, y.variant_id);
            assert_eq!(x.values, y.values);
        }
        let c = run_sim(&params, 100, Duration::from_secs(60)).unwrap();
        assert_ne!(a.tc.values, c.tc.values);
    }

    #[test]
    fn subcritical_run_goes_extinct_without_reseeding() {
        let mut params = quick_params();
        params.beta = 0.143;
        params.nu = 0.25;
        params.constants.external_per_1e7 = 0.0;
        params.constants.end_day = 3650;
        let out = run_sim(&params, 1, Duration::from_secs(60)).unwrap();
        assert_eq!(out.status, SimStatus::Extinct);
        assert_eq!(out.weeks(), out.tc.len());
        assert_eq!(out.tc.len(), 3650 / 7);
    }

    #[test]
    fn wall_budget_truncates() {
        let mut params = quick_params();
        params.population_size = 10_000;
        params.constants.end_day = 3650;
        let out = run_sim(&params, 2, Duration::from_micros(50)).unwrap();
        assert_eq!(out.status, SimStatus::WallTimeExceeded);
        assert!(out.weeks() < 3650 / 7);
    }

    #[test]
    fn doubling_beta_does_not_reduce_mean_first_peak() {
        let mut lo = quick_params();
        lo.population_size = 3000;
        lo.beta = 0.3;
        lo.constants.end_day = 365;
        let mut hi = lo.clone();
        hi.beta = 0.6;
        let peak = |p: &SimParams, seed| {
            let out = run_sim(p, seed, Duration::from_secs(30)).unwrap();
            out.tc.values.iter().cloned().fold(0.0, f64::max)
        };
        let n = 100;
        let mean_lo: f64 = (0..n).map(|s| peak(&lo, s)).sum::<f64>() / n as f64;
        let mean_hi: f64 = (0..n).map(|s| peak(&hi, s)).sum::<f64>() / n as f64;
        assert!(
            mean_hi >= mean_lo,
            "mean first-wave peak decreased when beta doubled: {mean_lo} -> {mean_hi}"
        );
    }
}
