//! Steady-state response to the fixed harvesting cost, at reduced budgets.

use forestopt::config::ModelConfig;
use forestopt::dynamics::{StandState, INITIAL_X3};
use forestopt::experiments::{run_sensitivity, SensitivityCase};

fn main() {
    let mut cfg = ModelConfig::default();
    cfg.ga.nlp_call_budget = 200;
    cfg.nlp.multistart = 1;
    let grid: Vec<SensitivityCase> =
        [100.0, 500.0].iter().map(|&cf| SensitivityCase { cf, r: 0.03, site_index: 15.0 }).collect();
    let states = vec![("x3".to_string(), StandState(INITIAL_X3.to_vec()))];
    for row in run_sensitivity(&cfg, &grid, &states, 1) {
        println!(
            "Cf {:>3}: cycle {} interval {:?} y, {:.0} €/y, {:.1} m³ per harvest, sizes {:?}-{:?} mm {}",
            row.cf,
            row.cycle_pattern,
            row.interval_years,
            row.profit_per_year_eur,
            row.volume_per_harvest_m3,
            row.diameter_min_mm,
            row.diameter_max_mm,
            row.error
        );
    }
}
