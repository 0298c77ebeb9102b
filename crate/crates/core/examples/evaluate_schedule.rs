//! Optimal harvests for one fixed schedule, with the steady-state summary
//! and a trajectory CSV.

use forestopt::dynamics::{StandModel, StandState, INITIAL_X3};
use forestopt::experiments::{export_trajectory, steady_state_summary, Trajectory};
use forestopt::fitness::{Evaluator, FitnessCache, SolverOptions};
use forestopt::schedule::ScheduleGenotype;

fn main() -> forestopt::error::Result<()> {
    let key = std::env::args().nth(1).unwrap_or_else(|| "0100100100|010".to_string());
    let g: ScheduleGenotype = key.parse()?;
    let model = StandModel::base_case();
    let x0 = StandState(INITIAL_X3.to_vec());
    let cache = FitnessCache::new();
    let eval = Evaluator::new(&model, &x0, SolverOptions::default(), &cache, 0);
    let r = eval.evaluate(&g)?;
    println!("{key}: NPV {:.2} € ({:?}, {} restarts)", r.npv, r.status, r.restarts_used);
    for (t, (h, c)) in r.harvests.iter().zip(&r.cash_flows).enumerate() {
        if r.decisions[t] {
            println!("  stage {t:>2}: {:>6.1} trees cut, cash flow {c:>8.1} €", h.0.iter().sum::<f64>());
        }
    }
    let s = steady_state_summary(&model, &r)?;
    println!("steady state: {s:#?}");
    let path = std::env::temp_dir().join("forestopt_trajectory.csv");
    export_trajectory(&model, &Trajectory::from_result(&r), &path)?;
    println!("trajectory written to {}", path.display());
    Ok(())
}
