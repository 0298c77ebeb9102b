//! Single-start solver robustness on two of the fixed test problems.

use forestopt::config::ModelConfig;
use forestopt::experiments::{run_init_study, study_schedules, study_states, InitStudyOptions};

fn main() -> forestopt::error::Result<()> {
    let cfg = ModelConfig::default();
    let states: Vec<_> = study_states().into_iter().filter(|(n, _)| n == "A/e" || n == "B/o").collect();
    let schedules: Vec<_> = study_schedules().into_iter().filter(|(n, _)| n == "lld" || n == "sss").collect();
    let opts = InitStudyOptions { repetitions: 10, ..InitStudyOptions::default() };
    for r in run_init_study(&cfg, &states, &schedules, &opts, 1)? {
        println!(
            "{} {}: best {:.3} k€, {:.0}% of starts below it, {:.2} trials per converged start",
            r.state,
            r.schedule,
            r.best_npv_keur,
            100.0 * r.suboptimal_share,
            r.mean_trials
        );
    }
    Ok(())
}
