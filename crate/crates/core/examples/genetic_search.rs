//! Evolutionary search over schedules with a small call budget.

use forestopt::config::ModelConfig;
use forestopt::dynamics::{StandState, INITIAL_X3};
use forestopt::experiments::run_ga_for;

fn main() -> forestopt::error::Result<()> {
    let mut cfg = ModelConfig::default();
    cfg.ga.nlp_call_budget = 300;
    cfg.nlp.multistart = 1;
    let (out, _) = run_ga_for(&cfg, &StandState(INITIAL_X3.to_vec()), 1)?;
    for rec in out.log.iter().step_by(25) {
        println!(
            "gen {:>4}  calls {:>4}  best {:>9.2}  mean {:>9.2}  {}",
            rec.generation, rec.nlp_calls_cumulative, rec.best_npv, rec.mean_npv, rec.best_genotype
        );
    }
    println!(
        "best {} = {:.2} € after {} calls ({})",
        out.best.genotype.canonical_key(),
        out.best.result.npv,
        out.nlp_calls,
        out.termination
    );
    Ok(())
}
