//! Branch-and-bound on a short horizon, checked against enumeration.

use forestopt::dynamics::{StandModel, StandState, INITIAL_X3};
use forestopt::experiments::enumerate_exhaustive;
use forestopt::fitness::{Evaluator, FitnessCache, SolverOptions};
use forestopt::mip::{build_mip, solve_bnb, BnbLimits};
use forestopt::schedule::ScheduleBounds;

fn main() -> forestopt::error::Result<()> {
    let model = StandModel::base_case();
    let x0 = StandState(INITIAL_X3.to_vec());
    let bounds = ScheduleBounds::new(1, 4, 1, 2);
    let opts = SolverOptions::default();

    let cache = FitnessCache::new();
    let eval = Evaluator::new(&model, &x0, opts, &cache, 0);
    let e = enumerate_exhaustive(&eval, &bounds, 1)?;
    println!("enumeration: {} schedules, best {} = {:.2} €", e.rows.len(), e.best.0.canonical_key(), e.best.1.npv);

    let nocache = FitnessCache::disabled();
    let eval = Evaluator::new(&model, &x0, opts, &nocache, 0);
    let mip = build_mip(&model, &x0, &bounds)?;
    let bb = solve_bnb(&eval, &mip, &BnbLimits::default())?;
    println!(
        "branch-and-bound: {} nodes, {} relaxations, {} leaf calls, {}",
        bb.nodes, bb.relaxations, bb.nlp_calls, bb.termination
    );
    if let Some((g, r)) = &bb.best {
        println!("  best {} = {:.2} €", g.canonical_key(), r.npv);
    }
    for v in &bb.incumbent_trace {
        println!("  incumbent {v:.2}");
    }
    Ok(())
}
