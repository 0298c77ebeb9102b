//! Unharvested development of the three reference stands.

use forestopt::dynamics::StandModel;
use forestopt::experiments::{reference_states, Trajectory};

fn main() -> forestopt::error::Result<()> {
    let model = StandModel::base_case();
    for (name, x0) in reference_states() {
        let traj = Trajectory::unharvested(&model, &x0, 20)?;
        println!("{name}");
        for (t, x) in traj.states.iter().enumerate().step_by(4) {
            let shares = model.shares(x)?;
            println!(
                "  year {:>3}: {:>7.1} trees, basal area {:>5.1} m², ingrowth {:>5.1}",
                t * 5,
                x.total_trees(),
                shares.basal_area,
                shares.ingrowth
            );
        }
    }
    Ok(())
}
