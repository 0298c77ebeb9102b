//! Loading a JSON configuration: the shipped alternative tree table against
//! the default one.

use std::path::Path;

use forestopt::config::{load_config, ModelConfig};
use forestopt::fitness::{Evaluator, FitnessCache};
use forestopt::schedule::ScheduleGenotype;

fn main() -> forestopt::error::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/geometric_b1.json");
    let alt = load_config(&path)?;
    let base = ModelConfig::default();
    let g: ScheduleGenotype = "010010010010010010010010010010|010".parse()?;
    for (name, cfg) in [("default", &base), ("geometric_b1", &alt)] {
        let model = cfg.model()?;
        let cache = FitnessCache::new();
        let eval = Evaluator::new(&model, &cfg.initial_state, cfg.nlp, &cache, cfg.fitness_hash());
        let r = eval.evaluate(&g)?;
        println!("{name:>13}: config {}  NPV {:.3} k€", &cfg.hash_hex()[..12], r.npv / 1000.0);
    }
    Ok(())
}
