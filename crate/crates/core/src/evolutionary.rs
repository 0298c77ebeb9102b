//! Steady-state genetic search over harvest schedules.
//!
//! Each generation selects two parents by binary tournament, recombines them,
//! mutates the offspring and lets them compete with λ randomly drawn members
//! for those members' slots.

use std::fmt;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ForestError, Result};
use crate::fitness::{Evaluator, FitnessResult};
use crate::schedule::{ScheduleBounds, ScheduleGenotype};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    /// N
    pub population: usize,
    /// p_c
    pub crossover_prob: f64,
    /// p_m, used by both mutation types
    pub mutation_prob: f64,
    /// λ
    pub replacement: usize,
    pub max_generations: usize,
    /// Solver calls (cache misses) after which the search stops.
    pub nlp_call_budget: usize,
    pub seed: u64,
    /// Parent pairs bred per generation; 1 is the classic steady-state scheme.
    pub batch_pairs: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 50,
            crossover_prob: 0.9,
            mutation_prob: 0.1,
            replacement: 2,
            max_generations: 100_000,
            nlp_call_budget: 8000,
            seed: 0,
            batch_pairs: 1,
        }
    }
}

impl GaConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.population < 2 {
            out.push("ga.population: must be >= 2".to_string());
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            out.push("ga.crossover_prob: must lie in [0, 1]".to_string());
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            out.push("ga.mutation_prob: must lie in [0, 1]".to_string());
        }
        if self.replacement == 0 || self.replacement > self.population {
            out.push("ga.replacement: must lie in [1, population]".to_string());
        }
        if self.batch_pairs == 0 {
            out.push("ga.batch_pairs: must be >= 1".to_string());
        }
        out
    }
}

/// Why a search stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// solver-call budget reached
    #[serde(rename = "NCO")]
    CallBudget,
    /// active-node limit reached
    #[serde(rename = "NAN")]
    NodeLimit,
    /// search tree exhausted
    #[serde(rename = "NOR")]
    Exhausted,
    /// generation limit reached
    #[serde(rename = "GEN")]
    GenerationLimit,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::CallBudget => "NCO",
            Termination::NodeLimit => "NAN",
            Termination::Exhausted => "NOR",
            Termination::GenerationLimit => "GEN",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Member {
    pub genotype: ScheduleGenotype,
    pub result: Arc<FitnessResult>,
}

impl Member {
    pub fn fitness(&self) -> f64 {
        self.result.fitness()
    }
}

#[derive(Debug, Clone)]
pub struct Population {
    pub members: Vec<Member>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn best(&self) -> Option<&Member> {
        // first maximum, so ties resolve by slot order
        self.members.iter().fold(None, |acc: Option<&Member>, m| match acc {
            Some(b) if b.fitness() >= m.fitness() => Some(b),
            _ => Some(m),
        })
    }

    /// Mean of finite fitness values; NaN when none is finite.
    pub fn mean_fitness(&self) -> f64 {
        let vals: Vec<f64> =
            self.members.iter().map(|m| m.fitness()).filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

/// Uniform lengths within bounds, fair bits, then cycle repair.
pub fn random_genotype<R: Rng + ?Sized>(bounds: &ScheduleBounds, rng: &mut R) -> ScheduleGenotype {
    let t = rng.random_range(bounds.t_min..=bounds.t_max);
    let s = rng.random_range(bounds.s_min..=bounds.s_max);
    let mut g = ScheduleGenotype::new(
        (0..t).map(|_| rng.random_bool(0.5)).collect(),
        (0..s).map(|_| rng.random_bool(0.5)).collect(),
    );
    g.repair(rng);
    g
}

pub fn init_population<R: Rng + ?Sized>(
    eval: &Evaluator<'_>,
    bounds: &ScheduleBounds,
    ga: &GaConfig,
    jobs: usize,
    rng: &mut R,
) -> Result<Population> {
    let genotypes: Vec<ScheduleGenotype> =
        (0..ga.population).map(|_| random_genotype(bounds, rng)).collect();
    let results = evaluate_all(eval, &genotypes, jobs)?;
    Ok(Population {
        members: genotypes
            .into_iter()
            .zip(results)
            .map(|(genotype, result)| Member { genotype, result })
            .collect(),
    })
}

/// Evaluates in order, spreading work over `jobs` threads.
pub(crate) fn evaluate_all(
    eval: &Evaluator<'_>,
    genotypes: &[ScheduleGenotype],
    jobs: usize,
) -> Result<Vec<Arc<FitnessResult>>> {
    if jobs <= 1 || genotypes.len() <= 1 {
        return genotypes.iter().map(|g| eval.evaluate(g)).collect();
    }
    let chunk = genotypes.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = genotypes
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|g| eval.evaluate(g)).collect::<Vec<_>>()))
            .collect();
        let mut out = Vec::with_capacity(genotypes.len());
        for h in handles {
            for r in h.join().expect("evaluation thread panicked") {
                out.push(r?);
            }
        }
        Ok(out)
    })
}

/// Binary tournament: two distinct members, the fitter wins, ties by coin flip.
pub fn tournament_select<'p, R: Rng + ?Sized>(pop: &'p Population, rng: &mut R) -> Result<&'p Member> {
    if pop.len() < 2 {
        return Err(ForestError::Argument("tournament needs at least two members".into()));
    }
    let pick = sample(rng, pop.len(), 2);
    let (a, b) = (&pop.members[pick.index(0)], &pop.members[pick.index(1)]);
    Ok(if a.fitness() > b.fitness() {
        a
    } else if b.fitness() > a.fitness() {
        b
    } else if rng.random_bool(0.5) {
        a
    } else {
        b
    })
}

/// One-point crossover on the concatenated strings at a point inside both
/// transitions, so each child keeps the other parent's cycle.
pub fn crossover<R: Rng + ?Sized>(
    pa: &ScheduleGenotype,
    pb: &ScheduleGenotype,
    p_c: f64,
    rng: &mut R,
) -> (ScheduleGenotype, ScheduleGenotype) {
    if !rng.random_bool(p_c) {
        return (pa.clone(), pb.clone());
    }
    let m = pa.transition.len().min(pb.transition.len());
    if m < 2 {
        return (pa.clone(), pb.clone());
    }
    let k = rng.random_range(1..m);
    crossover_at(pa, pb, k)
}

/// Suffix swap after position `k` (requires k < both transition lengths).
pub fn crossover_at(
    pa: &ScheduleGenotype,
    pb: &ScheduleGenotype,
    k: usize,
) -> (ScheduleGenotype, ScheduleGenotype) {
    let join = |head: &ScheduleGenotype, tail: &ScheduleGenotype| {
        let mut t = head.transition[..k].to_vec();
        t.extend_from_slice(&tail.transition[k..]);
        ScheduleGenotype::new(t, tail.cycle.clone())
    };
    (join(pa, pb), join(pb, pa))
}

/// Independent bit flips with probability `p_m`, then cycle repair.
pub fn mutate_bits<R: Rng + ?Sized>(g: &ScheduleGenotype, p_m: f64, rng: &mut R) -> ScheduleGenotype {
    let mut out = g.clone();
    for b in out.transition.iter_mut().chain(out.cycle.iter_mut()) {
        if rng.random_bool(p_m) {
            *b = !*b;
        }
    }
    out.repair(rng);
    out
}

fn resize<R: Rng + ?Sized>(bits: &mut Vec<bool>, min: usize, max: usize, rng: &mut R) {
    let len = bits.len();
    let mut grow = rng.random_bool(0.5);
    let ok = |grow: bool| if grow { len < max } else { len > min };
    if !ok(grow) {
        grow = !grow;
        if !ok(grow) {
            return;
        }
    }
    if grow {
        let pos = rng.random_range(0..=len);
        let bit = rng.random_bool(0.5);
        bits.insert(pos, bit);
    } else {
        let pos = rng.random_range(0..len);
        bits.remove(pos);
    }
}

/// With probability `p_m` each, the transition and then the cycle grow or
/// shrink by one bit; moves past a bound go the other way.
pub fn mutate_length<R: Rng + ?Sized>(
    g: &ScheduleGenotype,
    p_m: f64,
    rng: &mut R,
    bounds: &ScheduleBounds,
) -> ScheduleGenotype {
    let mut out = g.clone();
    if rng.random_bool(p_m) {
        resize(&mut out.transition, bounds.t_min, bounds.t_max, rng);
    }
    if rng.random_bool(p_m) {
        resize(&mut out.cycle, bounds.s_min.max(1), bounds.s_max, rng);
    }
    out.repair(rng);
    out
}

/// Draws λ distinct slots; the best λ of those members plus the offspring
/// fill them. Pool ties keep incumbents ahead of offspring.
pub fn replace<R: Rng + ?Sized>(
    pop: &mut Population,
    offspring: Vec<Member>,
    lambda: usize,
    rng: &mut R,
) -> Result<()> {
    if lambda == 0 || lambda > pop.len() {
        return Err(ForestError::Config(format!(
            "ga.replacement: λ = {lambda} must lie in [1, {}]",
            pop.len()
        )));
    }
    let slots: Vec<usize> = sample(rng, pop.len(), lambda).into_iter().collect();
    let mut pool: Vec<Member> = slots.iter().map(|&i| pop.members[i].clone()).collect();
    pool.extend(offspring);
    // stable sort: drawn members first among equals
    pool.sort_by(|a, b| b.fitness().total_cmp(&a.fitness()));
    for (slot, m) in slots.iter().zip(pool) {
        pop.members[*slot] = m;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_npv: f64,
    pub mean_npv: f64,
    pub nlp_calls_cumulative: usize,
    pub best_genotype: String,
}

#[derive(Debug, Clone)]
pub struct GaOutcome {
    pub best: Member,
    pub log: Vec<GenerationRecord>,
    pub generations: usize,
    pub nlp_calls: usize,
    pub termination: Termination,
    pub population: Population,
}

fn record(generation: usize, pop: &Population, calls: usize) -> GenerationRecord {
    let best = pop.best().expect("population is nonempty");
    GenerationRecord {
        generation,
        best_npv: best.fitness(),
        mean_npv: pop.mean_fitness(),
        nlp_calls_cumulative: calls,
        best_genotype: best.genotype.canonical_key(),
    }
}

/// Runs the search until the call budget or the generation limit binds.
pub fn run_ga(
    eval: &Evaluator<'_>,
    bounds: &ScheduleBounds,
    ga: &GaConfig,
    jobs: usize,
) -> Result<GaOutcome> {
    let problems = [bounds.violations(), ga.violations()].concat();
    if !problems.is_empty() {
        return Err(ForestError::Config(problems.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ga.seed);
    let calls0 = eval.calls();
    let used = |e: &Evaluator<'_>| e.calls() - calls0;
    let mut pop = init_population(eval, bounds, ga, jobs, &mut rng)?;
    let mut log = vec![record(0, &pop, used(eval))];
    let mut generation = 0;
    let termination = loop {
        if used(eval) >= ga.nlp_call_budget {
            break Termination::CallBudget;
        }
        if generation >= ga.max_generations {
            break Termination::GenerationLimit;
        }
        generation += 1;

        let mut children = Vec::with_capacity(2 * ga.batch_pairs);
        for _ in 0..ga.batch_pairs {
            let pa = tournament_select(&pop, &mut rng)?.genotype.clone();
            let pb = tournament_select(&pop, &mut rng)?.genotype.clone();
            let (c1, c2) = crossover(&pa, &pb, ga.crossover_prob, &mut rng);
            for c in [c1, c2] {
                let c = mutate_bits(&c, ga.mutation_prob, &mut rng);
                children.push(mutate_length(&c, ga.mutation_prob, &mut rng, bounds));
            }
        }
        // children beyond the remaining budget are discarded unevaluated
        let mut fresh = std::collections::HashSet::new();
        let remaining = ga.nlp_call_budget - used(eval);
        children.retain(|c| {
            if eval.is_cached(c) {
                return true;
            }
            let key = c.canonical_key();
            fresh.contains(&key) || (fresh.len() < remaining && fresh.insert(key))
        });
        let results = evaluate_all(eval, &children, jobs)?;
        let mut members: Vec<Member> = children
            .into_iter()
            .zip(results)
            .map(|(genotype, result)| Member { genotype, result })
            .collect();
        while !members.is_empty() {
            let rest = members.split_off(2.min(members.len()));
            replace(&mut pop, members, ga.replacement, &mut rng)?;
            members = rest;
        }
        log.push(record(generation, &pop, used(eval)));
    };
    let best = pop.best().expect("population is nonempty").clone();
    Ok(GaOutcome {
        best,
        log,
        generations: generation,
        nlp_calls: used(eval),
        termination,
        population: pop,
    })
}
