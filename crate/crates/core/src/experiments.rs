//! Experiment drivers: exhaustive enumeration, steady-state summaries,
//! parameter sweeps, the initialization study, GA versus branch-and-bound
//! comparison, trajectory export and run manifests.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::dynamics::{HarvestVector, StandModel, StandState, INITIAL_X1, INITIAL_X2, INITIAL_X3};
use crate::error::{ForestError, Result};
use crate::evolutionary::{run_ga, GaOutcome, Termination};
use crate::fitness::{
    random_initial_controls, solve_from, start_seed, Evaluator, FitnessCache, FitnessResult,
};
use crate::mip::{build_mip, solve_bnb, BnbLimits, BnbOutcome};
use crate::schedule::{ScheduleBounds, ScheduleGenotype};

/// Refuse enumerations larger than this.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Harvests below this many trees do not count as harvesting a class.
pub const HARVEST_PRESENCE: f64 = 0.5;

/// Runs `f` over `items` on up to `jobs` threads, preserving order.
pub fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let out = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                out.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every item processed")).collect()
}

/// Number of genotypes with at least one harvest in the cycle.
pub fn count_genotypes(bounds: &ScheduleBounds) -> u128 {
    let transitions: u128 = (bounds.t_min..=bounds.t_max).map(|t| 1u128 << t.min(127)).sum();
    let cycles: u128 = (bounds.s_min..=bounds.s_max).map(|s| (1u128 << s.min(127)) - 1).sum();
    transitions.saturating_mul(cycles)
}

/// Every evaluable genotype within `bounds`, transition-major order.
pub fn all_genotypes(bounds: &ScheduleBounds) -> Result<Vec<ScheduleGenotype>> {
    let count = count_genotypes(bounds);
    if count > ENUMERATION_LIMIT || bounds.t_max >= 64 || bounds.s_max >= 64 {
        return Err(ForestError::SizeGuard { count, limit: ENUMERATION_LIMIT });
    }
    let bits = |len: usize, v: u64| (0..len).map(|i| (v >> (len - 1 - i)) & 1 == 1).collect::<Vec<bool>>();
    let mut out = Vec::with_capacity(count as usize);
    for t in bounds.t_min..=bounds.t_max {
        for tv in 0..(1u64 << t) {
            for s in bounds.s_min.max(1)..=bounds.s_max {
                for sv in 1..(1u64 << s) {
                    out.push(ScheduleGenotype::new(bits(t, tv), bits(s, sv)));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationRow {
    pub genotype: String,
    #[serde(rename = "npv_eur")]
    pub npv: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Enumeration {
    pub best: (ScheduleGenotype, Arc<FitnessResult>),
    pub rows: Vec<EnumerationRow>,
}

/// Scores every genotype in `bounds`; the oracle for the search methods.
pub fn enumerate_exhaustive(
    eval: &Evaluator<'_>,
    bounds: &ScheduleBounds,
    jobs: usize,
) -> Result<Enumeration> {
    let genotypes = all_genotypes(bounds)?;
    if genotypes.is_empty() {
        return Err(ForestError::Config("bounds: no genotype to enumerate".into()));
    }
    let results = par_map(&genotypes, jobs, |g| eval.evaluate(g));
    let mut rows = Vec::with_capacity(genotypes.len());
    let mut best: Option<(ScheduleGenotype, Arc<FitnessResult>)> = None;
    for (g, r) in genotypes.into_iter().zip(results) {
        let r = r?;
        rows.push(EnumerationRow { genotype: g.canonical_key(), npv: r.npv, converged: r.converged() });
        if best.as_ref().is_none_or(|(_, b)| r.fitness() > b.fitness()) {
            best = Some((g, r));
        }
    }
    Ok(Enumeration { best: best.expect("nonempty"), rows })
}

/// Schedules harvesting every k stages throughout, for every cycle length k
/// in `bounds`, every phase and every cycle start within one period of
/// `t_max`.
pub fn fixed_interval_schedules(bounds: &ScheduleBounds) -> Vec<ScheduleGenotype> {
    let mut out = Vec::new();
    for k in bounds.s_min.max(1)..=bounds.s_max {
        let lo = (bounds.t_max + 1).saturating_sub(k).max(bounds.t_min);
        for t0 in lo..=bounds.t_max {
            for p in 0..k {
                let transition = (0..t0).map(|t| t % k == p).collect();
                let cycle = (t0..t0 + k).map(|t| t % k == p).collect();
                out.push(ScheduleGenotype::new(transition, cycle));
            }
        }
    }
    out
}

/// Best of [`fixed_interval_schedules`].
pub fn best_fixed_interval(
    eval: &Evaluator<'_>,
    bounds: &ScheduleBounds,
    jobs: usize,
) -> Result<(ScheduleGenotype, Arc<FitnessResult>)> {
    let gs = fixed_interval_schedules(bounds);
    let results = par_map(&gs, jobs, |g| eval.evaluate(g));
    let mut best: Option<(ScheduleGenotype, Arc<FitnessResult>)> = None;
    for (g, r) in gs.into_iter().zip(results) {
        let r = r?;
        if best.as_ref().is_none_or(|(_, b)| r.fitness() > b.fitness()) {
            best = Some((g, r));
        }
    }
    best.ok_or_else(|| ForestError::Config("bounds: no fixed-interval schedule".into()))
}

/// Steady-state characteristics read from the first cycle of a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateSummary {
    /// Δ × period length when the cycle's primitive period has one harvest
    pub interval_years: Option<u32>,
    pub cycle_pattern: String,
    /// mean undiscounted net cash flow over the cycle (€/year)
    #[serde(rename = "profit_per_year_eur")]
    pub profit_per_year: f64,
    /// m³ per harvest
    #[serde(rename = "volume_per_harvest_m3")]
    pub volume_per_harvest: f64,
    /// m³ per year
    #[serde(rename = "avg_volume_per_year_m3")]
    pub avg_volume_per_year: f64,
    /// class-center diameters (mm) of the smallest and largest harvested class
    #[serde(rename = "diameter_min_mm")]
    pub diameter_min: Option<f64>,
    #[serde(rename = "diameter_max_mm")]
    pub diameter_max: Option<f64>,
    /// first stage from which gaps between harvests equal the cycle's
    pub stage_interval_reached: usize,
    pub trees_before: f64,
    pub trees_after: f64,
    /// harvested classes, 1-based
    #[serde(serialize_with = "space_joined", deserialize_with = "space_split")]
    pub harvested_classes: Vec<usize>,
}

fn space_joined<S: serde::Serializer>(v: &[usize], s: S) -> std::result::Result<S::Ok, S::Error> {
    let text: Vec<String> = v.iter().map(|c| c.to_string()).collect();
    s.serialize_str(&text.join(" "))
}

fn space_split<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<usize>, D::Error> {
    let text = String::deserialize(d)?;
    text.split_whitespace().map(|c| c.parse().map_err(serde::de::Error::custom)).collect()
}

pub fn steady_state_summary(model: &StandModel, result: &FitnessResult) -> Result<SteadyStateSummary> {
    let t0 = result.t0();
    let t1 = result.t1();
    if t1 <= t0 || result.trajectory.len() != t1 + 1 || result.harvests.len() != t1 {
        return Err(ForestError::Argument("result carries no cycle trajectory".into()));
    }
    let d = &result.decisions;
    let s = t1 - t0;
    let years = model.econ().delta_years;
    let harvest_stages: Vec<usize> = (t0..t1).filter(|t| d[*t]).collect();
    if harvest_stages.is_empty() {
        return Err(ForestError::Schedule("empty cycle".into()));
    }
    let mut cash = 0.0;
    let mut volume = 0.0;
    let mut per_class = vec![0.0; model.n_classes()];
    for t in t0..t1 {
        let h = &result.harvests[t];
        // fractions stay in [0, 1] so harvests are nonnegative; tiny harvests
        // at stages without a decision cannot occur
        cash += model.stage_cash_flow(h, d[t])?;
        volume += model.volumes().iter().zip(&h.0).map(|(v, x)| v * x).sum::<f64>();
        for (acc, x) in per_class.iter_mut().zip(&h.0) {
            *acc += x;
        }
    }
    let cycle_years = (s as u32 * years) as f64;
    let harvested_classes: Vec<usize> = per_class
        .iter()
        .enumerate()
        .filter(|(_, v)| **v / harvest_stages.len() as f64 > HARVEST_PRESENCE)
        .map(|(i, _)| i + 1)
        .collect();
    let diam = |i: usize| model.table().classes()[i - 1].diameter;
    let first = harvest_stages[0];
    let after: f64 = result.trajectory[first + 1].0.iter().sum();
    let before = after + result.harvests[first].0.iter().sum::<f64>();
    let cycle_pattern: String = result.decisions[t0..t1].iter().map(|b| if *b { '1' } else { '0' }).collect();
    let period = primitive_period(&cycle_pattern);
    let interval_years = (period.matches('1').count() == 1).then_some(period.len() as u32 * years);
    Ok(SteadyStateSummary {
        interval_years,
        cycle_pattern,
        profit_per_year: cash / cycle_years,
        volume_per_harvest: volume / harvest_stages.len() as f64,
        avg_volume_per_year: volume / cycle_years,
        diameter_min: harvested_classes.first().map(|i| diam(*i)),
        diameter_max: harvested_classes.last().map(|i| diam(*i)),
        stage_interval_reached: interval_reached(d, t0, t1),
        trees_before: before,
        trees_after: after,
        harvested_classes,
    })
}

/// Earliest stage after which every gap between consecutive harvests follows
/// the cycle's own gap sequence; 0 if that holds from the first harvest.
pub fn interval_reached(decisions: &[bool], t0: usize, t1: usize) -> usize {
    let s = t1 - t0;
    // extend one more cycle so the wrap-around gap is visible
    let at = |t: usize| if t < t1 { decisions[t] } else { decisions[t0 + (t - t0) % s] };
    let stages: Vec<usize> = (0..t1 + s).filter(|t| at(*t)).collect();
    let cycle_gaps: Vec<usize> = {
        let c: Vec<usize> = stages.iter().copied().filter(|t| *t >= t0).collect();
        c.windows(2).map(|w| w[1] - w[0]).collect()
    };
    if cycle_gaps.is_empty() {
        return t0;
    }
    let gaps: Vec<usize> = stages.windows(2).map(|w| w[1] - w[0]).collect();
    let m = cycle_gaps.len();
    // walk back from the first cycle harvest while gaps keep the periodic pattern
    let first_cycle = stages.iter().position(|t| *t >= t0).expect("cycle harvests present");
    let mut k = first_cycle;
    while k > 0 {
        let want = cycle_gaps[(m - 1 - (first_cycle - k) % m) % m];
        if gaps[k - 1] != want {
            break;
        }
        k -= 1;
    }
    if k == 0 { 0 } else { stages[k] }
}

/// One sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCase {
    pub cf: f64,
    pub r: f64,
    pub site_index: f64,
}

/// Fixed cost × interest grid at the base site index.
pub fn cost_interest_grid() -> Vec<SensitivityCase> {
    let mut out = Vec::new();
    for cf in [100.0, 300.0, 500.0] {
        for r in [0.01, 0.02, 0.03, 0.04] {
            out.push(SensitivityCase { cf, r, site_index: 15.0 });
        }
    }
    out
}

/// Site-index sweep at base economics.
pub fn site_grid() -> Vec<SensitivityCase> {
    [11.0, 13.0, 15.0, 17.0]
        .into_iter()
        .map(|site_index| SensitivityCase { cf: 300.0, r: 0.03, site_index })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    #[serde(rename = "Cf_eur")]
    pub cf: f64,
    pub r: f64,
    pub site_index: f64,
    pub interval_years: Option<u32>,
    pub cycle_pattern: String,
    pub profit_per_year_eur: f64,
    pub volume_per_harvest_m3: f64,
    pub avg_volume_per_year_m3: f64,
    pub diameter_min_mm: Option<f64>,
    pub diameter_max_mm: Option<f64>,
    pub stage_reached_x1: Option<usize>,
    pub stage_reached_x2: Option<usize>,
    pub stage_reached_x3: Option<usize>,
    pub trees_before: f64,
    pub trees_after: f64,
    pub npv_x1_keur: Option<f64>,
    pub npv_x2_keur: Option<f64>,
    pub npv_x3_keur: Option<f64>,
    /// all states reached the same cycle pattern
    pub consistent: bool,
    pub error: String,
}

/// The three built-in initial states.
pub fn reference_states() -> Vec<(String, StandState)> {
    vec![
        ("x1".to_string(), StandState(INITIAL_X1.to_vec())),
        ("x2".to_string(), StandState(INITIAL_X2.to_vec())),
        ("x3".to_string(), StandState(INITIAL_X3.to_vec())),
    ]
}

/// GA run with a fresh cache for one configuration and initial state.
pub fn run_ga_for(cfg: &ModelConfig, x0: &StandState, jobs: usize) -> Result<(GaOutcome, usize)> {
    let mut cfg = cfg.clone();
    cfg.initial_state = x0.clone();
    cfg.validate()?;
    let model = cfg.model()?;
    let cache = FitnessCache::new();
    let eval = Evaluator::new(&model, &cfg.initial_state, cfg.nlp, &cache, cfg.fitness_hash());
    let out = run_ga(&eval, &cfg.bounds, &cfg.ga, jobs)?;
    let misses = cache.misses();
    Ok((out, misses))
}

fn sensitivity_cell(
    cfg: &ModelConfig,
    case: &SensitivityCase,
    states: &[(String, StandState)],
) -> SensitivityRow {
    let mut c = cfg.clone();
    c.econ.cf = case.cf;
    c.econ.r = case.r;
    c.growth.site_index = case.site_index;
    let mut row = SensitivityRow {
        cf: case.cf,
        r: case.r,
        site_index: case.site_index,
        interval_years: None,
        cycle_pattern: String::new(),
        profit_per_year_eur: f64::NAN,
        volume_per_harvest_m3: f64::NAN,
        avg_volume_per_year_m3: f64::NAN,
        diameter_min_mm: None,
        diameter_max_mm: None,
        stage_reached_x1: None,
        stage_reached_x2: None,
        stage_reached_x3: None,
        trees_before: f64::NAN,
        trees_after: f64::NAN,
        npv_x1_keur: None,
        npv_x2_keur: None,
        npv_x3_keur: None,
        consistent: true,
        error: String::new(),
    };
    let model = match c.model() {
        Ok(m) => m,
        Err(e) => {
            row.error = e.to_string();
            return row;
        }
    };
    let mut patterns = Vec::new();
    for (i, (name, x0)) in states.iter().enumerate() {
        let summary = run_ga_for(&c, x0, 1)
            .and_then(|(out, _)| steady_state_summary(&model, &out.best.result).map(|s| (out, s)));
        match summary {
            Ok((out, s)) => {
                let npv = Some(out.best.result.npv / 1000.0);
                let stage = Some(s.stage_interval_reached);
                match i {
                    0 => (row.npv_x1_keur, row.stage_reached_x1) = (npv, stage),
                    1 => (row.npv_x2_keur, row.stage_reached_x2) = (npv, stage),
                    _ => (row.npv_x3_keur, row.stage_reached_x3) = (npv, stage),
                }
                if patterns.is_empty() {
                    row.interval_years = s.interval_years;
                    row.cycle_pattern = s.cycle_pattern.clone();
                    row.profit_per_year_eur = s.profit_per_year;
                    row.volume_per_harvest_m3 = s.volume_per_harvest;
                    row.avg_volume_per_year_m3 = s.avg_volume_per_year;
                    row.diameter_min_mm = s.diameter_min;
                    row.diameter_max_mm = s.diameter_max;
                    row.trees_before = s.trees_before;
                    row.trees_after = s.trees_after;
                }
                patterns.push(canonical_cycle(&s.cycle_pattern));
            }
            Err(e) => {
                if !row.error.is_empty() {
                    row.error.push_str("; ");
                }
                row.error.push_str(&format!("{name}: {e}"));
            }
        }
    }
    row.consistent = patterns.windows(2).all(|w| w[0] == w[1]);
    row
}

/// Shortest prefix whose repetition gives `pattern`.
pub fn primitive_period(pattern: &str) -> &str {
    let n = pattern.len();
    let k = (1..=n)
        .find(|k| n % k == 0 && pattern.as_bytes().chunks(*k).all(|c| c == &pattern.as_bytes()[..*k]))
        .unwrap_or(n);
    &pattern[..k]
}

/// Smallest rotation of the primitive period, so shifted or repeated
/// cycles compare equal.
pub fn canonical_cycle(pattern: &str) -> String {
    let pattern = primitive_period(pattern);
    let n = pattern.len();
    (0..n.max(1))
        .map(|k| format!("{}{}", &pattern[k.min(n)..], &pattern[..k.min(n)]))
        .min()
        .unwrap_or_default()
}

/// GA plus steady-state extraction for every cell and state. Rows come back
/// in grid order; failures are recorded in the row.
pub fn run_sensitivity(
    cfg: &ModelConfig,
    grid: &[SensitivityCase],
    states: &[(String, StandState)],
    jobs: usize,
) -> Vec<SensitivityRow> {
    par_map(grid, jobs, |case| sensitivity_cell(cfg, case, states))
}

/// Initial states of the initialization study, named set/state.
pub fn study_states() -> Vec<(String, StandState)> {
    let mut a_n = vec![0.0; 12];
    a_n[..5].iter_mut().for_each(|v| *v = 100.0);
    let mut a_o = vec![0.0; 12];
    a_o[7..].iter_mut().for_each(|v| *v = 50.0);
    let b_e = vec![196.0, 162.0, 140.0, 124.0, 75.0, 18.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    vec![
        ("A/e".to_string(), StandState(vec![20.0; 12])),
        ("A/n".to_string(), StandState(a_n)),
        ("A/o".to_string(), StandState(a_o)),
        ("B/e".to_string(), StandState(b_e)),
        ("B/n".to_string(), StandState(INITIAL_X1.to_vec())),
        ("B/o".to_string(), StandState(INITIAL_X2.to_vec())),
    ]
}

/// The eight fixed test schedules of the initialization study.
pub fn study_schedules() -> Vec<(String, ScheduleGenotype)> {
    let dense = "010010010010010010010010010010";
    let sparse = "010000010000010000010000010000";
    [
        ("lld", dense, "010010"),
        ("lls", sparse, "010000"),
        ("lsd", dense, "010"),
        ("lss", sparse, "010"),
        ("sld", "1000100100", "010010"),
        ("sls", "0100000100", "010000"),
        ("ssd", "1001001001", "001"),
        ("sss", "0100000010", "001"),
    ]
    .into_iter()
    .map(|(name, t, c)| {
        let g = format!("{t}|{c}").parse().expect("built-in schedule parses");
        (name.to_string(), g)
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitStudyRow {
    pub state: String,
    pub schedule: String,
    pub repetitions: usize,
    pub best_npv_keur: f64,
    /// share of repetitions ending more than 0.01 % below the best
    pub suboptimal_share: f64,
    pub mean_trials: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitStudyOptions {
    pub repetitions: usize,
    /// attempts per repetition before it counts as a failure
    pub max_trials: usize,
    pub seed: u64,
}

impl Default for InitStudyOptions {
    fn default() -> Self {
        InitStudyOptions { repetitions: 100, max_trials: 10, seed: 0 }
    }
}

fn init_study_cell(
    cfg: &ModelConfig,
    state: &(String, StandState),
    schedule: &(String, ScheduleGenotype),
    opts: &InitStudyOptions,
    cell: u64,
) -> Result<InitStudyRow> {
    let model = cfg.model()?;
    let (name, x0) = state;
    let (sname, g) = schedule;
    let mut values = Vec::with_capacity(opts.repetitions);
    let mut trials_total = 0usize;
    let mut failures = 0usize;
    let base = start_seed(opts.seed, cell as usize);
    for rep in 0..opts.repetitions {
        let mut done = None;
        for trial in 0..opts.max_trials.max(1) {
            trials_total += 1;
            let seed = start_seed(base, rep * opts.max_trials.max(1) + trial);
            let start = random_initial_controls(&model, x0, g, seed, cfg.nlp.harvest_cutoff)?;
            let (res, _) = solve_from(&model, x0, g, &cfg.nlp, &start)?;
            if res.converged {
                done = Some(-res.f);
                break;
            }
        }
        match done {
            Some(v) => values.push(v),
            None => failures += 1,
        }
    }
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let below = values.iter().filter(|v| **v < best - 1e-4 * best.abs()).count();
    Ok(InitStudyRow {
        state: name.clone(),
        schedule: sname.clone(),
        repetitions: opts.repetitions,
        best_npv_keur: best / 1000.0,
        suboptimal_share: if values.is_empty() { f64::NAN } else { below as f64 / values.len() as f64 },
        mean_trials: trials_total as f64 / opts.repetitions.max(1) as f64,
        failures,
    })
}

/// Single-start robustness of the fitness solver on the fixed test problems.
pub fn run_init_study(
    cfg: &ModelConfig,
    states: &[(String, StandState)],
    schedules: &[(String, ScheduleGenotype)],
    opts: &InitStudyOptions,
    jobs: usize,
) -> Result<Vec<InitStudyRow>> {
    let cells: Vec<(usize, usize)> =
        (0..states.len()).flat_map(|i| (0..schedules.len()).map(move |j| (i, j))).collect();
    par_map(&cells, jobs, |&(i, j)| {
        init_study_cell(cfg, &states[i], &schedules[j], opts, (i * schedules.len() + j) as u64)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub state: String,
    pub method: String,
    pub best_npv_keur: f64,
    pub best_genotype: String,
    pub wall_seconds: f64,
    pub nlp_calls: usize,
    pub termination: Termination,
}

/// GA versus branch-and-bound per initial state.
pub fn run_comparison(
    cfg: &ModelConfig,
    states: &[(String, StandState)],
    limits: &BnbLimits,
    jobs: usize,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    for (name, x0) in states {
        let t = Instant::now();
        let (ga, _) = run_ga_for(cfg, x0, jobs)?;
        rows.push(ComparisonRow {
            state: name.clone(),
            method: "EO".to_string(),
            best_npv_keur: ga.best.result.npv / 1000.0,
            best_genotype: ga.best.genotype.canonical_key(),
            wall_seconds: t.elapsed().as_secs_f64(),
            nlp_calls: ga.nlp_calls,
            termination: ga.termination,
        });
        let t = Instant::now();
        let bb = run_bnb_for(cfg, x0, limits)?;
        rows.push(ComparisonRow {
            state: name.clone(),
            method: "BB".to_string(),
            best_npv_keur: bb.best_value() / 1000.0,
            best_genotype: bb.best.as_ref().map(|(g, _)| g.canonical_key()).unwrap_or_default(),
            wall_seconds: t.elapsed().as_secs_f64(),
            nlp_calls: bb.nlp_calls,
            termination: bb.termination,
        });
    }
    Ok(rows)
}

/// Branch-and-bound with the leaf cache disabled.
pub fn run_bnb_for(cfg: &ModelConfig, x0: &StandState, limits: &BnbLimits) -> Result<BnbOutcome> {
    let mut cfg = cfg.clone();
    cfg.initial_state = x0.clone();
    cfg.validate()?;
    let model = cfg.model()?;
    let mip = build_mip(&model, x0, &cfg.bounds)?;
    let cache = FitnessCache::disabled();
    let eval = Evaluator::new(&model, &cfg.initial_state, cfg.nlp, &cache, cfg.fitness_hash());
    solve_bnb(&eval, &mip, limits)
}

/// States, harvests and decisions along a path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// x_0..x_K
    pub states: Vec<StandState>,
    /// (δ_t, h_t) for t < K
    pub harvests: Vec<(bool, HarvestVector)>,
}

impl Trajectory {
    pub fn from_result(r: &FitnessResult) -> Self {
        Trajectory {
            states: r.trajectory.clone(),
            harvests: r.decisions.iter().copied().zip(r.harvests.iter().cloned()).collect(),
        }
    }

    pub fn simulate(model: &StandModel, x0: &StandState, harvests: Vec<(bool, HarvestVector)>) -> Result<Self> {
        let states = model.simulate(x0, &harvests)?;
        Ok(Trajectory { states, harvests })
    }

    pub fn unharvested(model: &StandModel, x0: &StandState, stages: usize) -> Result<Self> {
        let zero = HarvestVector::zeros(model.n_classes());
        Trajectory::simulate(model, x0, vec![(false, zero); stages])
    }
}

fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["stage".to_string(), "year".to_string(), "delta".to_string()];
    h.extend((1..=n).map(|s| format!("x_{s}")));
    h.extend((1..=n).map(|s| format!("h_{s}")));
    h.extend(["basal_area_m2", "cash_flow_eur", "discounted_cash_flow_eur"].map(String::from));
    h
}

/// One row per state x_0..x_K; the final row carries no harvest.
pub fn export_trajectory(model: &StandModel, traj: &Trajectory, path: &Path) -> Result<()> {
    let n = model.n_classes();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trajectory_header(n))?;
    let econ = model.econ();
    let zero = (false, HarvestVector::zeros(n));
    for (t, x) in traj.states.iter().enumerate() {
        let (delta, h) = traj.harvests.get(t).unwrap_or(&zero);
        let cash = model.stage_cash_flow(h, *delta)?;
        let mut rec = vec![
            t.to_string(),
            (t as u32 * econ.delta_years).to_string(),
            (*delta as u8).to_string(),
        ];
        rec.extend(x.0.iter().map(|v| v.to_string()));
        rec.extend(h.0.iter().map(|v| v.to_string()));
        rec.push(model.total_basal_area(x)?.to_string());
        rec.push(cash.to_string());
        rec.push((cash * econ.stage_discount(t as f64)).to_string());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back the harvest decisions and states written by [`export_trajectory`].
pub fn import_trajectory(path: &Path, n_classes: usize) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != trajectory_header(n_classes) {
        return Err(ForestError::Io(format!("{}: unexpected trajectory header", path.display())));
    }
    let mut states = Vec::new();
    let mut harvests = Vec::new();
    let parse = |s: &str| s.parse::<f64>().map_err(|e| ForestError::Io(format!("bad number {s:?}: {e}")));
    for rec in r.records() {
        let rec = rec?;
        let delta = &rec[2] == "1";
        let x = (3..3 + n_classes).map(|i| parse(&rec[i])).collect::<Result<Vec<_>>>()?;
        let h = (3 + n_classes..3 + 2 * n_classes).map(|i| parse(&rec[i])).collect::<Result<Vec<_>>>()?;
        states.push(StandState(x));
        harvests.push((delta, HarvestVector(h)));
    }
    harvests.pop();
    Ok(Trajectory { states, harvests })
}

/// Serializes rows with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Record of one CLI or driver invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub jobs: usize,
    pub package: String,
    pub version: String,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ModelConfig, seed: u64, jobs: usize) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash: cfg.hash_hex(),
            seed,
            jobs,
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            wall_seconds: 0.0,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| ForestError::Io(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
