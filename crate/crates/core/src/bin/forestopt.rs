use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use forestopt::config::{load_config, named_initial_state, ModelConfig};
use forestopt::error::{ForestError, Result};
use forestopt::experiments::{
    cost_interest_grid, enumerate_exhaustive, export_trajectory, reference_states, run_bnb_for,
    run_comparison, run_ga_for, run_init_study, run_sensitivity, site_grid, steady_state_summary,
    study_schedules, study_states, write_csv, InitStudyOptions, RunManifest, SteadyStateSummary,
    Trajectory,
};
use forestopt::fitness::{Evaluator, FitnessCache, FitnessResult};
use forestopt::mip::BnbLimits;
use forestopt::schedule::ScheduleGenotype;

#[derive(Parser)]
#[command(name = "forestopt", version, about = "Harvest schedule optimization for uneven-aged stands")]
struct Cli {
    /// JSON configuration; defaults give the base case
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// overrides the GA and NLP seeds
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct StateArg {
    /// built-in initial state (x1, x2, x3); defaults to the config's
    #[arg(long)]
    state: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Unharvested projection
    Simulate {
        #[arg(long, default_value_t = 20)]
        stages: usize,
        #[command(flatten)]
        state: StateArg,
    },
    /// Optimal NPV of one schedule
    Evaluate {
        #[arg(long)]
        schedule: String,
        #[command(flatten)]
        state: StateArg,
    },
    Optimize {
        #[command(subcommand)]
        method: Method,
    },
    /// Score every schedule within the configured bounds
    Enumerate {
        #[command(flatten)]
        state: StateArg,
    },
    /// Steady-state sweep over fixed cost, interest rate and site index
    Sensitivity {
        /// cost (Cf × r), site, or all
        #[arg(long, default_value = "all")]
        grid: String,
    },
    /// Single-start robustness of the NLP solver
    InitStudy {
        /// 1000 repetitions instead of 100
        #[arg(long)]
        full: bool,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// GA versus branch-and-bound for x1, x2, x3
    Compare {
        #[command(flatten)]
        limits: LimitArgs,
    },
}

#[derive(Subcommand)]
enum Method {
    Ga {
        #[command(flatten)]
        state: StateArg,
    },
    Bnb {
        #[command(flatten)]
        state: StateArg,
        #[command(flatten)]
        limits: LimitArgs,
    },
}

#[derive(Args, Clone, Copy)]
struct LimitArgs {
    #[arg(long, default_value_t = 100_000)]
    max_nodes: usize,
    #[arg(long)]
    max_calls: Option<usize>,
    #[arg(long)]
    max_seconds: Option<f64>,
}

impl LimitArgs {
    fn limits(self) -> BnbLimits {
        BnbLimits {
            max_active_nodes: self.max_nodes,
            max_nlp_calls: self.max_calls,
            max_seconds: self.max_seconds,
            ..BnbLimits::default()
        }
    }
}

struct Run {
    cfg: ModelConfig,
    out: PathBuf,
    jobs: usize,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    fn file(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn cfg_with(&self, state: &StateArg) -> Result<ModelConfig> {
        let mut cfg = self.cfg.clone();
        if let Some(name) = &state.state {
            cfg.initial_state = named_initial_state(name)
                .ok_or_else(|| ForestError::Argument(format!("--state: unknown state {name:?}")))?;
        }
        Ok(cfg)
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        let path = self.out.join(format!("{}.manifest.json", self.manifest.command.replace(' ', "_")));
        self.manifest.write(&path)
    }
}

fn write_result(run: &mut Run, cfg: &ModelConfig, r: &FitnessResult) -> Result<Option<SteadyStateSummary>> {
    let model = cfg.model()?;
    let path = run.file("trajectory.csv");
    export_trajectory(&model, &Trajectory::from_result(r), &path)?;
    if !r.converged() {
        return Ok(None);
    }
    let s = steady_state_summary(&model, r)?;
    let path = run.file("summary.csv");
    write_csv(&path, std::slice::from_ref(&s))?;
    Ok(Some(s))
}

fn print_result(key: &str, r: &FitnessResult) {
    println!("schedule {key}");
    println!("npv {:.3} k€ ({:?})", r.npv / 1000.0, r.status);
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => ModelConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.ga.seed = seed;
        cfg.nlp.seed = seed;
    }
    if cli.jobs == 0 {
        return Err(ForestError::Argument("--jobs must be >= 1".into()));
    }
    std::fs::create_dir_all(&cli.out)?;
    let command = match &cli.command {
        Command::Simulate { .. } => "simulate",
        Command::Evaluate { .. } => "evaluate",
        Command::Optimize { method: Method::Ga { .. } } => "optimize ga",
        Command::Optimize { method: Method::Bnb { .. } } => "optimize bnb",
        Command::Enumerate { .. } => "enumerate",
        Command::Sensitivity { .. } => "sensitivity",
        Command::InitStudy { .. } => "init-study",
        Command::Compare { .. } => "compare",
    };
    let manifest = RunManifest::new(command, &cfg, cfg.ga.seed, cli.jobs);
    let mut run = Run { cfg, out: cli.out.clone(), jobs: cli.jobs, manifest, started: Instant::now() };

    match cli.command {
        Command::Simulate { stages, state } => {
            let cfg = run.cfg_with(&state)?;
            let model = cfg.model()?;
            let traj = Trajectory::unharvested(&model, &cfg.initial_state, stages)?;
            let path = run.file("trajectory.csv");
            export_trajectory(&model, &traj, &path)?;
            let last = traj.states.last().expect("at least x0");
            println!("trees after {stages} stages: {:.1}", last.total_trees());
        }
        Command::Evaluate { schedule, state } => {
            let cfg = run.cfg_with(&state)?;
            let g: ScheduleGenotype = schedule.parse()?;
            let model = cfg.model()?;
            let cache = FitnessCache::new();
            let eval = Evaluator::new(&model, &cfg.initial_state, cfg.nlp, &cache, cfg.fitness_hash());
            let r = eval.evaluate(&g)?;
            print_result(&g.canonical_key(), &r);
            write_result(&mut run, &cfg, &r)?;
        }
        Command::Optimize { method: Method::Ga { state } } => {
            let cfg = run.cfg_with(&state)?;
            let (out, _) = run_ga_for(&cfg, &cfg.initial_state, run.jobs)?;
            print_result(&out.best.genotype.canonical_key(), &out.best.result);
            println!("termination {} after {} calls, {} generations", out.termination, out.nlp_calls, out.generations);
            let path = run.file("ga_log.csv");
            write_csv(&path, &out.log)?;
            write_result(&mut run, &cfg, &out.best.result)?;
        }
        Command::Optimize { method: Method::Bnb { state, limits } } => {
            let cfg = run.cfg_with(&state)?;
            let out = run_bnb_for(&cfg, &cfg.initial_state, &limits.limits())?;
            println!("termination {} after {} nodes, {} calls", out.termination, out.nodes, out.nlp_calls);
            let path = run.file("bnb_log.csv");
            write_csv(&path, &out.log)?;
            if let Some((g, r)) = &out.best {
                print_result(&g.canonical_key(), r);
                write_result(&mut run, &cfg, r)?;
            } else {
                println!("no incumbent");
            }
        }
        Command::Enumerate { state } => {
            let cfg = run.cfg_with(&state)?;
            let model = cfg.model()?;
            let cache = FitnessCache::new();
            let eval = Evaluator::new(&model, &cfg.initial_state, cfg.nlp, &cache, cfg.fitness_hash());
            let e = enumerate_exhaustive(&eval, &cfg.bounds, run.jobs)?;
            println!("{} schedules", e.rows.len());
            print_result(&e.best.0.canonical_key(), &e.best.1);
            let path = run.file("enumeration.csv");
            write_csv(&path, &e.rows)?;
        }
        Command::Sensitivity { grid } => {
            let cases = match grid.as_str() {
                "cost" => cost_interest_grid(),
                "site" => site_grid(),
                "all" => [cost_interest_grid(), site_grid()].concat(),
                other => return Err(ForestError::Argument(format!("--grid: unknown grid {other:?}"))),
            };
            let rows = run_sensitivity(&run.cfg, &cases, &reference_states(), run.jobs);
            for r in &rows {
                println!(
                    "Cf {:>5} r {:.2} S {:>4}: interval {:?} profit {:.0} €/yr{}",
                    r.cf, r.r, r.site_index, r.interval_years, r.profit_per_year_eur,
                    if r.error.is_empty() { String::new() } else { format!(" error: {}", r.error) }
                );
            }
            let path = run.file("sensitivity.csv");
            write_csv(&path, &rows)?;
        }
        Command::InitStudy { full, repetitions } => {
            let opts = InitStudyOptions {
                repetitions: repetitions.unwrap_or(if full { 1000 } else { 100 }),
                seed: run.cfg.nlp.seed,
                ..InitStudyOptions::default()
            };
            let rows = run_init_study(&run.cfg, &study_states(), &study_schedules(), &opts, run.jobs)?;
            for r in &rows {
                println!(
                    "{:<4} {}: best {:.3} k€ suboptimal {:.1}% trials {:.2}",
                    r.state, r.schedule, r.best_npv_keur, 100.0 * r.suboptimal_share, r.mean_trials
                );
            }
            let path = run.file("init_study.csv");
            write_csv(&path, &rows)?;
        }
        Command::Compare { limits } => {
            let rows = run_comparison(&run.cfg, &reference_states(), &limits.limits(), run.jobs)?;
            for r in &rows {
                println!(
                    "{} {}: {:.4} k€ {:.0} s {} calls {}",
                    r.state, r.method, r.best_npv_keur, r.wall_seconds, r.nlp_calls, r.termination
                );
            }
            let path = run.file("comparison.csv");
            write_csv(&path, &rows)?;
        }
    }
    let out: &Path = &run.out;
    println!("outputs in {}", out.display());
    run.finish()
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
