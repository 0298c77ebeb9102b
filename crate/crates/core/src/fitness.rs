//! Fitness of a fixed harvest schedule: the best net present value reachable
//! when the harvest decisions are given and only harvest intensities vary.
//!
//! The finite surrogate values the transition stages directly and the first
//! cycle as a geometric series, subject to the stand returning to its
//! cycle-start state after one cycle. Controls are harvest fractions at the
//! harvesting stages; the cycle-closure equalities are enforced by an
//! augmented Lagrangian around the projected quasi-Newton solver, using the
//! reverse-mode gradient of the recursion.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{HarvestVector, StandModel, StandState, HAUL_SMOOTHING};
use crate::error::{ForestError, Result};
use crate::rollout::Rollout;
use crate::schedule::ScheduleGenotype;
use crate::solver::{AugLagOptions, AugLagResult, AugmentedLagrangian, ConstrainedProblem};

/// Settings of the level-2 optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Independent random starts per evaluation.
    pub multistart: usize,
    pub constraint_tol: f64,
    pub stationarity_tol: f64,
    /// Inner quasi-Newton iterations per multiplier update.
    pub max_iterations: usize,
    pub max_outer: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub smoothing_eps: f64,
    /// Classes up to this one (1-based) are left unharvested in random starts.
    pub harvest_cutoff: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            multistart: 3,
            constraint_tol: 1e-6,
            stationarity_tol: 1e-6,
            max_iterations: 3000,
            max_outer: 20,
            initial_penalty: 1.0,
            penalty_growth: 10.0,
            smoothing_eps: HAUL_SMOOTHING,
            harvest_cutoff: 5,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.multistart == 0 {
            out.push("nlp.multistart: must be >= 1".to_string());
        }
        for (name, v) in [
            ("constraint_tol", self.constraint_tol),
            ("stationarity_tol", self.stationarity_tol),
            ("initial_penalty", self.initial_penalty),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("nlp.{name}: must be > 0"));
            }
        }
        if !(self.penalty_growth > 1.0) {
            out.push("nlp.penalty_growth: must be > 1".to_string());
        }
        if !(self.smoothing_eps >= 0.0) {
            out.push("nlp.smoothing_eps: must be >= 0".to_string());
        }
        if self.max_iterations == 0 || self.max_outer == 0 {
            out.push("nlp.max_iterations/max_outer: must be >= 1".to_string());
        }
        out
    }

    pub(crate) fn auglag(&self) -> AugLagOptions {
        AugLagOptions {
            initial_penalty: self.initial_penalty,
            penalty_growth: self.penalty_growth,
            reduction: 0.25,
            max_outer: self.max_outer,
            max_inner: self.max_iterations,
            memory: 10,
            constraint_tol: self.constraint_tol,
            stationarity_tol: self.stationarity_tol,
        }
    }
}

/// Harvest fractions, one block of `n_classes` values per harvesting stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    pub stages: Vec<usize>,
    pub n_classes: usize,
    pub values: Vec<f64>,
}

impl ControlVector {
    pub fn zeros(g: &ScheduleGenotype, n_classes: usize) -> Self {
        let stages = harvest_stages(g);
        let values = vec![0.0; stages.len() * n_classes];
        ControlVector { stages, n_classes, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_classes..(k + 1) * self.n_classes]
    }
}

pub(crate) fn harvest_stages(g: &ScheduleGenotype) -> Vec<usize> {
    g.decisions().iter().enumerate().filter(|(_, d)| **d).map(|(t, _)| t).collect()
}

/// Stage weights of the finite surrogate: β^{tΔ} on the transition and
/// β^{tΔ}/(1 − β^{sΔ}) on the first cycle.
pub fn stage_weights(model: &StandModel, g: &ScheduleGenotype) -> Vec<f64> {
    let h = g.horizon();
    let econ = model.econ();
    let mult = econ.cycle_multiplier(h.cycle_len() as f64);
    (0..h.t1)
        .map(|t| {
            let w = econ.stage_discount(t as f64);
            if t < h.t0 { w } else { w * mult }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    Failed,
}

/// Result of one fitness evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessResult {
    /// Objective value (€/ha).
    pub npv: f64,
    pub controls: ControlVector,
    pub decisions: Vec<bool>,
    /// x_0..x_{t1}
    pub trajectory: Vec<StandState>,
    /// h_0..h_{t1−1}
    pub harvests: Vec<HarvestVector>,
    /// c_0..c_{t1−1} (€), smoothed hauling term
    pub cash_flows: Vec<f64>,
    /// max-norm of x_{t1} − x_{t0}
    pub steady_residual: f64,
    pub stationarity: f64,
    pub status: SolverStatus,
    pub restarts_used: usize,
    /// Objective of every start that converged, in start order (None otherwise).
    pub start_values: Vec<Option<f64>>,
    pub transition_len: usize,
}

impl FitnessResult {
    pub fn converged(&self) -> bool {
        self.status == SolverStatus::Converged
    }

    /// Value used for ranking: failed evaluations never beat converged ones.
    pub fn fitness(&self) -> f64 {
        if self.converged() { self.npv } else { f64::NEG_INFINITY }
    }

    pub fn t0(&self) -> usize {
        self.transition_len
    }

    pub fn t1(&self) -> usize {
        self.decisions.len()
    }
}

/// Finite-horizon objective at the given controls; also returns the rollout.
/// Does not check cycle closure.
pub fn npv_finite(
    model: &StandModel,
    x0: &StandState,
    g: &ScheduleGenotype,
    u: &ControlVector,
) -> Result<(f64, Rollout)> {
    g.check_evaluable()?;
    check_controls(model, x0, g, u)?;
    let mut p = FitnessProblem::new(model, x0, g, HAUL_SMOOTHING)?;
    let npv = p.npv(&u.values);
    Ok((npv, p.rollout))
}

/// d(objective)/d(controls) by reverse-mode differentiation of the recursion.
pub fn gradient(
    model: &StandModel,
    x0: &StandState,
    g: &ScheduleGenotype,
    u: &ControlVector,
) -> Result<Vec<f64>> {
    g.check_evaluable()?;
    check_controls(model, x0, g, u)?;
    let mut p = FitnessProblem::new(model, x0, g, HAUL_SMOOTHING)?;
    let mut eq = vec![0.0; p.n_eq()];
    p.evaluate(&u.values, &mut eq, &mut []);
    let mut grad = vec![0.0; u.len()];
    p.weighted_gradient(&vec![0.0; eq.len()], &[], &mut grad);
    grad.iter_mut().for_each(|v| *v = -*v);
    Ok(grad)
}

fn check_controls(
    model: &StandModel,
    x0: &StandState,
    g: &ScheduleGenotype,
    u: &ControlVector,
) -> Result<()> {
    if x0.len() != model.n_classes() {
        return Err(ForestError::Config("initial state length differs from class count".into()));
    }
    x0.validate()?;
    if u.n_classes != model.n_classes() || u.stages != harvest_stages(g) {
        return Err(ForestError::Argument("control layout does not match the schedule".into()));
    }
    if u.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(ForestError::Argument("harvest fractions must lie in [0, 1]".into()));
    }
    Ok(())
}

/// x_{t1} − x_{t0} componentwise.
pub fn steady_residual(trajectory: &[StandState], t0: usize, t1: usize) -> Result<Vec<f64>> {
    if t1 >= trajectory.len() || t0 > t1 {
        return Err(ForestError::Argument(format!(
            "trajectory of length {} does not cover stages {t0}..={t1}",
            trajectory.len()
        )));
    }
    Ok(trajectory[t1].0.iter().zip(&trajectory[t0].0).map(|(a, b)| a - b).collect())
}

/// Random starting controls: classes up to the cutoff are never cut; above it
/// the retained share shrinks by an independent U(0,1) factor per class, so
/// the harvested share grows with class. Converted to fractions of the stock
/// available at each harvest stage by a forward pass that ignores cycle closure.
pub fn random_initial_controls(
    model: &StandModel,
    x0: &StandState,
    g: &ScheduleGenotype,
    seed: u64,
    cutoff: usize,
) -> Result<ControlVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_controls_with(model, x0, g, cutoff, &mut rng)
}

pub(crate) fn random_controls_with<R: Rng + ?Sized>(
    model: &StandModel,
    x0: &StandState,
    g: &ScheduleGenotype,
    cutoff: usize,
    rng: &mut R,
) -> Result<ControlVector> {
    let n = model.n_classes();
    let mut u = ControlVector::zeros(g, n);
    let t1 = g.horizon().t1;
    let mut x = x0.clone();
    let mut k = 0;
    let mut keep = vec![1.0; n];
    for t in 0..t1 {
        let sh = model.shares(&x)?;
        let delta = g.delta_at(t);
        if delta {
            // retained share η: 1 up to the cutoff, then multiplied by U(0,1) per class
            let mut eta = 1.0;
            for (s, k_s) in keep.iter_mut().enumerate() {
                if s >= cutoff {
                    eta *= rng.random::<f64>();
                }
                *k_s = eta;
            }
        }
        let mut next = vec![0.0; n];
        for s in 0..n {
            let inflow = if s == 0 { sh.ingrowth } else { sh.growth[s - 1] * x.0[s - 1] };
            let avail = inflow + (1.0 - sh.mortality[s] - sh.growth[s]) * x.0[s];
            let mut f = 0.0;
            if delta && avail > 0.0 {
                f = ((1.0 - keep[s]) * x.0[s] / avail).clamp(0.0, 1.0);
                u.values[k * n + s] = f;
            }
            next[s] = (1.0 - f) * avail;
        }
        if delta {
            k += 1;
        }
        x = StandState(next);
    }
    Ok(u)
}

/// The constrained program for one genotype, in minimization form.
pub(crate) struct FitnessProblem<'a> {
    model: &'a StandModel,
    x0: Vec<f64>,
    t0: usize,
    t1: usize,
    stages: Vec<usize>,
    weights: Vec<f64>,
    delta: Vec<f64>,
    pub(crate) rollout: Rollout,
    dense: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    w_cash: Vec<f64>,
    w_state: Vec<f64>,
    g_dense: Vec<f64>,
    g_delta: Vec<f64>,
}

impl<'a> FitnessProblem<'a> {
    pub(crate) fn new(
        model: &'a StandModel,
        x0: &StandState,
        g: &ScheduleGenotype,
        eps: f64,
    ) -> Result<Self> {
        if x0.len() != model.n_classes() {
            return Err(ForestError::Config("initial state length differs from class count".into()));
        }
        let n = model.n_classes();
        let h = g.horizon();
        let stages = harvest_stages(g);
        let dim = stages.len() * n;
        let weights = stage_weights(model, g);
        let delta = g.decisions().iter().map(|d| if *d { 1.0 } else { 0.0 }).collect();
        Ok(FitnessProblem {
            model,
            x0: x0.0.clone(),
            t0: h.t0,
            t1: h.t1,
            stages,
            w_cash: weights.iter().map(|w| -w).collect(),
            weights,
            delta,
            rollout: Rollout::new(n, h.t1, eps),
            dense: vec![0.0; h.t1 * n],
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
            w_state: vec![0.0; (h.t1 + 1) * n],
            g_dense: vec![0.0; h.t1 * n],
            g_delta: vec![0.0; h.t1],
        })
    }

    fn scatter(&mut self, u: &[f64]) {
        let n = self.model.n_classes();
        for (k, &t) in self.stages.iter().enumerate() {
            self.dense[t * n..(t + 1) * n].copy_from_slice(&u[k * n..(k + 1) * n]);
        }
    }

    pub(crate) fn npv(&mut self, u: &[f64]) -> f64 {
        self.scatter(u);
        self.rollout.forward(self.model, &self.x0, &self.delta, &self.dense);
        self.weights.iter().zip(&self.rollout.cash).map(|(w, c)| w * c).sum()
    }

    fn controls(&self, values: Vec<f64>) -> ControlVector {
        ControlVector { stages: self.stages.clone(), n_classes: self.model.n_classes(), values }
    }
}

impl ConstrainedProblem for FitnessProblem<'_> {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn n_eq(&self) -> usize {
        self.model.n_classes()
    }

    fn n_ineq(&self) -> usize {
        0
    }

    fn lower(&self) -> &[f64] {
        &self.lo
    }

    fn upper(&self) -> &[f64] {
        &self.hi
    }

    fn evaluate(&mut self, x: &[f64], eq: &mut [f64], _ineq: &mut [f64]) -> f64 {
        let npv = self.npv(x);
        let a = self.rollout.state(self.t1);
        let b = self.rollout.state(self.t0);
        for s in 0..eq.len() {
            eq[s] = a[s] - b[s];
        }
        -npv
    }

    fn weighted_gradient(&mut self, eq_w: &[f64], _ineq_w: &[f64], grad: &mut [f64]) {
        let n = self.model.n_classes();
        self.w_state.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..n {
            self.w_state[self.t1 * n + s] += eq_w[s];
            self.w_state[self.t0 * n + s] -= eq_w[s];
        }
        self.rollout.backward(
            self.model,
            &self.w_cash,
            &self.w_state,
            None,
            &mut self.g_dense,
            &mut self.g_delta,
        );
        for (k, &t) in self.stages.iter().enumerate() {
            grad[k * n..(k + 1) * n].copy_from_slice(&self.g_dense[t * n..(t + 1) * n]);
        }
    }

    fn constraint_scale(&self) -> f64 {
        self.rollout.state(self.t0).iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Seed of the k-th start derived from the base seed.
pub(crate) fn start_seed(seed: u64, k: usize) -> u64 {
    let mut z = seed ^ (k as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One local solve from the given start.
pub(crate) fn solve_from<'a>(
    model: &'a StandModel,
    x0: &StandState,
    g: &ScheduleGenotype,
    opts: &SolverOptions,
    start: &ControlVector,
) -> Result<(AugLagResult, FitnessProblem<'a>)> {
    let mut p = FitnessProblem::new(model, x0, g, opts.smoothing_eps)?;
    let al = AugmentedLagrangian::new(opts.auglag());
    let res = al.solve(&mut p, &start.values);
    // leave the rollout at the returned point
    let mut eq = vec![0.0; p.n_eq()];
    p.evaluate(&res.x, &mut eq, &mut []);
    Ok((res, p))
}

/// Maximizes the finite objective of `g` subject to cycle closure; best of
/// `opts.multistart` random starts.
pub fn evaluate_fitness(
    model: &StandModel,
    x0: &StandState,
    g: &ScheduleGenotype,
    opts: &SolverOptions,
) -> Result<FitnessResult> {
    g.check_evaluable()?;
    x0.validate()?;
    let mut best: Option<(bool, f64, f64, AugLagResult)> = None;
    let mut start_values = Vec::with_capacity(opts.multistart);
    for k in 0..opts.multistart.max(1) {
        let start = random_initial_controls(model, x0, g, start_seed(opts.seed, k), opts.harvest_cutoff)?;
        let (res, _) = solve_from(model, x0, g, opts, &start)?;
        let npv = -res.f;
        start_values.push(if res.converged { Some(npv) } else { None });
        let better = match &best {
            None => true,
            Some((conv, v, viol, _)) => match (res.converged, *conv) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => npv > *v,
                (false, false) => res.violation < *viol,
            },
        };
        if better {
            best = Some((res.converged, npv, res.violation, res));
        }
    }
    let (converged, _, _, res) = best.expect("at least one start");
    build_result(model, x0, g, &res.x, converged, res.stationarity, opts.multistart.max(1), start_values)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn build_result(
    model: &StandModel,
    x0: &StandState,
    g: &ScheduleGenotype,
    values: &[f64],
    converged: bool,
    stationarity: f64,
    restarts_used: usize,
    start_values: Vec<Option<f64>>,
) -> Result<FitnessResult> {
    let mut p = FitnessProblem::new(model, x0, g, HAUL_SMOOTHING)?;
    let npv = p.npv(values);
    let h = g.horizon();
    let trajectory: Vec<StandState> =
        (0..=h.t1).map(|t| StandState(p.rollout.state(t).to_vec())).collect();
    let harvests = (0..h.t1).map(|t| HarvestVector(p.rollout.harvest(t).to_vec())).collect();
    let cash_flows = (0..h.t1).map(|t| p.rollout.cash_flow(t)).collect();
    let residual = steady_residual(&trajectory, h.t0, h.t1)?;
    let steady_residual = residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(FitnessResult {
        npv,
        controls: p.controls(values.to_vec()),
        decisions: g.decisions(),
        trajectory,
        harvests,
        cash_flows,
        steady_residual,
        stationarity,
        status: if converged { SolverStatus::Converged } else { SolverStatus::Failed },
        restarts_used,
        start_values,
        transition_len: h.t0,
    })
}

/// Everything needed to score genotypes against one configuration.
#[derive(Clone, Copy)]
pub struct Evaluator<'a> {
    pub model: &'a StandModel,
    pub x0: &'a StandState,
    pub opts: SolverOptions,
    pub cache: &'a FitnessCache,
    pub config_hash: u64,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        model: &'a StandModel,
        x0: &'a StandState,
        opts: SolverOptions,
        cache: &'a FitnessCache,
        config_hash: u64,
    ) -> Self {
        Evaluator { model, x0, opts, cache, config_hash }
    }

    pub fn evaluate(&self, g: &ScheduleGenotype) -> Result<Arc<FitnessResult>> {
        self.cache.evaluate(self.model, self.x0, g, &self.opts, self.config_hash)
    }

    /// Solver calls so far (cache misses).
    pub fn calls(&self) -> usize {
        self.cache.misses()
    }

    pub fn is_cached(&self, g: &ScheduleGenotype) -> bool {
        self.cache.get(&g.canonical_key(), self.config_hash).is_some()
    }
}

/// Memo of fitness results keyed by (genotype key, configuration hash).
/// Only misses count as solver calls.
#[derive(Debug, Default)]
pub struct FitnessCache {
    map: Mutex<HashMap<(String, u64), Arc<FitnessResult>>>,
    misses: AtomicUsize,
    hits: AtomicUsize,
    disabled: bool,
}

impl FitnessCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// A cache that never stores anything; every lookup is a miss.
    pub fn disabled() -> Self {
        FitnessCache { disabled: true, ..Self::default() }
    }

    pub fn is_disabled(&self) -> bool {
        self.disabled
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str, config_hash: u64) -> Option<Arc<FitnessResult>> {
        if self.disabled {
            return None;
        }
        self.map.lock().expect("cache lock").get(&(key.to_string(), config_hash)).cloned()
    }

    /// Returns the cached result or runs `eval` and stores it.
    pub fn get_or_insert_with<F>(&self, key: &str, config_hash: u64, eval: F) -> Result<Arc<FitnessResult>>
    where
        F: FnOnce() -> Result<FitnessResult>,
    {
        if let Some(hit) = self.get(key, config_hash) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let res = Arc::new(eval()?);
        if !self.disabled {
            self.map
                .lock()
                .expect("cache lock")
                .insert((key.to_string(), config_hash), Arc::clone(&res));
        }
        Ok(res)
    }

    /// Cached [`evaluate_fitness`].
    pub fn evaluate(
        &self,
        model: &StandModel,
        x0: &StandState,
        g: &ScheduleGenotype,
        opts: &SolverOptions,
        config_hash: u64,
    ) -> Result<Arc<FitnessResult>> {
        self.get_or_insert_with(&g.canonical_key(), config_hash, || evaluate_fitness(model, x0, g, opts))
    }
}

#[cfg(test)]
impl FitnessResult {
    /// Minimal result carrying only an objective value.
    pub(crate) fn synthetic(g: &ScheduleGenotype, npv: f64) -> Self {
        FitnessResult {
            npv,
            controls: ControlVector::zeros(g, 0),
            decisions: g.decisions(),
            trajectory: Vec::new(),
            harvests: Vec::new(),
            cash_flows: Vec::new(),
            steady_residual: 0.0,
            stationarity: 0.0,
            status: SolverStatus::Converged,
            restarts_used: 1,
            start_values: vec![Some(npv)],
            transition_len: g.transition.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{INITIAL_X1, INITIAL_X3};

    fn model() -> StandModel {
        StandModel::base_case()
    }

    fn g(s: &str) -> ScheduleGenotype {
        s.parse().unwrap()
    }

    fn fd_gradient(m: &StandModel, x0: &StandState, g: &ScheduleGenotype, u: &ControlVector) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for i in 0..u.len() {
            let h = 1e-6 * u.values[i].abs().max(1e-3);
            let mut up = u.clone();
            let mut dn = u.clone();
            up.values[i] = (u.values[i] + h).min(1.0);
            dn.values[i] = (u.values[i] - h).max(0.0);
            let fu = npv_finite(m, x0, g, &up).unwrap().0;
            let fd = npv_finite(m, x0, g, &dn).unwrap().0;
            out[i] = (fu - fd) / (up.values[i] - dn.values[i]);
        }
        out
    }

    #[test]
    fn adjoint_matches_central_differences() {
        let m = model();
        let x0 = StandState(INITIAL_X3.to_vec());
        for (i, key) in ["0100100100|010", "1000100100|010010", "0010000000|1"].iter().enumerate() {
            let gg = g(key);
            let mut u = random_initial_controls(&m, &x0, &gg, 11 + i as u64, 5).unwrap();
            // move off the bounds so central differences are two-sided
            u.values.iter_mut().for_each(|v| *v = 0.05 + 0.9 * *v);
            let ad = gradient(&m, &x0, &gg, &u).unwrap();
            let fd = fd_gradient(&m, &x0, &gg, &u);
            let scale = ad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (a, b) in ad.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * scale.max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn npv_zero_harvest_single_stage_is_fixed_cost_only() {
        // harvesting nothing at a harvest stage still pays Cf and δ hauling
        let m = model();
        let x0 = StandState(INITIAL_X1.to_vec());
        let gg = g("|1");
        let u = ControlVector::zeros(&gg, 12);
        let (v, _) = npv_finite(&m, &x0, &gg, &u).unwrap();
        let econ = m.econ();
        let expected = -(econ.cf + 14.83 * econ.c2) / (1.0 - econ.beta().powi(5));
        assert!((v - expected).abs() < 1e-9 * expected.abs());
    }

    #[test]
    fn random_controls_leave_small_classes() {
        let m = model();
        let x0 = StandState(INITIAL_X3.to_vec());
        let gg = g("0100100100|010");
        let u = random_initial_controls(&m, &x0, &gg, 3, 5).unwrap();
        for k in 0..u.stages.len() {
            assert!(u.at(k)[..5].iter().all(|v| *v == 0.0));
            assert!(u.at(k).iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let again = random_initial_controls(&m, &x0, &gg, 3, 5).unwrap();
        assert_eq!(u, again);
    }

    #[test]
    fn fitness_meets_tolerances() {
        let m = model();
        let x0 = StandState(INITIAL_X3.to_vec());
        let gg = g("0100100100|010");
        let opts = SolverOptions::default();
        let r = evaluate_fitness(&m, &x0, &gg, &opts).unwrap();
        assert!(r.converged(), "{r:?}");
        let scale = r.trajectory[r.t0()].0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(r.steady_residual <= 1e-6 * (1.0 + scale));
        assert!(r.npv.is_finite());
    }

    #[test]
    fn empty_cycle_is_rejected() {
        let m = model();
        let x0 = StandState(INITIAL_X1.to_vec());
        assert!(evaluate_fitness(&m, &x0, &g("0101|000"), &SolverOptions::default()).is_err());
    }

    #[test]
    fn cache_counts_misses_only() {
        let m = model();
        let x0 = StandState(INITIAL_X3.to_vec());
        let gg = g("0100100100|010");
        let opts = SolverOptions { multistart: 1, ..SolverOptions::default() };
        let cache = FitnessCache::new();
        let a = cache.evaluate(&m, &x0, &gg, &opts, 7).unwrap();
        let b = cache.evaluate(&m, &x0, &gg, &opts, 7).unwrap();
        assert_eq!(a.npv, b.npv);
        assert_eq!((cache.misses(), cache.hits()), (1, 1));
        cache.evaluate(&m, &x0, &gg, &opts, 8).unwrap();
        assert_eq!(cache.misses(), 2);
        let off = FitnessCache::disabled();
        off.evaluate(&m, &x0, &gg, &opts, 7).unwrap();
        off.evaluate(&m, &x0, &gg, &opts, 7).unwrap();
        assert_eq!(off.misses(), 2);
    }
}
