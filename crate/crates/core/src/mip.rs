//! Exact formulation with endogenous transition end and cycle length, solved
//! by branch-and-bound over interval partitions of (t0, s) and over harvest
//! indicators.
//!
//! Indicators u_t (t = t0) and r_t (t = t1) select the cycle; the cycle-start
//! state x^c is pinned by big-M constraints at both ends, and stage cash flows
//! are split into a transition part F⁰ and a cycle part F¹ = F − F⁰ through
//! big-M bounds. Node relaxations relax in-range u, r and free δ to [0, 1] and
//! are solved in full space with the same augmented-Lagrangian engine as the
//! fitness evaluation. Node bounds are local optima, so pruning is heuristic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dynamics::{StandModel, StandState};
use crate::error::{ForestError, Result};
use crate::evolutionary::Termination;
use crate::fitness::{random_controls_with, start_seed, Evaluator, FitnessResult, SolverOptions};
use crate::rollout::Rollout;
use crate::schedule::{ScheduleBounds, ScheduleGenotype};
use crate::solver::{AugmentedLagrangian, ConstrainedProblem};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const INTEGRALITY_TOL: f64 = 1e-4;

/// Horizon and big-M data of the formulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipModel {
    pub bounds: ScheduleBounds,
    /// T = t_max + s_max
    pub horizon: usize,
    /// componentwise tree-count bound x̄
    pub x_bar: Vec<f64>,
    /// cash-flow bound F̄ (€)
    pub f_bar: f64,
}

/// Big-M bounds: x̄ is twice the componentwise maximum over 100 unharvested
/// stages from `x0`; F̄ is twice the revenue of clear-cutting x̄ at saw price.
pub fn build_mip(model: &StandModel, x0: &StandState, bounds: &ScheduleBounds) -> Result<MipModel> {
    let problems = bounds.violations();
    if !problems.is_empty() {
        return Err(ForestError::Config(problems.join("; ")));
    }
    if bounds.t_min + bounds.s_min > bounds.horizon() {
        return Err(ForestError::Config("bounds: empty schedule space".into()));
    }
    let n = model.n_classes();
    let zero = crate::dynamics::HarvestVector::zeros(n);
    let steps: Vec<_> = (0..100).map(|_| (false, zero.clone())).collect();
    let traj = model.simulate(x0, &steps)?;
    let mut x_bar = vec![0.0f64; n];
    for x in &traj {
        for (m, v) in x_bar.iter_mut().zip(&x.0) {
            *m = m.max(*v);
        }
    }
    for m in x_bar.iter_mut() {
        *m = (2.0 * *m).max(1.0);
    }
    let p2 = model.econ().p2;
    let f_bar = 2.0
        * x_bar
            .iter()
            .zip(model.table().classes())
            .map(|(x, c)| x * c.total_volume() * p2)
            .sum::<f64>();
    Ok(MipModel { bounds: *bounds, horizon: bounds.horizon(), x_bar, f_bar })
}

/// Indicator vectors u, r over stages 0..=T for a given (t0, t1).
pub fn encode_indicators(t0: usize, t1: usize, horizon: usize) -> (Vec<u8>, Vec<u8>) {
    let mut u = vec![0; horizon + 1];
    let mut r = vec![0; horizon + 1];
    if t0 <= horizon {
        u[t0] = 1;
    }
    if t1 <= horizon {
        r[t1] = 1;
    }
    (u, r)
}

/// A subproblem: ranges for t0 and s plus a partial harvest assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub t_range: (usize, usize),
    pub s_range: (usize, usize),
    /// δ_t for t < T; None = free
    pub delta: Vec<Option<bool>>,
    pub depth: usize,
    /// relaxation value (€); +∞ before solving or when unresolved
    pub value: f64,
}

impl BnbNode {
    pub fn root(mip: &MipModel) -> Self {
        BnbNode {
            id: 0,
            parent: None,
            t_range: (mip.bounds.t_min, mip.bounds.t_max),
            s_range: (mip.bounds.s_min, mip.bounds.s_max),
            delta: vec![None; mip.horizon],
            depth: 0,
            value: f64::INFINITY,
        }
    }

    /// Range of t1 = t0 + s.
    pub fn r_range(&self) -> (usize, usize) {
        (self.t_range.0 + self.s_range.0, self.t_range.1 + self.s_range.1)
    }

    pub fn is_singleton(&self) -> bool {
        self.t_range.0 == self.t_range.1 && self.s_range.0 == self.s_range.1
    }

    /// δ_t is forced to 0 once no cycle end can follow it.
    fn forced_zero(&self, t: usize) -> bool {
        t >= self.r_range().1
    }

    /// Some fixed harvest can never precede a cycle end.
    fn contradicts(&self) -> bool {
        self.delta.iter().enumerate().any(|(t, d)| *d == Some(true) && self.forced_zero(t))
    }

    /// The genotype of a singleton node with every relevant δ fixed.
    pub fn leaf_genotype(&self) -> Option<ScheduleGenotype> {
        if !self.is_singleton() {
            return None;
        }
        let t0 = self.t_range.0;
        let t1 = t0 + self.s_range.0;
        let bits: Option<Vec<bool>> = self.delta[..t1].iter().copied().collect();
        let bits = bits?;
        Some(ScheduleGenotype::new(bits[..t0].to_vec(), bits[t0..].to_vec()))
    }

    /// Singleton node fixing the decisions of `g`.
    pub fn for_genotype(mip: &MipModel, g: &ScheduleGenotype) -> Result<Self> {
        let h = g.horizon();
        if h.t1 > mip.horizon {
            return Err(ForestError::Argument("genotype exceeds the formulation horizon".into()));
        }
        let mut delta = vec![None; mip.horizon];
        for (t, d) in g.decisions().into_iter().enumerate() {
            delta[t] = Some(d);
        }
        for d in delta.iter_mut().skip(h.t1) {
            *d = Some(false);
        }
        Ok(BnbNode {
            id: 0,
            parent: None,
            t_range: (h.t0, h.t0),
            s_range: (h.cycle_len(), h.cycle_len()),
            delta,
            depth: 0,
            value: f64::INFINITY,
        })
    }
}

/// Relaxation outcome at a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationReport {
    /// objective (€), maximized
    pub value: f64,
    pub converged: bool,
    pub violation: f64,
    /// u_t, r_t over 0..=T
    pub u: Vec<f64>,
    pub r: Vec<f64>,
    /// δ_t over 0..T
    pub delta: Vec<f64>,
    pub fractional_u: Vec<usize>,
    pub fractional_r: Vec<usize>,
    pub fractional_delta: Vec<usize>,
    pub attempts: usize,
}

fn is_fractional(v: f64) -> bool {
    v > INTEGRALITY_TOL && v < 1.0 - INTEGRALITY_TOL
}

/// Variable and constraint layout of one node's relaxation.
struct Relaxation<'a> {
    model: &'a StandModel,
    mip: &'a MipModel,
    x0: Vec<f64>,
    n: usize,
    big_t: usize,
    u_rng: (usize, usize),
    r_rng: (usize, usize),
    s_rng: (usize, usize),
    weights: Vec<f64>,
    ln_beta_delta: f64,
    frac: Vec<Option<usize>>,
    delta_var: Vec<Option<usize>>,
    delta_fixed: Vec<f64>,
    u_var: Option<usize>,
    r_var: Option<usize>,
    xc: usize,
    f0: usize,
    n_eq: usize,
    n_ineq: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    rollout: Rollout,
    dense: Vec<f64>,
    delta_dense: Vec<f64>,
    // gradient scratch
    w_cash: Vec<f64>,
    w_state: Vec<f64>,
    w_harvest: Vec<f64>,
    g_frac: Vec<f64>,
    g_delta: Vec<f64>,
    last_x: Vec<f64>,
}

impl<'a> Relaxation<'a> {
    fn new(model: &'a StandModel, mip: &'a MipModel, x0: &StandState, node: &BnbNode, eps: f64) -> Self {
        let n = model.n_classes();
        let big_t = mip.horizon;
        let u_rng = node.t_range;
        let r_rng = node.r_range();
        let econ = model.econ();
        let mut dim = 0;
        let mut frac = vec![None; big_t];
        let mut delta_var = vec![None; big_t];
        let mut delta_fixed = vec![0.0; big_t];
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for t in 0..big_t {
            let d = if node.forced_zero(t) { Some(false) } else { node.delta[t] };
            if d == Some(false) {
                continue;
            }
            frac[t] = Some(dim);
            dim += n;
            lo.extend(std::iter::repeat_n(0.0, n));
            hi.extend(std::iter::repeat_n(1.0, n));
            match d {
                Some(_) => delta_fixed[t] = 1.0,
                None => {
                    delta_var[t] = Some(dim);
                    dim += 1;
                    lo.push(0.0);
                    hi.push(1.0);
                }
            }
        }
        let mut block = |len: usize, lo: &mut Vec<f64>, hi: &mut Vec<f64>, l: f64| {
            let at = dim;
            dim += len;
            lo.extend(std::iter::repeat_n(l, len));
            hi.extend(std::iter::repeat_n(1.0, len));
            at
        };
        let u_var = (u_rng.1 > u_rng.0).then(|| block(u_rng.1 - u_rng.0 + 1, &mut lo, &mut hi, 0.0));
        let r_var = (r_rng.1 > r_rng.0).then(|| block(r_rng.1 - r_rng.0 + 1, &mut lo, &mut hi, 0.0));
        // x^c = x̄ ⊙ y with y ∈ [0, 1]
        let xc = block(n, &mut lo, &mut hi, 0.0);
        // F⁰_t = F̄ z_t with z_t ∈ [−1, 1] for t0 candidates still ahead
        let f0 = block(u_rng.1 - u_rng.0, &mut lo, &mut hi, -1.0);

        let n_eq = u_var.is_some() as usize + r_var.is_some() as usize;
        let mut p = Relaxation {
            model,
            mip,
            x0: x0.0.clone(),
            n,
            big_t,
            u_rng,
            r_rng,
            s_rng: node.s_range,
            weights: (0..big_t).map(|t| econ.stage_discount(t as f64)).collect(),
            ln_beta_delta: econ.beta().ln() * econ.delta_years as f64,
            frac,
            delta_var,
            delta_fixed,
            u_var,
            r_var,
            xc,
            f0,
            n_eq,
            n_ineq: 0,
            lo,
            hi,
            rollout: Rollout::new(n, big_t, eps),
            dense: vec![0.0; big_t * n],
            delta_dense: vec![0.0; big_t],
            w_cash: vec![0.0; big_t],
            w_state: vec![0.0; (big_t + 1) * n],
            w_harvest: vec![0.0; big_t * n],
            g_frac: vec![0.0; big_t * n],
            g_delta: vec![0.0; big_t],
            last_x: Vec::new(),
        };
        p.n_ineq = p.count_ineq();
        p
    }

    fn pin_stages(&self) -> Vec<usize> {
        let mut t: Vec<usize> = (self.u_rng.0..=self.u_rng.1).chain(self.r_rng.0..=self.r_rng.1).collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    fn indicator_vars(&self) -> bool {
        self.u_var.is_some() || self.r_var.is_some()
    }

    /// δ_t − Σ_{τ>t} r_τ ≤ 0 is needed where some r_τ with τ ≤ t may be positive.
    fn needs_cycle_end(&self, t: usize) -> bool {
        t >= self.r_rng.0 && (self.delta_var[t].is_some() || self.delta_fixed[t] > 0.0)
    }

    fn count_ineq(&self) -> usize {
        let mut k = 2 * self.n * self.pin_stages().len();
        k += self.delta_var.iter().flatten().count() * self.n;
        k += (0..self.big_t).filter(|t| self.needs_cycle_end(*t)).count();
        if self.indicator_vars() {
            k += 2;
        }
        k += 2 * (self.u_rng.1 - self.u_rng.0);
        k += 2 * (self.big_t - self.u_rng.0.min(self.big_t));
        k
    }

    fn u_at(&self, x: &[f64], t: usize) -> f64 {
        if t < self.u_rng.0 || t > self.u_rng.1 {
            0.0
        } else {
            self.u_var.map_or(1.0, |o| x[o + t - self.u_rng.0])
        }
    }

    fn r_at(&self, x: &[f64], t: usize) -> f64 {
        if t < self.r_rng.0 || t > self.r_rng.1 {
            0.0
        } else {
            self.r_var.map_or(1.0, |o| x[o + t - self.r_rng.0])
        }
    }

    fn delta_at(&self, x: &[f64], t: usize) -> f64 {
        self.delta_var[t].map_or(self.delta_fixed[t], |i| x[i])
    }

    fn f0_at(&self, x: &[f64], t: usize) -> f64 {
        if t < self.u_rng.0 {
            self.rollout.cash_flow(t)
        } else if t < self.u_rng.1 {
            self.mip.f_bar * x[self.f0 + t - self.u_rng.0]
        } else {
            0.0
        }
    }

    fn cycle_len(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for t in self.r_rng.0..=self.r_rng.1 {
            s += t as f64 * self.r_at(x, t);
        }
        for t in self.u_rng.0..=self.u_rng.1 {
            s -= t as f64 * self.u_at(x, t);
        }
        s
    }

    /// Cycle multiplier 1/(1 − β^{sΔ}) and its derivative, guarded near s = 0.
    fn multiplier(&self, s: f64) -> (f64, f64) {
        let se = s.max(0.5);
        let q = (self.ln_beta_delta * se).exp();
        let m = 1.0 / (1.0 - q);
        let dm = if s > 0.5 { m * m * q * self.ln_beta_delta } else { 0.0 };
        (m, dm)
    }

    fn forward(&mut self, x: &[f64]) {
        let n = self.n;
        for t in 0..self.big_t {
            self.delta_dense[t] = self.delta_at(x, t);
            match self.frac[t] {
                Some(o) => self.dense[t * n..(t + 1) * n].copy_from_slice(&x[o..o + n]),
                None => self.dense[t * n..(t + 1) * n].iter_mut().for_each(|v| *v = 0.0),
            }
        }
        self.rollout.forward(self.model, &self.x0, &self.delta_dense, &self.dense);
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let (m, _) = self.multiplier(self.cycle_len(x));
        let mut j = 0.0;
        for t in 0..self.big_t {
            let f = self.rollout.cash_flow(t);
            let f0 = self.f0_at(x, t);
            j += self.weights[t] * (f0 + m * (f - f0));
        }
        j
    }

    /// Relaxation from the controls of a given genotype (for cross-checks).
    fn start_point(&mut self, seed: u64, cutoff: usize) -> Result<Vec<f64>> {
        let n = self.n;
        let mut x = vec![0.0; self.lo.len()];
        let bits: Vec<bool> = (0..self.big_t).map(|t| self.frac[t].is_some()).collect();
        let pseudo = ScheduleGenotype::new(bits, Vec::new());
        let x0 = StandState(self.x0.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ctrl = random_controls_with(self.model, &x0, &pseudo, cutoff, &mut rng)?;
        for (k, &t) in ctrl.stages.iter().enumerate() {
            let o = self.frac[t].expect("harvest stage has fractions");
            x[o..o + n].copy_from_slice(ctrl.at(k));
            if let Some(i) = self.delta_var[t] {
                x[i] = 0.5;
            }
        }
        if let Some(o) = self.u_var {
            let len = self.u_rng.1 - self.u_rng.0 + 1;
            x[o..o + len].iter_mut().for_each(|v| *v = 1.0 / len as f64);
        }
        if let Some(o) = self.r_var {
            let len = self.r_rng.1 - self.r_rng.0 + 1;
            x[o..o + len].iter_mut().for_each(|v| *v = 1.0 / len as f64);
        }
        self.forward(&x);
        let stages: Vec<usize> = (self.u_rng.0..=self.u_rng.1).collect();
        for s in 0..n {
            let mean = stages.iter().map(|t| self.rollout.state(*t)[s]).sum::<f64>() / stages.len() as f64;
            x[self.xc + s] = (mean / self.mip.x_bar[s]).clamp(0.0, 1.0);
        }
        for t in self.u_rng.0..self.u_rng.1 {
            let ahead: f64 = (t + 1..=self.u_rng.1).map(|tau| self.u_at(&x, tau)).sum();
            x[self.f0 + t - self.u_rng.0] =
                (self.rollout.cash_flow(t) * ahead / self.mip.f_bar).clamp(-1.0, 1.0);
        }
        Ok(x)
    }
}

impl ConstrainedProblem for Relaxation<'_> {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn n_eq(&self) -> usize {
        self.n_eq
    }

    fn n_ineq(&self) -> usize {
        self.n_ineq
    }

    fn lower(&self) -> &[f64] {
        &self.lo
    }

    fn upper(&self) -> &[f64] {
        &self.hi
    }

    fn evaluate(&mut self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]) -> f64 {
        self.last_x.clear();
        self.last_x.extend_from_slice(x);
        self.forward(x);
        let n = self.n;
        let mut e = 0;
        if self.u_var.is_some() {
            eq[e] = (self.u_rng.0..=self.u_rng.1).map(|t| self.u_at(x, t)).sum::<f64>() - 1.0;
            e += 1;
        }
        if self.r_var.is_some() {
            eq[e] = (self.r_rng.0..=self.r_rng.1).map(|t| self.r_at(x, t)).sum::<f64>() - 1.0;
        }

        let mut k = 0;
        // cycle-state pinning
        for t in self.pin_stages() {
            let slack = 1.0 - self.u_at(x, t) - self.r_at(x, t);
            let xt = self.rollout.state(t);
            for s in 0..n {
                let d = xt[s] / self.mip.x_bar[s] - x[self.xc + s];
                ineq[k] = d - slack;
                ineq[k + 1] = -d - slack;
                k += 2;
            }
        }
        // harvest only with the indicator on
        for t in 0..self.big_t {
            if let Some(i) = self.delta_var[t] {
                let h = self.rollout.harvest(t);
                for s in 0..n {
                    ineq[k] = h[s] / self.mip.x_bar[s] - x[i];
                    k += 1;
                }
            }
        }
        // harvests only before the cycle end
        for t in 0..self.big_t {
            if self.needs_cycle_end(t) {
                let before: f64 = (self.r_rng.0..=t.min(self.r_rng.1)).map(|tau| self.r_at(x, tau)).sum();
                ineq[k] = self.delta_at(x, t) - (1.0 - before);
                k += 1;
            }
        }
        if self.indicator_vars() {
            let s = self.cycle_len(x);
            ineq[k] = self.s_rng.0 as f64 - s;
            ineq[k + 1] = s - self.s_rng.1 as f64;
            k += 2;
        }
        // transition share vanishes from t0 on
        for t in self.u_rng.0..self.u_rng.1 {
            let ahead: f64 = (t + 1..=self.u_rng.1).map(|tau| self.u_at(x, tau)).sum();
            let z = x[self.f0 + t - self.u_rng.0];
            ineq[k] = z - ahead;
            ineq[k + 1] = -z - ahead;
            k += 2;
        }
        // cycle share lives on [t0, t1)
        for t in self.u_rng.0..self.big_t {
            let inside = (self.u_rng.0..=t.min(self.u_rng.1)).map(|tau| self.u_at(x, tau)).sum::<f64>()
                - (self.r_rng.0..=t.min(self.r_rng.1)).map(|tau| self.r_at(x, tau)).sum::<f64>();
            let d = (self.rollout.cash_flow(t) - self.f0_at(x, t)) / self.mip.f_bar;
            ineq[k] = d - inside;
            ineq[k + 1] = -d - inside;
            k += 2;
        }
        debug_assert_eq!(k, self.n_ineq);
        -self.objective(x)
    }

    fn weighted_gradient(&mut self, eq_w: &[f64], ineq_w: &[f64], grad: &mut [f64]) {
        let n = self.n;
        let big_t = self.big_t;
        grad.iter_mut().for_each(|v| *v = 0.0);
        self.w_cash.iter_mut().for_each(|v| *v = 0.0);
        self.w_state.iter_mut().for_each(|v| *v = 0.0);
        self.w_harvest.iter_mut().for_each(|v| *v = 0.0);
        let mip = self.mip;
        let x_bar = &mip.x_bar;
        let f_bar = mip.f_bar;
        let x = std::mem::take(&mut self.last_x);
        let x = &x[..];

        // coefficient on s collects objective and bound terms
        let s = self.cycle_len(x);
        let (m, dm) = self.multiplier(s);
        let mut c_s = 0.0;
        let add_u = |grad: &mut [f64], t: usize, w: f64, me: &Self| {
            if let Some(o) = me.u_var {
                if t >= me.u_rng.0 && t <= me.u_rng.1 {
                    grad[o + t - me.u_rng.0] += w;
                }
            }
        };
        let add_r = |grad: &mut [f64], t: usize, w: f64, me: &Self| {
            if let Some(o) = me.r_var {
                if t >= me.r_rng.0 && t <= me.r_rng.1 {
                    grad[o + t - me.r_rng.0] += w;
                }
            }
        };

        // objective: minimize −Σ w_t (F⁰ + M (F − F⁰))
        for t in 0..big_t {
            let w = self.weights[t];
            if t < self.u_rng.0 {
                self.w_cash[t] -= w;
            } else {
                self.w_cash[t] -= w * m;
                let f1 = self.rollout.cash_flow(t) - self.f0_at(x, t);
                c_s -= w * dm * f1;
                if t < self.u_rng.1 {
                    grad[self.f0 + t - self.u_rng.0] -= w * (1.0 - m) * f_bar;
                }
            }
        }

        let mut e = 0;
        if self.u_var.is_some() {
            for t in self.u_rng.0..=self.u_rng.1 {
                add_u(grad, t, eq_w[e], self);
            }
            e += 1;
        }
        if self.r_var.is_some() {
            for t in self.r_rng.0..=self.r_rng.1 {
                add_r(grad, t, eq_w[e], self);
            }
        }

        let mut k = 0;
        for t in self.pin_stages() {
            let mut wt = 0.0;
            for s in 0..n {
                let (wp, wm) = (ineq_w[k], ineq_w[k + 1]);
                k += 2;
                self.w_state[t * n + s] += (wp - wm) / x_bar[s];
                grad[self.xc + s] += wm - wp;
                wt += wp + wm;
            }
            add_u(grad, t, wt, self);
            add_r(grad, t, wt, self);
        }
        for t in 0..big_t {
            if let Some(i) = self.delta_var[t] {
                for s in 0..n {
                    let w = ineq_w[k];
                    k += 1;
                    self.w_harvest[t * n + s] += w / x_bar[s];
                    grad[i] -= w;
                }
            }
        }
        for t in 0..big_t {
            if self.needs_cycle_end(t) {
                let w = ineq_w[k];
                k += 1;
                if let Some(i) = self.delta_var[t] {
                    grad[i] += w;
                }
                for tau in self.r_rng.0..=t.min(self.r_rng.1) {
                    add_r(grad, tau, w, self);
                }
            }
        }
        if self.indicator_vars() {
            c_s += ineq_w[k + 1] - ineq_w[k];
            k += 2;
        }
        for t in self.u_rng.0..self.u_rng.1 {
            let (wp, wm) = (ineq_w[k], ineq_w[k + 1]);
            k += 2;
            grad[self.f0 + t - self.u_rng.0] += wp - wm;
            for tau in t + 1..=self.u_rng.1 {
                add_u(grad, tau, -(wp + wm), self);
            }
        }
        for t in self.u_rng.0..big_t {
            let (wp, wm) = (ineq_w[k], ineq_w[k + 1]);
            k += 2;
            let wd = (wp - wm) / f_bar;
            self.w_cash[t] += wd;
            if t < self.u_rng.1 {
                grad[self.f0 + t - self.u_rng.0] -= wd * f_bar;
            }
            for tau in self.u_rng.0..=t.min(self.u_rng.1) {
                add_u(grad, tau, -(wp + wm), self);
            }
            for tau in self.r_rng.0..=t.min(self.r_rng.1) {
                add_r(grad, tau, wp + wm, self);
            }
        }
        debug_assert_eq!(k, self.n_ineq);

        // s = Σ t r_t − Σ t u_t
        for t in self.r_rng.0..=self.r_rng.1 {
            add_r(grad, t, c_s * t as f64, self);
        }
        for t in self.u_rng.0..=self.u_rng.1 {
            add_u(grad, t, -c_s * t as f64, self);
        }

        // F⁰_t = F_t before the earliest t0 candidate enters only through w_cash
        self.rollout.backward(
            self.model,
            &self.w_cash,
            &self.w_state,
            Some(&self.w_harvest),
            &mut self.g_frac,
            &mut self.g_delta,
        );
        for t in 0..big_t {
            if let Some(o) = self.frac[t] {
                for s in 0..n {
                    grad[o + s] += self.g_frac[t * n + s];
                }
            }
            if let Some(i) = self.delta_var[t] {
                grad[i] += self.g_delta[t];
            }
        }
        self.last_x = x.to_vec();
    }
}

fn solve_once(
    model: &StandModel,
    mip: &MipModel,
    x0: &StandState,
    node: &BnbNode,
    opts: &SolverOptions,
    seed: u64,
) -> Result<RelaxationReport> {
    let mut p = Relaxation::new(model, mip, x0, node, opts.smoothing_eps);
    let start = p.start_point(seed, opts.harvest_cutoff)?;
    let res = AugmentedLagrangian::new(opts.auglag()).solve(&mut p, &start);
    let xs = &res.x;
    let big_t = mip.horizon;
    let u: Vec<f64> = (0..=big_t).map(|t| p.u_at(xs, t)).collect();
    let r: Vec<f64> = (0..=big_t).map(|t| p.r_at(xs, t)).collect();
    let delta: Vec<f64> = (0..big_t).map(|t| p.delta_at(xs, t)).collect();
    let pick = |v: &[f64]| v.iter().enumerate().filter(|(_, x)| is_fractional(**x)).map(|(i, _)| i).collect();
    let fractional_delta =
        (0..big_t).filter(|t| p.delta_var[*t].is_some() && is_fractional(delta[*t])).collect();
    Ok(RelaxationReport {
        value: -res.f,
        converged: res.converged,
        violation: res.violation,
        fractional_u: pick(&u),
        fractional_r: pick(&r),
        fractional_delta,
        u,
        r,
        delta,
        attempts: 1,
    })
}

/// Solves the node relaxation from `multistart` starts and keeps the best
/// converged one. Odd starts drop the small-class cutoff so they harvest every
/// class. If no start converges, one more is tried.
pub fn solve_relaxation(
    model: &StandModel,
    mip: &MipModel,
    x0: &StandState,
    node: &BnbNode,
    opts: &SolverOptions,
) -> Result<RelaxationReport> {
    if node.t_range.0 > node.t_range.1 || node.s_range.0 > node.s_range.1 {
        return Err(ForestError::Argument("empty node range".into()));
    }
    if node.r_range().1 > mip.horizon {
        return Err(ForestError::Argument("node reaches past the formulation horizon".into()));
    }
    let base = opts.seed ^ (node.id as u64).wrapping_mul(0xA24B_AED4_963E_E407);
    let starts = opts.multistart.max(1);
    let mut best: Option<RelaxationReport> = None;
    let mut solves = 0;
    for k in 0..=starts {
        if k == starts && best.as_ref().is_some_and(|b| b.converged) {
            break;
        }
        solves += 1;
        let o = SolverOptions { harvest_cutoff: if k % 2 == 1 { 0 } else { opts.harvest_cutoff }, ..*opts };
        let rep = solve_once(model, mip, x0, node, &o, start_seed(base, k))?;
        let better = match &best {
            None => true,
            Some(b) => (rep.converged && !b.converged) || (rep.converged == b.converged && rep.value > b.value),
        };
        if better {
            best = Some(rep);
        }
    }
    let mut best = best.expect("at least one start");
    best.attempts = solves;
    Ok(best)
}

/// Full-space objective at the singleton node of `g` (no shortcut through
/// the reduced-space evaluator).
pub fn leaf_objective(
    model: &StandModel,
    mip: &MipModel,
    x0: &StandState,
    g: &ScheduleGenotype,
    opts: &SolverOptions,
) -> Result<RelaxationReport> {
    g.check_evaluable()?;
    let node = BnbNode::for_genotype(mip, g)?;
    let mut best: Option<RelaxationReport> = None;
    for k in 0..opts.multistart.max(1) {
        let rep = solve_once(model, mip, x0, &node, opts, start_seed(opts.seed, k))?;
        let better = match &best {
            None => true,
            Some(b) => (rep.converged && !b.converged) || (rep.converged == b.converged && rep.value > b.value),
        };
        if better {
            best = Some(rep);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Which rule produced the children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branching {
    SplitT,
    SplitS,
    FixDelta(usize),
    Integral,
}

fn halves((lo, hi): (usize, usize)) -> [(usize, usize); 2] {
    let mid = lo + (hi - lo) / 2;
    [(lo, mid), (mid + 1, hi)]
}

/// Children per the rule order: fractional u splits the t0 range, then
/// fractional r splits the s range, then a fractional δ is fixed both ways.
/// An integral relaxation with ranges left still splits them so that every
/// (t0, s) pair is reached.
pub fn branch(node: &BnbNode, report: &RelaxationReport) -> (Branching, Vec<BnbNode>) {
    let t_open = node.t_range.0 < node.t_range.1;
    let s_open = node.s_range.0 < node.s_range.1;
    let child = |t_range, s_range, delta: Vec<Option<bool>>| BnbNode {
        id: 0,
        parent: Some(node.id),
        t_range,
        s_range,
        delta,
        depth: node.depth + 1,
        value: report.value,
    };
    let split_t = || halves(node.t_range).map(|t| child(t, node.s_range, node.delta.clone())).to_vec();
    let split_s = || halves(node.s_range).map(|s| child(node.t_range, s, node.delta.clone())).to_vec();
    if t_open && !report.fractional_u.is_empty() {
        return (Branching::SplitT, split_t());
    }
    if s_open && !report.fractional_r.is_empty() {
        return (Branching::SplitS, split_s());
    }
    if let Some(&t) = report
        .fractional_delta
        .iter()
        .min_by(|a, b| {
            let fa = (report.delta[**a] - 0.5).abs();
            let fb = (report.delta[**b] - 0.5).abs();
            fa.total_cmp(&fb).then(a.cmp(b))
        })
    {
        let kids = [false, true]
            .map(|v| {
                let mut d = node.delta.clone();
                d[t] = Some(v);
                child(node.t_range, node.s_range, d)
            })
            .to_vec();
        return (Branching::FixDelta(t), kids);
    }
    if t_open {
        return (Branching::Integral, split_t());
    }
    if s_open {
        return (Branching::Integral, split_s());
    }
    (Branching::Integral, Vec::new())
}

/// Genotype read off an integral relaxation.
pub fn rounded_genotype(node: &BnbNode, report: &RelaxationReport) -> Option<ScheduleGenotype> {
    let argmax = |v: &[f64]| {
        v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i)
    };
    let t0 = argmax(&report.u)?;
    let t1 = argmax(&report.r)?;
    if t1 <= t0 || t0 < node.t_range.0 || t0 > node.t_range.1 {
        return None;
    }
    let s = t1 - t0;
    if s < node.s_range.0 || s > node.s_range.1 {
        return None;
    }
    let bits: Vec<bool> = (0..t1)
        .map(|t| node.delta[t].unwrap_or(report.delta[t] > 0.5))
        .collect();
    let g = ScheduleGenotype::new(bits[..t0].to_vec(), bits[t0..].to_vec());
    g.check_evaluable().ok()?;
    Some(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BnbLimits {
    pub max_active_nodes: usize,
    pub max_nlp_calls: Option<usize>,
    pub max_seconds: Option<f64>,
    /// Nodes within this share of |incumbent| below it are still explored.
    pub prune_margin: f64,
}

impl Default for BnbLimits {
    fn default() -> Self {
        BnbLimits { max_active_nodes: 100_000, max_nlp_calls: None, max_seconds: None, prune_margin: 0.001 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeAction {
    Branch,
    Prune,
    Incumbent,
    Leaf,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub node: usize,
    pub parent: Option<usize>,
    pub t_lo: usize,
    pub t_hi: usize,
    pub s_lo: usize,
    pub s_hi: usize,
    pub value: f64,
    pub action: NodeAction,
    pub nlp_calls: usize,
    /// evaluated schedule at leaves and rounded incumbents
    pub genotype: String,
}

#[derive(Debug, Clone)]
pub struct BnbOutcome {
    pub best: Option<(ScheduleGenotype, Arc<FitnessResult>)>,
    pub root_value: f64,
    pub nodes: usize,
    pub relaxations: usize,
    pub nlp_calls: usize,
    pub termination: Termination,
    pub log: Vec<SearchRecord>,
    /// incumbent value after each improvement
    pub incumbent_trace: Vec<f64>,
}

impl BnbOutcome {
    pub fn best_value(&self) -> f64 {
        self.best.as_ref().map_or(f64::NEG_INFINITY, |(_, r)| r.fitness())
    }
}

struct Queued(BnbNode);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // best value first, then deeper, then older
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .value
            .total_cmp(&other.0.value)
            .then(self.0.depth.cmp(&other.0.depth))
            .then(other.0.id.cmp(&self.0.id))
    }
}

struct Search<'e, 'a> {
    eval: &'e Evaluator<'a>,
    mip: &'e MipModel,
    limits: BnbLimits,
    calls0: usize,
    relaxations: usize,
    next_id: usize,
    log: Vec<SearchRecord>,
    best: Option<(ScheduleGenotype, Arc<FitnessResult>)>,
    trace: Vec<f64>,
}

impl Search<'_, '_> {
    fn calls(&self) -> usize {
        self.relaxations + self.eval.calls() - self.calls0
    }

    fn incumbent(&self) -> f64 {
        self.best.as_ref().map_or(f64::NEG_INFINITY, |(_, r)| r.fitness())
    }

    fn prunable(&self, value: f64) -> bool {
        let inc = self.incumbent();
        inc.is_finite() && value + self.limits.prune_margin * inc.abs() <= inc
    }

    fn note(&mut self, node: &BnbNode, value: f64, action: NodeAction, g: Option<&ScheduleGenotype>) {
        let rec = SearchRecord {
            node: node.id,
            parent: node.parent,
            t_lo: node.t_range.0,
            t_hi: node.t_range.1,
            s_lo: node.s_range.0,
            s_hi: node.s_range.1,
            value,
            action,
            nlp_calls: self.calls(),
            genotype: g.map(ScheduleGenotype::canonical_key).unwrap_or_default(),
        };
        self.log.push(rec);
    }

    /// Evaluates a schedule; returns whether it became the incumbent and its fitness.
    fn offer(&mut self, g: ScheduleGenotype) -> Result<(bool, f64)> {
        let res = self.eval.evaluate(&g)?;
        let value = res.fitness();
        if value > self.incumbent() {
            self.trace.push(res.fitness());
            self.best = Some((g, res));
            return Ok((true, value));
        }
        Ok((false, value))
    }

    /// Evaluates a fresh node; returns it when it stays on the frontier.
    fn process(&mut self, mut node: BnbNode) -> Result<Option<(BnbNode, RelaxationReport)>> {
        node.id = self.next_id;
        self.next_id += 1;
        if node.contradicts() {
            self.note(&node, f64::NEG_INFINITY, NodeAction::Infeasible, None);
            return Ok(None);
        }
        if let Some(g) = node.leaf_genotype() {
            if g.check_evaluable().is_err() {
                self.note(&node, f64::NEG_INFINITY, NodeAction::Infeasible, None);
                return Ok(None);
            }
            let (improved, v) = self.offer(g.clone())?;
            self.note(&node, v, if improved { NodeAction::Incumbent } else { NodeAction::Leaf }, Some(&g));
            return Ok(None);
        }
        let rep = solve_relaxation(self.eval.model, self.mip, self.eval.x0, &node, &self.eval.opts)?;
        self.relaxations += rep.attempts;
        node.value = if rep.converged { rep.value } else { f64::INFINITY };
        if self.prunable(node.value) {
            self.note(&node, node.value, NodeAction::Prune, None);
            return Ok(None);
        }
        Ok(Some((node, rep)))
    }
}

/// Best-first branch-and-bound. Leaves are scored by the reduced-space
/// fitness evaluator; `eval`'s cache should be disabled so every leaf counts.
pub fn solve_bnb(eval: &Evaluator<'_>, mip: &MipModel, limits: &BnbLimits) -> Result<BnbOutcome> {
    let started = Instant::now();
    let deadline = limits.max_seconds.map(Duration::from_secs_f64);
    let mut search = Search {
        eval,
        mip,
        limits: *limits,
        calls0: eval.calls(),
        relaxations: 0,
        next_id: 0,
        log: Vec::new(),
        best: None,
        trace: Vec::new(),
    };
    let mut frontier: BinaryHeap<Queued> = BinaryHeap::new();
    let mut reports: std::collections::HashMap<usize, RelaxationReport> = Default::default();
    let root = search.process(BnbNode::root(mip))?;
    let root_value = root.as_ref().map_or(f64::NEG_INFINITY, |(n, _)| n.value);
    if let Some((n, rep)) = root {
        reports.insert(n.id, rep);
        frontier.push(Queued(n));
    }
    let termination = loop {
        let Some(Queued(node)) = frontier.pop() else {
            break Termination::Exhausted;
        };
        let rep = reports.remove(&node.id).expect("report stored with node");
        if search.prunable(node.value) {
            search.note(&node, node.value, NodeAction::Prune, None);
            continue;
        }
        let (rule, kids) = branch(&node, &rep);
        if rule == Branching::Integral && rep.converged {
            if let Some(g) = rounded_genotype(&node, &rep) {
                let (improved, v) = search.offer(g.clone())?;
                if improved {
                    search.note(&node, v, NodeAction::Incumbent, Some(&g));
                }
            }
        }
        search.note(&node, node.value, NodeAction::Branch, None);
        for kid in kids {
            if let Some((k, r)) = search.process(kid)? {
                reports.insert(k.id, r);
                frontier.push(Queued(k));
            }
        }
        if frontier.len() > limits.max_active_nodes {
            break Termination::NodeLimit;
        }
        if limits.max_nlp_calls.is_some_and(|m| search.calls() >= m)
            || deadline.is_some_and(|d| started.elapsed() >= d)
        {
            break Termination::CallBudget;
        }
    };
    Ok(BnbOutcome {
        root_value,
        nodes: search.next_id,
        relaxations: search.relaxations,
        nlp_calls: search.calls(),
        termination,
        log: search.log,
        incumbent_trace: search.trace,
        best: search.best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::INITIAL_X3;
    use crate::fitness::evaluate_fitness;
    use rand::Rng;

    fn setup() -> (StandModel, StandState) {
        (StandModel::base_case(), StandState(INITIAL_X3.to_vec()))
    }

    fn g(s: &str) -> ScheduleGenotype {
        s.parse().unwrap()
    }

    #[test]
    fn indicator_encoding() {
        let (u, r) = encode_indicators(2, 3, 5);
        assert_eq!(u, vec![0, 0, 1, 0, 0, 0]);
        assert_eq!(r, vec![0, 0, 0, 1, 0, 0]);
    }

    #[test]
    fn big_m_bounds_dominate_unharvested_growth() {
        let (m, x0) = setup();
        let mip = build_mip(&m, &x0, &ScheduleBounds::default()).unwrap();
        assert_eq!(mip.horizon, 35);
        for (b, x) in mip.x_bar.iter().zip(&x0.0) {
            assert!(*b >= 2.0 * x);
        }
        assert!(mip.f_bar > 0.0);
    }

    #[test]
    fn relaxation_gradient_matches_differences() {
        let (m, x0) = setup();
        let bounds = ScheduleBounds::new(2, 5, 1, 3);
        let mip = build_mip(&m, &x0, &bounds).unwrap();
        let mut node = BnbNode::root(&mip);
        node.delta[1] = Some(true);
        node.delta[3] = Some(false);
        let mut p = Relaxation::new(&m, &mip, &x0, &node, 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = p.start_point(7, 5).unwrap();
        for (i, v) in x.iter_mut().enumerate() {
            let (lo, hi) = (p.lo[i], p.hi[i]);
            *v = (lo + (hi - lo) * rng.random_range(0.1..0.9)).clamp(lo, hi);
        }
        let ne = p.n_eq();
        let ni = p.n_ineq();
        let eq_w: Vec<f64> = (0..ne).map(|_| rng.random_range(-2.0..2.0)).collect();
        let in_w: Vec<f64> = (0..ni).map(|_| rng.random_range(0.0..3.0)).collect();
        let mut eq = vec![0.0; ne];
        let mut ineq = vec![0.0; ni];
        let mut lag = |p: &mut Relaxation, x: &[f64]| {
            let f = p.evaluate(x, &mut eq, &mut ineq);
            f + eq.iter().zip(&eq_w).map(|(a, b)| a * b).sum::<f64>()
                + ineq.iter().zip(&in_w).map(|(a, b)| a * b).sum::<f64>()
        };
        lag(&mut p, &x);
        let mut grad = vec![0.0; x.len()];
        p.weighted_gradient(&eq_w, &in_w, &mut grad);
        let scale = grad.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for i in 0..x.len() {
            let h = 1e-6;
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (lag(&mut p, &a) - lag(&mut p, &b)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * scale, "var {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn leaf_objective_matches_fitness() {
        let (m, x0) = setup();
        let bounds = ScheduleBounds::new(1, 6, 1, 3);
        let mip = build_mip(&m, &x0, &bounds).unwrap();
        let opts = SolverOptions::default();
        for key in ["0100|010", "101|1", "000010|01"] {
            let gg = g(key);
            let leaf = leaf_objective(&m, &mip, &x0, &gg, &opts).unwrap();
            let fit = evaluate_fitness(&m, &x0, &gg, &opts).unwrap();
            assert!(leaf.converged, "{key}: {leaf:?}");
            assert!((leaf.value - fit.npv).abs() <= 1e-3 * fit.npv.abs(), "{key}: {} vs {}", leaf.value, fit.npv);
        }
    }

    #[test]
    fn branching_rules() {
        let (m, x0) = setup();
        let mip = build_mip(&m, &x0, &ScheduleBounds::default()).unwrap();
        let node = BnbNode::root(&mip);
        let mut rep = RelaxationReport {
            value: 1.0,
            converged: true,
            violation: 0.0,
            u: vec![0.0; 36],
            r: vec![0.0; 36],
            delta: vec![0.0; 35],
            fractional_u: vec![12],
            fractional_r: vec![],
            fractional_delta: vec![3],
            attempts: 1,
        };
        let (rule, kids) = branch(&node, &rep);
        assert_eq!(rule, Branching::SplitT);
        assert_eq!((kids[0].t_range, kids[1].t_range), ((10, 17), (18, 25)));
        let mut narrow = node.clone();
        narrow.s_range = (1, 1);
        narrow.t_range = (12, 12);
        rep.fractional_u.clear();
        rep.delta[3] = 0.4;
        let (rule, kids) = branch(&narrow, &rep);
        assert_eq!(rule, Branching::FixDelta(3));
        assert_eq!((kids[0].delta[3], kids[1].delta[3]), (Some(false), Some(true)));
        rep.fractional_delta.clear();
        let (rule, kids) = branch(&narrow, &rep);
        assert_eq!(rule, Branching::Integral);
        assert!(kids.is_empty());
    }
}
