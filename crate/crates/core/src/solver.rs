//! Smooth bound-constrained and equality/inequality-constrained minimization.
//!
//! [`minimize_box`] is a projected limited-memory quasi-Newton method: the
//! search direction is the L-BFGS direction restricted to the variables not
//! held at a bound, and the step follows the projection arc with Armijo
//! backtracking. [`AugmentedLagrangian`] wraps it with a PHR multiplier
//! method for `c(x) = 0` and `g(x) <= 0`.

use std::collections::VecDeque;

/// Outcome of a box-constrained minimization.
#[derive(Debug, Clone)]
pub struct BoxResult {
    pub x: Vec<f64>,
    pub f: f64,
    /// max-norm of P(x − ∇f) − x
    pub projected_gradient: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BoxOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Absolute tolerance on the projected-gradient max-norm.
    pub tolerance: f64,
}

impl Default for BoxOptions {
    fn default() -> Self {
        BoxOptions { memory: 10, max_iterations: 2000, tolerance: 1e-6 }
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for i in 0..x.len() {
        let p = (x[i] - g[i]).clamp(lo[i], hi[i]) - x[i];
        m = m.max(p.abs());
    }
    m
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Minimizes `fun` over the box `[lo, hi]`. `fun(x, grad)` returns f(x) and
/// writes ∇f(x).
pub fn minimize_box<F>(mut fun: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &BoxOptions) -> BoxResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut f = fun(&x, &mut g);
    let mut evaluations = 1;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut d = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut alpha_buf = vec![0.0; opts.memory.max(1)];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut free = vec![false; n];
    let mut pg = projected_gradient_norm(&x, &g, lo, hi);
    let mut iterations = 0;
    let mut stalls = 0;

    while iterations < opts.max_iterations {
        if !f.is_finite() {
            break;
        }
        if pg <= opts.tolerance {
            return BoxResult { x, f, projected_gradient: pg, iterations, evaluations, converged: true };
        }
        iterations += 1;

        for i in 0..n {
            free[i] = !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0));
            q[i] = if free[i] { g[i] } else { 0.0 };
        }
        // two-loop recursion on the free subspace
        for (j, (s, y, rho)) in memory.iter().enumerate().rev() {
            let a = rho * dot(s, &q);
            alpha_buf[j] = a;
            for i in 0..n {
                q[i] -= a * y[i];
            }
        }
        let gamma = match memory.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => {
                let gmax = g.iter().zip(&free).filter(|(_, f)| **f).fold(0.0f64, |m, (v, _)| m.max(v.abs()));
                if gmax > 0.0 { 0.1 / gmax } else { 1.0 }
            }
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for (j, (s, y, rho)) in memory.iter().enumerate() {
            let b = rho * dot(y, &q);
            let a = alpha_buf[j];
            for i in 0..n {
                q[i] += (a - b) * s[i];
            }
        }
        for i in 0..n {
            d[i] = if free[i] { -q[i] } else { 0.0 };
        }
        let slope = dot(&g, &d);
        let gnorm = dot(&g, &g).sqrt();
        let dnorm = dot(&d, &d).sqrt();
        if !(slope < -1e-12 * gnorm * dnorm) {
            memory.clear();
            let gmax = g.iter().zip(&free).filter(|(_, f)| **f).fold(0.0f64, |m, (v, _)| m.max(v.abs()));
            let scale = if gmax > 0.0 { 0.1 / gmax } else { 1.0 };
            for i in 0..n {
                d[i] = if free[i] { -scale * g[i] } else { 0.0 };
            }
        }

        // backtracking along the projection arc
        let mut step = 1.0;
        let mut accepted = false;
        let mut f_new = f;
        for _ in 0..50 {
            for i in 0..n {
                x_new[i] = (x[i] + step * d[i]).clamp(lo[i], hi[i]);
            }
            let decrease: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
            f_new = fun(&x_new, &mut g_new);
            evaluations += 1;
            if f_new.is_finite() && f_new <= f + 1e-4 * decrease {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if memory.is_empty() {
                break;
            }
            memory.clear();
            continue;
        }

        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let progress = (f - f_new).abs();
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        pg = projected_gradient_norm(&x, &g, lo, hi);
        if progress <= 1e-15 * f.abs().max(1.0) {
            stalls += 1;
            if stalls >= 5 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    let converged = pg <= opts.tolerance;
    BoxResult { x, f, projected_gradient: pg, iterations, evaluations, converged }
}

/// A smooth program `min f(x)` s.t. `c(x) = 0`, `g(x) <= 0`, `lo <= x <= hi`.
pub trait ConstrainedProblem {
    fn dim(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];

    /// Evaluates f, c and g at `x` and keeps whatever is needed by
    /// [`ConstrainedProblem::weighted_gradient`].
    fn evaluate(&mut self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]) -> f64;

    /// ∇(f + Σ eq_w·c + Σ ineq_w·g) at the last evaluated point.
    fn weighted_gradient(&mut self, eq_w: &[f64], ineq_w: &[f64], grad: &mut [f64]);

    /// Scale s for the feasibility test |c|, g⁺ <= tol·(1 + s) at the last evaluated point.
    fn constraint_scale(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AugLagOptions {
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    /// Required residual reduction ratio before the penalty is left unchanged.
    pub reduction: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub memory: usize,
    /// Relative feasibility tolerance (scaled by 1 + constraint_scale).
    pub constraint_tol: f64,
    /// Relative stationarity tolerance (scaled by 1 + |f|).
    pub stationarity_tol: f64,
}

impl Default for AugLagOptions {
    fn default() -> Self {
        AugLagOptions {
            initial_penalty: 1.0,
            penalty_growth: 10.0,
            reduction: 0.25,
            max_outer: 20,
            max_inner: 3000,
            memory: 10,
            constraint_tol: 1e-6,
            stationarity_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugLagResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    /// Constraint violation measure max(|c|∞, max g⁺).
    pub violation: f64,
    /// Projected gradient of the Lagrangian at the final multipliers.
    pub stationarity: f64,
    pub feasible: bool,
    pub stationary: bool,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
}

/// PHR augmented-Lagrangian driver.
pub struct AugmentedLagrangian {
    pub options: AugLagOptions,
}

impl AugmentedLagrangian {
    pub fn new(options: AugLagOptions) -> Self {
        AugmentedLagrangian { options }
    }

    pub fn solve<P: ConstrainedProblem>(&self, problem: &mut P, x0: &[f64]) -> AugLagResult {
        let o = &self.options;
        let (ne, ni) = (problem.n_eq(), problem.n_ineq());
        let lo = problem.lower().to_vec();
        let hi = problem.upper().to_vec();
        let mut lam = vec![0.0; ne];
        let mut mu = vec![0.0; ni];
        let mut rho = o.initial_penalty;
        let mut x = x0.to_vec();
        project(&mut x, &lo, &hi);
        let mut eq = vec![0.0; ne];
        let mut ineq = vec![0.0; ni];
        let mut prev_violation = f64::INFINITY;
        let mut inner_iterations = 0;
        let mut evaluations = 0;
        let mut outer = 0;
        let mut last_pg;

        let mut eq_w = vec![0.0; ne];
        let mut in_w = vec![0.0; ni];
        loop {
            outer += 1;
            let scale_f = {
                let f0 = problem.evaluate(&x, &mut eq, &mut ineq);
                1.0 + f0.abs()
            };
            let inner_opts = BoxOptions {
                memory: o.memory,
                max_iterations: o.max_inner,
                tolerance: o.stationarity_tol * scale_f,
            };
            let res = minimize_box(
                |z, grad| {
                    let f = problem.evaluate(z, &mut eq, &mut ineq);
                    let mut merit = f;
                    for i in 0..ne {
                        merit += lam[i] * eq[i] + 0.5 * rho * eq[i] * eq[i];
                        eq_w[i] = lam[i] + rho * eq[i];
                    }
                    for j in 0..ni {
                        let t = (mu[j] + rho * ineq[j]).max(0.0);
                        merit += (t * t - mu[j] * mu[j]) / (2.0 * rho);
                        in_w[j] = t;
                    }
                    problem.weighted_gradient(&eq_w, &in_w, grad);
                    merit
                },
                &x,
                &lo,
                &hi,
                &inner_opts,
            );
            inner_iterations += res.iterations;
            evaluations += res.evaluations;
            x = res.x;
            last_pg = res.projected_gradient;

            let f = problem.evaluate(&x, &mut eq, &mut ineq);
            let cscale = 1.0 + problem.constraint_scale();
            let mut violation = eq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for j in 0..ni {
                violation = violation.max(ineq[j].max(0.0));
            }
            // complementarity-aware measure for the penalty update
            let mut comp = eq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for j in 0..ni {
                comp = comp.max((-ineq[j]).min(mu[j] / rho).abs());
            }
            let ctol = o.constraint_tol * cscale;
            let stol = o.stationarity_tol * (1.0 + f.abs());
            let feasible = violation <= ctol;
            let stationary = last_pg <= stol;
            if (feasible && stationary) || outer >= o.max_outer || !f.is_finite() {
                for i in 0..ne {
                    lam[i] += rho * eq[i];
                }
                for j in 0..ni {
                    mu[j] = (mu[j] + rho * ineq[j]).max(0.0);
                }
                return AugLagResult {
                    x,
                    f,
                    eq,
                    ineq,
                    violation,
                    stationarity: last_pg,
                    feasible,
                    stationary,
                    converged: feasible && stationary,
                    outer_iterations: outer,
                    inner_iterations,
                    evaluations,
                    eq_multipliers: lam,
                    ineq_multipliers: mu,
                };
            }
            for i in 0..ne {
                lam[i] += rho * eq[i];
            }
            for j in 0..ni {
                mu[j] = (mu[j] + rho * ineq[j]).max(0.0);
            }
            if comp > o.reduction * prev_violation && !feasible {
                rho *= o.penalty_growth;
            }
            prev_violation = comp;
        }
    }
}
