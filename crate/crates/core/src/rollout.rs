//! Harvest-fraction parameterized forward recursion with a reverse-mode pass.
//!
//! Harvest at stage t is a fraction f of the stock available after growth,
//! `h = f · (inflow + (1 − μ − α) x)`, so the next state `(1 − f) · avail` is
//! nonnegative for every f in [0, 1]. The forward pass records every
//! intermediate needed to back-propagate seeds on cash flows, states and
//! harvests to the fractions.

use crate::dynamics::StandModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GrowthMode {
    Free,
    Clamped,
    Rescaled,
}

/// Recorded forward pass over `stages` stages for `n` classes.
#[derive(Debug, Clone)]
pub struct Rollout {
    n: usize,
    stages: usize,
    /// states x_0..x_stages, row-major (stage, class)
    pub(crate) x: Vec<f64>,
    pub(crate) avail: Vec<f64>,
    pub(crate) h: Vec<f64>,
    pub(crate) frac: Vec<f64>,
    mu: Vec<f64>,
    alpha: Vec<f64>,
    mode: Vec<GrowthMode>,
    basal: Vec<f64>,
    phi: Vec<f64>,
    pub(crate) volume: Vec<f64>,
    pub(crate) cash: Vec<f64>,
    pub(crate) delta: Vec<f64>,
    eps: f64,
}

impl Rollout {
    pub fn new(n: usize, stages: usize, eps: f64) -> Self {
        Rollout {
            n,
            stages,
            x: vec![0.0; (stages + 1) * n],
            avail: vec![0.0; stages * n],
            h: vec![0.0; stages * n],
            frac: vec![0.0; stages * n],
            mu: vec![0.0; stages * n],
            alpha: vec![0.0; stages * n],
            mode: vec![GrowthMode::Free; stages * n],
            basal: vec![0.0; stages],
            phi: vec![0.0; stages],
            volume: vec![0.0; stages],
            cash: vec![0.0; stages],
            delta: vec![0.0; stages],
            eps,
        }
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.x[t * self.n..(t + 1) * self.n]
    }

    pub fn harvest(&self, t: usize) -> &[f64] {
        &self.h[t * self.n..(t + 1) * self.n]
    }

    pub fn available(&self, t: usize) -> &[f64] {
        &self.avail[t * self.n..(t + 1) * self.n]
    }

    pub fn cash_flow(&self, t: usize) -> f64 {
        self.cash[t]
    }

    pub fn basal_area(&self, t: usize) -> f64 {
        self.basal[t]
    }

    pub fn delta(&self, t: usize) -> f64 {
        self.delta[t]
    }

    /// Runs the recursion. `frac` is dense (stages × n); `delta` gives the
    /// harvest indicator per stage (fractional values allowed for relaxations).
    pub fn forward(&mut self, model: &StandModel, x0: &[f64], delta: &[f64], frac: &[f64]) {
        let n = self.n;
        debug_assert_eq!(x0.len(), n);
        debug_assert_eq!(frac.len(), self.stages * n);
        debug_assert_eq!(delta.len(), self.stages);
        let g = model.growth();
        let econ = model.econ();
        self.x[..n].copy_from_slice(x0);
        self.frac.copy_from_slice(frac);
        self.delta.copy_from_slice(delta);
        for t in 0..self.stages {
            let (head, tail) = self.x.split_at_mut((t + 1) * n);
            let x = &head[t * n..];
            let next = &mut tail[..n];
            let row = t * n..(t + 1) * n;
            let b: f64 = model.basal.iter().zip(x).map(|(p, q)| p * q).sum();
            let decay = (-g.m * b).exp();
            let phi = g.s1 * (b + g.b0).powf(-g.nu) / (1.0 + g.s2 * (g.gamma * b).exp());
            self.basal[t] = b;
            self.phi[t] = phi;

            let mu = &mut self.mu[row.clone()];
            let alpha = &mut self.alpha[row.clone()];
            let mode = &mut self.mode[row.clone()];
            let mut above = 0.0;
            for s in (0..n).rev() {
                mu[s] = 1.0 / (1.0 + model.mort_coef[s] * decay);
                if s + 1 == n {
                    alpha[s] = 0.0;
                    mode[s] = GrowthMode::Clamped;
                } else {
                    let raw = model.growth_base[s] - g.a1 * above - g.a2 * b;
                    if raw <= 0.0 {
                        alpha[s] = 0.0;
                        mode[s] = GrowthMode::Clamped;
                    } else if mu[s] + raw > 1.0 {
                        alpha[s] = 1.0 - mu[s];
                        mode[s] = GrowthMode::Rescaled;
                    } else {
                        alpha[s] = raw;
                        mode[s] = GrowthMode::Free;
                    }
                }
                above += model.basal[s] * x[s];
            }

            let avail = &mut self.avail[row.clone()];
            let h = &mut self.h[row.clone()];
            let f = &frac[row];
            let mut vol = 0.0;
            let mut net = 0.0;
            for s in 0..n {
                let inflow = if s == 0 { phi } else { alpha[s - 1] * x[s - 1] };
                let a = inflow + (1.0 - mu[s] - alpha[s]) * x[s];
                avail[s] = a;
                h[s] = f[s] * a;
                next[s] = (1.0 - f[s]) * a;
                vol += h[s] * model.volume[s];
                net += h[s] * (model.revenue_per_tree[s] - model.cutting_per_tree[s]);
            }
            self.volume[t] = vol;
            self.cash[t] =
                net - model.hauling_from_volume(vol, delta[t], self.eps) - delta[t] * econ.cf;
        }
    }

    /// Reverse pass. Seeds are dJ/dc_t (`w_cash`, len stages), dJ/dx_t
    /// (`w_state`, (stages+1) × n) and optionally dJ/dh_t (`w_harvest`,
    /// stages × n). Writes dJ/df into `grad_frac` (stages × n) and dJ/dδ_t into
    /// `grad_delta` (len stages). Uses the last forward pass.
    pub fn backward(
        &self,
        model: &StandModel,
        w_cash: &[f64],
        w_state: &[f64],
        w_harvest: Option<&[f64]>,
        grad_frac: &mut [f64],
        grad_delta: &mut [f64],
    ) {
        let n = self.n;
        let g = model.growth();
        let fixed = model.fixed_harvest_cost();
        let mut lam: Vec<f64> = w_state[self.stages * n..].to_vec();
        let mut lam_prev = vec![0.0; n];
        let mut g_av = vec![0.0; n];
        for t in (0..self.stages).rev() {
            let row = t * n..(t + 1) * n;
            let x = &self.x[row.clone()];
            let f = &self.frac[row.clone()];
            let avail = &self.avail[row.clone()];
            let mu = &self.mu[row.clone()];
            let alpha = &self.alpha[row.clone()];
            let mode = &self.mode[row.clone()];
            let gc = w_cash[t];
            let slope = model.hauling_slope(self.volume[t], self.eps);
            grad_delta[t] = -gc * fixed;
            for s in 0..n {
                let mut gh = gc
                    * (model.revenue_per_tree[s] - model.cutting_per_tree[s]
                        - slope * model.volume[s]);
                if let Some(wh) = w_harvest {
                    gh += wh[t * n + s];
                }
                grad_frac[t * n + s] = avail[s] * (gh - lam[s]);
                g_av[s] = lam[s] * (1.0 - f[s]) + gh * f[s];
            }

            lam_prev.copy_from_slice(&w_state[row]);
            let b = self.basal[t];
            let phi = self.phi[t];
            let mut g_b = 0.0;
            // d above_s / d x_i = b_i for i > s, accumulated as a running sum
            let mut g_above_run = 0.0;
            let e = g.s2 * (g.gamma * b).exp();
            let dphi = phi * (-g.nu / (b + g.b0) - g.gamma * e / (1.0 + e));
            g_b += g_av[0] * dphi;
            for s in 0..n {
                lam_prev[s] += g_av[s] * (1.0 - mu[s] - alpha[s]);
                let mut g_mu = -g_av[s] * x[s];
                let mut g_alpha = -g_av[s] * x[s];
                if s + 1 < n {
                    lam_prev[s] += g_av[s + 1] * alpha[s];
                    g_alpha += g_av[s + 1] * x[s];
                }
                lam_prev[s] += model.basal[s] * g_above_run;
                match mode[s] {
                    GrowthMode::Free => {
                        g_b -= g.a2 * g_alpha;
                        g_above_run -= g.a1 * g_alpha;
                    }
                    GrowthMode::Rescaled => g_mu -= g_alpha,
                    GrowthMode::Clamped => {}
                }
                g_b += g_mu * g.m * mu[s] * (1.0 - mu[s]);
            }
            for s in 0..n {
                lam_prev[s] += model.basal[s] * g_b;
            }
            std::mem::swap(&mut lam, &mut lam_prev);
        }
    }
}
