//! Size-structured stand model.
//!
//! The stand is a vector of tree counts per diameter class. One stage of
//! `delta_years` years applies ingrowth into the smallest class, mortality,
//! upgrowth to the next class, and harvest:
//!
//! ```text
//! x'[0]   = phi(B) + (1 - mu[0] - alpha[0]) x[0] - h[0]
//! x'[s+1] = alpha[s] x[s] + (1 - mu[s+1] - alpha[s+1]) x[s+1] - h[s+1]
//! ```
//!
//! where every share is evaluated at the basal areas of the pre-step state.

use serde::{Deserialize, Serialize};

use crate::error::{ForestError, Result};

/// Components below this are treated as infeasible; between it and zero they are clamped.
pub const NEGATIVE_TOLERANCE: f64 = 1e-9;

/// Smoothing offset (m³) for the 0.7-power hauling term inside the optimizer.
pub const HAUL_SMOOTHING: f64 = 1e-8;

const HAUL_FIXED: f64 = 14.83;
const HAUL_LINEAR: f64 = 2.272;
const HAUL_POWER_COEF: f64 = 0.5348;
const HAUL_POWER: f64 = 0.7;

/// One row of the tree data table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeClass {
    /// Basal area of a single tree, m².
    pub basal_area: f64,
    /// Diameter, mm.
    pub diameter: f64,
    /// Pulpwood (small-diameter log) volume, m³.
    pub pulp_volume: f64,
    /// Saw timber volume, m³.
    pub saw_volume: f64,
}

impl SizeClass {
    pub fn total_volume(&self) -> f64 {
        self.pulp_volume + self.saw_volume
    }
}

/// Norway spruce tree data in 12 classes, loaded verbatim (including the
/// first-class basal area as tabulated).
pub const SPRUCE_CLASSES: [SizeClass; 12] = [
    SizeClass { basal_area: 0.0440, diameter: 75.0, pulp_volume: 0.014, saw_volume: 0.0 },
    SizeClass { basal_area: 0.0123, diameter: 125.0, pulp_volume: 0.067, saw_volume: 0.0 },
    SizeClass { basal_area: 0.0241, diameter: 175.0, pulp_volume: 0.167, saw_volume: 0.0 },
    SizeClass { basal_area: 0.0398, diameter: 225.0, pulp_volume: 0.081, saw_volume: 0.234 },
    SizeClass { basal_area: 0.0594, diameter: 275.0, pulp_volume: 0.065, saw_volume: 0.446 },
    SizeClass { basal_area: 0.0830, diameter: 325.0, pulp_volume: 0.060, saw_volume: 0.684 },
    SizeClass { basal_area: 0.1104, diameter: 375.0, pulp_volume: 0.050, saw_volume: 0.963 },
    SizeClass { basal_area: 0.1419, diameter: 425.0, pulp_volume: 0.050, saw_volume: 1.253 },
    SizeClass { basal_area: 0.1772, diameter: 475.0, pulp_volume: 0.043, saw_volume: 1.574 },
    SizeClass { basal_area: 0.2165, diameter: 525.0, pulp_volume: 0.039, saw_volume: 1.900 },
    SizeClass { basal_area: 0.2597, diameter: 575.0, pulp_volume: 0.033, saw_volume: 2.214 },
    SizeClass { basal_area: 0.3068, diameter: 625.0, pulp_volume: 0.031, saw_volume: 2.565 },
];

/// The three reference initial stands (trees/ha by class), columns x¹, x², x³.
pub const INITIAL_X1: [f64; 12] = [1750.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
pub const INITIAL_X2: [f64; 12] = [50.0, 25.0, 10.0, 0.0, 25.0, 250.0, 25.0, 0.0, 0.0, 0.0, 0.0, 0.0];
pub const INITIAL_X3: [f64; 12] =
    [190.0, 162.0, 140.0, 124.0, 75.0, 18.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];

/// Ordered table of size classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SizeClassTable(Vec<SizeClass>);

impl Default for SizeClassTable {
    fn default() -> Self {
        SizeClassTable(SPRUCE_CLASSES.to_vec())
    }
}

impl SizeClassTable {
    pub fn new(classes: Vec<SizeClass>) -> Result<Self> {
        let table = SizeClassTable(classes);
        let problems = table.violations();
        if problems.is_empty() {
            Ok(table)
        } else {
            Err(ForestError::Config(problems.join("; ")))
        }
    }

    /// All invariant violations, each prefixed with the offending field path.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.0.is_empty() {
            out.push("size_classes: at least one class required".to_string());
        }
        for (i, c) in self.0.iter().enumerate() {
            for (name, v) in [
                ("basal_area", c.basal_area),
                ("diameter", c.diameter),
                ("pulp_volume", c.pulp_volume),
                ("saw_volume", c.saw_volume),
            ] {
                if !(v.is_finite() && v >= 0.0) {
                    out.push(format!("size_classes[{i}].{name}: must be finite and >= 0"));
                }
            }
            if i > 0 && c.diameter <= self.0[i - 1].diameter {
                out.push(format!("size_classes[{i}].diameter: must be strictly increasing"));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn classes(&self) -> &[SizeClass] {
        &self.0
    }

    pub fn get(&self, s: usize) -> Option<&SizeClass> {
        self.0.get(s)
    }
}

/// Tree counts per class (trees/ha). Real-valued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StandState(pub Vec<f64>);

impl StandState {
    pub fn zeros(n: usize) -> Self {
        StandState(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total_trees(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        match self.0.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            Some(i) => Err(ForestError::Argument(format!(
                "state component {i} is {} (must be finite and >= 0)",
                self.0[i]
            ))),
            None => Ok(()),
        }
    }
}

/// Trees harvested per class in one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HarvestVector(pub Vec<f64>);

impl HarvestVector {
    pub fn zeros(n: usize) -> Self {
        HarvestVector(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

/// Ingrowth, mortality and upgrowth parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthParams {
    #[serde(rename = "S1")]
    pub s1: f64,
    #[serde(rename = "S2")]
    pub s2: f64,
    #[serde(rename = "B0")]
    pub b0: f64,
    pub gamma: f64,
    pub nu: f64,
    pub m: f64,
    #[serde(rename = "A1")]
    pub a1: f64,
    #[serde(rename = "A2")]
    pub a2: f64,
    pub site_index: f64,
    pub latitude: f64,
}

impl Default for GrowthParams {
    fn default() -> Self {
        GrowthParams {
            s1: 147.8,
            s2: 0.5494,
            b0: 0.741,
            gamma: 0.0180,
            nu: 0.157,
            m: 0.0310,
            a1: 0.006824,
            a2: 0.000480,
            site_index: 15.0,
            latitude: 60.0,
        }
    }
}

impl GrowthParams {
    pub fn violations(&self) -> Vec<String> {
        [
            ("S1", self.s1),
            ("S2", self.s2),
            ("B0", self.b0),
            ("gamma", self.gamma),
            ("nu", self.nu),
            ("m", self.m),
            ("A1", self.a1),
            ("A2", self.a2),
            ("site_index", self.site_index),
            ("latitude", self.latitude),
        ]
        .into_iter()
        .filter(|(_, v)| !(v.is_finite() && *v > 0.0))
        .map(|(name, _)| format!("growth.{name}: must be > 0"))
        .collect()
    }
}

/// Prices, cost rates and discounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EconParams {
    pub p1: f64,
    pub p2: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "Cf")]
    pub cf: f64,
    pub r: f64,
    pub delta_years: u32,
}

impl Default for EconParams {
    fn default() -> Self {
        EconParams { p1: 34.07, p2: 58.44, c1: 2.1, c2: 1.0, cf: 300.0, r: 0.03, delta_years: 5 }
    }
}

impl EconParams {
    /// Annual discount factor 1/(1+r).
    pub fn beta(&self) -> f64 {
        1.0 / (1.0 + self.r)
    }

    /// Discount factor for `stages` stages, β^(stages·Δ).
    pub fn stage_discount(&self, stages: f64) -> f64 {
        self.beta().powf(stages * self.delta_years as f64)
    }

    /// Geometric-series multiplier 1/(1 − β^(len·Δ)) for a repeating block of `len` stages.
    pub fn cycle_multiplier(&self, len: f64) -> f64 {
        1.0 / (1.0 - self.stage_discount(len))
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("p1", self.p1), ("p2", self.p2), ("C1", self.c1), ("C2", self.c2)] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(format!("econ.{name}: must be >= 0"));
            }
        }
        if !(self.cf.is_finite() && self.cf >= 0.0) {
            out.push("econ.Cf: must be >= 0".to_string());
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            out.push("econ.r: must be > 0 so that 0 < beta < 1".to_string());
        }
        if self.delta_years == 0 {
            out.push("econ.delta_years: must be a positive integer".to_string());
        }
        out
    }
}

/// Stand model with per-class constants precomputed from the table and parameters.
#[derive(Debug, Clone)]
pub struct StandModel {
    table: SizeClassTable,
    growth: GrowthParams,
    econ: EconParams,
    /// b_s
    pub(crate) basal: Vec<f64>,
    /// M_s of the mortality function
    pub(crate) mort_coef: Vec<f64>,
    /// G_s(S, L) of the growth function
    pub(crate) growth_base: Vec<f64>,
    /// v_s = v1_s + v2_s
    pub(crate) volume: Vec<f64>,
    /// v1_s p1 + v2_s p2
    pub(crate) revenue_per_tree: Vec<f64>,
    /// C1 (0.412 + 0.758 v_s + 0.180 v_s²)
    pub(crate) cutting_per_tree: Vec<f64>,
}

/// Per-stage shares evaluated at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct StageShares {
    pub basal_area: f64,
    pub ingrowth: f64,
    pub mortality: Vec<f64>,
    pub growth: Vec<f64>,
}

impl StandModel {
    pub fn new(table: SizeClassTable, growth: GrowthParams, econ: EconParams) -> Result<Self> {
        let mut problems = table.violations();
        problems.extend(growth.violations());
        problems.extend(econ.violations());
        if !problems.is_empty() {
            return Err(ForestError::Config(problems.join("; ")));
        }
        let classes = table.classes();
        let basal = classes.iter().map(|c| c.basal_area).collect();
        let mort_coef = classes
            .iter()
            .map(|c| (2.492 + 0.02 * c.diameter - 3.2e-5 * c.diameter * c.diameter).exp())
            .collect();
        let growth_base = classes
            .iter()
            .map(|c| {
                let d = c.diameter;
                0.02 * (17.839 + 0.0476 * d - 11.585e-5 * d * d + 0.906 * growth.site_index
                    - 0.268 * growth.latitude)
            })
            .collect();
        let volume: Vec<f64> = classes.iter().map(SizeClass::total_volume).collect();
        let revenue_per_tree =
            classes.iter().map(|c| c.pulp_volume * econ.p1 + c.saw_volume * econ.p2).collect();
        let cutting_per_tree =
            volume.iter().map(|v| econ.c1 * (0.412 + 0.758 * v + 0.180 * v * v)).collect();
        Ok(StandModel {
            table,
            growth,
            econ,
            basal,
            mort_coef,
            growth_base,
            volume,
            revenue_per_tree,
            cutting_per_tree,
        })
    }

    /// Base-case spruce model.
    pub fn base_case() -> Self {
        StandModel::new(SizeClassTable::default(), GrowthParams::default(), EconParams::default())
            .expect("built-in parameters are valid")
    }

    pub fn table(&self) -> &SizeClassTable {
        &self.table
    }

    pub fn growth(&self) -> &GrowthParams {
        &self.growth
    }

    pub fn econ(&self) -> &EconParams {
        &self.econ
    }

    pub fn n_classes(&self) -> usize {
        self.basal.len()
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volume
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.n_classes() {
            return Err(ForestError::Config(format!(
                "{what} has {len} components but the table has {} classes",
                self.n_classes()
            )));
        }
        Ok(())
    }

    fn check_class(&self, s: usize) -> Result<()> {
        if s >= self.n_classes() {
            return Err(ForestError::Argument(format!(
                "class index {s} out of range 0..{}",
                self.n_classes()
            )));
        }
        Ok(())
    }

    /// Total basal area Σ b_s x_s (m²/ha).
    pub fn total_basal_area(&self, state: &StandState) -> Result<f64> {
        self.check_len(state.len(), "state")?;
        Ok(dot(&self.basal, state.as_slice()))
    }

    /// Basal area of classes strictly larger than `s` (0-based class index).
    pub fn basal_area_above(&self, state: &StandState, s: usize) -> Result<f64> {
        self.check_len(state.len(), "state")?;
        self.check_class(s)?;
        Ok(dot(&self.basal[s + 1..], &state.as_slice()[s + 1..]))
    }

    /// Ingrowth into the smallest class per stage as a function of basal area.
    pub fn ingrowth(&self, basal_area: f64) -> Result<f64> {
        if !(basal_area >= 0.0) {
            return Err(ForestError::Argument(format!("basal area {basal_area} must be >= 0")));
        }
        Ok(self.ingrowth_unchecked(basal_area))
    }

    pub(crate) fn ingrowth_unchecked(&self, b: f64) -> f64 {
        let p = &self.growth;
        p.s1 * (b + p.b0).powf(-p.nu) / (1.0 + p.s2 * (p.gamma * b).exp())
    }

    /// Share of trees in class `s` dying during one stage.
    pub fn mortality_share(&self, s: usize, basal_area: f64) -> Result<f64> {
        self.check_class(s)?;
        if !(basal_area >= 0.0) {
            return Err(ForestError::Argument(format!("basal area {basal_area} must be >= 0")));
        }
        Ok(1.0 / (1.0 + self.mort_coef[s] * (-self.growth.m * basal_area).exp()))
    }

    /// Share of trees in class `s` growing into class `s + 1` during one stage,
    /// clamped at zero (top class never grows out).
    pub fn growth_share(&self, s: usize, basal_area: f64, basal_above: f64) -> Result<f64> {
        self.check_class(s)?;
        if !(basal_above >= 0.0) || basal_above > basal_area {
            return Err(ForestError::Argument(format!(
                "basal area above ({basal_above}) must lie in [0, {basal_area}]"
            )));
        }
        Ok(self.raw_growth(s, basal_area, basal_above).max(0.0))
    }

    fn raw_growth(&self, s: usize, b: f64, above: f64) -> f64 {
        if s + 1 == self.n_classes() {
            0.0
        } else {
            self.growth_base[s] - self.growth.a1 * above - self.growth.a2 * b
        }
    }

    /// Ingrowth, mortality and (clamped, rescaled) growth shares at `state`.
    ///
    /// α is clamped at 0 and, when μ + α would exceed 1, rescaled to 1 − μ.
    pub fn shares(&self, state: &StandState) -> Result<StageShares> {
        self.check_len(state.len(), "state")?;
        let x = state.as_slice();
        let n = self.n_classes();
        let b = dot(&self.basal, x);
        let decay = (-self.growth.m * b).exp();
        let mut mortality = vec![0.0; n];
        let mut growth = vec![0.0; n];
        let mut above = 0.0;
        for s in (0..n).rev() {
            let mu = 1.0 / (1.0 + self.mort_coef[s] * decay);
            let mut alpha = self.raw_growth(s, b, above).max(0.0);
            if mu + alpha > 1.0 {
                alpha = 1.0 - mu;
            }
            mortality[s] = mu;
            growth[s] = alpha;
            above += self.basal[s] * x[s];
        }
        Ok(StageShares { basal_area: b, ingrowth: self.ingrowth_unchecked(b), mortality, growth })
    }

    /// Gross revenue Σ h_s (v1_s p1 + v2_s p2) (€).
    pub fn gross_revenue(&self, h: &HarvestVector) -> Result<f64> {
        self.check_len(h.0.len(), "harvest")?;
        Ok(dot(&self.revenue_per_tree, h.as_slice()))
    }

    /// Felling cost C1 Σ h_s (0.412 + 0.758 v_s + 0.180 v_s²) (€).
    pub fn cutting_cost(&self, h: &HarvestVector) -> Result<f64> {
        self.check_len(h.0.len(), "harvest")?;
        Ok(dot(&self.cutting_per_tree, h.as_slice()))
    }

    /// Hauling cost with its fixed term, evaluated exactly.
    pub fn hauling_cost(&self, h: &HarvestVector, delta: bool) -> Result<f64> {
        self.hauling_inner(h, delta, 0.0)
    }

    /// Hauling cost with the power term smoothed as (V + ε)^0.7 − ε^0.7.
    pub fn hauling_cost_smoothed(&self, h: &HarvestVector, delta: bool, eps: f64) -> Result<f64> {
        self.hauling_inner(h, delta, eps)
    }

    fn hauling_inner(&self, h: &HarvestVector, delta: bool, eps: f64) -> Result<f64> {
        self.check_len(h.0.len(), "harvest")?;
        if !delta && !h.is_zero() {
            return Err(ForestError::Contract(
                "nonzero harvest at a stage without a harvesting decision".into(),
            ));
        }
        let vol = dot(&self.volume, h.as_slice());
        Ok(self.hauling_from_volume(vol, if delta { 1.0 } else { 0.0 }, eps))
    }

    pub(crate) fn hauling_from_volume(&self, vol: f64, delta: f64, eps: f64) -> f64 {
        let power = (vol + eps).powf(HAUL_POWER) - if eps > 0.0 { eps.powf(HAUL_POWER) } else { 0.0 };
        self.econ.c2 * (HAUL_FIXED * delta + HAUL_LINEAR * vol + HAUL_POWER_COEF * power)
    }

    /// d(hauling)/d(volume) of the smoothed hauling cost.
    pub(crate) fn hauling_slope(&self, vol: f64, eps: f64) -> f64 {
        self.econ.c2 * (HAUL_LINEAR + HAUL_POWER_COEF * HAUL_POWER * (vol + eps).powf(HAUL_POWER - 1.0))
    }

    /// Fixed cost of one harvesting operation: C_f plus the hauling fixed term.
    pub fn fixed_harvest_cost(&self) -> f64 {
        self.econ.cf + HAUL_FIXED * self.econ.c2
    }

    /// Net cash flow R − (cutting + hauling + δ C_f) of one stage (€), exact hauling term.
    pub fn stage_cash_flow(&self, h: &HarvestVector, delta: bool) -> Result<f64> {
        let haul = self.hauling_cost(h, delta)?;
        let rev = self.gross_revenue(h)?;
        let cut = self.cutting_cost(h)?;
        Ok(rev - cut - haul - if delta { self.econ.cf } else { 0.0 })
    }

    /// One stage of the state recursion.
    pub fn step(&self, state: &StandState, h: &HarvestVector, delta: bool) -> Result<StandState> {
        self.step_at(state, h, delta, 0)
    }

    fn step_at(
        &self,
        state: &StandState,
        h: &HarvestVector,
        delta: bool,
        stage: usize,
    ) -> Result<StandState> {
        self.check_len(h.0.len(), "harvest")?;
        if !delta && !h.is_zero() {
            return Err(ForestError::Contract(
                "nonzero harvest at a stage without a harvesting decision".into(),
            ));
        }
        let sh = self.shares(state)?;
        let x = state.as_slice();
        let n = self.n_classes();
        let mut next = Vec::with_capacity(n);
        for s in 0..n {
            let inflow = if s == 0 { sh.ingrowth } else { sh.growth[s - 1] * x[s - 1] };
            let v = inflow + (1.0 - sh.mortality[s] - sh.growth[s]) * x[s] - h.0[s];
            if v < -NEGATIVE_TOLERANCE {
                return Err(ForestError::Infeasible { stage, class: s, value: v });
            }
            next.push(v.max(0.0));
        }
        Ok(StandState(next))
    }

    /// Forward recursion from `x0`; returns `harvests.len() + 1` states.
    pub fn simulate(
        &self,
        x0: &StandState,
        harvests: &[(bool, HarvestVector)],
    ) -> Result<Vec<StandState>> {
        self.check_len(x0.len(), "initial state")?;
        x0.validate()?;
        let mut traj = Vec::with_capacity(harvests.len() + 1);
        traj.push(x0.clone());
        for (t, (delta, h)) in harvests.iter().enumerate() {
            let next = self.step_at(&traj[t], h, *delta, t)?;
            traj.push(next);
        }
        Ok(traj)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> StandModel {
        StandModel::base_case()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-12)
    }

    #[test]
    fn basal_area_examples() {
        let m = model();
        assert_eq!(m.total_basal_area(&StandState::zeros(12)).unwrap(), 0.0);
        let mut x = StandState::zeros(12);
        x.0[0] = 100.0;
        assert!(close(m.total_basal_area(&x).unwrap(), 4.40, 1e-12));
        let x2 = StandState(INITIAL_X2.to_vec());
        assert!((m.total_basal_area(&x2).unwrap() - 27.7435).abs() < 1e-9);
        assert!(m.total_basal_area(&StandState::zeros(11)).is_err());
    }

    #[test]
    fn basal_above_examples() {
        let m = model();
        let mut x = StandState::zeros(12);
        x.0[0] = 100.0;
        assert_eq!(m.basal_area_above(&x, 11).unwrap(), 0.0);
        assert_eq!(m.basal_area_above(&x, 0).unwrap(), 0.0);
        x.0[11] = 10.0;
        assert!(close(m.basal_area_above(&x, 0).unwrap(), 3.068, 1e-12));
        assert!(matches!(m.basal_area_above(&x, 12), Err(ForestError::Argument(_))));
    }

    #[test]
    fn ingrowth_examples() {
        let m = model();
        // direct evaluation: 147.8·0.741^-0.157 / (1 + 0.5494)
        let expect0 = 147.8 * 0.741f64.powf(-0.157) / 1.5494;
        assert!(close(m.ingrowth(0.0).unwrap(), expect0, 1e-12));
        assert!((m.ingrowth(0.0).unwrap() - 100.0).abs() < 0.05);
        let expect20 = 147.8 * 20.741f64.powf(-0.157) / (1.0 + 0.5494 * (0.018f64 * 20.0).exp());
        assert!(close(m.ingrowth(20.0).unwrap(), expect20, 1e-12));
        assert!((m.ingrowth(20.0).unwrap() - 51.4).abs() < 0.05);
        assert!(m.ingrowth(1e4).unwrap() < 1e-60);
        assert!(m.ingrowth(-1.0).is_err());
    }

    #[test]
    fn mortality_examples() {
        let m = model();
        let mu1 = m.mortality_share(0, 0.0).unwrap();
        assert!(close(mu1, 1.0 / (1.0 + 3.812f64.exp()), 1e-12));
        assert!((mu1 - 0.02163).abs() < 5e-6);
        let mu12 = m.mortality_share(11, 0.0).unwrap();
        assert!(close(mu12, 1.0 / (1.0 + 2.492f64.exp()), 1e-12));
        // quoted value is rounded: 1/(1+e^2.492) = 0.07643
        assert!((mu12 - 0.0765).abs() < 1e-4);
        assert!((m.mortality_share(4, 1e5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn growth_examples() {
        let m = model();
        assert_eq!(m.growth_share(11, 5.0, 0.0).unwrap(), 0.0);
        let g1 = m.growth_share(0, 0.0, 0.0).unwrap();
        let oracle = 0.02 * (17.839 + 0.0476 * 75.0 - 11.585e-5 * 75.0 * 75.0 + 0.906 * 15.0 - 0.268 * 60.0);
        assert!(close(g1, oracle, 1e-12));
        assert!((g1 - 0.36535).abs() < 5e-6);
        assert_eq!(m.growth_share(0, 1e4, 0.0).unwrap(), 0.0);
        assert!(m.growth_share(0, 1.0, 2.0).is_err());
    }

    #[test]
    fn revenue_and_costs() {
        let m = model();
        let zero = HarvestVector::zeros(12);
        assert_eq!(m.gross_revenue(&zero).unwrap(), 0.0);
        assert_eq!(m.cutting_cost(&zero).unwrap(), 0.0);
        assert_eq!(m.hauling_cost(&zero, false).unwrap(), 0.0);
        assert!(close(m.hauling_cost(&zero, true).unwrap(), 14.83, 1e-12));

        let mut one5 = HarvestVector::zeros(12);
        one5.0[4] = 1.0;
        assert!(close(m.gross_revenue(&one5).unwrap(), 0.065 * 34.07 + 0.446 * 58.44, 1e-12));
        let mut one1 = HarvestVector::zeros(12);
        one1.0[0] = 1.0;
        assert!(close(m.gross_revenue(&one1).unwrap(), 0.014 * 34.07, 1e-12));

        let mut one3 = HarvestVector::zeros(12);
        one3.0[2] = 1.0;
        let v = 0.167;
        let cut = 2.1 * (0.412 + 0.758 * v + 0.180 * v * v);
        assert!(close(m.cutting_cost(&one3).unwrap(), cut, 1e-12));
        assert!((cut - 1.1416).abs() < 1e-4);
        let mut two3 = one3.clone();
        two3.0[2] = 2.0;
        assert!(close(m.cutting_cost(&two3).unwrap(), 2.0 * cut, 1e-12));

        let v5 = 0.511f64;
        let haul = 14.83 + 2.272 * v5 + 0.5348 * v5.powf(0.7);
        assert!(close(m.hauling_cost(&one5, true).unwrap(), haul, 1e-12));
        assert!((haul - 16.33).abs() < 0.01);
        assert!(matches!(m.hauling_cost(&one5, false), Err(ForestError::Contract(_))));

        let smooth = m.hauling_cost_smoothed(&one5, true, HAUL_SMOOTHING).unwrap();
        assert!((smooth - haul).abs() < 1e-5);
    }

    #[test]
    fn cash_flow_examples() {
        let m = model();
        let zero = HarvestVector::zeros(12);
        assert_eq!(m.stage_cash_flow(&zero, false).unwrap(), 0.0);
        assert!(close(m.stage_cash_flow(&zero, true).unwrap(), -314.83, 1e-12));
        let mut one5 = HarvestVector::zeros(12);
        one5.0[4] = 1.0;
        let expect = m.gross_revenue(&one5).unwrap()
            - (m.cutting_cost(&one5).unwrap() + m.hauling_cost(&one5, true).unwrap() + 300.0);
        assert!(close(m.stage_cash_flow(&one5, true).unwrap(), expect, 1e-12));
    }

    /// Straight transcription of the recursion, kept apart from `step`.
    fn reference_step(x: &[f64]) -> Vec<f64> {
        let b_s: Vec<f64> = SPRUCE_CLASSES.iter().map(|c| c.basal_area).collect();
        let d: Vec<f64> = SPRUCE_CLASSES.iter().map(|c| c.diameter).collect();
        let n = x.len();
        let b: f64 = (0..n).map(|i| b_s[i] * x[i]).sum();
        let above = |s: usize| -> f64 { ((s + 1)..n).map(|i| b_s[i] * x[i]).sum() };
        let mu = |s: usize| {
            let ms = (2.492 + 0.02 * d[s] - 3.2e-5 * d[s] * d[s]).exp();
            1.0 / (1.0 + ms * (-0.031 * b).exp())
        };
        let alpha = |s: usize| {
            if s == n - 1 {
                return 0.0;
            }
            let g = 0.02 * (17.839 + 0.0476 * d[s] - 11.585e-5 * d[s] * d[s] + 0.906 * 15.0 - 0.268 * 60.0);
            let a = (g - 0.006824 * above(s) - 0.000480 * b).max(0.0);
            a.min(1.0 - mu(s))
        };
        let phi = 147.8 * (b + 0.741).powf(-0.157) / (1.0 + 0.5494 * (0.018 * b).exp());
        let mut out = vec![0.0; n];
        out[0] = phi + (1.0 - mu(0) - alpha(0)) * x[0];
        for s in 0..n - 1 {
            out[s + 1] = alpha(s) * x[s] + (1.0 - mu(s + 1) - alpha(s + 1)) * x[s + 1];
        }
        out
    }

    #[test]
    fn step_examples() {
        let m = model();
        let zero = HarvestVector::zeros(12);
        let next = m.step(&StandState::zeros(12), &zero, false).unwrap();
        assert!(close(next.0[0], m.ingrowth(0.0).unwrap(), 1e-12));
        assert!(next.0[1..].iter().all(|v| *v == 0.0));

        let mut top = StandState::zeros(12);
        top.0[11] = 40.0;
        let next = m.step(&top, &zero, false).unwrap();
        let b = 40.0 * 0.3068;
        let mu = m.mortality_share(11, b).unwrap();
        assert!(close(next.0[11], (1.0 - mu) * 40.0, 1e-12));

        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let x: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..200.0)).collect();
            let got = m.step(&StandState(x.clone()), &zero, false).unwrap();
            let want = reference_step(&x);
            for (g, w) in got.0.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0));
            }
        }
    }

    #[test]
    fn step_rejects_overharvest() {
        let m = model();
        let mut h = HarvestVector::zeros(12);
        h.0[0] = 500.0;
        let x = StandState(INITIAL_X3.to_vec());
        assert!(matches!(m.step(&x, &h, true), Err(ForestError::Infeasible { class: 0, .. })));
        assert!(matches!(m.step(&x, &h, false), Err(ForestError::Contract(_))));
    }

    #[test]
    fn simulate_contract() {
        let m = model();
        let x0 = StandState::zeros(12);
        assert_eq!(m.simulate(&x0, &[]).unwrap(), vec![x0.clone()]);
        let zero = HarvestVector::zeros(12);
        let traj = m.simulate(&x0, &[(false, zero.clone()), (false, zero.clone())]).unwrap();
        assert_eq!(traj.len(), 3);
        let x1 = &traj[1];
        let b1 = m.total_basal_area(x1).unwrap();
        let mu = m.mortality_share(0, b1).unwrap();
        let alpha = m.growth_share(0, b1, m.basal_area_above(x1, 0).unwrap()).unwrap();
        let expect = (1.0 - mu - alpha) * x1.0[0] + m.ingrowth(b1).unwrap();
        assert!(close(traj[2].0[0], expect, 1e-12));
    }

    #[test]
    fn share_invariants_on_grid() {
        let m = model();
        let phi0 = m.ingrowth(0.0).unwrap();
        for s in 0..12 {
            let mut prev = 0.0;
            for k in 0..=1000 {
                let b = 200.0 * k as f64 / 1000.0;
                let phi = m.ingrowth(b).unwrap();
                assert!(phi > 0.0 && (k == 0 || phi < phi0));
                let mu = m.mortality_share(s, b).unwrap();
                assert!(mu > 0.0 && mu < 1.0);
                assert!(mu >= prev);
                prev = mu;
            }
        }
    }

    #[test]
    fn step_is_deterministic() {
        let m = model();
        let x = StandState(INITIAL_X3.to_vec());
        let h = HarvestVector::zeros(12);
        let a = m.step(&x, &h, false).unwrap();
        let b = m.step(&x, &h, false).unwrap();
        assert!(a.0.iter().zip(&b.0).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
