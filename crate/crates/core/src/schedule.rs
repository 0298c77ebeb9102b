//! Harvest schedule genotypes: a transition bit string followed by a
//! steady-state cycle bit string that repeats forever.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ForestError, Result};

/// Length bounds for transition and cycle strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleBounds {
    pub t_min: usize,
    pub t_max: usize,
    pub s_min: usize,
    pub s_max: usize,
}

impl Default for ScheduleBounds {
    fn default() -> Self {
        ScheduleBounds { t_min: 10, t_max: 25, s_min: 1, s_max: 10 }
    }
}

impl ScheduleBounds {
    pub fn new(t_min: usize, t_max: usize, s_min: usize, s_max: usize) -> Self {
        ScheduleBounds { t_min, t_max, s_min, s_max }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.t_min > self.t_max {
            out.push("bounds.t_min: must not exceed t_max".to_string());
        }
        if self.s_min == 0 {
            out.push("bounds.s_min: cycle length must be at least 1".to_string());
        }
        if self.s_min > self.s_max {
            out.push("bounds.s_min: must not exceed s_max".to_string());
        }
        out
    }

    /// Upper limit T = t_max + s_max on the end of the first cycle.
    pub fn horizon(&self) -> usize {
        self.t_max + self.s_max
    }
}

/// Transition end t0 and first-cycle end t1, in stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Horizon {
    pub t0: usize,
    pub t1: usize,
}

impl Horizon {
    pub fn cycle_len(&self) -> usize {
        self.t1 - self.t0
    }
}

/// A harvesting strategy: one decision bit per stage of the transition,
/// then one per stage of the repeating cycle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScheduleGenotype {
    pub transition: Vec<bool>,
    pub cycle: Vec<bool>,
}

/// A single rule a genotype breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    TransitionTooShort { len: usize, min: usize },
    TransitionTooLong { len: usize, max: usize },
    CycleTooShort { len: usize, min: usize },
    CycleTooLong { len: usize, max: usize },
    EmptyCycle,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TransitionTooShort { len, min } => {
                write!(f, "transition too short ({len} < {min})")
            }
            Violation::TransitionTooLong { len, max } => {
                write!(f, "transition too long ({len} > {max})")
            }
            Violation::CycleTooShort { len, min } => write!(f, "cycle too short ({len} < {min})"),
            Violation::CycleTooLong { len, max } => write!(f, "cycle too long ({len} > {max})"),
            Violation::EmptyCycle => write!(f, "empty cycle"),
        }
    }
}

impl ScheduleGenotype {
    pub fn new(transition: Vec<bool>, cycle: Vec<bool>) -> Self {
        ScheduleGenotype { transition, cycle }
    }

    pub fn horizon(&self) -> Horizon {
        Horizon { t0: self.transition.len(), t1: self.transition.len() + self.cycle.len() }
    }

    /// Harvest decision at stage `t`; the cycle is anchored at bit 0 on t = t0.
    pub fn delta_at(&self, t: usize) -> bool {
        let t0 = self.transition.len();
        if t < t0 {
            self.transition[t]
        } else if self.cycle.is_empty() {
            false
        } else {
            self.cycle[(t - t0) % self.cycle.len()]
        }
    }

    /// Decisions for stages 0..t1.
    pub fn decisions(&self) -> Vec<bool> {
        self.transition.iter().chain(&self.cycle).copied().collect()
    }

    pub fn total_bits(&self) -> usize {
        self.transition.len() + self.cycle.len()
    }

    /// Structural soundness needed for fitness evaluation, independent of GA bounds.
    pub fn check_evaluable(&self) -> Result<()> {
        if self.cycle.is_empty() {
            return Err(ForestError::Schedule("cycle must have at least one stage".into()));
        }
        if !self.cycle.iter().any(|b| *b) {
            return Err(ForestError::Schedule("empty cycle: no harvest in steady state".into()));
        }
        Ok(())
    }

    /// Every violated rule for the given bounds.
    pub fn validate(&self, bounds: &ScheduleBounds) -> Vec<Violation> {
        let mut out = Vec::new();
        let (t, s) = (self.transition.len(), self.cycle.len());
        if t < bounds.t_min {
            out.push(Violation::TransitionTooShort { len: t, min: bounds.t_min });
        }
        if t > bounds.t_max {
            out.push(Violation::TransitionTooLong { len: t, max: bounds.t_max });
        }
        if s < bounds.s_min {
            out.push(Violation::CycleTooShort { len: s, min: bounds.s_min });
        }
        if s > bounds.s_max {
            out.push(Violation::CycleTooLong { len: s, max: bounds.s_max });
        }
        if !self.cycle.iter().any(|b| *b) {
            out.push(Violation::EmptyCycle);
        }
        out
    }

    pub fn is_valid(&self, bounds: &ScheduleBounds) -> bool {
        self.validate(bounds).is_empty()
    }

    /// Flip one uniformly chosen cycle bit to 1 if the cycle has no harvest.
    pub fn repair<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if !self.cycle.is_empty() && !self.cycle.iter().any(|b| *b) {
            let i = rng.random_range(0..self.cycle.len());
            self.cycle[i] = true;
        }
    }

    /// Cache key "transition|cycle".
    pub fn canonical_key(&self) -> String {
        self.to_string()
    }
}

fn bits_to_string(bits: &[bool]) -> String {
    bits.iter().map(|b| if *b { '1' } else { '0' }).collect()
}

fn parse_bits(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(ForestError::Schedule(format!("unexpected character {other:?} in bits"))),
        })
        .collect()
}

impl fmt::Display for ScheduleGenotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", bits_to_string(&self.transition), bits_to_string(&self.cycle))
    }
}

impl FromStr for ScheduleGenotype {
    type Err = ForestError;

    fn from_str(s: &str) -> Result<Self> {
        let cleaned: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let (t, c) = cleaned
            .split_once('|')
            .ok_or_else(|| ForestError::Schedule(format!("expected BITS|BITS, got {s:?}")))?;
        if c.contains('|') {
            return Err(ForestError::Schedule(format!("expected exactly one '|' in {s:?}")));
        }
        Ok(ScheduleGenotype { transition: parse_bits(t)?, cycle: parse_bits(c)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(s: &str) -> ScheduleGenotype {
        s.parse().unwrap()
    }

    #[test]
    fn delta_at_examples() {
        let x = g("01000100|10001000");
        assert!(x.delta_at(1));
        assert!(!x.delta_at(0));
        assert!(x.delta_at(8));
        assert!(x.delta_at(16));
        assert!(x.delta_at(12));
        assert!(!x.delta_at(13));
    }

    #[test]
    fn validate_examples() {
        let b = ScheduleBounds::default();
        assert!(g("0000000000|1").validate(&b).is_empty());
        assert_eq!(g("0000000000|000").validate(&b), vec![Violation::EmptyCycle]);
        let short = g("000000000|1").validate(&b);
        assert_eq!(short, vec![Violation::TransitionTooShort { len: 9, min: 10 }]);
        assert_eq!(short[0].to_string(), "transition too short (9 < 10)");
        let many = g("0|00000000000").validate(&b);
        assert_eq!(many.len(), 3);
    }

    #[test]
    fn key_examples() {
        assert_eq!(g("01|1").canonical_key(), "01|1");
        assert_ne!(g("01|1").canonical_key(), g("0|11").canonical_key());
        assert_ne!(g("01|10").canonical_key(), g("01|01").canonical_key());
        assert!("01|2".parse::<ScheduleGenotype>().is_err());
        assert!("0101".parse::<ScheduleGenotype>().is_err());
        assert!("|1".parse::<ScheduleGenotype>().unwrap().transition.is_empty());
    }

    #[test]
    fn repair_sets_one_cycle_bit() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let mut x = g("0101|0000");
        x.repair(&mut rng);
        assert_eq!(x.cycle.iter().filter(|b| **b).count(), 1);
        let mut y = g("0101|0010");
        y.repair(&mut rng);
        assert_eq!(y, g("0101|0010"));
    }

    proptest! {
        #[test]
        fn key_round_trips(t in proptest::collection::vec(any::<bool>(), 0..30),
                           c in proptest::collection::vec(any::<bool>(), 1..12)) {
            let x = ScheduleGenotype::new(t, c);
            let back: ScheduleGenotype = x.canonical_key().parse().unwrap();
            prop_assert_eq!(back, x);
        }

        #[test]
        fn delta_periodic_in_cycle(t in proptest::collection::vec(any::<bool>(), 0..30),
                                   c in proptest::collection::vec(any::<bool>(), 1..12),
                                   k in 0usize..100) {
            let x = ScheduleGenotype::new(t, c);
            let h = x.horizon();
            prop_assert_eq!(x.delta_at(h.t0 + k), x.delta_at(h.t0 + k + h.cycle_len()));
        }
    }
}
