//! JSON configuration with base-case defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    EconParams, GrowthParams, SizeClassTable, StandModel, StandState, INITIAL_X1, INITIAL_X2,
    INITIAL_X3,
};
use crate::error::{ForestError, Result};
use crate::evolutionary::GaConfig;
use crate::fitness::SolverOptions;
use crate::schedule::ScheduleBounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub size_classes: SizeClassTable,
    pub growth: GrowthParams,
    pub econ: EconParams,
    pub initial_state: StandState,
    pub ga: GaConfig,
    pub nlp: SolverOptions,
    pub bounds: ScheduleBounds,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            size_classes: SizeClassTable::default(),
            growth: GrowthParams::default(),
            econ: EconParams::default(),
            initial_state: StandState(INITIAL_X1.to_vec()),
            ga: GaConfig::default(),
            nlp: SolverOptions::default(),
            bounds: ScheduleBounds::default(),
        }
    }
}

impl ModelConfig {
    /// Parses JSON text, fills defaults and validates.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ModelConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ForestError::Config(format!("{path}: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every invariant violation, each prefixed with its field path.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.size_classes.violations();
        out.extend(self.growth.violations());
        out.extend(self.econ.violations());
        out.extend(self.ga.violations());
        out.extend(self.nlp.violations());
        out.extend(self.bounds.violations());
        if self.initial_state.len() != self.size_classes.len() {
            out.push(format!(
                "initial_state: expected {} classes, got {}",
                self.size_classes.len(),
                self.initial_state.len()
            ));
        }
        for (i, v) in self.initial_state.0.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                out.push(format!("initial_state[{i}]: must be finite and >= 0"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() { Ok(()) } else { Err(ForestError::Config(v.join("; "))) }
    }

    pub fn model(&self) -> Result<StandModel> {
        StandModel::new(self.size_classes.clone(), self.growth, self.econ)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Hash of everything a fitness value depends on: model data, initial
    /// state and solver settings. GA and bound settings are excluded.
    pub fn fitness_hash(&self) -> u64 {
        let json = serde_json::to_string(&(
            &self.size_classes,
            &self.growth,
            &self.econ,
            &self.initial_state,
            &self.nlp,
        ))
        .expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

pub fn load_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ForestError::Io(format!("{}: {e}", path.display())))?;
    ModelConfig::from_json_str(&text)
}

/// Built-in initial states by name: "x1", "x2", "x3".
pub fn named_initial_state(name: &str) -> Option<StandState> {
    match name {
        "x1" => Some(StandState(INITIAL_X1.to_vec())),
        "x2" => Some(StandState(INITIAL_X2.to_vec())),
        "x3" => Some(StandState(INITIAL_X3.to_vec())),
        _ => None,
    }
}
