//! Declarative simulation scenarios read from TOML.

use std::path::Path;

use rdvdl_core::sim::{FaultEffect, FaultSpec, PlantConfig, Profile, DEFAULT_ONSET};
use serde::Deserialize;

use crate::error::{with_path, CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub faults: Vec<ScenarioFault>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFault {
    pub id: u8,
    pub onset: Option<usize>,
    #[serde(default)]
    pub propagate: bool,
    /// Replaces the preset effects when given.
    pub effects: Option<Vec<ScenarioEffect>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScenarioEffect {
    /// Variable tag such as `PV6` or `CV3`.
    pub variable: String,
    #[serde(flatten)]
    pub profile: Profile,
}

impl Scenario {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = with_path(std::fs::read_to_string(path), path)?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Resolves every fault into a spec for `plant`.
    pub fn fault_specs(&self, plant: &PlantConfig) -> CliResult<Vec<FaultSpec>> {
        self.faults
            .iter()
            .map(|f| {
                let mut spec = FaultSpec::preset(f.id, f.onset.unwrap_or(DEFAULT_ONSET))?;
                spec.propagate = f.propagate;
                if let Some(effects) = &f.effects {
                    spec.effects = effects
                        .iter()
                        .map(|e| {
                            let column = plant.names.iter().position(|n| *n == e.variable).ok_or_else(|| {
                                CliError::Config(format!("unknown variable {:?} in fault {}", e.variable, f.id))
                            })?;
                            Ok(FaultEffect {
                                column,
                                profile: e.profile,
                            })
                        })
                        .collect::<CliResult<_>>()?;
                    spec.tuned = false;
                }
                Ok(spec)
            })
            .collect()
    }
}
