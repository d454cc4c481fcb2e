//! Scenario configs shipped with the binary (the same files live under
//! `scenarios/` at the repository root).

use crate::config::ExperimentConfig;
use crate::error::HarnessError;

#[derive(Debug, Clone, Copy)]
pub struct Scenario {
    pub name: &'static str,
    pub json: &'static str,
}

impl Scenario {
    pub fn config(&self) -> Result<ExperimentConfig, HarnessError> {
        serde_json::from_str(self.json)
            .map_err(|e| HarnessError::Json { path: format!("<bundled {}>", self.name).into(), source: e })
    }
}

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        const BUNDLED: &[Scenario] = &[$(Scenario {
            name: $name,
            json: include_str!(concat!("../../../scenarios/", $name, ".json")),
        }),*];
    };
}

bundled!(
    "convex_weights",
    "ipw_average_effect",
    "se_vs_pt",
    "seqrand_nonlinear",
    "seqrand_degenerate",
    "ab_consistency",
);

pub fn all() -> &'static [Scenario] {
    BUNDLED
}

pub fn get(name: &str) -> Option<Scenario> {
    BUNDLED.iter().copied().find(|s| s.name == name)
}
