//! Experiment specification: what to run, over which grid, how many trials,
//! and from which base seed.

use serde::{Deserialize, Serialize};

use isac_core::error::IsacError;
use isac_core::scene::SceneConfig;

/// Experiment families, one per figure family they reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentFamily {
    /// Closed-form bound curves over element spacing.
    BoundsSweep,
    /// Single-user optimality versus element count.
    SingleUser,
    /// Multi-user convergence traces.
    MultiUser,
    /// Sensing coverage probability over an SCNR threshold grid.
    Coverage,
    /// Sensing-communication trade-off over rate thresholds.
    Tradeoff,
    /// Movement-error and CSI-error degradation sweeps.
    Robustness,
}

/// Which solver arm produces the beams and layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolverArm {
    /// Full alternating optimization with movable elements.
    #[default]
    Algorithm2,
    /// Same optimization with the element layout frozen at the fixed grid.
    FixedLayout,
    /// Sequential per-element position refinement baseline.
    Sequential,
}

/// Sweep axis and grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Interpretation depends on the family: spacing in wavelengths
    /// (bounds-sweep), element count (single-user), SCNR threshold in dB
    /// (coverage), rate threshold in bits/s/Hz (tradeoff), movement-error
    /// scale in wavelengths or CSI-error variance (robustness).
    pub variable: String,
    pub grid: Vec<f64>,
}

/// Complete experiment description; hashable and serializable so runs are
/// replayable bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub family: ExperimentFamily,
    #[serde(default)]
    pub solver: SolverArm,
    pub trials: usize,
    pub base_seed: u64,
    pub sweep: SweepSpec,
    /// Scene; `None` selects the family's default scenario.
    #[serde(default)]
    pub scene: Option<SceneConfig>,
    /// Per-user rate thresholds for the multi-user solver arms.
    #[serde(default)]
    pub rate_thresholds: Option<Vec<f64>>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), IsacError> {
        if self.trials < 1 {
            return Err(IsacError::InvalidInput("trials must be >= 1".into()));
        }
        if self.sweep.grid.is_empty() {
            return Err(IsacError::InvalidInput("sweep grid must be nonempty".into()));
        }
        if let Some(scene) = &self.scene {
            scene.validate()?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, IsacError> {
        let spec: ExperimentSpec = toml::from_str(text)
            .map_err(|e| IsacError::InvalidInput(format!("spec parse: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Canonical JSON used for the manifest hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_validation() {
        let text = r#"
name = "coverage-demo"
family = "coverage"
trials = 4
base_seed = 7
[sweep]
variable = "threshold_db"
grid = [0.0, 3.0, 6.0]
"#;
        let spec = ExperimentSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.family, ExperimentFamily::Coverage);
        assert_eq!(spec.solver, SolverArm::Algorithm2);
        assert_eq!(spec.sweep.grid.len(), 3);

        let bad = text.replace("trials = 4", "trials = 0");
        assert!(ExperimentSpec::from_toml_str(&bad).is_err());
    }

    #[test]
    fn canonical_json_stable() {
        let spec = ExperimentSpec {
            name: "x".into(),
            family: ExperimentFamily::BoundsSweep,
            solver: SolverArm::Algorithm2,
            trials: 1,
            base_seed: 0,
            sweep: SweepSpec {
                variable: "spacing".into(),
                grid: vec![0.5],
            },
            scene: None,
            rate_thresholds: None,
        };
        assert_eq!(spec.canonical_json(), spec.canonical_json());
    }
}
