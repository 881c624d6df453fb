use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::augment::AugmentSpec;
use super::certify::CertificationReport;
use super::gains::GainTable;
use super::terminal::TerminalSet;
use crate::error::{Error, Result};
use crate::models::PolytopicModel;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicArtifact {
    pub model: PolytopicModel,
    pub gains: GainTable,
    pub terminal: TerminalSet,
    pub report: CertificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicArtifact {
    /// Augmented model the gains were synthesized for.
    pub model: PolytopicModel,
    pub augment: AugmentSpec,
    pub gains: GainTable,
    pub report: CertificationReport,
}

/// Everything the online controllers need from the offline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisArtifact {
    pub version: u32,
    /// SHA-256 of the configuration subset the synthesis depends on.
    pub config_hash: String,
    pub kinematic: KinematicArtifact,
    pub dynamic: DynamicArtifact,
}

impl SynthesisArtifact {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Loads an artifact and rejects it if it was built for a different configuration.
    pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let version = value.get("version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(ARTIFACT_VERSION)) {
            return Err(Error::Schema(format!(
                "artifact version {version:?} is not supported (expected {ARTIFACT_VERSION})"
            )));
        }
        let art: Self = serde_json::from_value(value)
            .map_err(|e| Error::Schema(format!("artifact {}: {e}", path.display())))?;
        if let Some(h) = expected_hash {
            if art.config_hash != h {
                return Err(Error::Artifact(format!(
                    "artifact was synthesized for config {} but the current config hashes to {h}",
                    art.config_hash
                )));
            }
        }
        if !art.kinematic.report.passed() || !art.dynamic.report.passed() {
            return Err(Error::Artifact("artifact carries a failed certification report".into()));
        }
        art.kinematic.model.validate()?;
        art.dynamic.model.validate()?;
        Ok(art)
    }
}
