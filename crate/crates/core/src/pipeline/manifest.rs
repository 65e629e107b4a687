use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{within, RunConfig};
use crate::error::{Error, Result};
use crate::seed::digest_hex;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    TrainBase,
    CollectLabels,
    TrainProbe,
    Eval,
    Transfer,
    AblateLayers,
    SubsetCompare,
    Bench,
}

impl Phase {
    /// In dependency order.
    pub const ALL: [Phase; 8] = [
        Phase::TrainBase,
        Phase::CollectLabels,
        Phase::TrainProbe,
        Phase::Eval,
        Phase::Transfer,
        Phase::AblateLayers,
        Phase::SubsetCompare,
        Phase::Bench,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::TrainBase => "train-base",
            Phase::CollectLabels => "collect-labels",
            Phase::TrainProbe => "train-probe",
            Phase::Eval => "eval",
            Phase::Transfer => "transfer",
            Phase::AblateLayers => "ablate-layers",
            Phase::SubsetCompare => "subset-compare",
            Phase::Bench => "bench",
        }
    }

    /// Phases whose artifacts this one reads.
    pub fn needs(self) -> &'static [Phase] {
        match self {
            Phase::TrainBase => &[],
            Phase::CollectLabels => &[Phase::TrainBase],
            Phase::TrainProbe | Phase::AblateLayers => &[Phase::TrainBase, Phase::CollectLabels],
            Phase::Eval | Phase::Transfer | Phase::SubsetCompare | Phase::Bench => {
                &[Phase::TrainBase, Phase::CollectLabels, Phase::TrainProbe]
            }
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Phase::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown phase {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub artifacts: Vec<Artifact>,
}

/// What a run produced: the config it ran under and a digest for every
/// artifact, grouped by phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub config_digest: String,
    pub phases: Vec<PhaseRecord>,
}

impl RunManifest {
    pub fn new(config: &RunConfig) -> Self {
        // Worker count changes wall clock only, so it is not part of the
        // identity of a run.
        let identity = RunConfig {
            workers: 1,
            ..config.clone()
        };
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            config_digest: digest_hex(identity.to_json().as_bytes()),
            phases: Vec::new(),
        }
    }

    pub fn record(&self, phase: Phase) -> Option<&PhaseRecord> {
        self.phases.iter().find(|r| r.phase == phase)
    }

    /// Replaces any earlier record of the same phase, keeping phase order.
    pub fn set(&mut self, record: PhaseRecord) {
        self.phases.retain(|r| r.phase != record.phase);
        self.phases.push(record);
        self.phases.sort_by_key(|r| r.phase);
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn load(out: &Path) -> Result<Option<Self>> {
        let path = out.join(MANIFEST_FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| Error::Pipeline(format!("unreadable manifest {}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        crate::codec::write_file(out.join(MANIFEST_FILE), self.to_json().as_bytes())
    }
}

/// `Ok(true)` when every artifact of `record` exists with its recorded
/// digest, `Ok(false)` when one is missing; a changed file is an error.
pub fn verify(out: &Path, record: &PhaseRecord) -> Result<bool> {
    for a in &record.artifacts {
        let path = within(out, &a.path)?;
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(false),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let found = digest_hex(&bytes);
        if found != a.sha256 {
            return Err(Error::StaleArtifact {
                path: a.path.clone(),
                expected: a.sha256.clone(),
                found,
            });
        }
    }
    Ok(true)
}
