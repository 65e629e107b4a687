//! Predictors from a checkpoint's internal representations to a per-prompt
//! success probability.

mod baselines;
mod io;
mod lora;
mod submodel;

pub use baselines::{lossfit_fit, ridge_fit, LinearProbe, LossFit, NllInput, LINEAR_RIDGE};
pub use io::{load_probe, read_probe, save_probe, write_probe, PROBE_MAGIC};
pub use lora::LoraProbe;
pub use submodel::SubmodelProbe;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{hidden_states, sequence_nll, prompt_nll, Checkpoint, HiddenStateStack};
use crate::tasks::TaskInstance;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    LossFit,
    Linear,
    Submodel,
    Lora,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 4] = [ProbeKind::LossFit, ProbeKind::Linear, ProbeKind::Submodel, ProbeKind::Lora];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::LossFit => "lossfit",
            ProbeKind::Linear => "linear",
            ProbeKind::Submodel => "submodel",
            ProbeKind::Lora => "lora",
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProbeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown probe kind {s:?}")))
    }
}

/// Which base layers feed a submodel probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LayerMode {
    Full,
    FirstK(usize),
}

impl fmt::Display for LayerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerMode::Full => f.write_str("full"),
            LayerMode::FirstK(k) => write!(f, "first:{k}"),
        }
    }
}

impl From<LayerMode> for String {
    fn from(m: LayerMode) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for LayerMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for LayerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(LayerMode::Full);
        }
        s.strip_prefix("first:")
            .and_then(|k| k.parse().ok())
            .map(LayerMode::FirstK)
            .ok_or_else(|| Error::Usage(format!("layers must be `full` or `first:K`, got {s:?}")))
    }
}

/// Strictly increasing 1-based base-layer indices. Probe layer `k` reads
/// `H^(map[k])`, where `H^(1)` is the embedding output (stack index 0).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerMap {
    pub map: Vec<usize>,
}

impl LayerMap {
    pub fn k(&self) -> usize {
        self.map.len()
    }

    /// Hidden-state stack index for probe layer `k` (0-based).
    pub fn stack_index(&self, k: usize) -> usize {
        self.map[k] - 1
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if self.map.is_empty() || self.map[0] < 1 {
            return Err(Error::Config(format!("invalid layer map {:?}", self.map)));
        }
        if self.map.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("layer map {:?} not strictly increasing", self.map)));
        }
        if *self.map.last().expect("non-empty") > n_layers {
            return Err(Error::Config(format!(
                "layer map {:?} exceeds the base model's {n_layers} layers",
                self.map
            )));
        }
        Ok(())
    }
}

pub fn make_layer_map(mode: LayerMode, n_layers: usize) -> Result<LayerMap> {
    let k = match mode {
        LayerMode::Full => n_layers,
        LayerMode::FirstK(k) => k,
    };
    if k == 0 || k > n_layers {
        return Err(Error::Config(format!("need 1 ≤ K ≤ {n_layers}, got K = {k}")));
    }
    Ok(LayerMap { map: (1..=k).collect() })
}

/// Clamps a probability into the open interval representable in 32 bits.
pub fn open_unit(p: f64) -> f64 {
    const BELOW_ONE: f64 = 1.0 - f32::EPSILON as f64 / 2.0;
    p.clamp(f32::MIN_POSITIVE as f64, BELOW_ONE)
}

/// Index of the last non-PAD token.
pub fn last_index(tokens: &[u32]) -> Result<usize> {
    tokens
        .iter()
        .rposition(|&t| t != crate::model::PAD)
        .ok_or_else(|| Error::Input("prompt has no non-PAD token".into()))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Probe {
    LossFit(LossFit),
    Linear(LinearProbe),
    Submodel(SubmodelProbe),
    Lora(LoraProbe),
}

impl Probe {
    pub fn kind(&self) -> ProbeKind {
        match self {
            Probe::LossFit(_) => ProbeKind::LossFit,
            Probe::Linear(_) => ProbeKind::Linear,
            Probe::Submodel(_) => ProbeKind::Submodel,
            Probe::Lora(_) => ProbeKind::Lora,
        }
    }

    /// Predicted success probability from precomputed features.
    pub fn predict(&self, ckpt: &Checkpoint, f: &Features) -> Result<f64> {
        match (self, f) {
            (Probe::LossFit(p), Features::Nll(x)) => Ok(p.predict(*x)),
            (Probe::Linear(p), Features::Stack { stack, last }) => p.predict(stack, *last),
            (Probe::Submodel(p), Features::Stack { stack, last }) => p.predict(stack, *last),
            (Probe::Lora(p), Features::Tokens(t)) => p.predict(ckpt, t),
            (p, _) => Err(Error::Usage(format!("features do not match a {} probe", p.kind()))),
        }
    }
}

/// The representation each probe kind consumes.
#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    Nll(f64),
    Stack { stack: HiddenStateStack, last: usize },
    Tokens(Vec<u32>),
}

/// Computes the features `kind` consumes for one instance.
pub fn features(kind: ProbeKind, nll: NllInput, ckpt: &Checkpoint, inst: &TaskInstance) -> Result<Features> {
    Ok(match kind {
        ProbeKind::LossFit => Features::Nll(match nll {
            NllInput::Prompt => prompt_nll(ckpt, &inst.prompt)?,
            NllInput::GoldAnswer => sequence_nll(ckpt, &inst.prompt, &inst.gold)?,
        }),
        ProbeKind::Linear | ProbeKind::Submodel => Features::Stack {
            stack: hidden_states(ckpt, &inst.prompt)?,
            last: last_index(&inst.prompt)?,
        },
        ProbeKind::Lora => Features::Tokens(inst.prompt.clone()),
    })
}
