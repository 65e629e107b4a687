use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ProbeSpec, TrainConfig};
use crate::model::{BaseTrainConfig, GenerationParams, ModelConfig};
use crate::probes::{LayerMode, NllInput, ProbeKind};
use crate::seed::derive_seed;
use crate::tasks::TaskKind;

pub const SCHEMA_VERSION: u32 = 1;

/// One task of a run: probe instances plus the base-training corpus drawn
/// from the same instance space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Probe instances, split into train and test.
    pub count: usize,
    pub test_fraction: f64,
    /// Instances in the base-model training corpus.
    pub corpus_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub save_every: usize,
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_samples: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    #[serde(default = "full_layers")]
    pub layers: LayerMode,
    #[serde(default)]
    pub d_probe: Option<usize>,
    #[serde(default = "default_rank")]
    pub lora_rank: usize,
    #[serde(default)]
    pub nll_input: NllInput,
}

fn full_layers() -> LayerMode {
    LayerMode::Full
}

fn default_rank() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsetConfig {
    pub fractions: Vec<f64>,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub prompts: usize,
    pub n_samples: usize,
    pub max_new_tokens: usize,
    /// Latency model inputs for the crossover curve, in hours.
    pub t_init_hours: f64,
    pub t_gen_hours: f64,
    pub t_probe_hours: f64,
    pub curve_max: u64,
}

/// Declarative description of one pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub workers: usize,
    pub model: ModelShape,
    pub tasks: Vec<TaskConfig>,
    pub schedule: ScheduleConfig,
    pub sampling: SamplingConfig,
    pub probes: Vec<ProbeConfig>,
    pub probe_train: ProbeTrainConfig,
    /// Independent probe initializations per cell; reports take medians.
    pub probe_seeds: usize,
    /// Checkpoint for the fidelity, ablation, subset and bench phases;
    /// `None` means the final checkpoint.
    #[serde(default)]
    pub fidelity_step: Option<u64>,
    /// Probe kinds trained at every checkpoint for the transfer phase.
    pub transfer_probes: Vec<ProbeKind>,
    /// Layer-mode variants of the submodel probe for the ablation phase.
    pub ablation_layers: Vec<LayerMode>,
    pub subset: SubsetConfig,
    pub bench: BenchConfig,
}

/// Model dimensions; the init seed is derived from the run seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub seq_max: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            workers: 1,
            model: ModelShape {
                vocab_size: m.vocab_size,
                d_model: m.d_model,
                n_layers: m.n_layers,
                n_heads: m.n_heads,
                d_ff: m.d_ff,
                seq_max: m.seq_max,
            },
            tasks: vec![
                TaskConfig {
                    kind: TaskKind::ModAdd { modulus: 32 },
                    count: 1024,
                    test_fraction: 0.25,
                    corpus_size: 1024,
                },
                TaskConfig {
                    kind: TaskKind::Parity { length: 10 },
                    count: 1024,
                    test_fraction: 0.25,
                    corpus_size: 1024,
                },
            ],
            schedule: ScheduleConfig {
                steps: 5000,
                save_every: 1250,
                lr: 1e-3,
                batch_size: 16,
            },
            sampling: SamplingConfig {
                n_samples: 8,
                temperature: 1.0,
                max_new_tokens: 8,
            },
            probes: [ProbeKind::LossFit, ProbeKind::Linear, ProbeKind::Submodel, ProbeKind::Lora]
                .into_iter()
                .map(|kind| ProbeConfig {
                    kind,
                    layers: LayerMode::Full,
                    d_probe: None,
                    lora_rank: 4,
                    nll_input: NllInput::GoldAnswer,
                })
                .collect(),
            probe_train: ProbeTrainConfig {
                lr: 3e-3,
                batch_size: 32,
                max_epochs: 200,
                patience: 20,
                val_fraction: 0.1,
            },
            probe_seeds: 3,
            fidelity_step: None,
            transfer_probes: vec![ProbeKind::Submodel, ProbeKind::Lora],
            ablation_layers: vec![LayerMode::FirstK(4), LayerMode::Full],
            subset: SubsetConfig {
                fractions: vec![0.05, 0.1, 0.2],
                seeds: 3,
            },
            bench: BenchConfig {
                prompts: 200,
                n_samples: 8,
                max_new_tokens: 32,
                t_init_hours: 8.4,
                t_gen_hours: 0.78,
                t_probe_hours: 0.05,
                curve_max: 30,
            },
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Canonical JSON form; also the manifest's config snapshot.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.workers == 0 {
            return bad("workers must be ≥ 1".into());
        }
        self.model_config().validate()?;
        if self.tasks.is_empty() {
            return bad("at least one task is required".into());
        }
        let mut names: Vec<String> = self.tasks.iter().map(|t| t.kind.name()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate task".into());
        }
        for t in &self.tasks {
            t.kind.validate()?;
            if t.kind.min_vocab() > self.model.vocab_size {
                return bad(format!("{} needs vocab ≥ {}", t.kind.name(), t.kind.min_vocab()));
            }
            if t.kind.max_len() > self.model.seq_max {
                return bad(format!("{} needs seq_max ≥ {}", t.kind.name(), t.kind.max_len()));
            }
            if t.count < 2 || !(t.test_fraction > 0.0 && t.test_fraction < 1.0) {
                return bad(format!("{}: need count ≥ 2 and 0 < test_fraction < 1", t.kind.name()));
            }
            if t.corpus_size == 0 {
                return bad(format!("{}: corpus_size must be ≥ 1", t.kind.name()));
            }
        }
        let s = &self.schedule;
        if s.save_every == 0 || s.steps < s.save_every || s.batch_size == 0 || !(s.lr >= 0.0) {
            return bad("schedule needs steps ≥ save_every ≥ 1, batch_size ≥ 1 and lr ≥ 0".into());
        }
        self.generation("x").validate()?;
        self.train_config(0).validate()?;
        if self.probes.is_empty() || self.probe_seeds == 0 {
            return bad("need at least one probe and one probe seed".into());
        }
        let mut labels: Vec<String> = self.probes.iter().map(|p| self.probe_spec(p, 0).label()).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate probe configuration".into());
        }
        for p in &self.probes {
            if p.kind == ProbeKind::Lora && p.lora_rank == 0 {
                return bad("lora_rank must be ≥ 1".into());
            }
        }
        for k in &self.transfer_probes {
            if !self.probes.iter().any(|p| p.kind == *k) {
                return bad(format!("transfer probe {k} is not among the configured probes"));
            }
        }
        if let Some(step) = self.fidelity_step {
            if !self.checkpoint_steps().contains(&step) {
                return bad(format!("fidelity_step {step} is not a checkpoint step"));
            }
        }
        for mode in self.probes.iter().map(|p| p.layers).chain(self.ablation_layers.iter().copied()) {
            crate::probes::make_layer_map(mode, self.model.n_layers)?;
        }
        if self.subset.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) || self.subset.seeds == 0 {
            return bad("subset fractions must lie in (0, 1] with ≥ 1 seed".into());
        }
        let b = &self.bench;
        if b.prompts == 0 || b.n_samples == 0 || b.max_new_tokens == 0 || b.curve_max == 0 {
            return bad("bench sizes must be ≥ 1".into());
        }
        if [b.t_init_hours, b.t_gen_hours, b.t_probe_hours].iter().any(|v| !(*v >= 0.0)) {
            return bad("latency figures must be ≥ 0".into());
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = self.model;
        ModelConfig {
            vocab_size: m.vocab_size,
            d_model: m.d_model,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            seq_max: m.seq_max,
            seed: derive_seed(self.seed, "model"),
        }
    }

    /// Steps at which the base trajectory saves checkpoints.
    pub fn checkpoint_steps(&self) -> Vec<u64> {
        let s = &self.schedule;
        let mut steps: Vec<u64> = (1..=s.steps / s.save_every.max(1)).map(|i| (i * s.save_every) as u64).collect();
        if steps.last() != Some(&(s.steps as u64)) {
            steps.push(s.steps as u64);
        }
        steps
    }

    pub fn fidelity_step(&self) -> u64 {
        self.fidelity_step
            .unwrap_or_else(|| *self.checkpoint_steps().last().expect("at least one checkpoint"))
    }

    pub fn base_train(&self) -> BaseTrainConfig {
        let s = &self.schedule;
        BaseTrainConfig {
            steps: s.steps,
            save_every: s.save_every,
            lr: s.lr,
            batch_size: s.batch_size,
            seed: derive_seed(self.seed, "base-train"),
        }
    }

    /// Label-collection sampling params; `scope` keys the seed.
    pub fn generation(&self, scope: &str) -> GenerationParams {
        GenerationParams {
            n_samples: self.sampling.n_samples,
            temperature: self.sampling.temperature,
            max_new_tokens: self.sampling.max_new_tokens,
            seed: derive_seed(self.seed, &format!("labels/{scope}")),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let p = &self.probe_train;
        TrainConfig {
            lr: p.lr,
            batch_size: p.batch_size,
            max_epochs: p.max_epochs,
            patience: p.patience,
            val_fraction: p.val_fraction,
            seed,
        }
    }

    pub fn probe_spec(&self, p: &ProbeConfig, init_seed: u64) -> ProbeSpec {
        ProbeSpec {
            kind: p.kind,
            layers: p.layers,
            d_probe: p.d_probe,
            lora_rank: p.lora_rank,
            nll_input: p.nll_input,
            init_seed,
        }
    }
}

/// Joins `rel` onto `root`, refusing anything that would escape it.
pub fn within(root: &Path, rel: &str) -> Result<PathBuf> {
    let p = Path::new(rel);
    if p.is_absolute() || p.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(Error::Config(format!("artifact path {rel:?} leaves the output directory")));
    }
    Ok(root.join(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_and_validates() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_versions_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json()).unwrap();
        v["surprise"] = 1.into();
        assert!(matches!(RunConfig::from_json(&v.to_string()), Err(Error::Config(_))));
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json()).unwrap();
        v["schema_version"] = 9.into();
        assert!(matches!(RunConfig::from_json(&v.to_string()), Err(Error::Config(_))));
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json()).unwrap();
        v["schedule"]["warmup"] = 3.into();
        assert!(RunConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn paths_stay_inside() {
        let root = Path::new("/out");
        assert_eq!(within(root, "labels/1.tsv").unwrap(), Path::new("/out/labels/1.tsv"));
        assert!(within(root, "../x").is_err());
        assert!(within(root, "/etc/x").is_err());
    }
}
