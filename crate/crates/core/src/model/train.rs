use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{forward_on_tape, init_model, Checkpoint, GenerationParams, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Adaptive, AdaptiveConfig, Tape};

/// One training sequence; next-token loss covers predictions of
/// `tokens[target_from..]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSeq {
    pub tokens: Vec<u32>,
    pub target_from: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseTrainConfig {
    pub steps: usize,
    pub save_every: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        BaseTrainConfig {
            steps: 5000,
            save_every: 1250,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Sorted by strictly increasing step.
    pub checkpoints: Vec<Checkpoint>,
    /// Mean batch loss at each step.
    pub losses: Vec<f64>,
}

/// Digest identifying a training corpus.
pub fn corpus_id(corpus: &[CorpusSeq]) -> String {
    let mut h = Sha256::new();
    for seq in corpus {
        h.update((seq.tokens.len() as u32).to_le_bytes());
        h.update((seq.target_from as u32).to_le_bytes());
        for t in &seq.tokens {
            h.update(t.to_le_bytes());
        }
    }
    let d = h.finalize();
    d[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Trains from the seeded initialization of `config`, saving a checkpoint
/// every `save_every` steps and at the final step.
pub fn train_base_trajectory(
    config: ModelConfig,
    corpus: &[CorpusSeq],
    tc: &BaseTrainConfig,
) -> Result<Trajectory> {
    if tc.save_every == 0 || tc.steps < tc.save_every {
        return Err(Error::Config(format!(
            "need steps ≥ save_every ≥ 1, got steps={} save_every={}",
            tc.steps, tc.save_every
        )));
    }
    if tc.batch_size == 0 {
        return Err(Error::Config("batch_size must be ≥ 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Input("empty training corpus".into()));
    }
    for seq in corpus {
        if seq.tokens.len() < 2 || seq.target_from == 0 || seq.target_from >= seq.tokens.len() + 1 {
            return Err(Error::Input(format!("malformed corpus sequence {:?}", seq.tokens)));
        }
        super::check_tokens(&config, &seq.tokens)?;
    }
    let id = corpus_id(corpus);
    let mut ckpt = init_model(config)?;
    ckpt.corpus_id = id.clone();
    let mut params = ckpt.params;
    let mut opt = Adaptive::new(AdaptiveConfig::momentum_free(tc.lr), &params);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut checkpoints = Vec::new();
    let mut losses = Vec::with_capacity(tc.steps);

    for step in 1..=tc.steps {
        let mut tape = Tape::<f32>::new();
        let bound = params.bind(&mut tape, true);
        let mut batch_losses = Vec::with_capacity(tc.batch_size);
        for _ in 0..tc.batch_size {
            if order.is_empty() {
                order = (0..corpus.len()).collect();
                order.shuffle(&mut rng);
            }
            let seq = &corpus[order.pop().expect("refilled")];
            let input = &seq.tokens[..seq.tokens.len() - 1];
            let targets: Vec<Option<usize>> = (0..input.len())
                .map(|t| (t + 1 >= seq.target_from).then(|| seq.tokens[t + 1] as usize))
                .collect();
            let fv = forward_on_tape(&mut tape, &config, &bound, input, true, None)?;
            batch_losses.push(tape.cross_entropy(fv.logits.expect("requested"), &targets)?);
        }
        let mut total = batch_losses[0];
        for &l in &batch_losses[1..] {
            total = tape.add(total, l)?;
        }
        let loss = tape.scale(total, 1.0 / tc.batch_size as f64);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Training {
                step,
                reason: format!("loss is {value}"),
            });
        }
        losses.push(value);
        tape.backward(loss)?;
        params.accumulate_grads(&tape, &bound)?;
        opt.step(&mut params, None)?;
        if !params.all_finite() {
            return Err(Error::Training {
                step,
                reason: "non-finite parameters".into(),
            });
        }
        if step % tc.save_every == 0 || step == tc.steps {
            checkpoints.push(Checkpoint {
                config,
                params: params.clone(),
                step: step as u64,
                corpus_id: id.clone(),
            });
        }
    }
    Ok(Trajectory { checkpoints, losses })
}

/// Argmax decoding until EOS or `max_new_tokens`.
pub fn greedy_decode(ckpt: &Checkpoint, prompt: &[u32], max_new_tokens: usize) -> Result<Vec<u32>> {
    let gp = GenerationParams {
        n_samples: 1,
        temperature: 1e-9,
        max_new_tokens,
        seed: 0,
    };
    Ok(super::sample_responses(ckpt, prompt, &gp)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 16,
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            seq_max: 8,
            seed: 3,
        }
    }

    fn corpus() -> Vec<CorpusSeq> {
        (0..6u32)
            .map(|i| CorpusSeq {
                tokens: vec![1, 4 + i, 3, 4 + (i + 1) % 6, 2],
                target_from: 3,
            })
            .collect()
    }

    #[test]
    fn schedule_arithmetic() {
        let tc = BaseTrainConfig {
            steps: 100,
            save_every: 50,
            lr: 1e-3,
            batch_size: 2,
            seed: 0,
        };
        let t = train_base_trajectory(cfg(), &corpus(), &tc).unwrap();
        let steps: Vec<u64> = t.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps, [50, 100]);
        assert_eq!(t.losses.len(), 100);

        let t = train_base_trajectory(cfg(), &corpus(), &BaseTrainConfig { steps: 120, ..tc }).unwrap();
        let steps: Vec<u64> = t.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps, [50, 100, 120]);
    }

    #[test]
    fn zero_lr_leaves_params_untouched() {
        let tc = BaseTrainConfig {
            steps: 5,
            save_every: 5,
            lr: 0.0,
            batch_size: 2,
            seed: 0,
        };
        let t = train_base_trajectory(cfg(), &corpus(), &tc).unwrap();
        assert_eq!(t.checkpoints[0].params, init_model(cfg()).unwrap().params);
    }

    #[test]
    fn learns_the_toy_mapping() {
        let tc = BaseTrainConfig {
            steps: 400,
            save_every: 400,
            lr: 1e-2,
            batch_size: 4,
            seed: 0,
        };
        let t = train_base_trajectory(cfg(), &corpus(), &tc).unwrap();
        let head: f64 = t.losses[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = t.losses[350..].iter().sum::<f64>() / 50.0;
        assert!(tail < head * 0.5, "{head} -> {tail}");
        let out = greedy_decode(&t.checkpoints[0], &[1, 6, 3], 3).unwrap();
        assert_eq!(out, [7, 2]);
    }

    #[test]
    fn bad_schedule_rejected() {
        let tc = BaseTrainConfig {
            steps: 10,
            save_every: 20,
            ..Default::default()
        };
        assert!(matches!(train_base_trajectory(cfg(), &corpus(), &tc), Err(Error::Config(_))));
    }
}
