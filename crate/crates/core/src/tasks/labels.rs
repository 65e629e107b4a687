use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{verify, TaskInstance};
use crate::error::{Error, Result};
use crate::model::{sample_responses, Checkpoint, GenerationParams};
use crate::seed::derive_seed;

/// Monte-Carlo Pass@1 estimate for one prompt at one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrompt {
    pub checkpoint_step: u64,
    pub task: String,
    pub instance_id: String,
    pub n: usize,
    pub temperature: f64,
    /// Run-level generation seed; each instance samples from
    /// `derive_seed(seed, instance_id)`.
    pub seed: u64,
    pub v_hat: f64,
    pub rewards: Vec<u8>,
}

/// Samples `gp.n_samples` responses per instance and scores them. Returns
/// the labels and the total number of generated tokens.
pub fn collect_labels_counted(
    ckpt: &Checkpoint,
    instances: &[TaskInstance],
    gp: &GenerationParams,
) -> Result<(Vec<LabeledPrompt>, usize)> {
    gp.validate()?;
    let per: Vec<(LabeledPrompt, usize)> = instances
        .par_iter()
        .map(|inst| {
            let local = GenerationParams {
                seed: derive_seed(gp.seed, &inst.id),
                ..*gp
            };
            let responses = sample_responses(ckpt, &inst.prompt, &local)?;
            let rewards: Vec<u8> = responses.iter().map(|r| verify(inst, r)).collect();
            let tokens = responses.iter().map(Vec::len).sum();
            let hits: usize = rewards.iter().map(|&r| r as usize).sum();
            Ok((
                LabeledPrompt {
                    checkpoint_step: ckpt.step,
                    task: inst.task(),
                    instance_id: inst.id.clone(),
                    n: gp.n_samples,
                    temperature: gp.temperature,
                    seed: gp.seed,
                    v_hat: hits as f64 / gp.n_samples as f64,
                    rewards,
                },
                tokens,
            ))
        })
        .collect::<Result<_>>()?;
    let tokens = per.iter().map(|(_, t)| t).sum();
    Ok((per.into_iter().map(|(l, _)| l).collect(), tokens))
}

/// `v̂(s) = (1/n) Σ R(s, aᵢ)` per instance, in input order.
pub fn collect_labels(ckpt: &Checkpoint, instances: &[TaskInstance], gp: &GenerationParams) -> Result<Vec<LabeledPrompt>> {
    Ok(collect_labels_counted(ckpt, instances, gp)?.0)
}

fn record_line(l: &LabeledPrompt) -> String {
    let rewards: String = l.rewards.iter().map(|&r| if r == 1 { '1' } else { '0' }).collect();
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
        l.checkpoint_step, l.task, l.instance_id, l.n, l.temperature, l.seed, l.v_hat, rewards
    )
}

pub fn format_label_cache(labels: &[LabeledPrompt]) -> String {
    labels.iter().map(record_line).collect()
}

pub fn write_label_cache(path: impl AsRef<Path>, labels: &[LabeledPrompt]) -> Result<()> {
    crate::codec::write_file(path, format_label_cache(labels).as_bytes())
}

pub fn parse_label_cache(text: &str) -> Result<Vec<LabeledPrompt>> {
    let mut out = Vec::new();
    for (no, line) in text.split_terminator('\n').enumerate() {
        let bad = |what: &str| Error::Input(format!("label cache line {}: {what}", no + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(bad(&format!("expected 8 fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| s.parse::<u64>().map_err(|_| bad(what));
        let rewards: Vec<u8> = f[7]
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(bad("rewards must be 0/1")),
            })
            .collect::<Result<_>>()?;
        let l = LabeledPrompt {
            checkpoint_step: num(f[0], "bad step")?,
            task: f[1].to_owned(),
            instance_id: f[2].to_owned(),
            n: num(f[3], "bad n")? as usize,
            temperature: f[4].parse().map_err(|_| bad("bad temperature"))?,
            seed: num(f[5], "bad seed")?,
            v_hat: f[6].parse().map_err(|_| bad("bad v_hat"))?,
            rewards,
        };
        let hits: usize = l.rewards.iter().map(|&r| r as usize).sum();
        if l.rewards.len() != l.n || l.n == 0 || l.v_hat != hits as f64 / l.n as f64 {
            return Err(bad("v_hat does not equal the mean of rewards"));
        }
        out.push(l);
    }
    Ok(out)
}

pub fn read_label_cache(path: impl AsRef<Path>) -> Result<Vec<LabeledPrompt>> {
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_label_cache(&text)
}
