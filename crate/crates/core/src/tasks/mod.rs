//! Synthetic tasks with exact reward oracles, and Monte-Carlo Pass@1
//! label collection.

mod labels;

pub use labels::{collect_labels, collect_labels_counted, format_label_cache, parse_label_cache, read_label_cache, write_label_cache, LabeledPrompt};

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CorpusSeq, BOS, EOS, SEP};

pub const DIGIT0: u32 = 4;
pub const PLUS: u32 = 14;
pub const PAR: u32 = 15;
pub const COPY: u32 = 16;
pub const REV: u32 = 17;
pub const LETTER0: u32 = 18;
pub const N_LETTERS: u32 = 8;

/// Spaces up to this size are enumerated; larger ones are rejection-sampled.
const ENUMERATE_LIMIT: u64 = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskKind {
    ModAdd { modulus: u32 },
    Reverse { length: u32 },
    Parity { length: u32 },
    Copy { length: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskInstance {
    pub id: String,
    pub kind: TaskKind,
    pub prompt: Vec<u32>,
    pub gold: Vec<u32>,
    pub split: Split,
}

impl TaskInstance {
    pub fn task(&self) -> String {
        self.kind.name()
    }

    /// Prompt followed by the gold answer, loss on the answer only.
    pub fn corpus_seq(&self) -> CorpusSeq {
        CorpusSeq {
            tokens: self.prompt.iter().chain(&self.gold).copied().collect(),
            target_from: self.prompt.len(),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

fn decimal(v: u32) -> Vec<u32> {
    v.to_string().bytes().map(|b| DIGIT0 + (b - b'0') as u32).collect()
}

impl TaskKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskKind::ModAdd { modulus } if !(2..=32).contains(&modulus) => {
                Err(Error::Config(format!("modulus {modulus} outside 2..=32")))
            }
            TaskKind::Reverse { length } | TaskKind::Parity { length } | TaskKind::Copy { length }
                if !(2..=16).contains(&length) =>
            {
                Err(Error::Config(format!("length {length} outside 2..=16")))
            }
            _ => Ok(()),
        }
    }

    /// Stable name such as `modadd-m32` or `parity-L8`.
    pub fn name(&self) -> String {
        match *self {
            TaskKind::ModAdd { modulus } => format!("modadd-m{modulus}"),
            TaskKind::Reverse { length } => format!("reverse-L{length}"),
            TaskKind::Parity { length } => format!("parity-L{length}"),
            TaskKind::Copy { length } => format!("copy-L{length}"),
        }
    }

    /// Smallest vocabulary containing every token the task uses.
    pub fn min_vocab(&self) -> usize {
        match self {
            TaskKind::ModAdd { .. } => PLUS as usize + 1,
            TaskKind::Parity { .. } => PAR as usize + 1,
            TaskKind::Copy { .. } | TaskKind::Reverse { .. } => (LETTER0 + N_LETTERS) as usize,
        }
    }

    /// Longest prompt plus longest gold answer.
    pub fn max_len(&self) -> usize {
        match *self {
            TaskKind::ModAdd { modulus } => {
                let w = decimal(modulus - 1).len();
                3 + 2 * w + w + 1
            }
            TaskKind::Parity { length } => length as usize + 3 + 2,
            TaskKind::Copy { length } | TaskKind::Reverse { length } => 2 * length as usize + 4,
        }
    }

    /// Number of distinct prompts.
    pub fn space_size(&self) -> u64 {
        match *self {
            TaskKind::ModAdd { modulus } => (modulus as u64).pow(2),
            TaskKind::Parity { length } => 1 << length,
            TaskKind::Copy { length } | TaskKind::Reverse { length } => (N_LETTERS as u64).pow(length),
        }
    }

    /// The instance with enumeration index `index < space_size()`.
    pub fn instance(&self, index: u64) -> TaskInstance {
        let name = self.name();
        let (label, prompt, gold) = match *self {
            TaskKind::ModAdd { modulus } => {
                let m = modulus as u64;
                let (a, b) = ((index / m) as u32, (index % m) as u32);
                let mut prompt = vec![BOS];
                prompt.extend(decimal(a));
                prompt.push(PLUS);
                prompt.extend(decimal(b));
                prompt.push(SEP);
                let mut gold = decimal((a + b) % modulus);
                gold.push(EOS);
                (format!("{a}+{b}"), prompt, gold)
            }
            TaskKind::Parity { length } => {
                let bits: Vec<u32> = (0..length).rev().map(|s| ((index >> s) & 1) as u32).collect();
                let mut prompt = vec![BOS, PAR];
                prompt.extend(bits.iter().map(|b| DIGIT0 + b));
                prompt.push(SEP);
                let ones: u32 = bits.iter().sum();
                let label = bits.iter().map(|b| char::from(b'0' + *b as u8)).collect();
                (label, prompt, vec![DIGIT0 + ones % 2, EOS])
            }
            TaskKind::Copy { length } | TaskKind::Reverse { length } => {
                let letters: Vec<u32> = (0..length)
                    .rev()
                    .map(|s| ((index / (N_LETTERS as u64).pow(s)) % N_LETTERS as u64) as u32)
                    .collect();
                let copy = matches!(self, TaskKind::Copy { .. });
                let mut prompt = vec![BOS, if copy { COPY } else { REV }];
                prompt.extend(letters.iter().map(|l| LETTER0 + l));
                prompt.push(SEP);
                let mut gold: Vec<u32> = letters.iter().map(|l| LETTER0 + l).collect();
                if !copy {
                    gold.reverse();
                }
                gold.push(EOS);
                let label = letters.iter().map(|l| char::from(b'a' + *l as u8)).collect();
                (label, prompt, gold)
            }
        };
        TaskInstance {
            id: format!("{name}:{label}"),
            kind: *self,
            prompt,
            gold,
            split: Split::Train,
        }
    }
}

/// Draws `count` distinct instances and splits them by seeded shuffle: the
/// last `round(count · test_fraction)` (clamped to `1..count`) are test.
pub fn gen_instances(kind: TaskKind, count: usize, seed: u64, test_fraction: f64) -> Result<Vec<TaskInstance>> {
    kind.validate()?;
    if count < 2 {
        return Err(Error::Config(format!("count {count} < 2")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test_fraction {test_fraction} outside (0,1)")));
    }
    let space = kind.space_size();
    if count as u64 > space {
        return Err(Error::Capacity {
            requested: count,
            available: space,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<u64> = if space <= ENUMERATE_LIMIT {
        let mut all: Vec<u64> = (0..space).collect();
        all.shuffle(&mut rng);
        all.truncate(count);
        all
    } else {
        let mut seen = HashSet::with_capacity(count);
        let mut picked = Vec::with_capacity(count);
        while picked.len() < count {
            let i = rng.gen_range(0..space);
            if seen.insert(i) {
                picked.push(i);
            }
        }
        picked
    };
    let mut out: Vec<TaskInstance> = indices.iter().map(|&i| kind.instance(i)).collect();
    out.shuffle(&mut rng);
    let n_test = ((count as f64 * test_fraction).round() as usize).clamp(1, count - 1);
    for inst in &mut out[count - n_test..] {
        inst.split = Split::Test;
    }
    Ok(out)
}

/// 1 iff `response` cut at its first EOS equals the gold answer cut the same way.
pub fn verify(instance: &TaskInstance, response: &[u32]) -> u8 {
    let cut = |s: &[u32]| s.iter().position(|&t| t == EOS).unwrap_or(s.len());
    let r = &response[..cut(response)];
    let g = &instance.gold[..cut(&instance.gold)];
    u8::from(!g.is_empty() && r == g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modadd_full_space_enumerated() {
        let kind = TaskKind::ModAdd { modulus: 5 };
        let all = gen_instances(kind, 25, 3, 0.2).unwrap();
        let prompts: HashSet<_> = all.iter().map(|i| i.prompt.clone()).collect();
        assert_eq!(prompts.len(), 25);
        assert!(matches!(
            gen_instances(kind, 26, 3, 0.2),
            Err(Error::Capacity { requested: 26, available: 25 })
        ));
    }

    #[test]
    fn deterministic_and_split_sizes() {
        let kind = TaskKind::Copy { length: 6 };
        let a = gen_instances(kind, 100, 9, 0.2).unwrap();
        assert_eq!(a, gen_instances(kind, 100, 9, 0.2).unwrap());
        assert_ne!(a, gen_instances(kind, 100, 10, 0.2).unwrap());
        let test = a.iter().filter(|i| i.split == Split::Test).count();
        assert_eq!((100 - test, test), (80, 20));
        let ids: HashSet<_> = a.iter().map(|i| &i.id).collect();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn instance_formats() {
        let i = TaskKind::ModAdd { modulus: 32 }.instance(3 * 32 + 30);
        assert_eq!(i.id, "modadd-m32:3+30");
        assert_eq!(i.prompt, [BOS, DIGIT0 + 3, PLUS, DIGIT0 + 3, DIGIT0, SEP]);
        assert_eq!(i.gold, [DIGIT0 + 1, EOS]);
        let p = TaskKind::Parity { length: 4 }.instance(0b1011);
        assert_eq!(p.id, "parity-L4:1011");
        assert_eq!(p.gold, [DIGIT0 + 1, EOS]);
        let r = TaskKind::Reverse { length: 3 }.instance(1 * 64 + 2 * 8 + 3);
        assert_eq!(r.id, "reverse-L3:bcd");
        assert_eq!(r.gold, [LETTER0 + 3, LETTER0 + 2, LETTER0 + 1, EOS]);
        for kind in [
            TaskKind::ModAdd { modulus: 32 },
            TaskKind::Parity { length: 16 },
            TaskKind::Copy { length: 16 },
        ] {
            let last = kind.instance(kind.space_size() - 1);
            assert!(last.prompt.len() + last.gold.len() <= kind.max_len());
            assert!(last.prompt.iter().chain(&last.gold).all(|&t| (t as usize) < kind.min_vocab()));
        }
    }

    #[test]
    fn verifier_rules() {
        let i = TaskKind::ModAdd { modulus: 10 }.instance(7 * 10 + 5);
        assert_eq!(i.gold, [DIGIT0 + 2, EOS]);
        assert_eq!(verify(&i, &i.gold), 1);
        assert_eq!(verify(&i, &[]), 0);
        assert_eq!(verify(&i, &[EOS]), 0);
        assert_eq!(verify(&i, &[DIGIT0 + 2, EOS, 9, 9]), 1);
        assert_eq!(verify(&i, &[DIGIT0 + 2]), 1);
        assert_eq!(verify(&i, &[DIGIT0 + 2, DIGIT0, EOS]), 0);
    }

    #[test]
    fn sampled_large_space() {
        let kind = TaskKind::Reverse { length: 16 };
        let a = gen_instances(kind, 50, 1, 0.5).unwrap();
        assert_eq!(a.len(), 50);
        assert!(matches!(
            gen_instances(TaskKind::Parity { length: 17 }, 5, 0, 0.5),
            Err(Error::Config(_))
        ));
        assert!(gen_instances(kind, 1, 0, 0.5).is_err());
        assert!(gen_instances(kind, 10, 0, 1.0).is_err());
    }
}
