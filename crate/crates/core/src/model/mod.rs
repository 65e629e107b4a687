//! Toy pre-norm decoder-only transformer: initialization, forward pass with
//! hidden-state capture, sampling, per-token loss, training and persistence.

mod block;
mod io;
mod sample;
mod train;

pub use block::{adapted_block, decoder_block, init_block, ActivationHook, BlockParams};
pub use io::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use sample::{next_token_logits, sample_responses, GenerationParams};
pub use train::{corpus_id, greedy_decode, train_base_trajectory, BaseTrainConfig, CorpusSeq, Trajectory};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Bound, Element, ParamStore, Tape, Tensor, Var};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const SEP: u32 = 3;

/// Standard deviation of the initial weight distribution.
pub const INIT_STD: f32 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub seq_max: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 64,
            d_model: 64,
            n_layers: 8,
            n_heads: 4,
            d_ff: 256,
            seq_max: 64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 4 {
            return bad(format!("vocab_size {} < 4", self.vocab_size));
        }
        if self.seq_max < 8 {
            return bad(format!("seq_max {} < 8", self.seq_max));
        }
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad("zero-sized dimension".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size > u32::MAX as usize || self.seq_max > u32::MAX as usize {
            return bad("dimension exceeds u32".into());
        }
        Ok(())
    }

    /// Closed-form parameter count for this architecture.
    pub fn param_count(&self) -> usize {
        let (v, d, f) = (self.vocab_size, self.d_model, self.d_ff);
        let block = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        v * d + self.seq_max * d + self.n_layers * block + 2 * d
    }
}

/// Model parameters at one point of a training trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub step: u64,
    pub corpus_id: String,
}

/// Per-layer hidden states of one forward pass; index 0 is the embedding
/// output, index `l` the output of decoder layer `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStateStack {
    pub states: Vec<Tensor>,
    pub token_count: usize,
}

impl HiddenStateStack {
    pub fn n_layers(&self) -> usize {
        self.states.len() - 1
    }

    pub fn width(&self) -> usize {
        self.states[0].dims2().1
    }

    /// The hidden vector of `layer` at `position`.
    pub fn at(&self, layer: usize, position: usize) -> &[f32] {
        self.states[layer].row(position)
    }
}

pub(crate) fn layer_prefix(l: usize) -> String {
    format!("layer{l}")
}

/// Seeded initialization: weights from N(0, 0.02²), norm gains 1, biases 0.
pub fn init_model(config: ModelConfig) -> Result<Checkpoint> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.d_model;
    let mut params = ParamStore::new();
    params.insert("tok_emb", Tensor::randn(&[config.vocab_size, d], INIT_STD, &mut rng))?;
    params.insert("pos_emb", Tensor::randn(&[config.seq_max, d], INIT_STD, &mut rng))?;
    for l in 1..=config.n_layers {
        init_block(&mut params, &layer_prefix(l), d, config.d_ff, INIT_STD, &mut rng)?;
    }
    params.insert("ln_f.g", Tensor::filled(&[d], 1.0))?;
    params.insert("ln_f.b", Tensor::zeros(&[d]))?;
    Ok(Checkpoint {
        config,
        params,
        step: 0,
        corpus_id: String::new(),
    })
}

/// Base weight matrices a low-rank adapter may modify.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AdaptTarget {
    Query,
    Value,
    FfIn,
    FfOut,
}

/// Rewrites a layer's projection `x·W` given `x` (layer is 1-based).
pub type LayerHook<'a, T> = &'a mut dyn FnMut(&mut Tape<T>, usize, AdaptTarget, Var, Var) -> Result<Var>;

pub struct ForwardVars {
    /// `T×vocab` logits when requested.
    pub logits: Option<Var>,
    /// `N+1` hidden states.
    pub states: Vec<Var>,
}

pub(crate) fn check_tokens(config: &ModelConfig, tokens: &[u32]) -> Result<()> {
    if tokens.is_empty() || tokens.len() > config.seq_max {
        return Err(Error::Input(format!(
            "sequence length {} outside 1..={}",
            tokens.len(),
            config.seq_max
        )));
    }
    if let Some(t) = tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::Input(format!(
            "token {t} out of range for vocab {}",
            config.vocab_size
        )));
    }
    Ok(())
}

/// Records the full base forward on `tape` with parameters already bound.
pub fn forward_on_tape<T: Element>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    bound: &Bound,
    tokens: &[u32],
    with_logits: bool,
    mut hook: Option<LayerHook<'_, T>>,
) -> Result<ForwardVars> {
    check_tokens(config, tokens)?;
    let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let tok = tape.gather_rows(bound.get("tok_emb")?, &ids)?;
    let pos = tape.gather_rows(bound.get("pos_emb")?, &positions)?;
    let mut h = tape.add(tok, pos)?;
    let mut states = Vec::with_capacity(config.n_layers + 1);
    states.push(h);
    for l in 1..=config.n_layers {
        let p = BlockParams::bind(bound, &layer_prefix(l))?;
        h = match hook.as_mut() {
            Some(hook) => {
                let mut at_layer = |tape: &mut Tape<T>, t: AdaptTarget, x: Var, y: Var| hook(tape, l, t, x, y);
                adapted_block(tape, h, &p, config.n_heads, Some(&mut at_layer))?
            }
            None => decoder_block(tape, h, &p, config.n_heads)?,
        };
        states.push(h);
    }
    let logits = if with_logits {
        let normed = tape.layer_norm(h, bound.get("ln_f.g")?, bound.get("ln_f.b")?)?;
        let emb_t = tape.transpose(bound.get("tok_emb")?)?;
        Some(tape.matmul(normed, emb_t)?)
    } else {
        None
    };
    Ok(ForwardVars { logits, states })
}

/// Causal forward pass returning logits and every layer's hidden states.
pub fn forward_with_states(ckpt: &Checkpoint, tokens: &[u32]) -> Result<(Tensor, HiddenStateStack)> {
    let mut tape = Tape::<f32>::new();
    let bound = ckpt.params.bind(&mut tape, false);
    let out = forward_on_tape(&mut tape, &ckpt.config, &bound, tokens, true, None)?;
    let logits = tape.tensor(out.logits.expect("requested"));
    let states = out.states.iter().map(|&v| tape.tensor(v)).collect();
    Ok((
        logits,
        HiddenStateStack {
            states,
            token_count: tokens.len(),
        },
    ))
}

/// Hidden states only (skips the output head).
pub fn hidden_states(ckpt: &Checkpoint, tokens: &[u32]) -> Result<HiddenStateStack> {
    let mut tape = Tape::<f32>::new();
    let bound = ckpt.params.bind(&mut tape, false);
    let out = forward_on_tape(&mut tape, &ckpt.config, &bound, tokens, false, None)?;
    Ok(HiddenStateStack {
        states: out.states.iter().map(|&v| tape.tensor(v)).collect(),
        token_count: tokens.len(),
    })
}

/// Log-softmax of one logit row in 64-bit.
pub(crate) fn log_softmax(row: &[f32]) -> Vec<f64> {
    let max = row.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
    let lz = z.ln();
    row.iter().map(|&v| v as f64 - max - lz).collect()
}

/// Mean per-token negative log-likelihood of `target` given `prompt`.
pub fn sequence_nll(ckpt: &Checkpoint, prompt: &[u32], target: &[u32]) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::Usage("sequence_nll needs a non-empty target".into()));
    }
    if prompt.is_empty() {
        return Err(Error::Usage("sequence_nll needs a non-empty prompt".into()));
    }
    let tokens: Vec<u32> = prompt.iter().chain(target).copied().collect();
    let (logits, _) = forward_with_states(ckpt, &tokens)?;
    let mut total = 0f64;
    for (i, &gold) in target.iter().enumerate() {
        let lp = log_softmax(logits.row(prompt.len() - 1 + i));
        total -= lp[gold as usize];
    }
    Ok(total / target.len() as f64)
}

/// Mean per-token NLL of the prompt itself (positions 1.. predicted causally).
pub fn prompt_nll(ckpt: &Checkpoint, prompt: &[u32]) -> Result<f64> {
    if prompt.len() < 2 {
        return Err(Error::Usage("prompt_nll needs at least two tokens".into()));
    }
    sequence_nll(ckpt, &prompt[..1], &prompt[1..])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            vocab_size: 16,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            seq_max: 12,
            seed: 11,
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { n_heads: 3, ..small() }.validate().is_err());
        assert!(ModelConfig { vocab_size: 3, ..small() }.validate().is_err());
        assert!(ModelConfig { seq_max: 7, ..small() }.validate().is_err());
        assert!(matches!(init_model(ModelConfig { n_heads: 3, ..small() }), Err(Error::Config(_))));
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        let a = init_model(small()).unwrap();
        let b = init_model(small()).unwrap();
        assert_eq!(a.params, b.params);
        let c = init_model(ModelConfig { seed: 12, ..small() }).unwrap();
        assert_ne!(a.params, c.params);
        assert_eq!(a.params.get("layer1.ln1.g").unwrap().data(), &[1.0; 8]);
        assert_eq!(a.params.get("layer2.ff.b1").unwrap().data(), &[0.0; 16]);
    }

    #[test]
    fn param_count_matches_closed_form() {
        let cfg = ModelConfig {
            vocab_size: 64,
            d_model: 32,
            n_layers: 4,
            n_heads: 4,
            d_ff: 128,
            seq_max: 64,
            seed: 0,
        };
        let ckpt = init_model(cfg).unwrap();
        // Per block: two norms (4·32), four 32×32 projections with biases,
        // 32→128→32 feed-forward with biases.
        let block = 4 * 32 + 4 * (32 * 32 + 32) + (32 * 128 + 128) + (128 * 32 + 32);
        let expected = 64 * 32 + 64 * 32 + 4 * block + 2 * 32;
        assert_eq!(ckpt.params.numel(), expected);
        assert_eq!(cfg.param_count(), expected);
    }

    #[test]
    fn causality_and_stack_shape() {
        let ckpt = init_model(small()).unwrap();
        let toks = [1u32, 5, 9, 3, 7, 2];
        let (full, stack) = forward_with_states(&ckpt, &toks).unwrap();
        assert_eq!(stack.states.len(), 3);
        for t in 1..toks.len() {
            let (part, _) = forward_with_states(&ckpt, &toks[..t]).unwrap();
            assert_eq!(part.data(), &full.data()[..t * 16]);
        }
        let mut changed = toks;
        changed[5] = 11;
        let (alt, _) = forward_with_states(&ckpt, &changed).unwrap();
        assert_eq!(&alt.data()[..5 * 16], &full.data()[..5 * 16]);
    }

    #[test]
    fn capture_is_pure() {
        let ckpt = init_model(small()).unwrap();
        let a = forward_with_states(&ckpt, &[1, 4, 5]).unwrap();
        let b = forward_with_states(&ckpt, &[1, 4, 5]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn input_errors() {
        let ckpt = init_model(small()).unwrap();
        assert!(matches!(forward_with_states(&ckpt, &[1; 13]), Err(Error::Input(_))));
        assert!(matches!(forward_with_states(&ckpt, &[16]), Err(Error::Input(_))));
        assert!(matches!(forward_with_states(&ckpt, &[]), Err(Error::Input(_))));
        assert!(matches!(sequence_nll(&ckpt, &[1], &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn nll_uniform_model_is_log_vocab() {
        let mut ckpt = init_model(small()).unwrap();
        // Zero embeddings make every logit zero.
        for name in ["tok_emb"] {
            ckpt.params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let nll = sequence_nll(&ckpt, &[1, 4], &[5, 6, 2]).unwrap();
        assert!((nll - 16f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn nll_single_target_is_neg_log_prob() {
        let ckpt = init_model(small()).unwrap();
        let (logits, _) = forward_with_states(&ckpt, &[1, 4, 9]).unwrap();
        let row: Vec<f64> = logits.row(2).iter().map(|&v| v as f64).collect();
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        let want = -(row[7].exp() / z).ln();
        let got = sequence_nll(&ckpt, &[1, 4, 9], &[7]).unwrap();
        assert!((got - want).abs() < 1e-9);
    }
}
