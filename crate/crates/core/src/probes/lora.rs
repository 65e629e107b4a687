use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::open_unit;
use crate::error::{Error, Result};
use crate::model::{forward_on_tape, layer_prefix, AdaptTarget, Checkpoint, HiddenStateStack, ModelConfig, INIT_STD};
use crate::tensor::{Bound, Element, ParamStore, Tape, Tensor, Var};

/// Low-rank adapters on every base layer's query, value and feed-forward
/// weights (`x·W + (x·A)·B`, base frozen) plus a sigmoid head on the final hidden
/// state of the last prompt token.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraProbe {
    pub rank: usize,
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub params: ParamStore,
}

fn target_name(t: AdaptTarget) -> &'static str {
    match t {
        AdaptTarget::Query => "q",
        AdaptTarget::Value => "v",
        AdaptTarget::FfIn => "ff_in",
        AdaptTarget::FfOut => "ff_out",
    }
}

const TARGETS: [AdaptTarget; 4] = [AdaptTarget::Query, AdaptTarget::Value, AdaptTarget::FfIn, AdaptTarget::FfOut];

impl LoraProbe {
    /// `A ~ N(0, 0.02²)`, `B = 0`, head weights `N(0, 0.02²)`.
    pub fn new(config: &ModelConfig, rank: usize, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("LoRA rank must be ≥ 1".into()));
        }
        let (d, f) = (config.d_model, config.d_ff);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for l in 1..=config.n_layers {
            for t in TARGETS {
                let (din, dout) = Self::dims(t, d, f);
                let base = format!("{}.{}", layer_prefix(l), target_name(t));
                params.insert(format!("{base}.a"), Tensor::randn(&[din, rank], INIT_STD, &mut rng))?;
                params.insert(format!("{base}.b"), Tensor::zeros(&[rank, dout]))?;
            }
        }
        params.insert("head.w", Tensor::randn(&[d, 1], INIT_STD, &mut rng))?;
        params.insert("head.b", Tensor::zeros(&[1]))?;
        Ok(LoraProbe {
            rank,
            n_layers: config.n_layers,
            d_model: d,
            d_ff: f,
            params,
        })
    }

    fn dims(t: AdaptTarget, d: usize, f: usize) -> (usize, usize) {
        match t {
            AdaptTarget::Query | AdaptTarget::Value => (d, d),
            AdaptTarget::FfIn => (d, f),
            AdaptTarget::FfOut => (f, d),
        }
    }

    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        if (config.n_layers, config.d_model, config.d_ff) != (self.n_layers, self.d_model, self.d_ff) {
            return Err(Error::Config(format!(
                "LoRA probe for N={} d={} d_ff={} does not fit checkpoint N={} d={} d_ff={}",
                self.n_layers, self.d_model, self.d_ff, config.n_layers, config.d_model, config.d_ff
            )));
        }
        Ok(())
    }

    /// Adapted base forward; returns all hidden states.
    pub fn states_on_tape<T: Element>(
        &self,
        tape: &mut Tape<T>,
        config: &ModelConfig,
        base: &Bound,
        bound: &Bound,
        tokens: &[u32],
    ) -> Result<Vec<Var>> {
        self.check(config)?;
        // Unmerged form: the frozen W never needs a weight gradient.
        let mut hook = |tape: &mut Tape<T>, l: usize, t: AdaptTarget, x: Var, xw: Var| -> Result<Var> {
            let name = format!("{}.{}", layer_prefix(l), target_name(t));
            let xa = tape.matmul(x, bound.get(&format!("{name}.a"))?)?;
            let xab = tape.matmul(xa, bound.get(&format!("{name}.b"))?)?;
            tape.add(xw, xab)
        };
        Ok(forward_on_tape(tape, config, base, tokens, false, Some(&mut hook))?.states)
    }

    /// Records the adapted forward and returns the `1×1` sigmoid output.
    pub fn forward_on_tape<T: Element>(
        &self,
        tape: &mut Tape<T>,
        config: &ModelConfig,
        base: &Bound,
        bound: &Bound,
        tokens: &[u32],
    ) -> Result<Var> {
        let states = self.states_on_tape(tape, config, base, bound, tokens)?;
        let last = super::last_index(tokens)?;
        let row = tape.row(*states.last().expect("N+1 states"), last)?;
        let logit = tape.matmul(row, bound.get("head.w")?)?;
        let logit = tape.add_row(logit, bound.get("head.b")?)?;
        Ok(tape.sigmoid(logit))
    }

    /// Hidden states of the adapted model.
    pub fn hidden_states(&self, ckpt: &Checkpoint, tokens: &[u32]) -> Result<HiddenStateStack> {
        let mut tape = Tape::<f32>::new();
        let base = ckpt.params.bind(&mut tape, false);
        let bound = self.params.bind(&mut tape, false);
        let states = self.states_on_tape(&mut tape, &ckpt.config, &base, &bound, tokens)?;
        Ok(HiddenStateStack {
            states: states.iter().map(|&v| tape.tensor(v)).collect(),
            token_count: tokens.len(),
        })
    }

    pub fn predict(&self, ckpt: &Checkpoint, tokens: &[u32]) -> Result<f64> {
        let mut tape = Tape::<f32>::new();
        let base = ckpt.params.bind(&mut tape, false);
        let bound = self.params.bind(&mut tape, false);
        let out = self.forward_on_tape(&mut tape, &ckpt.config, &base, &bound, tokens)?;
        Ok(open_unit(tape.scalar(out)))
    }
}
