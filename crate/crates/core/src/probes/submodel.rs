use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{open_unit, LayerMap};
use crate::error::{Error, Result};
use crate::model::{decoder_block, init_block, BlockParams, HiddenStateStack, INIT_STD};
use crate::tensor::{Bound, Element, ParamStore, Tape, Tensor, Var};

/// Narrow decoder stack fed layer by layer with projected base hidden states:
/// `Z¹ = Dec¹(H^(m₁)·P¹)`, `Zᵏ = Decᵏ(Zᵏ⁻¹ + H^(mₖ)·Pᵏ)`, then a sigmoid head
/// on the last-token row of `Z^K`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubmodelProbe {
    pub layer_map: LayerMap,
    pub d_model: usize,
    pub d_probe: usize,
    pub d_ff: usize,
    pub params: ParamStore,
}

fn prefix(k: usize) -> String {
    format!("probe{}", k + 1)
}

impl SubmodelProbe {
    /// Seeded initialization; `d_ff` of the probe blocks is `4·d_probe`.
    pub fn new(layer_map: LayerMap, d_model: usize, d_probe: usize, seed: u64) -> Result<Self> {
        if d_probe == 0 || d_model == 0 {
            return Err(Error::Config("probe widths must be positive".into()));
        }
        let d_ff = 4 * d_probe;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for k in 0..layer_map.k() {
            params.insert(format!("{}.proj", prefix(k)), Tensor::randn(&[d_model, d_probe], INIT_STD, &mut rng))?;
            init_block(&mut params, &prefix(k), d_probe, d_ff, INIT_STD, &mut rng)?;
        }
        params.insert("head.w", Tensor::randn(&[d_probe, 1], INIT_STD, &mut rng))?;
        params.insert("head.b", Tensor::zeros(&[1]))?;
        Ok(SubmodelProbe {
            layer_map,
            d_model,
            d_probe,
            d_ff,
            params,
        })
    }

    pub fn check_stack(&self, stack: &HiddenStateStack) -> Result<()> {
        if stack.width() != self.d_model {
            return Err(Error::Config(format!(
                "probe expects width {}, stack has {}",
                self.d_model,
                stack.width()
            )));
        }
        self.layer_map.validate(stack.n_layers())
    }

    /// Records the forward pass and returns the `1×1` sigmoid output.
    pub fn forward_on_tape<T: Element>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        stack: &HiddenStateStack,
        last: usize,
    ) -> Result<Var> {
        self.check_stack(stack)?;
        if last >= stack.token_count {
            return Err(Error::Input(format!("last index {last} ≥ {} tokens", stack.token_count)));
        }
        let mut z: Option<Var> = None;
        for k in 0..self.layer_map.k() {
            let h = tape.constant(&stack.states[self.layer_map.stack_index(k)]);
            let p = tape.matmul(h, bound.get(&format!("{}.proj", prefix(k)))?)?;
            let x = match z {
                None => p,
                Some(prev) => tape.add(prev, p)?,
            };
            z = Some(decoder_block(tape, x, &BlockParams::bind(bound, &prefix(k))?, 1)?);
        }
        let row = tape.row(z.expect("K ≥ 1"), last)?;
        let logit = tape.matmul(row, bound.get("head.w")?)?;
        let logit = tape.add_row(logit, bound.get("head.b")?)?;
        Ok(tape.sigmoid(logit))
    }

    pub fn predict(&self, stack: &HiddenStateStack, last: usize) -> Result<f64> {
        let mut tape = Tape::<f32>::new();
        let bound = self.params.bind(&mut tape, false);
        let out = self.forward_on_tape(&mut tape, &bound, stack, last)?;
        Ok(open_unit(tape.scalar(out)))
    }
}
