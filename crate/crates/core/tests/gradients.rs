//! Reverse-mode gradients against central differences on every layer type
//! and on full probe losses.

use probeval::model::{decoder_block, hidden_states, init_block, init_model, BlockParams, ModelConfig};
use probeval::probes::{make_layer_map, LayerMode, LoraProbe, SubmodelProbe};
use probeval::tensor::{grad_check, Bound, ParamStore, Tape, Tensor, Var};
use probeval::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const STD: f32 = 0.5;

fn randomize(params: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for (_, t) in params.iter_mut() {
        let shape = t.shape().to_vec();
        *t = Tensor::randn(&shape, STD, rng);
    }
}

/// `Σ c ⊙ v` for fixed random weights `c`, so no output coordinate cancels.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let c = tape.constant(&Tensor::randn(&shape, 1.0, &mut rng));
    let m = tape.mul(v, c)?;
    Ok(tape.sum(m))
}

/// Worst relative error over every tensor of `params`, each checked with
/// the others held fixed.
fn check_store<F>(params: &ParamStore, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    check_store_except(params, &[], f)
}

fn check_store_except<F>(params: &ParamStore, skip: &[&str], f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let mut worst = 0f64;
    for (name, t) in params.iter().filter(|(n, _)| !skip.contains(n)) {
        let err = grad_check(
            |tape, x| {
                let mut bound = params.bind(tape, false);
                bound.replace(name, x)?;
                f(tape, &bound)
            },
            t,
            H,
        )
        .unwrap();
        assert!(err.is_finite(), "{name}");
        worst = worst.max(err);
    }
    worst
}

fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: 16,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        seq_max: 8,
        seed,
    }
}

#[test]
fn layer_norm_projection_and_head() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        p.insert("x", Tensor::randn(&[5, 16], STD, &mut rng)).unwrap();
        p.insert("g", Tensor::randn(&[16], STD, &mut rng)).unwrap();
        p.insert("b", Tensor::randn(&[16], STD, &mut rng)).unwrap();
        p.insert("w", Tensor::randn(&[16, 1], STD, &mut rng)).unwrap();
        p.insert("hb", Tensor::randn(&[1], STD, &mut rng)).unwrap();
        let ln = check_store(&p, |t, b| {
            let y = t.layer_norm(b.get("x")?, b.get("g")?, b.get("b")?)?;
            project(t, y, seed)
        });
        assert!(ln < 1e-3, "layer norm {ln}");
        let head = check_store(&p, |t, b| {
            let r = t.row(b.get("x")?, 4)?;
            let z = t.matmul(r, b.get("w")?)?;
            let z = t.add_row(z, b.get("hb")?)?;
            let s = t.sigmoid(z);
            t.squared_error(s, 0.375)
        });
        assert!(head < 1e-3, "head {head}");
    }
}

#[test]
fn decoder_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut p = ParamStore::new();
    init_block(&mut p, "blk", 16, 32, 0.02, &mut rng).unwrap();
    p.insert("x", Tensor::zeros(&[5, 16])).unwrap();
    randomize(&mut p, &mut rng);
    let f = |t: &mut Tape<f64>, b: &Bound| {
        let y = decoder_block(t, b.get("x")?, &BlockParams::bind(b, "blk")?, 2)?;
        project(t, y, 1)
    };
    // Softmax is invariant to the key bias, so its true gradient is zero and
    // a relative error is meaningless there; it is checked absolutely below.
    let err = check_store_except(&p, &["blk.attn.bk"], f);
    assert!(err < 1e-3, "{err}");

    let mut tape = Tape::<f64>::new();
    let b = p.bind(&mut tape, true);
    let loss = f(&mut tape, &b).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad(b.get("blk.attn.bk").unwrap()).unwrap();
    assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
}

#[test]
fn submodel_probe_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut base = init_model(small_config(2)).unwrap();
    randomize(&mut base.params, &mut rng);
    let stack = hidden_states(&base, &[1, 5, 14, 7, 3]).unwrap();
    let mut probe = SubmodelProbe::new(make_layer_map(LayerMode::Full, 2).unwrap(), 16, 8, 2).unwrap();
    randomize(&mut probe.params, &mut rng);
    let err = check_store(&probe.params, |t, b| {
        let p = probe.forward_on_tape(t, b, &stack, 4)?;
        t.squared_error(p, 0.625)
    });
    assert!(err < 1e-3, "{err}");
}

#[test]
fn lora_probe_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut base = init_model(small_config(3)).unwrap();
    randomize(&mut base.params, &mut rng);
    let mut probe = LoraProbe::new(&base.config, 2, 3).unwrap();
    randomize(&mut probe.params, &mut rng);
    let tokens = [1u32, 9, 14, 4, 3];
    let err = check_store(&probe.params, |t, b| {
        let frozen = base.params.bind(t, false);
        let p = probe.forward_on_tape(t, &base.config, &frozen, b, &tokens)?;
        t.squared_error(p, 0.25)
    });
    assert!(err < 1e-3, "{err}");
}
