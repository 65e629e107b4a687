mod common;

use probeval::model::*;
use probeval::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn hand_set(seed: u64, n_layers: usize) -> Checkpoint {
    let mut ckpt = init_model(ModelConfig {
        vocab_size: 16,
        d_model: 8,
        n_layers,
        n_heads: 2,
        d_ff: 16,
        seq_max: 8,
        seed,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for (_, t) in ckpt.params.iter_mut() {
        let shape = t.shape().to_vec();
        *t = Tensor::randn(&shape, 0.4, &mut rng);
    }
    ckpt
}

#[test]
fn one_layer_logits_match_reference() {
    let ckpt = hand_set(1, 1);
    let tokens = [1u32, 6, 11, 3, 9];
    let (logits, stack) = forward_with_states(&ckpt, &tokens).unwrap();
    let want = common::model_logits(&ckpt.params, &tokens, 1, 2);
    assert!(common::max_abs_diff(&want, logits.data(), 16) < 1e-5);
    let states = common::model_states(&ckpt.params, &tokens, 1, 2);
    for (s, r) in stack.states.iter().zip(&states) {
        assert!(common::max_abs_diff(r, s.data(), 8) < 1e-5);
    }
}

#[test]
fn nll_matches_reference_from_logits() {
    let ckpt = hand_set(4, 2);
    let (prompt, target) = ([1u32, 5, 14, 6, 3], [9u32, 2]);
    let all: Vec<u32> = prompt.iter().chain(&target).copied().collect();
    let logits = common::model_logits(&ckpt.params, &all, 2, 2);
    let mut want = 0.0;
    for (i, &g) in target.iter().enumerate() {
        let row = &logits[prompt.len() - 1 + i];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        want -= (row[g as usize].exp() / z).ln();
    }
    want /= target.len() as f64;
    let got = sequence_nll(&ckpt, &prompt, &target).unwrap();
    assert!((got - want).abs() < 1e-5, "{got} vs {want}");
}

#[test]
fn training_loss_trends_down_and_checkpoints_sorted() {
    let cfg = ModelConfig {
        vocab_size: 16,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        seq_max: 8,
        seed: 0,
    };
    let corpus: Vec<CorpusSeq> = (0..10u32)
        .map(|i| CorpusSeq {
            tokens: vec![BOS, 4 + i, 14, 4 + (i * 3) % 10, SEP, 4 + (i * 4) % 10, EOS],
            target_from: 5,
        })
        .collect();
    let tc = BaseTrainConfig {
        steps: 300,
        save_every: 100,
        lr: 3e-3,
        batch_size: 4,
        seed: 1,
    };
    let t = train_base_trajectory(cfg, &corpus, &tc).unwrap();
    assert!(t.checkpoints.windows(2).all(|w| w[0].step < w[1].step));
    let smoothed: Vec<f64> = t.losses.chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    assert!(smoothed.windows(2).all(|w| w[1] <= w[0]), "{smoothed:?}");
    assert!(t.checkpoints.iter().all(|c| c.corpus_id == corpus_id(&corpus)));
}
