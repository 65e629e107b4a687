use probeval::model::*;
use probeval::tasks::*;
use probeval::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A vocab-16 model with weights large enough that next-token
/// distributions are far from uniform.
fn peaked_model() -> Checkpoint {
    let mut c = init_model(ModelConfig {
        vocab_size: 16,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        seq_max: 16,
        seed: 5,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (_, t) in c.params.iter_mut() {
        let shape = t.shape().to_vec();
        *t = Tensor::randn(&shape, 0.6, &mut rng);
    }
    c
}

/// Expected single-token reward from the softmax over the full-forward
/// logits, enumerating every possible answer token.
fn exact_value(ckpt: &Checkpoint, inst: &TaskInstance) -> f64 {
    let (logits, _) = forward_with_states(ckpt, &inst.prompt).unwrap();
    let row: Vec<f64> = logits.row(inst.prompt.len() - 1).iter().map(|&v| v as f64).collect();
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
    (0..16u32)
        .map(|a| (row[a as usize] - max).exp() / z * verify(inst, &[a]) as f64)
        .sum()
}

#[test]
fn pass_at_one_estimate_is_unbiased() {
    // A briefly trained model puts its mass on the two answer digits
    // without being sure which one is right.
    let inst = gen_instances(TaskKind::Parity { length: 6 }, 20, 3, 0.5).unwrap();
    let corpus: Vec<CorpusSeq> = inst.iter().map(TaskInstance::corpus_seq).collect();
    let tc = BaseTrainConfig {
        steps: 150,
        save_every: 150,
        lr: 3e-3,
        batch_size: 8,
        seed: 2,
    };
    let ckpt = train_base_trajectory(peaked_model().config, &corpus, &tc).unwrap().checkpoints.remove(0);
    let exact: Vec<f64> = inst.iter().map(|i| exact_value(&ckpt, i)).collect();
    let mut mean = vec![0.0; inst.len()];
    for seed in 0..200 {
        let gp = GenerationParams {
            n_samples: 64,
            temperature: 1.0,
            max_new_tokens: 1,
            seed,
        };
        for (m, l) in mean.iter_mut().zip(collect_labels(&ckpt, &inst, &gp).unwrap()) {
            *m += l.v_hat / 200.0;
        }
    }
    for (i, (m, e)) in mean.iter().zip(&exact).enumerate() {
        assert!((m - e).abs() < 0.02, "prompt {i}: {m} vs {e}");
    }
    // The check is only meaningful if some values sit away from 0 and 1.
    assert!(exact.iter().filter(|&&e| e > 0.1 && e < 0.9).count() >= 5, "{exact:?}");
}

#[test]
fn sampled_frequencies_match_softmax() {
    let ckpt = peaked_model();
    let prompt = [1u32, 15, 4, 5, 3];
    let gp = GenerationParams {
        n_samples: 10_000,
        temperature: 1.0,
        max_new_tokens: 1,
        seed: 9,
    };
    let mut counts = [0f64; 16];
    for r in sample_responses(&ckpt, &prompt, &gp).unwrap() {
        counts[r[0] as usize] += 1.0;
    }
    let logits = next_token_logits(&ckpt, &prompt).unwrap();
    let max = logits.iter().copied().fold(f32::MIN, f32::max) as f64;
    let z: f64 = logits.iter().map(|&v| (v as f64 - max).exp()).sum();
    for (c, &l) in counts.iter().zip(&logits) {
        assert!((c / 10_000.0 - (l as f64 - max).exp() / z).abs() < 0.02);
    }
}

#[test]
fn labels_are_means_of_rewards() {
    let ckpt = peaked_model();
    let inst = gen_instances(TaskKind::Parity { length: 4 }, 16, 1, 0.25).unwrap();
    let labels = collect_labels(&ckpt, &inst, &GenerationParams::default()).unwrap();
    for (l, i) in labels.iter().zip(&inst) {
        assert_eq!(l.instance_id, i.id);
        assert_eq!(l.rewards.len(), 8);
        let mean = l.rewards.iter().map(|&r| r as f64).sum::<f64>() / 8.0;
        assert_eq!(l.v_hat, mean);
    }
    let text = format_label_cache(&labels);
    assert_eq!(parse_label_cache(&text).unwrap(), labels);
}

#[test]
fn capacity_and_verifier() {
    assert!(matches!(
        gen_instances(TaskKind::ModAdd { modulus: 4 }, 17, 0, 0.5),
        Err(probeval::Error::Capacity { requested: 17, available: 16 })
    ));
    let i = TaskKind::ModAdd { modulus: 32 }.instance(20 * 32 + 15);
    assert_eq!(verify(&i, &i.gold), 1);
    assert_eq!(verify(&i, &[]), 0);
    let mut trailing = i.gold.clone();
    trailing.extend([DIGIT0, DIGIT0 + 7]);
    assert_eq!(verify(&i, &trailing), 1);
    assert_eq!(verify(&i, &[DIGIT0 + 3, EOS]), 1);
    assert_eq!(verify(&i, &[DIGIT0 + 3, DIGIT0, EOS]), 0);
}
