use probeval::eval::*;
use probeval::model::*;
use probeval::probes::*;
use probeval::tasks::*;
use probeval::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All-pairs Mann-Whitney statistic with half credit for ties.
fn brute_auroc(preds: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &p) in preds.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &q) in preds.iter().enumerate() {
            if labels[j] == 0 {
                pairs += 1.0;
                wins += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

#[test]
fn auroc_matches_all_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for case in 0..1000 {
        let n = rng.gen_range(2..60);
        // Coarse grids force ties on most cases.
        let levels = if case % 2 == 0 { 4 } else { 1000 };
        let preds: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let got = auroc(&preds, &labels).unwrap();
        assert!((got - brute_auroc(&preds, &labels)).abs() <= 1e-12, "case {case}");
    }
}

#[test]
fn auroc_edge_cases() {
    assert_eq!(auroc(&[0.1, 0.9], &[0, 1]).unwrap(), 1.0);
    assert_eq!(auroc(&[0.9, 0.1], &[0, 1]).unwrap(), 0.0);
    assert_eq!(auroc(&[0.5; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
    assert!(matches!(auroc(&[0.2, 0.3], &[1, 1]), Err(Error::UndefinedMetric(_))));
    assert!(matches!(auroc(&[0.2], &[1, 0]), Err(Error::Input(_))));
    assert!(matches!(auroc(&[f64::NAN, 0.1], &[1, 0]), Err(Error::Input(_))));
}

#[test]
fn binarize_threshold_is_inclusive() {
    assert_eq!(binarize(0.5).unwrap(), 1);
    assert_eq!(binarize(0.499_999).unwrap(), 0);
    assert_eq!(binarize(0.0).unwrap(), 0);
    assert_eq!(binarize(1.0).unwrap(), 1);
    assert!(binarize(1.5).is_err());
    assert!(binarize(-0.1).is_err());
}

#[test]
fn mse_small_case() {
    assert!((mse(&[0.5, 1.0], &[0.0, 1.0]).unwrap() - 0.125).abs() < 1e-15);
    assert!(mse(&[], &[]).is_err());
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    prop::collection::vec((-5.0f64..5.0, 0u8..2), 2..80).prop_filter_map("both classes", |v| {
        let labels: Vec<u8> = v.iter().map(|x| x.1).collect();
        (labels.contains(&0) && labels.contains(&1)).then(|| (v.iter().map(|x| x.0).collect(), labels))
    })
}

proptest! {
    #[test]
    fn auroc_invariant_under_monotone_maps((preds, labels) in scored(), a in 0.1f64..10.0, b in -3.0f64..3.0) {
        let base = auroc(&preds, &labels).unwrap();
        let affine: Vec<f64> = preds.iter().map(|p| a * p + b).collect();
        let squashed: Vec<f64> = preds.iter().map(|p| 1.0 / (1.0 + (-p).exp())).collect();
        let cubed: Vec<f64> = preds.iter().map(|p| p * p * p).collect();
        prop_assert!((auroc(&affine, &labels).unwrap() - base).abs() <= 1e-12);
        prop_assert!((auroc(&squashed, &labels).unwrap() - base).abs() <= 1e-12);
        prop_assert!((auroc(&cubed, &labels).unwrap() - base).abs() <= 1e-12);
    }

    #[test]
    fn auroc_of_negation_is_complement((preds, labels) in scored()) {
        let neg: Vec<f64> = preds.iter().map(|p| -p).collect();
        let sum = auroc(&preds, &labels).unwrap() + auroc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn subset_estimate_behaviour() {
    let labels: Vec<f64> = (0..100).map(|i| (i % 4) as f64 / 4.0).collect();
    let full = labels.iter().sum::<f64>() / 100.0;
    assert!((subset_estimate(&labels, 1.0, 3).unwrap() - full).abs() < 1e-12);
    assert_eq!(subset_estimate(&labels, 0.1, 7).unwrap(), subset_estimate(&labels, 0.1, 7).unwrap());
    assert!(subset_estimate(&labels, 0.0, 1).is_err());
    let c = compare_probe_vs_subset("t", &vec![full; 100], &labels, 0.1, 5).unwrap();
    assert!(c.probe_abs_err < 1e-12);
    assert!((c.subset_abs_err - (c.subset_estimate - full).abs()).abs() < 1e-15);
}

#[test]
fn reports_roundtrip_through_csv() {
    let reports = vec![
        score("submodel", "modadd-m8", 10, 20, &[0.2, 0.8, 0.6], &[0.0, 1.0, 0.25]).unwrap(),
        score("linear", "modadd-m8", 10, 10, &[0.2, 0.8], &[1.0, 1.0]).unwrap(),
    ];
    assert!(reports[1].auroc.is_none());
    let csv = reports_to_csv(&reports);
    assert!(csv.starts_with(REPORT_HEADER));
    assert!(csv.contains("undefined"));
    assert_eq!(reports_from_csv(&csv).unwrap(), reports);
}

fn tiny_setup() -> (Vec<Checkpoint>, Vec<TaskInstance>, Vec<Vec<LabeledPrompt>>) {
    let kind = TaskKind::ModAdd { modulus: 8 };
    let inst = gen_instances(kind, 64, 1, 0.25).unwrap();
    let cfg = ModelConfig {
        vocab_size: 18,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        seq_max: 12,
        seed: 4,
    };
    let corpus: Vec<CorpusSeq> = inst.iter().map(TaskInstance::corpus_seq).collect();
    let tc = BaseTrainConfig {
        steps: 60,
        save_every: 30,
        lr: 3e-3,
        batch_size: 8,
        seed: 1,
    };
    let ckpts = train_base_trajectory(cfg, &corpus, &tc).unwrap().checkpoints;
    let gp = GenerationParams {
        n_samples: 4,
        max_new_tokens: 4,
        ..Default::default()
    };
    let labels = ckpts.iter().map(|c| collect_labels(c, &inst, &gp).unwrap()).collect();
    (ckpts, inst, labels)
}

#[test]
fn transfer_diagonal_matches_direct_evaluation() {
    let (ckpts, inst, labels) = tiny_setup();
    let train: Vec<TaskInstance> = inst.iter().filter(|i| i.split == Split::Train).cloned().collect();
    let test: Vec<TaskInstance> = inst.iter().filter(|i| i.split == Split::Test).cloned().collect();
    let points: Vec<CheckpointData> = ckpts
        .iter()
        .zip(&labels)
        .map(|(c, l)| CheckpointData {
            ckpt: c,
            train: &train,
            test: &test,
            labels: l,
        })
        .collect();
    let spec = ProbeSpec::new(ProbeKind::LossFit);
    let tc = TrainConfig::default();
    let m = transfer_matrix(&spec, &points, &tc).unwrap();
    assert_eq!(m.cells.len(), 3);
    assert!(m.cell(60, 30).is_none());
    for (c, l) in ckpts.iter().zip(&labels) {
        let feats = all_features(spec.kind, spec.nll_input, c, &train).unwrap();
        let y = align_labels(&train, l, c.step).unwrap();
        let (probe, _) = fit_probe(&spec, c, &feats, &y, &tc).unwrap();
        let direct = eval_probe(&probe, &spec.label(), c.step, c, &test, l).unwrap();
        assert_eq!(m.cell(c.step, c.step).unwrap(), &direct);
    }
    // Unsorted checkpoints are rejected.
    let rev: Vec<CheckpointData> = points.into_iter().rev().collect();
    assert!(transfer_matrix(&spec, &rev, &tc).is_err());
}

#[test]
fn missing_label_is_a_pipeline_error() {
    let (ckpts, inst, labels) = tiny_setup();
    assert!(matches!(align_labels(&inst, &labels[0][1..], ckpts[0].step), Err(Error::Pipeline(_))));
    assert!(matches!(align_labels(&inst, &labels[0], 999), Err(Error::Pipeline(_))));
}

#[test]
fn training_is_deterministic_and_patience_bounds_epochs() {
    let (ckpts, inst, labels) = tiny_setup();
    let c = &ckpts[1];
    let spec = ProbeSpec {
        d_probe: Some(8),
        ..ProbeSpec::new(ProbeKind::Submodel)
    };
    let feats = all_features(spec.kind, spec.nll_input, c, &inst).unwrap();
    let y = align_labels(&inst, &labels[1], c.step).unwrap();
    let tc = TrainConfig {
        batch_size: 8,
        max_epochs: 40,
        patience: 3,
        ..Default::default()
    };
    let (a, ca) = fit_probe(&spec, c, &feats, &y, &tc).unwrap();
    let (b, cb) = fit_probe(&spec, c, &feats, &y, &tc).unwrap();
    assert_eq!(a, b);
    assert_eq!(ca.val_mse, cb.val_mse);
    assert!(ca.val_mse.len() <= ca.best_epoch + 3);
    assert!(ca.val_mse.iter().all(|&v| v >= ca.best_val_mse));

    let few = TrainConfig { batch_size: 64, ..tc };
    assert!(matches!(fit_probe(&spec, c, &feats, &y, &few), Err(Error::Input(_))));
}
