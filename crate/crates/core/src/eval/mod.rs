//! Probe training, fidelity metrics, forward-transfer matrices and the
//! subset-sampling comparison.

mod metrics;
mod report;
mod subset;
mod train;

pub use metrics::{auroc, binarize, mse, POSITIVE_THRESHOLD};
pub use report::{reports_from_csv, reports_to_csv, EvalReport, TransferMatrix, REPORT_HEADER};
pub use subset::{compare_probe_vs_subset, subset_estimate, SubsetComparison};
pub use train::{fit_probe, train_probe, ProbeSpec, TrainConfig, TrainCurve};

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::probes::{features, Features, NllInput, Probe, ProbeKind};
use crate::tasks::{LabeledPrompt, TaskInstance};

/// Aligns `labels` to `instances` by id, requiring every label to come from
/// `step`.
pub fn align_labels(instances: &[TaskInstance], labels: &[LabeledPrompt], step: u64) -> Result<Vec<f64>> {
    let by_id: HashMap<&str, &LabeledPrompt> = labels
        .iter()
        .filter(|l| l.checkpoint_step == step)
        .map(|l| (l.instance_id.as_str(), l))
        .collect();
    instances
        .iter()
        .map(|i| {
            by_id.get(i.id.as_str()).map(|l| l.v_hat).ok_or_else(|| {
                Error::Pipeline(format!("missing label for {} at checkpoint step {step}", i.id))
            })
        })
        .collect()
}

/// Features of every instance for a probe kind, computed in parallel.
pub fn all_features(kind: ProbeKind, nll: NllInput, ckpt: &Checkpoint, instances: &[TaskInstance]) -> Result<Vec<Features>> {
    instances.par_iter().map(|i| features(kind, nll, ckpt, i)).collect()
}

pub fn predictions(probe: &Probe, ckpt: &Checkpoint, feats: &[Features]) -> Result<Vec<f64>> {
    feats.par_iter().map(|f| probe.predict(ckpt, f)).collect()
}

/// AUROC against binarized labels and MSE against raw labels.
pub fn score(label: &str, task: &str, train_step: u64, test_step: u64, preds: &[f64], labels: &[f64]) -> Result<EvalReport> {
    let classes = labels.iter().map(|&v| binarize(v)).collect::<Result<Vec<u8>>>()?;
    let auroc = match auroc(preds, &classes) {
        Ok(a) => Some(a),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        probe: label.to_owned(),
        train_step,
        test_step,
        task: task.to_owned(),
        auroc,
        mse: mse(preds, labels)?,
        n: labels.len(),
        pos_frac: classes.iter().map(|&c| c as f64).sum::<f64>() / classes.len() as f64,
    })
}

/// Evaluates a trained probe on `ckpt`'s test instances. `train_step` is the
/// checkpoint the probe was fitted on.
pub fn eval_probe(
    probe: &Probe,
    label: &str,
    train_step: u64,
    ckpt: &Checkpoint,
    instances: &[TaskInstance],
    labels: &[LabeledPrompt],
) -> Result<EvalReport> {
    let targets = align_labels(instances, labels, ckpt.step)?;
    let nll = match probe {
        Probe::LossFit(f) => f.input,
        _ => NllInput::default(),
    };
    let feats = all_features(probe.kind(), nll, ckpt, instances)?;
    let preds = predictions(probe, ckpt, &feats)?;
    score(label, &task_of(instances), train_step, ckpt.step, &preds, &targets)
}

pub(crate) fn task_of(instances: &[TaskInstance]) -> String {
    let mut names: Vec<String> = instances.iter().map(|i| i.task()).collect();
    names.dedup();
    if names.len() == 1 {
        names.remove(0)
    } else {
        "mixed".into()
    }
}

/// Labeled train and test instances at one checkpoint.
pub struct CheckpointData<'a> {
    pub ckpt: &'a Checkpoint,
    pub train: &'a [TaskInstance],
    pub test: &'a [TaskInstance],
    pub labels: &'a [LabeledPrompt],
}

/// Trains one probe per checkpoint and evaluates it on that checkpoint and
/// every later one.
pub fn transfer_matrix(spec: &ProbeSpec, points: &[CheckpointData<'_>], tc: &TrainConfig) -> Result<TransferMatrix> {
    if points.is_empty() {
        return Err(Error::Input("transfer matrix needs at least one checkpoint".into()));
    }
    if points.windows(2).any(|w| w[0].ckpt.step >= w[1].ckpt.step) {
        return Err(Error::Input("checkpoints must be sorted by strictly increasing step".into()));
    }
    let test_feats = points
        .iter()
        .map(|p| all_features(spec.kind, spec.nll_input, p.ckpt, p.test))
        .collect::<Result<Vec<_>>>()?;
    let test_labels = points
        .iter()
        .map(|p| align_labels(p.test, p.labels, p.ckpt.step))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let feats = all_features(spec.kind, spec.nll_input, p.ckpt, p.train)?;
        let y = align_labels(p.train, p.labels, p.ckpt.step)?;
        let (probe, _) = fit_probe(spec, p.ckpt, &feats, &y, tc)?;
        for j in i..points.len() {
            let q = &points[j];
            let preds = predictions(&probe, q.ckpt, &test_feats[j])?;
            cells.push(score(&spec.label(), &task_of(q.test), p.ckpt.step, q.ckpt.step, &preds, &test_labels[j])?);
        }
    }
    Ok(TransferMatrix {
        steps: points.iter().map(|p| p.ckpt.step).collect(),
        cells,
    })
}
