use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::probes::{
    make_layer_map, Features, LayerMode, LinearProbe, LoraProbe, LossFit, NllInput, Probe, ProbeKind, SubmodelProbe,
};
use crate::tensor::{Adaptive, AdaptiveConfig, Bound, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("lr, batch_size and patience must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 0.5) {
            return Err(Error::Config(format!("val_fraction {} outside (0, 0.5]", self.val_fraction)));
        }
        Ok(())
    }
}

/// How to build a probe of a given kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub kind: ProbeKind,
    pub layers: LayerMode,
    /// Submodel width; `None` means `d_model / 2`.
    pub d_probe: Option<usize>,
    pub lora_rank: usize,
    pub nll_input: NllInput,
    pub init_seed: u64,
}

impl ProbeSpec {
    pub fn new(kind: ProbeKind) -> Self {
        ProbeSpec {
            kind,
            layers: LayerMode::Full,
            d_probe: None,
            lora_rank: 4,
            nll_input: NllInput::default(),
            init_seed: 0,
        }
    }

    /// Row label in reports, e.g. `submodel` or `submodel[first:4]`.
    pub fn label(&self) -> String {
        match (self.kind, self.layers) {
            (ProbeKind::Submodel, LayerMode::FirstK(k)) => format!("submodel[first:{k}]"),
            (ProbeKind::LossFit, _) if self.nll_input == NllInput::Prompt => "lossfit[prompt]".into(),
            (k, _) => k.name().into(),
        }
    }

    /// Untrained probe for `ckpt`'s architecture.
    pub fn init(&self, ckpt: &Checkpoint) -> Result<Probe> {
        let cfg = &ckpt.config;
        Ok(match self.kind {
            ProbeKind::Submodel => {
                let map = make_layer_map(self.layers, cfg.n_layers)?;
                let d_probe = self.d_probe.unwrap_or(cfg.d_model / 2).max(1);
                Probe::Submodel(SubmodelProbe::new(map, cfg.d_model, d_probe, self.init_seed)?)
            }
            ProbeKind::Lora => Probe::Lora(LoraProbe::new(cfg, self.lora_rank, self.init_seed)?),
            k => return Err(Error::Usage(format!("{k} probes are fitted in closed form"))),
        })
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainCurve {
    pub train_loss: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

/// Fits a probe of `spec` on precomputed features.
pub fn fit_probe(
    spec: &ProbeSpec,
    ckpt: &Checkpoint,
    feats: &[Features],
    labels: &[f64],
    tc: &TrainConfig,
) -> Result<(Probe, TrainCurve)> {
    if feats.len() != labels.len() || feats.is_empty() {
        return Err(Error::Input(format!(
            "need matching non-empty features and labels, got {} and {}",
            feats.len(),
            labels.len()
        )));
    }
    match spec.kind {
        ProbeKind::LossFit => {
            let x = feats
                .iter()
                .map(|f| match f {
                    Features::Nll(v) => Ok(*v),
                    _ => Err(Error::Usage("loss-fit needs NLL features".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((Probe::LossFit(LossFit::fit(spec.nll_input, &x, labels)?), TrainCurve::default()))
        }
        ProbeKind::Linear => {
            let rows = feats
                .iter()
                .map(|f| match f {
                    Features::Stack { stack, last } => Ok((stack, *last)),
                    _ => Err(Error::Usage("linear probe needs hidden-state features".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((Probe::Linear(LinearProbe::fit(&rows, labels)?), TrainCurve::default()))
        }
        _ => train_probe(spec.init(ckpt)?, ckpt, feats, labels, tc, None),
    }
}

/// Minimizes mean `(p̂ − v̂)²` with Adam over seeded mini-batches and returns
/// the parameters with the best validation MSE. `trainable` restricts which
/// tensors are updated.
pub fn train_probe(
    mut probe: Probe,
    ckpt: &Checkpoint,
    feats: &[Features],
    labels: &[f64],
    tc: &TrainConfig,
    trainable: Option<&dyn Fn(&str) -> bool>,
) -> Result<(Probe, TrainCurve)> {
    tc.validate()?;
    if feats.len() != labels.len() {
        return Err(Error::Input("features and labels differ in length".into()));
    }
    if feats.len() < 2 * tc.batch_size {
        return Err(Error::Input(format!(
            "need ≥ {} training rows for batch size {}, got {}",
            2 * tc.batch_size,
            tc.batch_size,
            feats.len()
        )));
    }
    let forward = |p: &Probe, tape: &mut Tape<f32>, base: &Option<Bound>, bound: &Bound, f: &Features| -> Result<Var> {
        match (p, f) {
            (Probe::Submodel(s), Features::Stack { stack, last }) => s.forward_on_tape(tape, bound, stack, *last),
            (Probe::Lora(l), Features::Tokens(t)) => {
                l.forward_on_tape(tape, &ckpt.config, base.as_ref().expect("bound base"), bound, t)
            }
            _ => Err(Error::Usage(format!("features do not match a {} probe", p.kind()))),
        }
    };
    if !matches!(probe, Probe::Submodel(_) | Probe::Lora(_)) {
        return Err(Error::Usage("closed-form probes are not gradient-trained".into()));
    }
    let needs_base = matches!(probe, Probe::Lora(_));

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut idx: Vec<usize> = (0..feats.len()).collect();
    idx.shuffle(&mut rng);
    let n_val = ((feats.len() as f64 * tc.val_fraction).round() as usize).max(1);
    let (val, train) = idx.split_at(n_val);
    let mut train = train.to_vec();

    let val_mse = |p: &Probe| -> Result<f64> {
        let mut total = 0f64;
        for &i in val {
            let mut tape = Tape::<f32>::new();
            let base = needs_base.then(|| ckpt.params.bind(&mut tape, false));
            let bound = param_store(p).bind(&mut tape, false);
            let out = forward(p, &mut tape, &base, &bound, &feats[i])?;
            let d = tape.scalar(out) - labels[i];
            total += d * d;
        }
        Ok(total / val.len() as f64)
    };

    let mut curve = TrainCurve {
        best_val_mse: val_mse(&probe)?,
        ..Default::default()
    };
    let mut best = probe.clone();
    let mut opt = Adaptive::new(AdaptiveConfig::adam(tc.lr), param_store(&probe));
    let mut since_best = 0;
    let mut batch_no = 0;
    for epoch in 1..=tc.max_epochs {
        train.shuffle(&mut rng);
        let mut epoch_loss = 0f64;
        let mut batches = 0;
        for chunk in train.chunks(tc.batch_size) {
            batch_no += 1;
            let mut tape = Tape::<f32>::new();
            let base = needs_base.then(|| ckpt.params.bind(&mut tape, false));
            let bound = param_store(&probe).bind(&mut tape, true);
            let mut total: Option<Var> = None;
            for &i in chunk {
                let out = forward(&probe, &mut tape, &base, &bound, &feats[i])?;
                let e = tape.squared_error(out, labels[i])?;
                total = Some(match total {
                    None => e,
                    Some(t) => tape.add(t, e)?,
                });
            }
            let loss = tape.scale(total.expect("non-empty chunk"), 1.0 / chunk.len() as f64);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Training {
                    step: batch_no,
                    reason: format!("probe loss is {value} at batch {batch_no}"),
                });
            }
            tape.backward(loss)?;
            let params = param_store_mut(&mut probe);
            params.accumulate_grads(&tape, &bound)?;
            opt.step(params, trainable)?;
            params.zero_grads();
            epoch_loss += value;
            batches += 1;
        }
        curve.train_loss.push(epoch_loss / batches as f64);
        let v = val_mse(&probe)?;
        curve.val_mse.push(v);
        if v < curve.best_val_mse {
            curve.best_val_mse = v;
            curve.best_epoch = epoch;
            best = probe.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                break;
            }
        }
    }
    Ok((best, curve))
}

fn param_store_mut(p: &mut Probe) -> &mut ParamStore {
    match p {
        Probe::Submodel(s) => &mut s.params,
        Probe::Lora(l) => &mut l.params,
        _ => unreachable!("checked by caller"),
    }
}

fn param_store(p: &Probe) -> &ParamStore {
    match p {
        Probe::Submodel(s) => &s.params,
        Probe::Lora(l) => &l.params,
        _ => unreachable!("checked by caller"),
    }
}
