//! Wall-clock cost of generative versus probe evaluation and the amortized
//! cost model `T = T_init + N·t_eval`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{all_features, predictions};
use crate::model::{Checkpoint, GenerationParams};
use crate::probes::{NllInput, Probe};
use crate::tasks::{collect_labels_counted, TaskInstance};

/// Timed repetitions after one discarded warm-up run.
pub const TIMED_RUNS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSample {
    pub label: String,
    pub prompts: usize,
    /// Median over the timed runs.
    pub seconds: f64,
    pub tokens_generated: usize,
    pub workers: usize,
}

impl TimingSample {
    pub fn throughput(&self) -> f64 {
        self.prompts as f64 / self.seconds
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn timed<F: FnMut() -> Result<usize>>(mut f: F) -> Result<(f64, usize)> {
    f()?;
    let mut secs = Vec::with_capacity(TIMED_RUNS);
    let mut tokens = 0;
    for _ in 0..TIMED_RUNS {
        let start = Instant::now();
        tokens = f()?;
        secs.push(start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
    }
    Ok((median(secs), tokens))
}

/// Label collection end to end: sampling plus verification.
pub fn time_generative_eval(ckpt: &Checkpoint, instances: &[TaskInstance], gp: &GenerationParams) -> Result<TimingSample> {
    if instances.is_empty() {
        return Err(Error::Input("nothing to time".into()));
    }
    let (seconds, tokens_generated) = timed(|| Ok(collect_labels_counted(ckpt, instances, gp)?.1))?;
    let workers = rayon::current_num_threads();
    Ok(TimingSample {
        label: format!("generative n={} max_new={} workers={workers}", gp.n_samples, gp.max_new_tokens),
        prompts: instances.len(),
        seconds,
        tokens_generated,
        workers,
    })
}

/// Feature extraction plus prediction for every prompt; no generation.
pub fn time_probe_eval(probe: &Probe, ckpt: &Checkpoint, instances: &[TaskInstance]) -> Result<TimingSample> {
    if instances.is_empty() {
        return Err(Error::Input("nothing to time".into()));
    }
    let nll = match probe {
        Probe::LossFit(f) => f.input,
        _ => NllInput::default(),
    };
    let (seconds, _) = timed(|| {
        let feats = all_features(probe.kind(), nll, ckpt, instances)?;
        predictions(probe, ckpt, &feats)?;
        Ok(0)
    })?;
    let workers = rayon::current_num_threads();
    Ok(TimingSample {
        label: format!("probe {} workers={workers}", probe.kind()),
        prompts: instances.len(),
        seconds,
        tokens_generated: 0,
        workers,
    })
}

/// `generative.seconds / probe.seconds`; both must share one worker count.
pub fn speedup(generative: &TimingSample, probe: &TimingSample) -> Result<f64> {
    if generative.workers != probe.workers {
        return Err(Error::Usage(format!(
            "timings used different worker counts ({} vs {})",
            generative.workers, probe.workers
        )));
    }
    if generative.prompts != probe.prompts {
        return Err(Error::Usage("timings cover different prompt sets".into()));
    }
    Ok(generative.seconds / probe.seconds)
}

/// Costs in hours.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub t_init: f64,
    pub t_eval_gen: f64,
    pub t_eval_probe: f64,
}

impl LatencyModel {
    pub fn generative_cost(&self, n: u64) -> f64 {
        n as f64 * self.t_eval_gen
    }

    pub fn probe_cost(&self, n: u64) -> f64 {
        self.t_init + n as f64 * self.t_eval_probe
    }

    fn probe_cheaper(&self, n: u64) -> bool {
        self.probe_cost(n) < self.generative_cost(n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: u64,
    pub cumulative_gen_hours: f64,
    pub cumulative_probe_hours: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    /// Smallest `N` with `T_init + N·t_probe < N·t_gen`; `None` when the
    /// probe is never cheaper.
    pub n_star: Option<u64>,
    pub curve: Vec<CurvePoint>,
}

/// `N* = ⌊T_init / (t_gen − t_probe)⌋ + 1`, with both cost curves sampled at
/// `N = 1..=n_max`.
pub fn amortized_crossover(lm: &LatencyModel, n_max: u64) -> Result<Crossover> {
    if [lm.t_init, lm.t_eval_gen, lm.t_eval_probe].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Input(format!("latency model has negative or non-finite costs: {lm:?}")));
    }
    let n_star = (lm.t_eval_gen > lm.t_eval_probe).then(|| {
        let mut n = (lm.t_init / (lm.t_eval_gen - lm.t_eval_probe)).floor() as u64 + 1;
        // Settle rounding at the boundary against the defining inequality.
        while !lm.probe_cheaper(n) {
            n += 1;
        }
        while n > 1 && lm.probe_cheaper(n - 1) {
            n -= 1;
        }
        n
    });
    let curve = (1..=n_max)
        .map(|n| CurvePoint {
            n,
            cumulative_gen_hours: lm.generative_cost(n),
            cumulative_probe_hours: lm.probe_cost(n),
        })
        .collect();
    Ok(Crossover { n_star, curve })
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("N,cumulative_gen_hours,cumulative_probe_hours\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.n, p.cumulative_gen_hours, p.cumulative_probe_hours));
    }
    out
}
