//! Declarative runs: base training, label collection, probe training and
//! the evaluation experiments, with digests for every artifact so reruns
//! skip finished work and detect tampering.

mod config;
mod manifest;
mod report;

pub use config::{
    within, BenchConfig, ModelShape, ProbeConfig, ProbeTrainConfig, RunConfig, SamplingConfig, ScheduleConfig,
    SubsetConfig, TaskConfig, SCHEMA_VERSION,
};
pub use manifest::{verify, Artifact, Phase, PhaseRecord, RunManifest, MANIFEST_FILE};
pub use report::{emit_report, median, ReportFormat, SEED_MARK};

use std::collections::HashMap;
use std::path::Path;

use crate::bench::{amortized_crossover, curve_csv, time_generative_eval, time_probe_eval, LatencyModel, TimingSample};
use crate::codec::write_file;
use crate::error::{Error, Result};
use crate::eval::{
    align_labels, all_features, compare_probe_vs_subset, fit_probe, predictions, reports_to_csv, score, EvalReport,
    ProbeSpec,
};
use crate::model::{load_checkpoint, train_base_trajectory, write_checkpoint, Checkpoint, CorpusSeq, GenerationParams};
use crate::probes::{load_probe, write_probe, Features, LayerMode, NllInput, Probe, ProbeKind};
use crate::seed::{derive_seed, digest_hex};
use crate::tasks::{
    collect_labels, format_label_cache, gen_instances, read_label_cache, LabeledPrompt, Split, TaskInstance,
};

pub fn checkpoint_path(step: u64) -> String {
    format!("checkpoints/step-{step:06}.bin")
}

pub fn labels_path(step: u64) -> String {
    format!("labels/step-{step:06}.tsv")
}

/// File-name form of a probe label: `submodel[first:4]` becomes
/// `submodel-first-4`.
pub fn slug(label: &str) -> String {
    let mut s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect();
    while s.contains("--") {
        s = s.replace("--", "-");
    }
    s.trim_matches('-').to_owned()
}

pub fn probe_path(dir: &str, task: &str, label: &str, seed: usize, step: u64) -> String {
    format!("{dir}/{task}/{}/seed{seed}/step-{step:06}.bin", slug(label))
}

/// Runs `phases` in dependency order under `out`, skipping phases whose
/// recorded artifacts are intact, and writes the manifest last.
pub fn run_pipeline(config: &RunConfig, out: &Path, phases: &[Phase]) -> Result<RunManifest> {
    config.validate()?;
    let mut manifest = RunManifest::new(config);
    if let Some(old) = RunManifest::load(out)? {
        if old.config_digest != manifest.config_digest {
            return Err(Error::StaleArtifact {
                path: MANIFEST_FILE.into(),
                expected: old.config_digest,
                found: manifest.config_digest,
            });
        }
        manifest.phases = old.phases;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut wanted: Vec<Phase> = phases.to_vec();
    wanted.sort();
    wanted.dedup();
    let run = Run { cfg: config, out };
    let mut done: Vec<Phase> = Vec::new();
    for phase in wanted {
        if let Some(rec) = manifest.record(phase) {
            if verify(out, rec)? {
                done.push(phase);
                continue;
            }
        }
        for &dep in phase.needs() {
            let ready = done.contains(&dep)
                || match manifest.record(dep) {
                    Some(rec) => verify(out, rec)?,
                    None => false,
                };
            if !ready {
                return Err(Error::Pipeline(format!("phase {phase} needs the artifacts of {dep}; run {dep} first")));
            }
            if !done.contains(&dep) {
                done.push(dep);
            }
        }
        let artifacts = pool.install(|| run.phase(phase))?;
        manifest.set(PhaseRecord { phase, artifacts });
        done.push(phase);
    }
    manifest.save(out)?;
    Ok(manifest)
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
}

/// Train and test instances of one task.
struct TaskData {
    name: String,
    train: Vec<TaskInstance>,
    test: Vec<TaskInstance>,
}

impl Run<'_> {
    fn phase(&self, phase: Phase) -> Result<Vec<Artifact>> {
        match phase {
            Phase::TrainBase => self.train_base(),
            Phase::CollectLabels => self.collect_labels(),
            Phase::TrainProbe => self.train_probes(),
            Phase::Eval => self.eval(),
            Phase::Transfer => self.transfer(),
            Phase::AblateLayers => self.ablate(),
            Phase::SubsetCompare => self.subset(),
            Phase::Bench => self.bench(),
        }
    }

    fn put(&self, arts: &mut Vec<Artifact>, rel: String, bytes: &[u8]) -> Result<()> {
        write_file(within(self.out, &rel)?, bytes)?;
        arts.push(Artifact {
            path: rel,
            sha256: digest_hex(bytes),
        });
        Ok(())
    }

    fn seed(&self, name: &str) -> u64 {
        derive_seed(self.cfg.seed, name)
    }

    fn tasks(&self) -> Result<Vec<TaskData>> {
        self.cfg
            .tasks
            .iter()
            .map(|t| {
                let name = t.kind.name();
                let all = gen_instances(t.kind, t.count, self.seed(&format!("instances/{name}")), t.test_fraction)?;
                let (train, test) = all.into_iter().partition(|i| i.split == Split::Train);
                Ok(TaskData { name, train, test })
            })
            .collect()
    }

    fn corpus(&self) -> Result<Vec<CorpusSeq>> {
        let mut corpus = Vec::new();
        for t in &self.cfg.tasks {
            let seed = self.seed(&format!("corpus/{}", t.kind.name()));
            // Splits are irrelevant here; every drawn instance is trained on.
            let drawn = gen_instances(t.kind, t.corpus_size, seed, 0.5)?;
            corpus.extend(drawn.iter().map(TaskInstance::corpus_seq));
        }
        Ok(corpus)
    }

    fn checkpoint(&self, step: u64) -> Result<Checkpoint> {
        load_checkpoint(within(self.out, &checkpoint_path(step))?)
    }

    fn labels(&self, step: u64) -> Result<Vec<LabeledPrompt>> {
        read_label_cache(within(self.out, &labels_path(step))?)
    }

    fn train_base(&self) -> Result<Vec<Artifact>> {
        let traj = train_base_trajectory(self.cfg.model_config(), &self.corpus()?, &self.cfg.base_train())?;
        let mut arts = Vec::new();
        for c in &traj.checkpoints {
            self.put(&mut arts, checkpoint_path(c.step), &write_checkpoint(c))?;
        }
        let mut loss = String::from("step,loss\n");
        for (i, l) in traj.losses.iter().enumerate() {
            loss.push_str(&format!("{},{l}\n", i + 1));
        }
        self.put(&mut arts, "checkpoints/loss.csv".into(), loss.as_bytes())?;
        Ok(arts)
    }

    fn collect_labels(&self) -> Result<Vec<Artifact>> {
        let instances: Vec<TaskInstance> = self
            .tasks()?
            .into_iter()
            .flat_map(|t| t.train.into_iter().chain(t.test))
            .collect();
        let gp = self.cfg.generation("all");
        let mut arts = Vec::new();
        for step in self.cfg.checkpoint_steps() {
            let labels = collect_labels(&self.checkpoint(step)?, &instances, &gp)?;
            self.put(&mut arts, labels_path(step), format_label_cache(&labels).as_bytes())?;
        }
        Ok(arts)
    }

    /// Seeds per probe: closed-form fits ignore the seed, so train once.
    fn seeds_for(&self, kind: ProbeKind) -> usize {
        match kind {
            ProbeKind::LossFit | ProbeKind::Linear => 1,
            _ => self.cfg.probe_seeds,
        }
    }

    fn fit_cell(
        &self,
        spec: &ProbeSpec,
        task: &str,
        k: usize,
        ckpt: &Checkpoint,
        feats: &[Features],
        labels: &[f64],
    ) -> Result<Probe> {
        let key = format!("{task}/{}/{k}", spec.label());
        let spec = ProbeSpec {
            init_seed: self.seed(&format!("probe-init/{key}")),
            ..*spec
        };
        let tc = self.cfg.train_config(self.seed(&format!("probe-train/{key}")));
        Ok(fit_probe(&spec, ckpt, feats, labels, &tc)?.0)
    }

    /// Trains `specs` on each task's train split at `step`.
    fn train_at(&self, dir: &str, step: u64, specs: &[ProbeSpec], arts: &mut Vec<Artifact>) -> Result<()> {
        let ckpt = self.checkpoint(step)?;
        let labels = self.labels(step)?;
        for task in self.tasks()? {
            let y = align_labels(&task.train, &labels, step)?;
            let mut cache: HashMap<(ProbeKind, NllInput), Vec<Features>> = HashMap::new();
            for spec in specs {
                let key = (spec.kind, spec.nll_input);
                if !cache.contains_key(&key) {
                    cache.insert(key, all_features(spec.kind, spec.nll_input, &ckpt, &task.train)?);
                }
                for k in 0..self.seeds_for(spec.kind) {
                    let probe = self.fit_cell(spec, &task.name, k, &ckpt, &cache[&key], &y)?;
                    self.put(arts, probe_path(dir, &task.name, &spec.label(), k, step), &write_probe(&probe))?;
                }
            }
        }
        Ok(())
    }

    fn specs(&self) -> Vec<ProbeSpec> {
        self.cfg.probes.iter().map(|p| self.cfg.probe_spec(p, 0)).collect()
    }

    fn train_probes(&self) -> Result<Vec<Artifact>> {
        let fid = self.cfg.fidelity_step();
        let mut arts = Vec::new();
        for step in self.cfg.checkpoint_steps() {
            let specs: Vec<ProbeSpec> = self
                .specs()
                .into_iter()
                .filter(|s| step == fid || self.cfg.transfer_probes.contains(&s.kind))
                .collect();
            if !specs.is_empty() {
                self.train_at("probes", step, &specs, &mut arts)?;
            }
        }
        Ok(arts)
    }

    /// Per-seed reports of probes under `dir` trained at `train_step`,
    /// evaluated on each task's test split at every step in `test_steps`.
    fn evaluate(&self, dir: &str, specs: &[ProbeSpec], train_step: u64, test_steps: &[u64]) -> Result<Vec<EvalReport>> {
        let tasks = self.tasks()?;
        let mut rows = Vec::new();
        for &test_step in test_steps {
            let ckpt = self.checkpoint(test_step)?;
            let labels = self.labels(test_step)?;
            for task in &tasks {
                let y = align_labels(&task.test, &labels, test_step)?;
                let mut cache: HashMap<(ProbeKind, NllInput), Vec<Features>> = HashMap::new();
                for spec in specs {
                    let key = (spec.kind, spec.nll_input);
                    if !cache.contains_key(&key) {
                        cache.insert(key, all_features(spec.kind, spec.nll_input, &ckpt, &task.test)?);
                    }
                    for k in 0..self.seeds_for(spec.kind) {
                        let path = within(self.out, &probe_path(dir, &task.name, &spec.label(), k, train_step))?;
                        let probe = load_probe(path)?;
                        let preds = predictions(&probe, &ckpt, &cache[&key])?;
                        let label = format!("{}{SEED_MARK}{k}", spec.label());
                        rows.push(score(&label, &task.name, train_step, test_step, &preds, &y)?);
                    }
                }
            }
        }
        Ok(rows)
    }

    fn write_reports(&self, arts: &mut Vec<Artifact>, name: &str, per_seed: &[EvalReport]) -> Result<()> {
        self.put(arts, format!("results/{name}_seeds.csv"), reports_to_csv(per_seed).as_bytes())?;
        let med = report::seed_medians(per_seed);
        self.put(arts, format!("results/{name}.csv"), reports_to_csv(&med).as_bytes())
    }

    fn eval(&self) -> Result<Vec<Artifact>> {
        let fid = self.cfg.fidelity_step();
        let rows = self.evaluate("probes", &self.specs(), fid, &[fid])?;
        let mut med = report::seed_medians(&rows);
        med = report::with_averages(med);
        let mut arts = Vec::new();
        self.put(&mut arts, "results/fidelity_seeds.csv".into(), reports_to_csv(&rows).as_bytes())?;
        self.put(&mut arts, "results/fidelity.csv".into(), reports_to_csv(&med).as_bytes())?;
        Ok(arts)
    }

    fn transfer(&self) -> Result<Vec<Artifact>> {
        let steps = self.cfg.checkpoint_steps();
        let specs: Vec<ProbeSpec> = self
            .specs()
            .into_iter()
            .filter(|s| self.cfg.transfer_probes.contains(&s.kind))
            .collect();
        let mut rows = Vec::new();
        for (i, &train) in steps.iter().enumerate() {
            rows.extend(self.evaluate("probes", &specs, train, &steps[i..])?);
        }
        // Group by probe, then task; the sort is stable so steps stay ordered.
        let labels: Vec<String> = specs.iter().map(ProbeSpec::label).collect();
        let tasks: Vec<String> = self.cfg.tasks.iter().map(|t| t.kind.name()).collect();
        rows.sort_by_key(|r| {
            let base = r.probe.split(SEED_MARK).next().unwrap_or_default();
            (
                labels.iter().position(|l| l == base),
                tasks.iter().position(|t| *t == r.task),
            )
        });
        let mut arts = Vec::new();
        self.write_reports(&mut arts, "transfer", &rows)?;
        Ok(arts)
    }

    fn ablation_specs(&self) -> Vec<ProbeSpec> {
        let base = self
            .cfg
            .probes
            .iter()
            .find(|p| p.kind == ProbeKind::Submodel)
            .map(|p| self.cfg.probe_spec(p, 0))
            .unwrap_or_else(|| ProbeSpec::new(ProbeKind::Submodel));
        self.cfg
            .ablation_layers
            .iter()
            .map(|&layers| {
                // The full map at K = N is the plain submodel probe.
                let layers = match layers {
                    LayerMode::FirstK(k) if k == self.cfg.model.n_layers => LayerMode::Full,
                    m => m,
                };
                ProbeSpec { layers, ..base }
            })
            .collect()
    }

    fn ablate(&self) -> Result<Vec<Artifact>> {
        let fid = self.cfg.fidelity_step();
        let specs = self.ablation_specs();
        let mut arts = Vec::new();
        self.train_at("ablation", fid, &specs, &mut arts)?;
        let rows = self.evaluate("ablation", &specs, fid, &[fid])?;
        self.write_reports(&mut arts, "ablation", &rows)?;
        Ok(arts)
    }

    /// The probe used for dataset-level estimates and timing: the first
    /// submodel probe if configured, else the first probe.
    fn headline(&self) -> ProbeSpec {
        let specs = self.specs();
        specs
            .iter()
            .find(|s| s.kind == ProbeKind::Submodel)
            .copied()
            .unwrap_or(specs[0])
    }

    fn subset(&self) -> Result<Vec<Artifact>> {
        let fid = self.cfg.fidelity_step();
        let ckpt = self.checkpoint(fid)?;
        let labels = self.labels(fid)?;
        let spec = self.headline();
        let mut out = csv::Writer::from_writer(Vec::new());
        for task in self.tasks()? {
            let y = align_labels(&task.test, &labels, fid)?;
            let probe = load_probe(within(self.out, &probe_path("probes", &task.name, &spec.label(), 0, fid))?)?;
            let feats = all_features(spec.kind, spec.nll_input, &ckpt, &task.test)?;
            let preds = predictions(&probe, &ckpt, &feats)?;
            for &f in &self.cfg.subset.fractions {
                for s in 0..self.cfg.subset.seeds {
                    let seed = self.seed(&format!("subset/{}/{f}/{s}", task.name));
                    let row = compare_probe_vs_subset(&task.name, &preds, &y, f, seed)?;
                    out.serialize(row).map_err(report::csv_error)?;
                }
            }
        }
        let bytes = out.into_inner().map_err(|e| Error::Pipeline(format!("csv: {e}")))?;
        let mut arts = Vec::new();
        self.put(&mut arts, "results/subset.csv".into(), &bytes)?;
        Ok(arts)
    }

    fn bench(&self) -> Result<Vec<Artifact>> {
        let fid = self.cfg.fidelity_step();
        let ckpt = self.checkpoint(fid)?;
        let b = &self.cfg.bench;
        let tasks = self.tasks()?;
        let prompts: Vec<TaskInstance> = tasks
            .iter()
            .flat_map(|t| t.train.iter().chain(&t.test))
            .take(b.prompts)
            .cloned()
            .collect();
        if prompts.len() < b.prompts {
            return Err(Error::Config(format!(
                "bench wants {} prompts but the tasks hold {}",
                b.prompts,
                prompts.len()
            )));
        }
        let gp = GenerationParams {
            n_samples: b.n_samples,
            temperature: self.cfg.sampling.temperature,
            max_new_tokens: b.max_new_tokens,
            seed: self.seed("bench"),
        };
        let spec = self.headline();
        let probe = load_probe(within(self.out, &probe_path("probes", &tasks[0].name, &spec.label(), 0, fid))?)?;
        let gen = time_generative_eval(&ckpt, &prompts, &gp)?;
        let fast = time_probe_eval(&probe, &ckpt, &prompts)?;
        let mut out = csv::Writer::from_writer(Vec::new());
        for row in [&gen, &fast] {
            out.serialize(TimingSample::clone(row)).map_err(report::csv_error)?;
        }
        let bytes = out.into_inner().map_err(|e| Error::Pipeline(format!("csv: {e}")))?;
        let lm = LatencyModel {
            t_init: b.t_init_hours,
            t_eval_gen: b.t_gen_hours,
            t_eval_probe: b.t_probe_hours,
        };
        let cross = amortized_crossover(&lm, b.curve_max)?;
        let mut arts = Vec::new();
        self.put(&mut arts, "results/bench.csv".into(), &bytes)?;
        self.put(&mut arts, "results/crossover.csv".into(), curve_csv(&cross.curve).as_bytes())?;
        Ok(arts)
    }
}
