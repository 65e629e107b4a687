use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use probeval::pipeline::{emit_report, run_pipeline, Phase, ProbeConfig, ReportFormat, RunConfig, RunManifest};
use probeval::probes::{LayerMode, NllInput, ProbeKind};
use probeval::Error;

/// In-training probe evaluation: train a toy language model, label prompts
/// by sampling, and fit probes that predict Pass@1 from internal states.
#[derive(Parser)]
#[command(name = "probeval", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base model and save the checkpoint trajectory.
    TrainBase(Shared),
    /// Sample responses at every checkpoint and cache Pass@1 labels.
    CollectLabels(Shared),
    /// Fit the configured probes.
    TrainProbe(Shared),
    /// Score probes on the test split at the fidelity checkpoint.
    Eval(Shared),
    /// Score early-checkpoint probes on later checkpoints.
    Transfer(Shared),
    /// Compare submodel probes fed by different base-layer prefixes.
    AblateLayers(Shared),
    /// Compare probe estimates with random-subset estimates.
    SubsetCompare(Shared),
    /// Time generative and probe evaluation; emit the crossover curve.
    Bench(Shared),
    /// Run every phase, then write CSV and JSON reports.
    Run(Shared),
    /// Render result tables under <out>/reports.
    Report {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Print the default run configuration.
    DefaultConfig,
}

#[derive(Args)]
struct Shared {
    /// Run configuration (JSON); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, default_value = "probeval-run")]
    out: PathBuf,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Restrict the run to one probe kind.
    #[arg(long)]
    probe: Option<String>,
    /// Layer mode for the selected probe (`full` or `first:K`).
    #[arg(long)]
    layers: Option<String>,
}

impl Shared {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        let layers: Option<LayerMode> = self.layers.as_deref().map(str::parse).transpose()?;
        if let Some(kind) = self.probe.as_deref() {
            let kind: ProbeKind = kind.parse()?;
            let base = cfg.probes.iter().find(|p| p.kind == kind).cloned().unwrap_or(ProbeConfig {
                kind,
                layers: LayerMode::Full,
                d_probe: None,
                lora_rank: 4,
                nll_input: NllInput::default(),
            });
            cfg.probes = vec![ProbeConfig {
                layers: layers.unwrap_or(base.layers),
                ..base
            }];
            cfg.transfer_probes.retain(|k| *k == kind);
        } else if layers.is_some() {
            return Err(Error::Usage("--layers needs --probe".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Prints a line, ignoring a closed stdout.
fn say(line: &str) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Input(_) | Error::Capacity { .. } | Error::Json(_) => 1,
        Error::Numerical(_) | Error::Training { .. } | Error::UndefinedMetric(_) => 3,
        _ => 2,
    }
}

fn phases(shared: &Shared, phases: &[Phase]) -> Result<(), Error> {
    let cfg = shared.config()?;
    let manifest = run_pipeline(&cfg, &shared.out, phases)?;
    for rec in manifest.phases.iter().filter(|r| phases.contains(&r.phase)) {
        say(&format!("{}: {} artifacts", rec.phase, rec.artifacts.len()));
    }
    Ok(())
}

fn report(shared: &Shared, format: ReportFormat) -> Result<(), Error> {
    let cfg = shared.config()?;
    let manifest = RunManifest::load(&shared.out)?
        .ok_or_else(|| Error::Pipeline(format!("no manifest in {}; run the pipeline first", shared.out.display())))?;
    if manifest.config_digest != RunManifest::new(&cfg).config_digest {
        return Err(Error::Pipeline("the manifest was written under a different configuration".into()));
    }
    let written = emit_report(&shared.out, &manifest, format)?;
    if written.is_empty() {
        say(&format!("nothing to report: no experiment phase has run in {}", shared.out.display()));
    }
    for p in written {
        say(&p.display().to_string());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::TrainBase(s) => phases(&s, &[Phase::TrainBase]),
        Command::CollectLabels(s) => phases(&s, &[Phase::CollectLabels]),
        Command::TrainProbe(s) => phases(&s, &[Phase::TrainProbe]),
        Command::Eval(s) => phases(&s, &[Phase::Eval]),
        Command::Transfer(s) => phases(&s, &[Phase::Transfer]),
        Command::AblateLayers(s) => phases(&s, &[Phase::AblateLayers]),
        Command::SubsetCompare(s) => phases(&s, &[Phase::SubsetCompare]),
        Command::Bench(s) => phases(&s, &[Phase::Bench]),
        Command::Run(s) => {
            phases(&s, &Phase::ALL)?;
            report(&s, ReportFormat::Csv)?;
            report(&s, ReportFormat::Json)
        }
        Command::Report { shared, format } => report(&shared, format.parse()?),
        Command::DefaultConfig => {
            say(RunConfig::default().to_json().trim_end());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
