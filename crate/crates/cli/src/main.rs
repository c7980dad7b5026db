use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use plumewatch_core::eval::synth::{synth_sequence, SceneSpec};
use plumewatch_core::eval::{evaluate, write_metrics_csv, LabelArray};
use plumewatch_core::events::EventSegment;
use plumewatch_core::pipeline::{resume, run_day, RunOptions, RunStatus, RunSummary};
use plumewatch_core::PipelineConfig;

#[derive(Parser)]
#[command(name = "plumewatch", version, about = "Detect smoke emissions in timelapse frame sequences")]
struct Cli {
    /// Print the fully resolved default configuration and exit.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Process one day of frames.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Write intermediate images for every analysed frame.
        #[arg(long)]
        dump_stages: bool,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Continue an interrupted run.
    Resume {
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Score a run's events against a label file.
    Eval {
        /// Output directory of a completed run.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Required share of true labels inside a predicted segment.
        #[arg(long, default_value_t = 0.3)]
        overlap: f64,
    },
    /// Render a synthetic day from a scene description.
    Synth {
        /// Scene file; the built-in reference day when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

fn report(summary: &RunSummary, output: &Path) {
    match summary.status {
        RunStatus::Complete => println!(
            "{} frames, {} events, {:.1} s; results in {}",
            summary.series.len(),
            summary.events.len(),
            summary.manifest.timings.wall_ms / 1e3,
            output.display()
        ),
        RunStatus::Halted { last_frame } => println!("halted after frame {last_frame:?}"),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.print_config {
        print!("{}", PipelineConfig::default().to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        bail!("no command given; see --help");
    };
    match command {
        Command::Run {
            config,
            input,
            output,
            dump_stages,
            workers,
        } => {
            let config = match config {
                Some(p) => PipelineConfig::load(&p)?,
                None => PipelineConfig::default(),
            };
            let opts = RunOptions {
                workers,
                dump_stages: dump_stages.then_some(true),
                halt_after: None,
            };
            let summary = run_day(&config, &input, &output, &opts)
                .with_context(|| format!("processing {}", input.display()))?;
            report(&summary, &output);
        }
        Command::Resume { output, workers } => {
            let opts = RunOptions {
                workers,
                ..RunOptions::default()
            };
            let summary = resume(&output, &opts).with_context(|| format!("resuming {}", output.display()))?;
            report(&summary, &output);
        }
        Command::Eval {
            predictions,
            labels,
            overlap,
        } => {
            let events_path = predictions.join("events.json");
            let text = std::fs::read_to_string(&events_path)
                .with_context(|| format!("reading {}", events_path.display()))?;
            let events: Vec<EventSegment> = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", events_path.display()))?;
            let config = PipelineConfig::load(&predictions.join("config.toml")).unwrap_or_default();
            let truth = LabelArray::read(&labels, config.day_id.clone())?;
            let report = evaluate(&events, &truth, overlap)?;
            let mut csv = Vec::new();
            write_metrics_csv(&mut csv, std::slice::from_ref(&report))?;
            std::fs::write(predictions.join("metrics.csv"), &csv)?;
            print!("{}", String::from_utf8(csv)?);
        }
        Command::Synth { spec, output } => {
            let spec = match spec {
                Some(p) => SceneSpec::from_toml(
                    &std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
                )?,
                None => SceneSpec::reference_day(),
            };
            let (frames, labels) = synth_sequence(&spec, &output)?;
            println!(
                "{} frames in {}, {} labelled true",
                labels.len(),
                frames.display(),
                labels.values.iter().filter(|v| **v).count()
            );
        }
    }
    Ok(())
}
