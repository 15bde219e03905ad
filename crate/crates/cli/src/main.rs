use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hdadapt::harness::{
    bench_scaling, evaluate_kfold, evaluate_lodo, fit_system, sweep_delta, write_predictions_csv,
    write_predictions_jsonl, SampleRecord,
};
use hdadapt::{
    generate_synthetic, load_corpus, make_kfold_splits, make_lodo_splits, Corpus, CorpusSchema,
    HdError, Method, ModelContainer, PipelineConfig, SynthSpec,
};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "hdadapt",
    version,
    about = "Domain-adaptive hyperdimensional classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the encoder, per-domain models and descriptors and save them.
    Train {
        #[command(flatten)]
        input: CorpusArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Where to write the model container.
        #[arg(long, short = 'o', default_value = "model.json")]
        model: PathBuf,
        /// Write the training summary here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-domain-out evaluation.
    EvalLodo {
        #[command(flatten)]
        input: CorpusArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        output: EvalOutput,
    },
    /// k-fold evaluation with seeded folds.
    EvalKfold {
        #[command(flatten)]
        input: CorpusArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[command(flatten)]
        output: EvalOutput,
    },
    /// LODO accuracy for a grid of similarity thresholds.
    SweepDelta {
        #[command(flatten)]
        input: CorpusArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated thresholds.
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "0.05,0.15,0.25,0.35,0.45,0.55,0.65,0.75,0.85,0.95"
        )]
        grid: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and inference timings on nested subsamples.
    Bench {
        #[command(flatten)]
        input: CorpusArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1.0")]
        fractions: Vec<f64>,
        /// Timing repeats per fraction; the fastest is reported.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with per-domain distribution shift.
    Synth {
        /// JSON file with the generator settings; flags given explicitly
        /// override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        domains: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        sensors: Option<usize>,
        #[arg(long)]
        timesteps: Option<usize>,
        #[arg(long)]
        samples_per_class: Option<usize>,
        #[arg(long)]
        shift: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, env = "HDADAPT_SEED")]
        seed: Option<u64>,
        /// Output corpus CSV.
        #[arg(long, short = 'o')]
        out: PathBuf,
    },
    /// Classify a corpus with a saved model.
    Predict {
        #[command(flatten)]
        input: CorpusArgs,
        #[arg(long, short = 'm')]
        model: PathBuf,
        /// Override the threshold stored in the model.
        #[arg(long, allow_hyphen_values = true)]
        delta_star: Option<f64>,
        /// Per-sample predictions; `.jsonl` selects JSON lines, anything
        /// else CSV. Defaults to CSV on stdout.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Summary JSON destination (stderr when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus CSV in long form.
    corpus: PathBuf,
    #[arg(long, default_value = "segment_id")]
    segment_col: String,
    #[arg(long, default_value = "domain")]
    domain_col: String,
    #[arg(long, default_value = "label")]
    label_col: String,
    #[arg(long, default_value = "t")]
    time_col: String,
    /// Comma-separated sensor columns; all remaining columns by default.
    #[arg(long, value_delimiter = ',')]
    sensor_cols: Option<Vec<String>>,
}

impl CorpusArgs {
    fn load(&self) -> hdadapt::Result<Corpus> {
        let schema = CorpusSchema {
            segment: self.segment_col.clone(),
            domain: self.domain_col.clone(),
            label: self.label_col.clone(),
            time: self.time_col.clone(),
            sensors: self.sensor_cols.clone(),
        };
        load_corpus(&self.corpus, &schema)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Pooled,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, default_value_t = hdadapt::hv::DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value_t = hdadapt::encoder::DEFAULT_NGRAM)]
    ngram: usize,
    #[arg(long, default_value_t = hdadapt::model::DEFAULT_ETA)]
    eta: f64,
    #[arg(long, default_value_t = hdadapt::model::DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = hdadapt::adapt::DEFAULT_DELTA_STAR, allow_hyphen_values = true)]
    delta_star: f64,
    #[arg(long, env = "HDADAPT_SEED", default_value_t = 0)]
    seed: u64,
    /// Keep negative similarities as ensemble weights.
    #[arg(long)]
    allow_negative_weights: bool,
    /// Train a single model on all source domains instead.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
}

impl ConfigArgs {
    fn pipeline(&self) -> hdadapt::Result<PipelineConfig> {
        let cfg = PipelineConfig {
            dim: self.dim,
            ngram: self.ngram,
            eta: self.eta,
            epochs: self.epochs,
            delta_star: self.delta_star,
            seed: self.seed,
            allow_negative_weights: self.allow_negative_weights,
            method: match self.baseline {
                Some(Baseline::Pooled) => Method::Pooled,
                None => Method::Adaptive,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalOutput {
    /// Report JSON destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-sample predictions; `.jsonl` selects JSON lines, anything else
    /// CSV.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Export the split plans as JSON.
    #[arg(long)]
    splits_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    corpus: &'a str,
    model: &'a Path,
    config: PipelineConfig,
    segments: usize,
    domains: Vec<usize>,
    classes: usize,
    train_secs: f64,
    throughput: f64,
}

#[derive(Serialize)]
struct PredictSummary {
    model: PathBuf,
    delta_star: f64,
    total: usize,
    correct: usize,
    accuracy: f64,
    ood_rate: f64,
    infer_secs: f64,
    throughput: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<HdError>() {
        Some(e) if !e.is_data_error() => 2,
        _ => 3,
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train {
            input,
            config,
            model,
            out,
        } => {
            let cfg = config.pipeline()?;
            let corpus = input.load()?;
            let segments: Vec<_> = corpus.segments.iter().collect();
            let t0 = Instant::now();
            let system = fit_system(&segments, corpus.classes, &cfg)?;
            let train_secs = t0.elapsed().as_secs_f64();
            ModelContainer::from(&system).save(&model)?;
            eprintln!(
                "trained {} segments from {} domains in {train_secs:.3}s",
                corpus.len(),
                system.domain_ids.len()
            );
            let summary = TrainSummary {
                corpus: &corpus.name,
                model: &model,
                config: cfg,
                segments: corpus.len(),
                domains: system.domain_ids.clone(),
                classes: corpus.classes,
                train_secs,
                throughput: if train_secs > 0.0 {
                    corpus.len() as f64 / train_secs
                } else {
                    0.0
                },
            };
            emit_json(&summary, out.as_deref())
        }
        Command::EvalLodo {
            input,
            config,
            output,
        } => {
            let cfg = config.pipeline()?;
            let corpus = input.load()?;
            if let Some(path) = &output.splits_out {
                write_json_file(&make_lodo_splits(&corpus)?, path)?;
            }
            let report = evaluate_lodo(&corpus, &cfg)?;
            finish_eval(&report, &output)
        }
        Command::EvalKfold {
            input,
            config,
            folds,
            output,
        } => {
            let cfg = config.pipeline()?;
            let corpus = input.load()?;
            if let Some(path) = &output.splits_out {
                write_json_file(&make_kfold_splits(&corpus, folds, cfg.seed)?, path)?;
            }
            let report = evaluate_kfold(&corpus, folds, &cfg)?;
            finish_eval(&report, &output)
        }
        Command::SweepDelta {
            input,
            config,
            grid,
            out,
        } => {
            let cfg = config.pipeline()?;
            let corpus = input.load()?;
            let report = sweep_delta(&corpus, &grid, &cfg)?;
            emit_json(&report, out.as_deref())
        }
        Command::Bench {
            input,
            config,
            fractions,
            repeats,
            out,
        } => {
            let cfg = config.pipeline()?;
            let corpus = input.load()?;
            let rows = bench_scaling(&corpus, &fractions, repeats, &cfg)?;
            emit_json(&rows, out.as_deref())
        }
        Command::Synth {
            spec,
            domains,
            classes,
            sensors,
            timesteps,
            samples_per_class,
            shift,
            noise,
            seed,
            out,
        } => {
            let mut s = match spec {
                Some(path) => SynthSpec::from_json_file(path)?,
                None => SynthSpec::default(),
            };
            s.domains = domains.unwrap_or(s.domains);
            s.classes = classes.unwrap_or(s.classes);
            s.sensors = sensors.unwrap_or(s.sensors);
            s.timesteps = timesteps.unwrap_or(s.timesteps);
            s.samples_per_class = samples_per_class.unwrap_or(s.samples_per_class);
            s.shift = shift.unwrap_or(s.shift);
            s.noise = noise.unwrap_or(s.noise);
            s.seed = seed.unwrap_or(s.seed);
            let corpus = generate_synthetic(&s)?;
            hdadapt::data::save_corpus(&corpus, &out)?;
            eprintln!("wrote {} segments to {}", corpus.len(), out.display());
            Ok(())
        }
        Command::Predict {
            input,
            model,
            delta_star,
            predictions,
            out,
        } => {
            let mut system = ModelContainer::load(&model)?.into_system()?;
            if let Some(d) = delta_star {
                system.config.delta_star = d;
                system.config.validate()?;
            }
            let corpus = input.load()?;
            let segments: Vec<_> = corpus.segments.iter().collect();
            let t0 = Instant::now();
            let records = system.predict(&segments)?;
            let infer_secs = t0.elapsed().as_secs_f64();
            let rows = records.iter().map(|r| (0, r));
            match &predictions {
                Some(path) => write_predictions(rows, path)?,
                None => write_predictions_csv(rows, io::stdout().lock())?,
            }
            let total = records.len();
            let correct = records.iter().filter(|r| r.is_correct()).count();
            let ood = records.iter().filter(|r| r.ood).count();
            let frac = |x: usize| {
                if total == 0 {
                    0.0
                } else {
                    x as f64 / total as f64
                }
            };
            let summary = PredictSummary {
                model,
                delta_star: system.config.delta_star,
                total,
                correct,
                accuracy: frac(correct),
                ood_rate: frac(ood),
                infer_secs,
                throughput: if infer_secs > 0.0 {
                    total as f64 / infer_secs
                } else {
                    0.0
                },
            };
            match out {
                Some(path) => write_json_file(&summary, &path),
                None => {
                    eprintln!("{}", serde_json::to_string_pretty(&summary)?);
                    Ok(())
                }
            }
        }
    }
}

fn finish_eval(report: &hdadapt::RunReport, output: &EvalOutput) -> anyhow::Result<()> {
    if let Some(path) = &output.predictions {
        write_predictions(report.records(), path)?;
    }
    emit_json(report, output.out.as_deref())
}

fn write_predictions<'a, I>(records: I, path: &Path) -> anyhow::Result<()>
where
    I: IntoIterator<Item = (usize, &'a SampleRecord)>,
{
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let w = BufWriter::new(file);
    if path.extension().is_some_and(|e| e == "jsonl") {
        write_predictions_jsonl(records, w)?;
    } else {
        write_predictions_csv(records, w)?;
    }
    Ok(())
}

fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> anyhow::Result<()> {
    match path {
        Some(p) => write_json_file(value, p),
        None => {
            let mut stdout = io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value)?;
            writeln!(stdout)?;
            Ok(())
        }
    }
}

fn write_json_file<T: Serialize + ?Sized>(value: &T, path: &Path) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
