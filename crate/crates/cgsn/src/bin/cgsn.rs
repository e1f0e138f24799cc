//! Command-line front end: training, evidence selection, metric
//! evaluation, memory estimation, synthetic corpus generation and Qasper
//! ingestion. Exit code 0 on success, 2 on any validation error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cgsn::evalkit::predictions::{write_predictions, Prediction};
use cgsn::evalkit::synthetic::{generate_corpus, SyntheticSpec};
use cgsn::evalkit::{ingest_qasper, read_predictions, MetricReport};
use cgsn::pipeline::checkpoint::{load_checkpoint, save_checkpoint};
use cgsn::pipeline::data::{load_dataset, write_dataset};
use cgsn::pipeline::forward::select_evidence;
use cgsn::pipeline::memory_model::{estimate_memory, EstimateMode, MemoryModel};
use cgsn::pipeline::train::train_with_progress;
use cgsn::ModelConfig;

#[derive(Parser)]
#[command(name = "cgsn", about = "Evidence selection over long documents", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a selector on a JSONL dataset and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Flat key = value config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Progress line every N optimizer steps (0 = quiet).
        #[arg(long, default_value_t = 50)]
        log_every: u64,
    },
    /// Select evidence paragraphs with a trained checkpoint.
    Select {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the threshold stored in the checkpoint config.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a prediction file against gold evidence; JSON to stdout.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Relative activation-memory estimate.
    EstimateMem {
        /// cgsn or led-style.
        #[arg(long)]
        mode: String,
        #[arg(long = "L")]
        doc_len: f64,
        #[arg(long = "W")]
        window: f64,
        #[arg(long = "B")]
        segment_paragraphs: f64,
        #[arg(long, default_value_t = 64.0)]
        global_tokens: f64,
        #[arg(long, default_value_t = 100.0)]
        m_global: f64,
    },
    /// Generate a synthetic long-document corpus.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        documents: usize,
        #[arg(long, default_value_t = 12)]
        paragraphs: usize,
        #[arg(long, default_value_t = 4)]
        n_seg: usize,
        #[arg(long, default_value_t = false)]
        cross_segment: bool,
        #[arg(long, default_value_t = 0.0)]
        duplicate_rate: f64,
        #[arg(long, default_value_t = 60)]
        vocab_size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Convert a Qasper-layout JSON file into the dataset format.
    IngestQasper {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run() -> cgsn::Result<()> {
    match Cli::parse().command {
        Command::Train {
            data,
            config,
            out,
            seed,
            log_every,
        } => {
            let mut config = match config {
                Some(path) => ModelConfig::from_config_file(&path)?,
                None => ModelConfig::default(),
            };
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let (instances, report) = load_dataset(&data)?;
            if report.dropped_paragraphs + report.dropped_evidence > 0 {
                eprintln!(
                    "ingestion: dropped {} empty paragraphs, {} dangling evidence refs",
                    report.dropped_paragraphs, report.dropped_evidence
                );
            }
            let outcome = train_with_progress(&instances, &config, &mut |p| {
                if log_every > 0 && (p.step % log_every == 0 || p.step == p.total_steps) {
                    eprintln!(
                        "step {}/{} epoch {} loss {:.6} lr_scale {:.4}",
                        p.step, p.total_steps, p.epoch, p.loss, p.lr_scale
                    );
                }
            })?;
            save_checkpoint(&outcome.model, &outcome.meta, &out)?;
            eprintln!(
                "trained {} steps, final loss {:.6}, checkpoint at {}",
                outcome.steps,
                outcome.final_loss,
                out.display()
            );
        }
        Command::Select {
            ckpt,
            data,
            threshold,
            out,
        } => {
            let (model, _) = load_checkpoint(&ckpt)?;
            let tau = threshold.unwrap_or(model.config.threshold);
            if !(tau > 0.0 && tau < 1.0) {
                return Err(cgsn::Error::Config(format!(
                    "threshold must lie in (0,1), got {tau}"
                )));
            }
            let (instances, _) = load_dataset(&data)?;
            let mut predictions = Vec::with_capacity(instances.len());
            for instance in &instances {
                let selection = select_evidence(&model, instance, tau)?;
                predictions.push(Prediction {
                    id: instance.id.clone(),
                    indices: selection.indices,
                    probabilities: selection.probabilities,
                });
            }
            write_predictions(&out, &predictions)?;
            eprintln!("wrote {} predictions to {}", predictions.len(), out.display());
        }
        Command::Eval { pred, gold } => {
            let predictions = read_predictions(&pred)?;
            let (instances, _) = load_dataset(&gold)?;
            let pairs: Vec<(String, Vec<usize>)> = predictions
                .into_iter()
                .map(|p| (p.id, p.indices))
                .collect();
            let report = MetricReport::compute(&pairs, &instances)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::EstimateMem {
            mode,
            doc_len,
            window,
            segment_paragraphs,
            global_tokens,
            m_global,
        } => {
            let mode: EstimateMode = mode.parse()?;
            let model = MemoryModel {
                doc_len,
                window,
                global_tokens,
                segment_paragraphs,
                m_global,
            };
            let estimate = estimate_memory(mode, &model)?;
            println!("{}", serde_json::to_string_pretty(&estimate)?);
        }
        Command::GenCorpus {
            out,
            documents,
            paragraphs,
            n_seg,
            cross_segment,
            duplicate_rate,
            vocab_size,
            seed,
        } => {
            let spec = SyntheticSpec {
                documents,
                paragraphs_per_doc: paragraphs,
                n_seg,
                cross_segment,
                duplicate_rate,
                vocab_size,
                seed,
            };
            let records = generate_corpus(&spec)?;
            write_dataset(&out, &records)?;
            eprintln!("wrote {} instances to {}", records.len(), out.display());
        }
        Command::IngestQasper { input, out } => {
            let (records, report) = ingest_qasper(&input)?;
            write_dataset(&out, &records)?;
            eprintln!(
                "ingested {} papers, {} questions; {} evidence strings had no exact paragraph match",
                report.papers, report.questions, report.unmatched_evidence
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
