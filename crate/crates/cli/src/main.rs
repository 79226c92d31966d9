//! `kgreport`: corpus generation, training, the node-accuracy sweep and
//! evaluation from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgreport_core::corpus::{write_corpus_jsonl, write_manifest};
use kgreport_core::experiment::{
    check_trend, emit_report, evaluate, read_sweep_csv, run_accuracy_sweep, score_files, train_classifier, train_generator,
    ensure_dir, Dataset, ExperimentConfig, KnowledgeSource, Split, SweepResult, METRIC_COLUMNS,
};
use kgreport_core::model::ReportModel;
use kgreport_core::tensor::load_checkpoint;
use kgreport_core::Error;

const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "kgreport", version, about = "Knowledge-conditioned report generation experiments")]
struct Cli {
    /// TOML experiment config; every key has a default.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Output root (overrides `output_dir`).
    #[arg(long, global = true, env = "KGREPORT_OUT")]
    out: Option<PathBuf>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Flags that override config file values.
#[derive(Args)]
struct Overrides {
    /// Read the corpus from this JSONL file instead of generating it.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    corpus_seed: Option<u64>,
    #[arg(long, global = true)]
    imbalance: Option<f64>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    weight_decay: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus and split manifests.
    GenCorpus,
    /// Train the node classifier; keeps the best validation aF1.
    TrainClassifier,
    /// Train the report generator; keeps the best validation BLEU-4.
    TrainGenerator {
        /// ground_truth, empty, corrupted:<a> or classifier:<checkpoint>.
        #[arg(long, default_value = "ground_truth")]
        knowledge: String,
    },
    /// Train and evaluate one generator per (seed, accuracy).
    Sweep {
        /// Comma-separated accuracies; 1.0 is always added.
        #[arg(long, value_delimiter = ',')]
        accuracies: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Exit with code 3 unless the accuracy trend holds.
        #[arg(long)]
        check: bool,
    },
    /// Score a generator checkpoint on a split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "ground_truth")]
        knowledge: String,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Re-emit sweep tables and plots from a `sweep_by_seed.csv`.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        check: bool,
    },
    /// Score predictions against references; both JSONL keyed by `id`.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Per-sample CSV; defaults to `<out>/scores.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli, fallback: Option<&Path>) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&cli.config, fallback.filter(|p| p.exists())) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(path)) => ExperimentConfig::load(path)?,
        (None, None) => ExperimentConfig::default(),
    };
    let o = &cli.overrides;
    if let Some(p) = &o.corpus {
        cfg.corpus.path = Some(p.clone());
    }
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(o.n => cfg.corpus.n);
    set!(o.corpus_seed => cfg.corpus.seed);
    set!(o.imbalance => cfg.corpus.imbalance_exponent);
    set!(o.lr => cfg.training.lr);
    set!(o.weight_decay => cfg.training.weight_decay);
    set!(o.epochs => cfg.training.epochs);
    set!(o.batch_size => cfg.training.batch_size);
    set!(o.seed => cfg.training.seed);
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    // Overrides go through the same checks as file values.
    ExperimentConfig::from_toml(&cfg.to_toml())
}

fn report_check(result: &SweepResult) -> bool {
    let check = check_trend(result);
    for (line, ok) in &check.lines {
        println!("{} {line}", if *ok { "PASS" } else { "FAIL" });
    }
    check.passed()
}

fn print_metrics(result: &SweepResult) {
    println!("accuracy  bleu4   cider   rouge_l meteor");
    for (a, m) in result.accuracies.iter().zip(result.means()) {
        println!("{a:<8}  {:.4}  {:.4}  {:.4}  {:.4}", m.bleu4, m.cider, m.rouge_l, m.meteor);
    }
}

fn run(cli: &Cli) -> Result<bool, Error> {
    match &cli.command {
        Command::GenCorpus => {
            let cfg = load_config(cli, None)?;
            let ds = Dataset::from_config(&cfg)?;
            let dir = &cfg.output_dir;
            write_corpus_jsonl(&dir.join("corpus.jsonl"), &ds.samples, &ds.graph)?;
            for split in [Split::Train, Split::Val, Split::Test] {
                let ids: Vec<&str> = ds.indices(split).iter().map(|&i| ds.samples[i].id.as_str()).collect();
                write_manifest(&dir.join(format!("{}.txt", split_name(split))), &ids)?;
            }
            println!("wrote {} samples to {}", ds.samples.len(), dir.join("corpus.jsonl").display());
        }
        Command::TrainClassifier => {
            let cfg = load_config(cli, None)?;
            let ds = Dataset::from_config(&cfg)?;
            let run = train_classifier(&cfg, &ds, &cfg.output_dir.join("classifier"))?;
            let m = run.metrics;
            println!("aAUC {:.4} aF1 {:.4} aACC {:.4} mAP {:.4}", m.a_auc, m.a_f1, m.a_acc, m.m_ap);
            println!("checkpoint {}", run.checkpoint.display());
        }
        Command::TrainGenerator { knowledge } => {
            let cfg = load_config(cli, None)?;
            let source: KnowledgeSource = knowledge.parse()?;
            let ds = Dataset::from_config(&cfg)?;
            let run = train_generator(&cfg, &ds, &source, &cfg.output_dir.join("generator"))?;
            if let Some(b) = run.best_val_bleu4 {
                println!("best validation BLEU-4 {b:.4}");
            }
            println!("checkpoint {}", run.checkpoint.display());
        }
        Command::Sweep { accuracies, seeds, check } => {
            let mut cfg = load_config(cli, None)?;
            if let Some(a) = accuracies {
                cfg.sweep.accuracies = a.clone();
            }
            if let Some(s) = seeds {
                cfg.sweep.seeds = s.clone();
            }
            let cfg = ExperimentConfig::from_toml(&cfg.to_toml())?;
            let ds = Dataset::from_config(&cfg)?;
            let result = run_accuracy_sweep(&cfg, &ds, &cfg.output_dir.join("sweep"))?;
            print_metrics(&result);
            if *check {
                return Ok(report_check(&result));
            }
        }
        Command::Evaluate { checkpoint, knowledge, split } => {
            let fallback = checkpoint.parent().map(|p| p.join("config.toml"));
            let cfg = load_config(cli, fallback.as_deref())?;
            let source: KnowledgeSource = knowledge.parse()?;
            let split: Split = split.parse()?;
            let ds = Dataset::from_config(&cfg)?;
            let (model, mut store) = ReportModel::new(&cfg.model_config(), ds.vocab.len(), cfg.training.seed)?;
            store.load_values_from(&load_checkpoint(checkpoint)?)?;
            let dir = cfg.output_dir.join("eval").join(split_name(split));
            let m = evaluate(&cfg, &ds, &model, &store, &source, split, &dir)?;
            println!(
                "BLEU-1 {:.4} BLEU-2 {:.4} BLEU-3 {:.4} BLEU-4 {:.4} ROUGE-L {:.4} METEOR {:.4} CIDEr {:.4}",
                m.bleu1, m.bleu2, m.bleu3, m.bleu4, m.rouge_l, m.meteor, m.cider
            );
            println!("predictions {}", dir.join("predictions.jsonl").display());
        }
        Command::Report { input, check } => {
            let cfg = load_config(cli, None)?;
            let result = read_sweep_csv(input)?;
            let dir = cli.out.clone().unwrap_or_else(|| input.parent().map_or(cfg.output_dir.clone(), Path::to_path_buf));
            emit_report(&result, &dir)?;
            print_metrics(&result);
            if *check {
                return Ok(report_check(&result));
            }
        }
        Command::Score { predictions, references, output } => {
            let cfg = load_config(cli, None)?;
            let path = match output {
                Some(p) => p.clone(),
                None => {
                    ensure_dir(&cfg.output_dir)?;
                    cfg.output_dir.join("scores.csv")
                }
            };
            let report = score_files(predictions, references, cfg.metrics.cider_variant, &path)?;
            for (name, v) in METRIC_COLUMNS.iter().zip(report.values()) {
                println!("{name}\t{v:.4}");
            }
        }
    }
    Ok(true)
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
