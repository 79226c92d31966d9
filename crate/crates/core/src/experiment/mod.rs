//! Experiment orchestration: datasets, training loops, evaluation, the
//! node-accuracy sweep and its tables and plots.

mod config;
mod data;
mod evaluate;
mod report;
mod stats;
mod sweep;
mod train;

pub use config::{
    ClassifierSection, CorpusSection, ExperimentConfig, KnowledgeSource, MetricsSection, SweepSection,
    TrainingSection,
};
pub use data::{load_classifier, resolve_knowledge, Dataset, Split};
pub use evaluate::{evaluate, generate_split, score_files, score_texts, write_summary, MetricReport, METRIC_COLUMNS};
pub use report::{emit_report, ensure_dir, line_plot, read_sweep_csv, write_csv};
pub use stats::{average_ranks, spearman};
pub use sweep::{check_trend, run_accuracy_sweep, SweepResult, TrendCheck};
pub use train::{
    classifier_predictions, split_examples, train_classifier, train_generator, ClassifierRun, GeneratorRun,
    CLASSIFIER_CHECKPOINT, GENERATOR_CHECKPOINT,
};
