//! Metrics, synthetic corpora, Qasper ingestion, prediction files and a
//! lexical baseline.

pub mod baseline;
pub mod metrics;
pub mod predictions;
pub mod qasper;
pub mod synthetic;

pub use baseline::lexical_baseline;
pub use metrics::{evidence_f1, rep_inter, MetricReport};
pub use predictions::{read_predictions, write_predictions, Prediction};
pub use qasper::{ingest_qasper, QasperReport};
pub use synthetic::{generate_corpus, SyntheticSpec};
