//! Document loop, trainer, persistence, memory estimator and the formats
//! behind the CLI.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod forward;
pub mod memory_model;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, TrainMeta};
pub use config::ModelConfig;
pub use data::{load_dataset, write_dataset, DatasetRecord, Document, Instance};
pub use forward::{forward_document, segment_document, select_evidence, ForwardTrace};
pub use memory_model::{estimate_memory, EstimateMode, MemoryModel};
pub use train::{train, TrainOutcome};
