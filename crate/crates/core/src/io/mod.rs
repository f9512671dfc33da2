//! On-disk formats: scene datasets, images, PLY primitives, configuration,
//! weight containers and metrics reports.

pub mod config;
pub mod dataset;
pub mod ply;
pub mod report;
pub mod weights;

pub use config::EngineConfig;
pub use dataset::{load_scene, SceneDataset};
pub use ply::{export_ply, import_ply};
pub use report::MetricsReport;
pub use weights::{read_weights, write_weights, WeightFile};
