//! Image datasets, synthetic data and checkpoint files.

pub mod checkpoint;
pub mod dataset;
pub mod pnm;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{load_dataset, load_dataset_with, Dataset, DatasetEntry};
pub use synth::{generate_synthetic, render_synthetic, SynthSpec};
