//! Datasets, synthetic data, and every on-disk format (checkpoints, feature caches,
//! feature banks, dataset containers).

mod cache;
mod checkpoint;
mod dataset;
pub mod format;
#[cfg(feature = "png-import")]
mod png_dir;
mod synthetic;

pub use cache::{BankFile, FeatureCache, BANK_MAGIC, CACHE_MAGIC};
pub use checkpoint::{peek_precision, Checkpoint, CHECKPOINT_MAGIC};
pub use dataset::{load_dataset, Dataset, DatasetFormat, DATASET_MAGIC};
pub use format::{ErrorClass, FormatError};
#[cfg(feature = "png-import")]
pub use png_dir::load_png_dir;
pub use synthetic::{generate_synthetic, SyntheticKind, SyntheticSpec};

/// Visiting order for one epoch: a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng::stream(seed, "shuffle", &[epoch as u64]));
    order
}
