//! The pitch network and its persistence.

mod blocks;
mod checkpoint;
mod config;
mod network;

pub use blocks::{Icb, Rcb, RcbStack, Rdb, Reb};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use config::{ModelConfig, Preset, SkipMode, FRAME_MULTIPLE, GRU_VARIANT, STAGES};
pub use network::{Rmvpe, StageShape};
