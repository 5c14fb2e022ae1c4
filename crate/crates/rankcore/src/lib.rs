//! File formats, the on-disk FC store, the experiment pipeline and the
//! validator suite around [`rankcore_core`].

pub mod checkpoint;
pub mod csv;
pub mod dataset_io;
pub mod error;
pub mod fcstore;
pub mod fsutil;
pub mod log;
pub mod pipeline;
pub mod validate;

pub use error::{Error, Result};
pub use rankcore_core as core;
