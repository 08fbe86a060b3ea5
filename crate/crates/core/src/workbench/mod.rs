//! Run configuration, the bundled synthetic panel and the composite
//! pipelines behind the command-line tool.

pub mod config;
pub mod fixture;
pub mod pipelines;

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::panel::{ingest_files, PanelDataset};

pub use config::RunConfig;
pub use pipelines::derive_seed;

/// Creates the next free `run-NNNN` directory under `base`.
pub fn next_run_dir(base: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(base)?;
    for i in 1..=9999u32 {
        let dir = base.join(format!("run-{i:04}"));
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(crate::Error::Config(format!("no free run directory under {}", base.display())))
}

/// The configured panel, or the bundled synthetic one.
pub fn load_data(cfg: &RunConfig) -> Result<PanelDataset> {
    match &cfg.data {
        Some(src) => ingest_files(&src.stations, &src.values, src.scale),
        None => fixture::bundled(),
    }
}
