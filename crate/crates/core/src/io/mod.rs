//! Files, configuration and bundled synthetic data.

mod config;
mod container;
mod labels;
mod matrix_file;
mod pgm;
pub mod synth;

pub use config::{DataConfig, ExperimentConfig, PriorChoice, TaskConfig};
pub use container::{
    decode_autoencoder, decode_dataset, decode_flow, encode_autoencoder, encode_dataset, encode_flow,
    load_autoencoder, load_dataset, load_flow, save_autoencoder, save_dataset, save_flow, ArtifactKind,
    CONTAINER_MAGIC,
};
pub use labels::{load_labels, parse_labels, write_labels};
pub use matrix_file::{decode_matrix, encode_matrix, load_matrix, save_matrix, MATRIX_MAGIC};
pub use pgm::{encode_pgm_grid, save_pgm_grid, square_side};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
