//! Configuration, stage orchestration and export.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

mod config;
mod export;
mod run;

pub use config::{BackendKind, ClassCorrection, ConfigError, Models, PipelineConfig, Variant};
pub use export::{export_conll, ExportFiles, ExportManifest};
pub use run::{EvalInputs, PipelineError, Runner, Stage};

/// Writes `bytes` to `path` via a sibling temp file and a rename, creating
/// parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let parent = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
