//! Records the replay stores under `tests/fixtures/` with the offline
//! synthetic backend, then replays each pipeline once to check the store.
//!
//! Run with `cargo run -p nersynth-core --example make_fixtures`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nersynth_core::gateway::{Recorder, SyntheticBackend};
use nersynth_core::pipeline::{EvalInputs, PipelineConfig, Runner, Stage};

fn record(dir: &Path, stages: &[Stage], eval: bool) -> Result<(), Box<dyn std::error::Error>> {
    let config = PipelineConfig::load(&dir.join("config.toml"))?;
    let store = config.fixtures.clone().ok_or("config has no fixtures directory")?;
    if store.exists() {
        std::fs::remove_dir_all(&store)?;
    }
    std::fs::create_dir_all(&store)?;

    for pass in ["record", "replay"] {
        let out = tempfile::tempdir()?;
        let mut runner = Runner::new(config.clone(), out.path())?;
        if pass == "record" {
            let synthetic = SyntheticBackend::new(runner.spec());
            runner = runner.with_backend(Arc::new(Recorder::new(&store, Box::new(synthetic))));
        }
        for &stage in stages {
            let manifest = runner.run(stage)?;
            if pass == "replay" {
                println!("{} {stage}: {}", dir.display(), serde_json::to_string(&manifest)?);
            }
        }
        if eval {
            runner.eval(&EvalInputs {
                gold: dir.join("gold.conll"),
                pred: None,
            })?;
        }
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    record(
        &root.join("micro"),
        &[Stage::Attrs, Stage::Generate, Stage::Correct, Stage::Export],
        true,
    )?;
    record(
        &root.join("micro_xy"),
        &[Stage::Attrs, Stage::Entities, Stage::Generate, Stage::Correct, Stage::Export],
        false,
    )?;
    Ok(())
}
