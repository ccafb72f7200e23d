//! Writes a synthetic bundle to disk, ingests it back, trains, and reloads
//! the last checkpoint to confirm it predicts exactly like the live model.
//!
//! cargo run --release --example bundle_roundtrip

use concept_cil::data::{Checkpoint, EmbeddingBundle};
use concept_cil::synth::{generate, SynthConfig};
use concept_cil::trainer::{run_sequence, TrainConfig};

fn main() -> concept_cil::Result<()> {
    let dir = std::env::temp_dir().join(format!("concept-cil-roundtrip-{}", std::process::id()));
    let bundle = generate(&SynthConfig {
        tasks: 3,
        ..SynthConfig::default()
    })?;
    bundle.save(&dir.join("bundle"))?;
    let loaded = EmbeddingBundle::ingest(&dir.join("bundle"))?;
    println!("bundle identical after save + ingest: {}", loaded == bundle);

    let config = TrainConfig {
        concepts_per_task: 16,
        epochs: 20,
        ..TrainConfig::default()
    };
    let run = run_sequence(&loaded, &config, Some(&dir.join("checkpoints")))?;
    let last = run.checkpoint_paths.last().expect("one checkpoint per task");
    let restored = Checkpoint::load(last)?;
    let x = loaded.images();
    let same = restored.model.predict(x)? == run.final_state.model.predict(x)?;
    println!(
        "{} checkpoints, {} concepts, restored model predicts identically: {same}",
        run.checkpoint_paths.len(),
        restored.model.num_concepts()
    );
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
