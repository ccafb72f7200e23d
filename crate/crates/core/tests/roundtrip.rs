mod common;

use std::fs;

use common::small_synth;
use concept_cil::data::{Checkpoint, EmbeddingBundle, MANIFEST_FILE};
use concept_cil::synth::generate;
use concept_cil::trainer::{run_sequence, TrainConfig};
use concept_cil::Error;

#[test]
fn bundle_survives_save_and_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = generate(&small_synth()).unwrap();
    bundle.save(dir.path()).unwrap();
    let back = EmbeddingBundle::ingest(dir.path()).unwrap();
    assert_eq!(back, bundle);

    // ingesting what ingest produced changes nothing, byte for byte
    let again = tempfile::tempdir().unwrap();
    back.save(again.path()).unwrap();
    for file in [MANIFEST_FILE, "images.cbem", "class_names.cbem", "concepts.cbem"] {
        assert_eq!(
            fs::read(dir.path().join(file)).unwrap(),
            fs::read(again.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn checkpoint_round_trip_and_damage() {
    let bundle = generate(&small_synth()).unwrap();
    let cfg = TrainConfig {
        concepts_per_task: 5,
        epochs: 3,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let run = run_sequence(&bundle, &cfg, Some(dir.path())).unwrap();
    assert_eq!(run.checkpoint_paths.len(), 2);
    let path = &run.checkpoint_paths[1];
    let loaded = Checkpoint::load(path).unwrap();
    assert_eq!(loaded, run.final_state);

    let bytes = fs::read(path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    fs::write(&cut, &bytes[..bytes.len() - 9]).unwrap();
    assert!(matches!(Checkpoint::load(&cut), Err(Error::Io { .. })));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    let bad_path = dir.path().join("bad.ckpt");
    fs::write(&bad_path, bad).unwrap();
    assert!(matches!(Checkpoint::load(&bad_path), Err(Error::Format { .. })));
}

#[test]
fn malformed_manifest_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    generate(&small_synth()).unwrap().save(dir.path()).unwrap();
    let manifest = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, text.replacen('{', "{\"surprise\": 1,", 1)).unwrap();
    assert!(matches!(EmbeddingBundle::ingest(dir.path()), Err(Error::Format { .. })));
}
