//! Trains the synthetic 5-task benchmark with and without prototype
//! augmentation and compares the last-task accuracy.
//!
//! cargo run --release --example augmentation_ablation

use std::time::Instant;

use concept_cil::synth::{generate, SynthConfig};
use concept_cil::trainer::{run_sequence, TrainConfig};

fn main() -> concept_cil::Result<()> {
    let bundle = generate(&SynthConfig::default())?;
    let base = TrainConfig {
        concepts_per_task: 20,
        ..TrainConfig::default()
    };
    for augment in [false, true] {
        let cfg = TrainConfig {
            augment,
            ..base.clone()
        };
        let start = Instant::now();
        let run = run_sequence(&bundle, &cfg, None)?;
        let curve: Vec<String> = run.accuracies().iter().map(|a| format!("{a:.3}")).collect();
        println!(
            "augment={augment:<5} A_t=[{}] mean={:.4} last={:.4} ({:.1}s)",
            curve.join(", "),
            run.metrics.average_incremental_accuracy,
            run.metrics.last_accuracy,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
