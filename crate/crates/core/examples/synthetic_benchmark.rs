//! Generates the seeded synthetic benchmark, trains every task and prints
//! the accuracy curve and the concepts picked for each task.
//!
//! cargo run --release --example synthetic_benchmark

use concept_cil::synth::{generate, SynthConfig};
use concept_cil::trainer::{run_sequence, TrainConfig};

fn main() -> concept_cil::Result<()> {
    let bundle = generate(&SynthConfig::default())?;
    let config = TrainConfig {
        concepts_per_task: 20,
        ..TrainConfig::default()
    };
    let run = run_sequence(&bundle, &config, None)?;
    for (t, (acc, sel)) in run.accuracies().iter().zip(&run.selections).enumerate() {
        let distractors = sel.concepts.iter().filter(|c| c.contains("distractor")).count();
        println!(
            "task {t}: A_t = {acc:.4}, {} of {} pool concepts selected ({distractors} distractors)",
            sel.concept_ids.len(),
            sel.pool_size
        );
    }
    println!(
        "average incremental accuracy {:.4}, last accuracy {:.4}",
        run.metrics.average_incremental_accuracy, run.metrics.last_accuracy
    );
    Ok(())
}
