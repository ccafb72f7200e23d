//! Fits the concept selector on the first synthetic task and shows which
//! pool concepts the greedy matching keeps for growing budgets.
//!
//! cargo run --release --example concept_selection

use concept_cil::selector::{fit_selector, match_concepts, SelectorConfig};
use concept_cil::synth::{generate, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> concept_cil::Result<()> {
    let bundle = generate(&SynthConfig::default())?;
    let view = bundle.task_view(0)?;
    let labels: Vec<usize> = view
        .train_labels
        .iter()
        .map(|c| view.classes.iter().position(|k| k == c).unwrap())
        .collect();
    for budget in [4, 8, 16] {
        let mut rng = ChaCha8Rng::seed_from_u64(1993);
        let fit = fit_selector(
            &view.train_features,
            &labels,
            view.classes.len(),
            &view.concept_embeddings,
            budget,
            &SelectorConfig::default(),
            &mut rng,
        )?;
        let chosen = match_concepts(&fit.weights, &view.concept_embeddings);
        println!(
            "budget {budget:>2}: CE {:.3} -> {:.3}",
            fit.ce_trace[0],
            fit.ce_trace.last().unwrap()
        );
        for i in chosen.concept_indices {
            println!("    {}", bundle.concepts()[view.concept_ids[i]]);
        }
    }
    Ok(())
}
