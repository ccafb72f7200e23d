//! Trains two tasks, then explains one test prediction: the top concepts
//! behind the logit, an SVG bar chart, and how contributions moved between
//! the first and the second task.
//!
//! cargo run --release --example explain_prediction [output-dir]

use std::path::PathBuf;

use concept_cil::explain::{build_report, concept_drift, render_svg};
use concept_cil::synth::{generate, SynthConfig};
use concept_cil::trainer::{TrainConfig, Trainer};

fn main() -> concept_cil::Result<()> {
    let out: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let bundle = generate(&SynthConfig {
        tasks: 2,
        ..SynthConfig::default()
    })?;
    let mut trainer = Trainer::new(
        &bundle,
        TrainConfig {
            concepts_per_task: 12,
            ..TrainConfig::default()
        },
    )?;
    trainer.run_task(0)?;
    let after_first = trainer.model().clone();
    trainer.run_task(1)?;
    let model = trainer.model();

    let view = bundle.task_view(0)?;
    let x = view.test_features.row(0).to_vec();
    let class = view.test_labels[0];
    let report = build_report(model, "test_0", &x, class, 7, Some(class))?;
    println!("class {class} ({}), logit {:.4}", bundle.class_names()[class], report.logit);
    for e in &report.entries {
        println!("  {:>+8.4}  {} (task {})", e.value, e.label(), e.task);
    }
    println!("  {:>+8.4}  {} other concepts", report.residual, report.residual_count());

    let svg = out.join("test_0.explain.svg");
    std::fs::write(&svg, render_svg(&report)).expect("write svg");
    println!("chart written to {}", svg.display());

    let before = build_report(&after_first, "test_0", &x, class, after_first.num_concepts(), None)?;
    for row in concept_drift(&before, &report)?.rows {
        match row.delta {
            Some(d) => println!("  {:<28} {:>+8.4}", row.concept, d),
            None => println!("  {:<28}      new", row.concept),
        }
    }
    Ok(())
}
