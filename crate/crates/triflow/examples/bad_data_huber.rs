//! Corrupt a slice of the training voltages and compare the squared and
//! Huber penalties: the robust fit shrugs off the outliers.
//!
//! Run with: cargo run --example bad_data_huber

use triflow::data::{generate_samples, inject_bad_data, pick_anchor_states, BadDataMode};
use triflow::eval::{evaluate_model, train_model, TEST_SEED_OFFSET};
use triflow::network::System;
use triflow::trainer::{Penalty, TrainerOptions};

fn main() -> triflow::Result<()> {
    let path = format!("{}/fixtures/feeder22.json", env!("CARGO_MANIFEST_DIR"));
    let system = System::from_path(&path)?;
    let anchors = pick_anchor_states(&system)?;
    let clean = generate_samples(&system, 100, (0.5, 1.5), 1)?;
    let test = generate_samples(&system, 900, (0.5, 1.5), 1 + TEST_SEED_OFFSET)?;

    // Five corrupted samples: voltage magnitudes pushed above 3 p.u. or
    // collapsed toward zero, angles preserved.
    let dirty = inject_bad_data(&clean, 3, BadDataMode::OverThree, 71)?;
    let dirty = inject_bad_data(&dirty, 2, BadDataMode::NearZero, 72)?;
    let ids: Vec<usize> = dirty.iter().filter(|s| s.corrupted).map(|s| s.id).collect();
    println!("corrupted sample ids: {ids:?}");

    for penalty in [Penalty::Squared, Penalty::Huber] {
        let opts = TrainerOptions {
            penalty,
            ..Default::default()
        };
        let (model, fit) = train_model(&system, &dirty, &anchors, &opts)?;
        let report = evaluate_model(&model, &test)?;
        print!(
            "{:<8} held-out mean error {:.3e}",
            penalty.as_str(),
            report.mean
        );
        if penalty == Penalty::Huber {
            print!(
                "  (delta {:.3e}, {} samples down-weighted in {} sweeps)",
                fit.delta.unwrap(),
                fit.flagged_samples.len(),
                fit.irls_iterations
            );
        }
        println!();
    }

    let (baseline, _) = train_model(&system, &clean, &anchors, &TrainerOptions::default())?;
    println!(
        "clean baseline mean error {:.3e}",
        evaluate_model(&baseline, &test)?.mean
    );
    Ok(())
}
