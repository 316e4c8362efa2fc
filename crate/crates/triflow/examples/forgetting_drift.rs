//! When the load base drifts over the sample timeline, geometric forgetting
//! weights concentrate the fit on recent operating points.
//!
//! Run with: cargo run --example forgetting_drift

use triflow::data::{forgetting_weights, generate_drift_samples, pick_anchor_states};
use triflow::eval::relative_errors;
use triflow::model::build_trained_model;
use triflow::network::System;
use triflow::trainer::{fit_mu, TrainerOptions};

fn main() -> triflow::Result<()> {
    let path = format!("{}/fixtures/feeder22.json", env!("CARGO_MANIFEST_DIR"));
    let system = System::from_path(&path)?;
    let anchors = pick_anchor_states(&system)?;

    // Load base ramps +20% across the timeline with per-node jitter.
    let all = generate_drift_samples(&system, 130, 0.2, 0.15, 1)?;
    let (train, tail) = all.split_at(120);
    let recent = &tail[tail.len() - 10..];
    println!(
        "trained on timestamps 1..{}, scoring the {} most recent points",
        train.len(),
        recent.len()
    );

    for rho in [1.0, 0.97, 0.9, 0.8, 0.7] {
        let weighted = forgetting_weights(train, rho)?;
        let (mu, _) = fit_mu(&weighted, &anchors, &TrainerOptions::default(), None)?;
        let model = build_trained_model(&system.sys, &system.w, &anchors, &mu)?;
        let preds: Vec<_> = recent
            .iter()
            .map(|s| model.predict_voltages(&s.s_l))
            .collect::<triflow::Result<_>>()?;
        let truths: Vec<_> = recent.iter().map(|s| s.v_l.clone()).collect();
        let mean = relative_errors(&preds, &truths)?.mean;
        println!("rho {rho:<5} -> recent-point mean error {mean:.4e}");
    }
    Ok(())
}
