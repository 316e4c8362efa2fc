//! Fit the anchor-blend coefficients on the 22-bus-class radial feeder and
//! compare the trained model against the flat-guess baseline on held-out
//! samples.
//!
//! Run with: cargo run --example train_and_eval

use nalgebra::DVector;
use triflow::data::{generate_samples, pick_anchor_states};
use triflow::eval::{evaluate_model, relative_errors, train_model, TEST_SEED_OFFSET};
use triflow::model::build_flat_model;
use triflow::network::System;
use triflow::trainer::TrainerOptions;

fn main() -> triflow::Result<()> {
    let path = format!("{}/fixtures/feeder22.json", env!("CARGO_MANIFEST_DIR"));
    let system = System::from_path(&path)?;
    let seed = 1;

    let anchors = pick_anchor_states(&system)?;
    let train = generate_samples(&system, 100, (0.5, 1.5), seed)?;
    let test = generate_samples(&system, 900, (0.5, 1.5), seed + TEST_SEED_OFFSET)?;
    println!(
        "training on {} samples, evaluating on {}",
        train.len(),
        test.len()
    );

    let (model, fit) = train_model(&system, &train, &anchors, &TrainerOptions::default())?;
    let report = evaluate_model(&model, &test)?;
    println!(
        "trained model:  mean {:.3e}  median {:.3e}  max {:.3e}",
        report.mean, report.median, report.max
    );
    println!(
        "fit residuals:  mean {:.3e}  max {:.3e}",
        fit.residual_norm_mean, fit.residual_norm_max
    );

    // Flat baseline: balanced 1.0 p.u. guess, no training.
    let guess = DVector::from_fn(system.dim_l(), |m, _| {
        system.sys.index.l_entries()[m].1.balanced_unit()
    });
    let flat = build_flat_model(&system.sys, &system.w, &guess)?;
    let preds: Vec<_> = test
        .iter()
        .map(|s| flat.predict_voltages(&s.s_l))
        .collect::<triflow::Result<_>>()?;
    let truths: Vec<_> = test.iter().map(|s| s.v_l.clone()).collect();
    let flat_report = relative_errors(&preds, &truths)?;
    println!(
        "flat baseline:  mean {:.3e}  median {:.3e}  max {:.3e}",
        flat_report.mean, flat_report.median, flat_report.max
    );
    println!(
        "training cut the mean error by {:.1}x",
        flat_report.mean / report.mean
    );
    Ok(())
}
