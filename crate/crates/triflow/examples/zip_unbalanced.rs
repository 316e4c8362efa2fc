//! Train the ZIP-aware linear model on the unbalanced 13-node feeder, where
//! loads depend on voltage magnitude, and confirm the constant-power
//! reduction identity on a synthetic all-constant-power variant.
//!
//! Run with: cargo run --example zip_unbalanced

use nalgebra::DVector;
use triflow::data::{generate_samples, pick_anchor_states};
use triflow::eval::{evaluate_model, train_model, TEST_SEED_OFFSET};
use triflow::model::{build_trained_model, build_zip_model, ZipLoadSpec};
use triflow::network::System;
use triflow::trainer::TrainerOptions;

fn main() -> triflow::Result<()> {
    let path = format!("{}/fixtures/feeder13.json", env!("CARGO_MANIFEST_DIR"));
    let system = System::from_path(&path)?;
    println!(
        "feeder is constant-power: {}",
        system.feeder.is_constant_power()
    );

    let anchors = pick_anchor_states(&system)?;
    let train = generate_samples(&system, 100, (0.5, 1.5), 2)?;
    let test = generate_samples(&system, 900, (0.5, 1.5), 2 + TEST_SEED_OFFSET)?;
    let (model, _) = train_model(&system, &train, &anchors, &TrainerOptions::default())?;
    let report = evaluate_model(&model, &test)?;
    println!(
        "zip model held-out error: mean {:.3e}  max {:.3e}",
        report.mean, report.max
    );

    // With a=b=0, c=1 the λ-sensitivity collapses onto the constant-power
    // model: predictions agree to machine precision.
    let n = system.dim_l();
    let cp = ZipLoadSpec::constant_power(system.zip.s_nom().clone());
    let mu = DVector::from_element(n, 0.5);
    let zip_model = build_zip_model(&system.sys, &system.w, &anchors, &mu, &cp)?;
    let power_model = build_trained_model(&system.sys, &system.w, &anchors, &mu)?;
    let lambda = DVector::from_fn(n, |m, _| 0.7 + ((m * 13) % 10) as f64 / 10.0);
    let s = DVector::from_fn(n, |m, _| cp.s_nom()[m] * lambda[m]);
    let a = zip_model.predict_voltages(&lambda)?;
    let b = power_model.predict_voltages(&s)?;
    let gap = (0..n).map(|m| (a[m] - b[m]).norm()).fold(0.0, f64::max);
    println!("constant-power reduction gap: {gap:.3e}");
    Ok(())
}
