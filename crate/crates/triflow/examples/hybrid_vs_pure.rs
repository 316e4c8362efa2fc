//! Two-bus comparison of the hybrid prediction (anchor blend pushed through
//! the network equation) against the load-independent pure blend: the error
//! ratio collapses and tracks the theoretical factor |y⁻¹s| / |ṽ_d·v*|.
//!
//! Run with: cargo run --example hybrid_vs_pure

use nalgebra::DVector;
use triflow::data::{generate_samples, pick_anchor_states_with, OperatingSample};
use triflow::eval::compare_hybrid_vs_pure;
use triflow::network::System;
use triflow::pf::{solve_zip_fixed_point, SolveOptions};
use triflow::trainer::{fit_mu, TrainerOptions};

fn main() -> triflow::Result<()> {
    let path = format!("{}/fixtures/twobus.json", env!("CARGO_MANIFEST_DIR"));
    let system = System::from_path(&path)?;
    let anchors = pick_anchor_states_with(&system, 0.1, 4.0)?;
    let train = generate_samples(&system, 80, (0.3, 3.9), 11)?;
    let (mu, _) = fit_mu(&train, &anchors, &TrainerOptions::default(), None)?;
    println!("fitted blend coefficient mu = {:.6}", mu[0]);

    let mut points = Vec::new();
    for k in 0..12 {
        let lam = 0.3 + (k as f64) * 0.3;
        let lambda = DVector::from_element(1, lam);
        let sol = solve_zip_fixed_point(
            &system.sys,
            &system.w,
            &system.zip,
            &lambda,
            &SolveOptions::default(),
        )?;
        let s_l = system.zip.injections(&lambda, &sol.v_l)?;
        points.push(OperatingSample {
            id: points.len(),
            timestamp: points.len() as u64 + 1,
            v_l: sol.v_l,
            s_l,
            lambda: Some(lambda),
            weight: 1.0,
            corrupted: false,
        });
    }

    let rows = compare_hybrid_vs_pure(&system, &anchors, &mu, &points)?;
    println!(
        "{:>6} {:>12} {:>12} {:>9} {:>9}",
        "|v*|", "hybrid_err", "pure_err", "ratio", "factor"
    );
    for (point, row) in points.iter().zip(rows.iter()) {
        println!(
            "{:>6.4} {:>12.3e} {:>12.3e} {:>9.4} {:>9.4}",
            point.v_l[0].norm(),
            row.hybrid_err,
            row.pure_err,
            row.ratio,
            row.bound_factor.unwrap()
        );
    }
    Ok(())
}
