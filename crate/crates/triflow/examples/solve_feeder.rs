//! Solve the exact power flow on the unbalanced 13-node feeder and print the
//! voltage profile, certifying the solution with the independent mismatch
//! check.
//!
//! Run with: cargo run --example solve_feeder

use nalgebra::DVector;
use triflow::network::System;
use triflow::pf::{power_mismatch, solve_zip_fixed_point, SolveOptions};

fn main() -> triflow::Result<()> {
    let path = format!("{}/fixtures/feeder13.json", env!("CARGO_MANIFEST_DIR"));
    let system = System::from_path(&path)?;
    println!(
        "{}: {} nodes, {} load node-phases",
        path,
        system.feeder.nodes.len(),
        system.dim_l()
    );

    let lambda = DVector::from_element(system.dim_l(), 1.0);
    let sol = solve_zip_fixed_point(
        &system.sys,
        &system.w,
        &system.zip,
        &lambda,
        &SolveOptions::default(),
    )?;
    println!(
        "converged in {} iterations, solver residual {:.3e} p.u.\n",
        sol.iterations, sol.residual
    );

    println!(
        "{:<6} {:<5} {:>9} {:>9} {:>8}",
        "node", "phase", "v_re", "v_im", "|v|"
    );
    for (m, (node, phase)) in system.labels().iter().enumerate() {
        let v = sol.v_l[m];
        println!(
            "{node:<6} {phase:<5} {:>9.5} {:>9.5} {:>8.5}",
            v.re,
            v.im,
            v.norm()
        );
    }

    let s = system.zip.injections(&lambda, &sol.v_l)?;
    let mismatch = power_mismatch(&system.sys, &system.v0, &sol.v_l, &s);
    println!("\nindependent power mismatch: {mismatch:.3e} p.u.");
    Ok(())
}
