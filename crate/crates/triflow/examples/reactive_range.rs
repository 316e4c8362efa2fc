//! Evaluate the PCC reactive-power support interval of the balanced 5-bus
//! feeder: build the linearized operational polyhedron, project it with the
//! LP (cross-checked by Fourier–Motzkin), and verify both endpoints against
//! the exact nonlinear solver.
//!
//! Run with: cargo run --example reactive_range

use triflow::data::{generate_samples, pick_anchor_states};
use triflow::model::{effective_anchor_voltage, real_coefficients};
use triflow::network::System;
use triflow::pf::{solve_fixed_point, SolveOptions};
use triflow::qrange::{
    build_constraints, implied_injections, pcc_reactive_power, project_interval_fme,
    project_interval_lp, refine_range_nonlinear, worst_limit_violation, InjectionLinearization,
    OperationalLimits, QrangeOptions,
};
use triflow::trainer::{fit_mu, TrainerOptions};

fn main() -> triflow::Result<()> {
    let base = env!("CARGO_MANIFEST_DIR");
    let system = System::from_path(format!("{base}/fixtures/feeder5.json"))?;
    let limits = OperationalLimits::from_path(format!("{base}/fixtures/limits5.json"))?;

    // Train the blend coefficients, then linearize around the effective anchor.
    let anchors = pick_anchor_states(&system)?;
    let train = generate_samples(&system, 100, (0.5, 1.5), 3)?;
    let (mu, _) = fit_mu(&train, &anchors, &TrainerOptions::default(), None)?;
    let v_hat = effective_anchor_voltage(&mu, &anchors)?;
    let coeffs = real_coefficients(&system.sys, &system.v0, &v_hat)?;

    let poly = build_constraints(&system, &coeffs, &v_hat, &limits, QrangeOptions::default())?;
    println!(
        "polyhedron: {} rows over {} voltage variables",
        poly.a_sys.nrows(),
        poly.num_vars()
    );

    let range = project_interval_lp(&poly)?;
    let mvar = system.feeder.base_mva;
    println!(
        "LP interval:  [{:.4}, {:.4}] p.u.  =  [{:.3}, {:.3}] Mvar ({:?})",
        range.q_lo,
        range.q_hi,
        range.q_lo * mvar,
        range.q_hi * mvar,
        range.status
    );

    let fme = project_interval_fme(&poly)?;
    println!(
        "FME interval: [{:.4}, {:.4}] p.u. (gap to LP {:.2e})",
        fme.q_lo,
        fme.q_hi,
        (fme.q_lo - range.q_lo)
            .abs()
            .max((fme.q_hi - range.q_hi).abs())
    );

    // Check each certificate against the nonlinear oracle.
    for (tag, cert) in [("lo", &range.x_lo), ("hi", &range.x_hi)] {
        let x = cert.as_ref().expect("bounded range has certificates");
        let s = implied_injections(
            &system,
            &coeffs,
            &v_hat,
            x,
            InjectionLinearization::FrozenVoltage,
        )?;
        let sol = solve_fixed_point(&system.sys, &system.w, &s, &SolveOptions::default())?;
        println!(
            "cert {tag}: exact q1 {:.4} p.u., worst limit violation {:.2e}",
            pcc_reactive_power(&system, &sol.v_l),
            worst_limit_violation(&system, &limits, &sol.v_l, &s)
        );
    }

    let (acc_lo, acc_hi) = refine_range_nonlinear(
        &system,
        &coeffs,
        &v_hat,
        &limits,
        &range,
        InjectionLinearization::FrozenVoltage,
    )?;
    let width = range.q_hi - range.q_lo;
    println!(
        "accurate (bisection) interval: [{acc_lo:.4}, {acc_hi:.4}] p.u.; \
         endpoint gaps {:.2e} / {:.2e} vs width {width:.4}",
        (acc_lo - range.q_lo).abs(),
        (acc_hi - range.q_hi).abs()
    );
    Ok(())
}
