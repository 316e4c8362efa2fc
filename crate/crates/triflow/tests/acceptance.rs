//! Acceptance suite: one test per release criterion, each printing a PASS
//! line (visible with `cargo test --test acceptance -- --nocapture`).

use nalgebra::DVector;
use num_complex::Complex64;

use triflow::data::{
    forgetting_weights, generate_drift_samples, generate_samples, inject_bad_data,
    pick_anchor_states, pick_anchor_states_with, BadDataMode, OperatingSample,
};
use triflow::eval::{
    compare_hybrid_vs_pure, evaluate_model, relative_errors, train_model, TEST_SEED_OFFSET,
};
use triflow::model::{
    build_flat_model, build_trained_model, build_zip_model, effective_anchor_voltage,
    nodal_power_real, pure_dd_predict, real_coefficients, RealCoefficients, TrainedModel,
};
use triflow::network::System;
use triflow::pf::{power_mismatch, solve_fixed_point, solve_zip_fixed_point, SolveOptions};
use triflow::qrange::{
    build_constraints, implied_injections, project_interval_fme, project_interval_lp,
    refine_range_nonlinear, worst_limit_violation, InjectionLinearization, OperationalLimits,
    Polyhedron, QrangeOptions, RangeStatus,
};
use triflow::trainer::{fit_mu, Penalty, TrainerOptions};

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{}", env!("CARGO_MANIFEST_DIR"), name)
}

fn load(name: &str) -> System {
    System::from_path(fixture(name)).expect("fixture loads")
}

const SHIPPED_FEEDERS: [&str; 4] = [
    "twobus.json",
    "chain3.json",
    "feeder22.json",
    "feeder13.json",
];

/// Independent two-bus oracle: the root of v·conj(v − v0) = s/conj(y) nearer
/// to v0 = 1∠0, obtained from the real quadratic in t = |v|².
fn two_bus_closed_form(y: Complex64, s: Complex64) -> Option<Complex64> {
    let sigma = s / y.conj();
    let b = 2.0 * sigma.re + 1.0;
    let disc = b * b - 4.0 * sigma.norm_sqr();
    if disc < 0.0 {
        return None;
    }
    let one = Complex64::new(1.0, 0.0);
    let v_hi = Complex64::new((b + disc.sqrt()) / 2.0, 0.0) - sigma;
    let v_lo = Complex64::new((b - disc.sqrt()) / 2.0, 0.0) - sigma;
    Some(if (v_hi - one).norm() <= (v_lo - one).norm() {
        v_hi
    } else {
        v_lo
    })
}

fn flat_nominal_guess(system: &System) -> DVector<Complex64> {
    DVector::from_fn(system.dim_l(), |m, _| {
        system.sys.index.l_entries()[m].1.balanced_unit()
    })
}

fn flat_model_error(system: &System, samples: &[OperatingSample]) -> f64 {
    let flat = build_flat_model(&system.sys, &system.w, &flat_nominal_guess(system)).unwrap();
    let preds: Vec<DVector<Complex64>> = samples
        .iter()
        .map(|s| flat.predict_voltages(&s.s_l).unwrap())
        .collect();
    let truths: Vec<DVector<Complex64>> = samples.iter().map(|s| s.v_l.clone()).collect();
    relative_errors(&preds, &truths).unwrap().mean
}

/// A1 — every fixed-point solution on the shipped feeders passes the
/// independent mismatch check; two-bus matches the closed form to 1e-10.
#[test]
fn a1_oracle_validity() {
    for name in SHIPPED_FEEDERS {
        let system = load(name);
        let samples = generate_samples(&system, 60, (0.4, 1.5), 42).unwrap();
        for sample in &samples {
            let miss = power_mismatch(&system.sys, &system.v0, &sample.v_l, &sample.s_l);
            assert!(
                miss <= 1e-8,
                "{name} sample {} mismatch {miss:.3e}",
                sample.id
            );
        }
    }

    let system = load("twobus.json");
    let y = system.sys.yll[(0, 0)];
    for scale in [0.2, 0.6, 1.0, 1.4, 2.5, 4.0] {
        let s1 = system.zip.s_nom()[0] * scale;
        let s = DVector::from_element(1, s1);
        let sol = solve_fixed_point(&system.sys, &system.w, &s, &SolveOptions::default()).unwrap();
        let exact = two_bus_closed_form(y, s1).expect("solvable");
        assert!(
            (sol.v_l[0] - exact).norm() <= 1e-10,
            "scale {scale}: {} vs {exact}",
            sol.v_l[0]
        );
    }
    println!("A1 oracle validity: PASS");
}

/// A2 — 22-bus-class feeder, 100 training / 900 test samples: mean relative
/// voltage error within [1e-6, 1e-3].
#[test]
fn a2_table1_band() {
    let system = load("feeder22.json");
    let anchors = pick_anchor_states(&system).unwrap();
    let train = generate_samples(&system, 100, (0.5, 1.5), 1).unwrap();
    let test = generate_samples(&system, 900, (0.5, 1.5), 1 + TEST_SEED_OFFSET).unwrap();
    let (model, _) = train_model(&system, &train, &anchors, &TrainerOptions::default()).unwrap();
    let mean = evaluate_model(&model, &test).unwrap().mean;
    assert!(
        (1e-6..=1e-3).contains(&mean),
        "mean error {mean:.3e} outside [1e-6, 1e-3]"
    );
    println!("A2 22-bus mean error {mean:.3e} in [1e-6, 1e-3]: PASS");
}

/// A3 — 13-node unbalanced feeder with ZIP loads: mean relative error ≤ 1e-2.
#[test]
fn a3_table3_band() {
    let system = load("feeder13.json");
    assert!(!system.feeder.is_constant_power(), "fixture carries ZIP");
    let anchors = pick_anchor_states(&system).unwrap();
    let train = generate_samples(&system, 100, (0.5, 1.5), 2).unwrap();
    let test = generate_samples(&system, 900, (0.5, 1.5), 2 + TEST_SEED_OFFSET).unwrap();
    let (model, _) = train_model(&system, &train, &anchors, &TrainerOptions::default()).unwrap();
    assert!(matches!(model, TrainedModel::Zip(_)));
    let mean = evaluate_model(&model, &test).unwrap().mean;
    assert!(mean <= 1e-2, "mean error {mean:.3e} above 1e-2");
    println!("A3 13-node zip mean error {mean:.3e} <= 1e-2: PASS");
}

/// A4 — trained model beats the nominal-flat model on held-out data, strictly
/// on at least 4 of 5 seeds, for every shipped feeder.
#[test]
fn a4_trained_beats_flat() {
    for name in [
        "twobus.json",
        "chain3.json",
        "feeder22.json",
        "feeder13.json",
        "feeder5.json",
    ] {
        let system = load(name);
        let anchors = pick_anchor_states(&system).unwrap();
        let mut strict = 0;
        for seed in 1..=5u64 {
            let train = generate_samples(&system, 100, (0.5, 1.5), seed).unwrap();
            let test = generate_samples(&system, 300, (0.5, 1.5), seed + TEST_SEED_OFFSET).unwrap();
            let (model, _) =
                train_model(&system, &train, &anchors, &TrainerOptions::default()).unwrap();
            let trained = evaluate_model(&model, &test).unwrap().mean;
            let flat = flat_model_error(&system, &test);
            assert!(
                trained <= flat,
                "{name} seed {seed}: trained {trained:.3e} > flat {flat:.3e}"
            );
            if trained < flat {
                strict += 1;
            }
        }
        assert!(strict >= 4, "{name}: strict wins {strict}/5");
    }
    println!("A4 trained <= flat on all feeders, strict on >= 4/5 seeds: PASS");
}

/// A5 — five corrupted samples (mixed near-zero / over-three voltage
/// magnitudes): the Huber fit stays within 0.7× the squared fit's error and
/// within 2× the clean squared baseline.
#[test]
fn a5_huber_robustness() {
    let system = load("feeder22.json");
    let anchors = pick_anchor_states(&system).unwrap();
    let clean = generate_samples(&system, 100, (0.5, 1.5), 1).unwrap();
    let test = generate_samples(&system, 900, (0.5, 1.5), 1 + TEST_SEED_OFFSET).unwrap();
    let step = inject_bad_data(&clean, 3, BadDataMode::OverThree, 71).unwrap();
    let dirty = inject_bad_data(&step, 2, BadDataMode::NearZero, 72).unwrap();
    assert_eq!(dirty.iter().filter(|s| s.corrupted).count(), 5);

    let mut err = std::collections::HashMap::new();
    for penalty in [Penalty::Squared, Penalty::Huber] {
        let opts = TrainerOptions {
            penalty,
            ..Default::default()
        };
        let (model, _) = train_model(&system, &dirty, &anchors, &opts).unwrap();
        err.insert(
            penalty.as_str(),
            evaluate_model(&model, &test).unwrap().mean,
        );
    }
    let (clean_model, _) =
        train_model(&system, &clean, &anchors, &TrainerOptions::default()).unwrap();
    let clean_err = evaluate_model(&clean_model, &test).unwrap().mean;

    assert!(
        err["huber"] <= 0.7 * err["squared"],
        "huber {:.3e} > 0.7 x squared {:.3e}",
        err["huber"],
        err["squared"]
    );
    assert!(
        err["huber"] <= 2.0 * clean_err,
        "huber {:.3e} > 2 x clean {clean_err:.3e}",
        err["huber"]
    );
    println!(
        "A5 huber {:.3e} <= 0.7*squared {:.3e} and <= 2*clean {:.3e}: PASS",
        err["huber"], err["squared"], clean_err
    );
}

/// A6 — two-bus load sweep with |v*| inside [0.9, 1.05]: the hybrid error is
/// below a tenth of the pure data-driven error at every point, and the
/// measured ratio equals the theoretical factor |y⁻¹s| / |ṽ_d·v*| to 1e-9.
#[test]
fn a6_hybrid_bound() {
    let system = load("twobus.json");
    let anchors = pick_anchor_states_with(&system, 0.1, 4.0).unwrap();
    let train = generate_samples(&system, 80, (0.3, 3.9), 11).unwrap();
    let (mu, _) = fit_mu(&train, &anchors, &TrainerOptions::default(), None).unwrap();

    let mut points = Vec::new();
    for k in 0..56 {
        let lam = 0.3 + (k as f64) * 0.06;
        let lambda = DVector::from_element(1, lam);
        let sol = solve_zip_fixed_point(
            &system.sys,
            &system.w,
            &system.zip,
            &lambda,
            &SolveOptions::default(),
        )
        .unwrap();
        let vmag = sol.v_l[0].norm();
        assert!(
            (0.9..=1.05).contains(&vmag),
            "sweep point lambda {lam} left the band: {vmag}"
        );
        let s_l = system.zip.injections(&lambda, &sol.v_l).unwrap();
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

    let rows = compare_hybrid_vs_pure(&system, &anchors, &mu, &points).unwrap();
    let mut max_ratio = 0.0_f64;
    for row in &rows {
        assert!(
            row.hybrid_err < 0.1 * row.pure_err,
            "sample {}: hybrid {:.3e} not < 0.1 x pure {:.3e}",
            row.sample_id,
            row.hybrid_err,
            row.pure_err
        );
        let factor = row.bound_factor.expect("scalar system");
        assert!(
            (row.ratio - factor).abs() <= 1e-9,
            "ratio {:.12e} vs factor {:.12e}",
            row.ratio,
            factor
        );
        max_ratio = max_ratio.max(row.ratio);
    }
    println!("A6 hybrid/pure max ratio {max_ratio:.4} < 0.1, ratio = factor to 1e-9: PASS");
}

/// A7 — drift scenario (load base ramps 20%): ρ = 0.9 weighting beats
/// unweighted training on the 10 most recent points for ≥ 4 of 5 seeds.
#[test]
fn a7_forgetting_factors() {
    let system = load("feeder22.json");
    let anchors = pick_anchor_states(&system).unwrap();
    let mut wins = 0;
    for seed in 1..=5u64 {
        let all = generate_drift_samples(&system, 130, 0.2, 0.15, seed).unwrap();
        let (train, tail) = all.split_at(120);
        let recent = &tail[tail.len() - 10..];
        let mut errs = Vec::new();
        for rho in [1.0, 0.9] {
            let weighted = forgetting_weights(train, rho).unwrap();
            let (mu, _) = fit_mu(&weighted, &anchors, &TrainerOptions::default(), None).unwrap();
            let model = build_trained_model(&system.sys, &system.w, &anchors, &mu).unwrap();
            let preds: Vec<DVector<Complex64>> = recent
                .iter()
                .map(|s| model.predict_voltages(&s.s_l).unwrap())
                .collect();
            let truths: Vec<DVector<Complex64>> = recent.iter().map(|s| s.v_l.clone()).collect();
            errs.push(relative_errors(&preds, &truths).unwrap().mean);
        }
        if errs[1] <= errs[0] {
            wins += 1;
        }
    }
    assert!(wins >= 4, "rho=0.9 won only {wins}/5 seeds");
    println!("A7 forgetting rho=0.9 wins {wins}/5 drift seeds: PASS");
}

fn feeder5_poly() -> (
    System,
    RealCoefficients,
    DVector<Complex64>,
    OperationalLimits,
    Polyhedron,
) {
    let system = load("feeder5.json");
    let anchors = pick_anchor_states(&system).unwrap();
    let train = generate_samples(&system, 100, (0.5, 1.5), 3).unwrap();
    let (mu, _) = fit_mu(&train, &anchors, &TrainerOptions::default(), None).unwrap();
    let v_hat = effective_anchor_voltage(&mu, &anchors).unwrap();
    let coeffs = real_coefficients(&system.sys, &system.v0, &v_hat).unwrap();
    let limits = OperationalLimits::from_path(fixture("limits5.json")).unwrap();
    let poly =
        build_constraints(&system, &coeffs, &v_hat, &limits, QrangeOptions::default()).unwrap();
    (system, coeffs, v_hat, limits, poly)
}

/// A8(i) — Fourier–Motzkin equals the LP interval on 100 random 6-variable
/// polyhedra to 1e-9.
#[test]
fn a8i_fme_equals_lp_random() {
    use rand::distributions::{Distribution, Uniform};
    use rand::SeedableRng;
    let coef = Uniform::new_inclusive(-1.0, 1.0);
    let gap = Uniform::new_inclusive(0.1, 1.0);
    for seed in 0..100u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31_000 + seed);
        let n = 6;
        let m = 10;
        let x0: Vec<f64> = (0..n).map(|_| coef.sample(&mut rng)).collect();
        let mut a = nalgebra::DMatrix::zeros(m + 2 * n, n);
        let mut b = DVector::zeros(m + 2 * n);
        for i in 0..m {
            let mut dot = 0.0;
            for j in 0..n {
                a[(i, j)] = coef.sample(&mut rng);
                dot += a[(i, j)] * x0[j];
            }
            b[i] = dot + gap.sample(&mut rng);
        }
        for j in 0..n {
            a[(m + 2 * j, j)] = 1.0;
            b[m + 2 * j] = 3.0;
            a[(m + 2 * j + 1, j)] = -1.0;
            b[m + 2 * j + 1] = 3.0;
        }
        let objective = DVector::from_fn(n, |_, _| coef.sample(&mut rng));
        let poly = Polyhedron {
            a_sys: a,
            b_sys: b,
            objective,
            offset: 0.25,
            var_index: Default::default(),
            row_labels: (0..m + 2 * n).map(|i| format!("r{i}")).collect(),
        };
        let lp = project_interval_lp(&poly).unwrap();
        let fme = project_interval_fme(&poly).unwrap();
        assert_eq!(lp.status, RangeStatus::Bounded, "seed {seed}");
        assert!(
            (lp.q_lo - fme.q_lo).abs() <= 1e-9 && (lp.q_hi - fme.q_hi).abs() <= 1e-9,
            "seed {seed}: lp [{:.12}, {:.12}] vs fme [{:.12}, {:.12}]",
            lp.q_lo,
            lp.q_hi,
            fme.q_lo,
            fme.q_hi
        );
    }
    println!("A8(i) FME = LP on 100 random 6-var polyhedra to 1e-9: PASS");
}

/// A8(ii) — on the shipped 5-bus feeder: the oracle at both LP certificates
/// violates no limit by more than 2%, and the approximate interval sits
/// within 1% of the bisection-refined accurate interval's width.
#[test]
fn a8ii_range_accuracy() {
    let (system, coeffs, v_hat, limits, poly) = feeder5_poly();
    let range = project_interval_lp(&poly).unwrap();
    assert_eq!(range.status, RangeStatus::Bounded);

    for cert in [&range.x_lo, &range.x_hi] {
        let x = cert.as_ref().unwrap();
        let s = implied_injections(
            &system,
            &coeffs,
            &v_hat,
            x,
            InjectionLinearization::FrozenVoltage,
        )
        .unwrap();
        let sol = solve_fixed_point(&system.sys, &system.w, &s, &SolveOptions::default()).unwrap();
        let violation = worst_limit_violation(&system, &limits, &sol.v_l, &s);
        assert!(
            violation <= 0.02,
            "certificate violates limits by {violation:.3e}"
        );
    }

    let (acc_lo, acc_hi) = refine_range_nonlinear(
        &system,
        &coeffs,
        &v_hat,
        &limits,
        &range,
        InjectionLinearization::FrozenVoltage,
    )
    .unwrap();
    let width = range.q_hi - range.q_lo;
    let gap = (acc_lo - range.q_lo).abs().max((acc_hi - range.q_hi).abs());
    assert!(
        gap <= 0.01 * width,
        "gap {gap:.3e} above 1% of width {width:.3e}"
    );
    println!(
        "A8(ii) certificates within 2%, interval gap {gap:.3e} <= 1% of width {width:.3e}: PASS"
    );
}

/// A8(iii) — the approximate (LP) evaluation is faster than the
/// bisection-based accurate evaluation on the same machine.
#[test]
fn a8iii_approximate_faster() {
    let (system, coeffs, v_hat, limits, poly) = feeder5_poly();
    let range = project_interval_lp(&poly).unwrap();

    let mut lp_time = std::time::Duration::MAX;
    for _ in 0..7 {
        let start = std::time::Instant::now();
        let _ = project_interval_lp(&poly).unwrap();
        lp_time = lp_time.min(start.elapsed());
    }
    let mut acc_time = std::time::Duration::MAX;
    for _ in 0..7 {
        let start = std::time::Instant::now();
        let _ = refine_range_nonlinear(
            &system,
            &coeffs,
            &v_hat,
            &limits,
            &range,
            InjectionLinearization::FrozenVoltage,
        )
        .unwrap();
        acc_time = acc_time.min(start.elapsed());
    }
    assert!(
        lp_time < acc_time,
        "approximate {lp_time:?} not faster than accurate {acc_time:?}"
    );
    println!("A8(iii) approximate {lp_time:?} < accurate {acc_time:?}: PASS");
}

/// A9 — reductions and identities at tight tolerances.
#[test]
fn a9_reductions_and_identities() {
    // ZIP model with a=b=0, c=1 equals the constant-power model to 1e-12.
    let system = load("feeder22.json");
    let anchors = pick_anchor_states(&system).unwrap();
    let mu = DVector::from_fn(system.dim_l(), |m, _| 0.3 + 0.4 * ((m % 5) as f64) / 4.0);
    let zip_model = build_zip_model(&system.sys, &system.w, &anchors, &mu, &system.zip).unwrap();
    let power_model = build_trained_model(&system.sys, &system.w, &anchors, &mu).unwrap();
    let lambda = DVector::from_fn(system.dim_l(), |m, _| 0.6 + ((m * 7) % 10) as f64 / 10.0);
    let s = DVector::from_fn(system.dim_l(), |m, _| system.zip.s_nom()[m] * lambda[m]);
    let a = zip_model.predict_voltages(&lambda).unwrap();
    let b = power_model.predict_voltages(&s).unwrap();
    let zip_gap = (0..system.dim_l())
        .map(|m| (a[m] - b[m]).norm())
        .fold(0.0, f64::max);
    assert!(zip_gap <= 1e-12, "zip reduction gap {zip_gap:.3e}");

    // Real power form agrees with the complex product to 1e-12.
    let v_hat = effective_anchor_voltage(&mu, &anchors).unwrap();
    let coeffs = real_coefficients(&system.sys, &system.v0, &v_hat).unwrap();
    let v_re = DVector::from_fn(system.dim_l(), |m, _| 0.95 + 0.001 * (m as f64));
    let v_im = DVector::from_fn(system.dim_l(), |m, _| -0.02 - 0.0005 * (m as f64));
    let (p, q) = nodal_power_real(&coeffs, &v_re, &v_im).unwrap();
    for m in 0..system.dim_l() {
        let v = Complex64::new(v_re[m], v_im[m]);
        let i = Complex64::new(coeffs.i_re[m], coeffs.i_im[m]);
        let s = v * i.conj();
        assert!((p[m] - s.re).abs() <= 1e-12);
        assert!((q[m] - s.im).abs() <= 1e-12);
    }

    // mu = 1 / mu = 0 recover the light / heavy anchors exactly.
    let ones = DVector::from_element(system.dim_l(), 1.0);
    let zeros = DVector::zeros(system.dim_l());
    let eff_u = effective_anchor_voltage(&ones, &anchors).unwrap();
    let eff_l = effective_anchor_voltage(&zeros, &anchors).unwrap();
    let d_u = pure_dd_predict(&ones, &anchors);
    let d_l = pure_dd_predict(&zeros, &anchors);
    for m in 0..system.dim_l() {
        assert!((eff_u[m] - anchors.v_hat_u[m]).norm() <= 1e-14);
        assert!((eff_l[m] - anchors.v_hat_l[m]).norm() <= 1e-14);
        assert!((d_u[m] - anchors.v_hat_u[m]).norm() == 0.0);
        assert!((d_l[m] - anchors.v_hat_l[m]).norm() == 0.0);
    }

    // w is the zero-injection solution on every shipped feeder to 1e-12.
    for name in SHIPPED_FEEDERS {
        let system = load(name);
        let zero = DVector::from_element(system.dim_l(), Complex64::new(0.0, 0.0));
        let sol =
            solve_fixed_point(&system.sys, &system.w, &zero, &SolveOptions::default()).unwrap();
        let gap = (0..system.dim_l())
            .map(|m| (sol.v_l[m] - system.w[m]).norm())
            .fold(0.0, f64::max);
        assert!(gap <= 1e-12, "{name}: zero-injection gap {gap:.3e}");
    }
    println!("A9 reductions and identities: PASS");
}
