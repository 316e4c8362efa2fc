//! Cross-module integration checks on the shipped fixtures, plus property
//! tests for the algebraic invariants.

use nalgebra::DVector;
use num_complex::Complex64;
use proptest::prelude::*;

use triflow::data::{generate_samples, load_samples, pick_anchor_states, save_samples, AnchorPair};
use triflow::eval::{load_experiment_config, normalized_errors, run_experiment};
use triflow::model::{
    build_trained_model, build_zip_model, load_model, save_model, sha256_hex, Provenance,
    TrainedModel,
};
use triflow::network::System;
use triflow::pf::{solve_zip_fixed_point, SolveOptions};
use triflow::trainer::{fit_mu, TrainerOptions};

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{}", env!("CARGO_MANIFEST_DIR"), name)
}

#[test]
fn shared_types_are_send_sync() {
    fn check<T: Send + Sync>() {}
    check::<System>();
    check::<triflow::network::AdmittanceSystem>();
    check::<triflow::model::ComplexLinearModel>();
    check::<triflow::model::ZipLinearModel>();
    check::<triflow::data::OperatingSample>();
}

#[test]
fn all_fixtures_load_and_solve() {
    for name in [
        "twobus.json",
        "chain3.json",
        "feeder22.json",
        "feeder13.json",
        "feeder5.json",
    ] {
        let system = System::from_path(fixture(name)).unwrap();
        let lambda = DVector::from_element(system.dim_l(), 1.0);
        let sol = solve_zip_fixed_point(
            &system.sys,
            &system.w,
            &system.zip,
            &lambda,
            &SolveOptions::default(),
        )
        .unwrap();
        assert!(sol.residual <= 1e-8, "{name}: residual {}", sol.residual);
    }
}

/// Increasing every load weakly decreases every voltage magnitude on the
/// shipped radial feeders, checked at three load levels.
#[test]
fn radial_loading_monotonicity() {
    for name in [
        "twobus.json",
        "chain3.json",
        "feeder22.json",
        "feeder5.json",
    ] {
        let system = System::from_path(fixture(name)).unwrap();
        let mut previous: Option<Vec<f64>> = None;
        for scale in [0.5, 1.0, 1.5] {
            let lambda = DVector::from_element(system.dim_l(), scale);
            let sol = solve_zip_fixed_point(
                &system.sys,
                &system.w,
                &system.zip,
                &lambda,
                &SolveOptions::default(),
            )
            .unwrap();
            let mags: Vec<f64> = sol.v_l.iter().map(|c| c.norm()).collect();
            if let Some(prev) = &previous {
                for (m, (now, before)) in mags.iter().zip(prev.iter()).enumerate() {
                    // Node 4 of the 5-bus feeder injects; skip pure sources.
                    if system.zip.s_nom()[m].re > 0.0 {
                        continue;
                    }
                    assert!(
                        *now <= *before + 1e-12,
                        "{name} node-phase {m}: |v| rose from {before} to {now}"
                    );
                }
            }
            previous = Some(mags);
        }
    }
}

#[test]
fn sample_files_round_trip_through_disk() {
    let system = System::from_path(fixture("feeder13.json")).unwrap();
    let samples = generate_samples(&system, 8, (0.5, 1.5), 77).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("samples.csv");
    save_samples(&path, &system, &samples).unwrap();
    let back = load_samples(&path, &system).unwrap();
    assert_eq!(back.len(), samples.len());
    for (a, b) in samples.iter().zip(back.iter()) {
        for m in 0..a.v_l.len() {
            assert_eq!(a.v_l[m], b.v_l[m]);
            assert_eq!(a.s_l[m], b.s_l[m]);
        }
    }
}

#[test]
fn model_files_round_trip_both_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let provenance = Provenance {
        feeder_sha256: sha256_hex(b"test"),
        seed: Some(5),
        trainer: None,
    };

    let system = System::from_path(fixture("feeder13.json")).unwrap();
    let anchors = pick_anchor_states(&system).unwrap();
    let samples = generate_samples(&system, 30, (0.5, 1.5), 5).unwrap();
    let (mu, _) = fit_mu(
        &samples,
        &anchors,
        &TrainerOptions::default(),
        Some(&system.zip),
    )
    .unwrap();
    let zip_model = build_zip_model(&system.sys, &system.w, &anchors, &mu, &system.zip).unwrap();
    let path = dir.path().join("zip.json");
    save_model(&path, &TrainedModel::Zip(zip_model.clone()), &provenance).unwrap();
    let (loaded, prov) = load_model(&path).unwrap();
    assert_eq!(prov.feeder_sha256, provenance.feeder_sha256);
    match loaded {
        TrainedModel::Zip(m) => {
            let lambda = DVector::from_element(system.dim_l(), 1.1);
            let a = zip_model.predict_voltages(&lambda).unwrap();
            let b = m.predict_voltages(&lambda).unwrap();
            for k in 0..a.len() {
                assert_eq!(a[k], b[k]);
            }
        }
        _ => panic!("expected zip model"),
    }

    let power_model = build_trained_model(
        &system.sys,
        &system.w,
        &anchors,
        &DVector::from_element(system.dim_l(), 0.5),
    )
    .unwrap();
    let path = dir.path().join("power.json");
    save_model(&path, &TrainedModel::Power(power_model), &provenance).unwrap();
    assert!(matches!(
        load_model(&path).unwrap().0,
        TrainedModel::Power(_)
    ));
}

#[test]
fn experiment_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = load_experiment_config(fixture("configs/fig4_baddata.json")).unwrap();
    config.train_count = 40;
    config.test_count = 60;
    config.out_dir = dir.path().join("run");
    let first = run_experiment(&config).unwrap();
    assert_eq!(first.len(), 4, "two penalties, two files each");
    let snapshot: Vec<Vec<u8>> = first.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let second = run_experiment(&config).unwrap();
    for (path, bytes) in second.iter().zip(snapshot.iter()) {
        assert_eq!(&std::fs::read(path).unwrap(), bytes, "{}", path.display());
    }
}

#[test]
fn shipped_experiment_configs_parse() {
    for name in ["configs/table1_22bus.json", "configs/fig4_baddata.json"] {
        let config = load_experiment_config(fixture(name)).unwrap();
        assert!(config.feeder.exists(), "{}", config.feeder.display());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Prediction minus w is linear in conj(s) for real mixing coefficients.
    #[test]
    fn prediction_affinity(
        alpha in -2.0..2.0f64,
        beta in -2.0..2.0f64,
        p1 in -0.5..0.2f64,
        q1 in -0.3..0.3f64,
        p2 in -0.5..0.2f64,
        q2 in -0.3..0.3f64,
        mu0 in -1.0..2.0f64,
        mu1 in -1.0..2.0f64,
    ) {
        let system = System::from_path(fixture("chain3.json")).unwrap();
        let anchors = pick_anchor_states(&system).unwrap();
        let mu = DVector::from_vec(vec![mu0, mu1]);
        let model = build_trained_model(&system.sys, &system.w, &anchors, &mu).unwrap();
        let s1 = DVector::from_vec(vec![Complex64::new(p1, q1), Complex64::new(p2, q2)]);
        let s2 = DVector::from_vec(vec![Complex64::new(q2, p1), Complex64::new(q1, p2)]);
        let mixed = DVector::from_fn(2, |m, _| s1[m] * alpha + s2[m] * beta);
        let f = |s: &DVector<Complex64>| model.predict_voltages(s).unwrap();
        let lhs = f(&mixed);
        let a = f(&s1);
        let b = f(&s2);
        for m in 0..2 {
            let rhs = system.w[m] + (a[m] - system.w[m]) * alpha + (b[m] - system.w[m]) * beta;
            prop_assert!((lhs[m] - rhs).norm() <= 1e-12);
        }
    }

    /// The effective anchor blend and the trained sensitivity agree: the
    /// reciprocal of the blended voltage matches the diagonal factor.
    #[test]
    fn effective_anchor_is_reciprocal_blend(mu0 in -1.0..2.0f64, mu1 in -1.0..2.0f64) {
        let system = System::from_path(fixture("chain3.json")).unwrap();
        let anchors = pick_anchor_states(&system).unwrap();
        let mu = DVector::from_vec(vec![mu0, mu1]);
        let eff = triflow::model::effective_anchor_voltage(&mu, &anchors).unwrap();
        for m in 0..2 {
            let lhs = Complex64::new(1.0, 0.0) / eff[m].conj();
            let rhs = mu[m] / anchors.v_hat_u[m].conj()
                + (1.0 - mu[m]) / anchors.v_hat_l[m].conj();
            prop_assert!((lhs - rhs).norm() <= 1e-12);
        }
    }

    /// Min-max normalization lands in [0, 1] with both endpoints attained.
    #[test]
    fn normalization_bounds(series in proptest::collection::vec(-1e3..1e3f64, 2..40)) {
        let min = series.iter().copied().fold(f64::INFINITY, f64::min);
        let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assume!(max > min);
        let out = normalized_errors(&series).unwrap();
        prop_assert!(out.iter().all(|x| (-1e-12..=1.0 + 1e-12).contains(x)));
        prop_assert!(out.iter().any(|x| *x == 0.0));
        prop_assert!(out.iter().any(|x| *x == 1.0));
    }

    /// Residuals vanish when samples coincide with the blend the coefficients
    /// select, for any boundary mu.
    #[test]
    fn residual_zero_at_anchor_blend(pick_upper in proptest::bool::ANY) {
        let system = System::from_path(fixture("chain3.json")).unwrap();
        let anchors = pick_anchor_states(&system).unwrap();
        let v = if pick_upper { &anchors.v_hat_u } else { &anchors.v_hat_l };
        let mu_val = if pick_upper { 1.0 } else { 0.0 };
        let sample = triflow::data::OperatingSample {
            id: 0,
            timestamp: 1,
            v_l: v.clone(),
            s_l: DVector::from_element(2, Complex64::new(0.0, 0.0)),
            lambda: None,
            weight: 1.0,
            corrupted: false,
        };
        let anchors2 = AnchorPair {
            v_hat_u: anchors.v_hat_u.clone(),
            v_hat_l: anchors.v_hat_l.clone(),
        };
        let eps = triflow::trainer::residuals(
            &[sample],
            &anchors2,
            &DVector::from_element(2, mu_val),
            None,
        )
        .unwrap();
        for m in 0..2 {
            prop_assert!(eps.eps[(0, m)].norm() <= 1e-13);
        }
    }
}
