//! Error metrics, model comparisons and deterministic experiment runs.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use num_complex::Complex64;
use serde::Deserialize;

use crate::data::{
    forgetting_weights, generate_samples, inject_bad_data, pick_anchor_states, AnchorPair,
    BadDataMode, OperatingSample,
};
use crate::model::{
    build_flat_model, build_trained_model, build_zip_model, pure_dd_predict, TrainedModel,
};
use crate::network::System;
use crate::trainer::{fit_mu, FitReport, Penalty, TrainerOptions};
use crate::{Error, Result};

/// Seed offset separating the held-out stream from the training stream.
pub const TEST_SEED_OFFSET: u64 = 1_000_003;
/// Seed offset for the corruption stream.
pub const BAD_DATA_SEED_OFFSET: u64 = 2_000_003;

/// Relative-error statistics over a sample set.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    /// Per-sample relative error Σ|ṽ−v| / Σ|v|.
    pub per_sample: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Mean |ṽ_m − v_m| / |v_m| per node-phase.
    pub per_node_phase: Vec<f64>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-sample and aggregate relative voltage errors.
pub fn relative_errors(
    predictions: &[DVector<Complex64>],
    truths: &[DVector<Complex64>],
) -> Result<ErrorReport> {
    if predictions.len() != truths.len() || predictions.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: truths.len(),
            got: predictions.len(),
        });
    }
    let n = truths[0].len();
    let mut per_sample = Vec::with_capacity(predictions.len());
    let mut per_node_num = vec![0.0; n];
    for (p, t) in predictions.iter().zip(truths.iter()) {
        if p.len() != n || t.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: p.len().min(t.len()),
            });
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for m in 0..n {
            let err = (p[m] - t[m]).norm();
            num += err;
            den += t[m].norm();
            let tm = t[m].norm();
            if tm > 0.0 {
                per_node_num[m] += err / tm;
            }
        }
        if den == 0.0 {
            return Err(Error::InvalidParameter("truth vector has zero norm".into()));
        }
        per_sample.push(num / den);
    }
    let mut sorted = per_sample.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let count = per_sample.len() as f64;
    Ok(ErrorReport {
        mean: per_sample.iter().sum::<f64>() / count,
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        per_node_phase: per_node_num.iter().map(|x| x / count).collect(),
        per_sample,
    })
}

/// Min-max normalization of an error series onto [0, 1].
pub fn normalized_errors(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::InvalidParameter(
            "normalization needs at least two entries".into(),
        ));
    }
    let min = series.iter().copied().fold(f64::INFINITY, f64::min);
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(Error::InvalidParameter(
            "cannot normalize a constant series".into(),
        ));
    }
    Ok(series.iter().map(|e| (e - min) / (max - min)).collect())
}

/// One comparison row between the hybrid prediction (anchor blend pushed
/// through the network equation) and the load-independent pure blend.
#[derive(Debug, Clone)]
pub struct HybridPureRow {
    pub sample_id: usize,
    pub hybrid_err: f64,
    pub pure_err: f64,
    pub ratio: f64,
    /// |y⁻¹·s| / |ṽ_d·v*| for scalar systems; the theoretical error ratio.
    pub bound_factor: Option<f64>,
}

/// Compares the hybrid model (flat model rebuilt at the pure blend ṽ_d)
/// against the pure data-driven blend itself on oracle test samples.
pub fn compare_hybrid_vs_pure(
    system: &System,
    anchors: &AnchorPair,
    mu: &DVector<f64>,
    test_samples: &[OperatingSample],
) -> Result<Vec<HybridPureRow>> {
    let v_d = pure_dd_predict(mu, anchors);
    let hybrid = build_flat_model(&system.sys, &system.w, &v_d)?;
    let scalar = system.dim_l() == 1;
    let mut rows = Vec::with_capacity(test_samples.len());
    for sample in test_samples {
        let v_h = hybrid.predict_voltages(&sample.s_l)?;
        let mut hybrid_err = 0.0;
        let mut pure_err = 0.0;
        for m in 0..system.dim_l() {
            hybrid_err += (v_h[m] - sample.v_l[m]).norm();
            pure_err += (v_d[m] - sample.v_l[m]).norm();
        }
        let ratio = if pure_err > 0.0 {
            hybrid_err / pure_err
        } else {
            0.0
        };
        let bound_factor = if scalar {
            let y = system.sys.yll[(0, 0)];
            Some((sample.s_l[0] / y).norm() / (v_d[0] * sample.v_l[0]).norm())
        } else {
            None
        };
        rows.push(HybridPureRow {
            sample_id: sample.id,
            hybrid_err,
            pure_err,
            ratio,
            bound_factor,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Experiment configuration and runner
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BadDataConfig {
    pub count: usize,
    pub mode: String,
}

/// End-to-end experiment description; paths are relative to the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub feeder: PathBuf,
    pub train_count: usize,
    pub test_count: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub seed: u64,
    /// Penalty names, one report pair per entry.
    pub penalties: Vec<String>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub bad_data: Option<BadDataConfig>,
    pub out_dir: PathBuf,
}

/// Loads a config and resolves its paths against the config file's directory.
pub fn load_experiment_config<P: AsRef<Path>>(path: P) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut config: ExperimentConfig = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    config.feeder = base.join(&config.feeder);
    config.out_dir = base.join(&config.out_dir);
    Ok(config)
}

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

/// Writes `sample_id,rel_err` rows.
pub fn write_error_csv<P: AsRef<Path>>(path: P, ids: &[usize], report: &ErrorReport) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "sample_id,rel_err")?;
    for (id, err) in ids.iter().zip(report.per_sample.iter()) {
        writeln!(out, "{id},{}", fmt(*err))?;
    }
    Ok(())
}

/// Writes the box-plot-ready `stat,value` summary.
pub fn write_quantile_csv<P: AsRef<Path>>(path: P, report: &ErrorReport) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "stat,value")?;
    for (stat, value) in [
        ("min", report.min),
        ("q1", report.q1),
        ("median", report.median),
        ("q3", report.q3),
        ("max", report.max),
        ("mean", report.mean),
    ] {
        writeln!(out, "{stat},{}", fmt(value))?;
    }
    Ok(())
}

/// Trains a model of the kind matching the feeder's load description.
pub fn train_model(
    system: &System,
    samples: &[OperatingSample],
    anchors: &AnchorPair,
    opts: &TrainerOptions,
) -> Result<(TrainedModel, FitReport)> {
    if system.feeder.is_constant_power() {
        let (mu, report) = fit_mu(samples, anchors, opts, None)?;
        let model = build_trained_model(&system.sys, &system.w, anchors, &mu)?;
        Ok((TrainedModel::Power(model), report))
    } else {
        let (mu, report) = fit_mu(samples, anchors, opts, Some(&system.zip))?;
        let model = build_zip_model(&system.sys, &system.w, anchors, &mu, &system.zip)?;
        Ok((TrainedModel::Zip(model), report))
    }
}

/// Model predictions over a sample set; ZIP models require per-sample λ.
pub fn predictions_for(
    model: &TrainedModel,
    samples: &[OperatingSample],
) -> Result<Vec<DVector<Complex64>>> {
    samples
        .iter()
        .map(|s| match model {
            TrainedModel::Power(m) => m.predict_voltages(&s.s_l),
            TrainedModel::Zip(m) => {
                let lambda = s.lambda.as_ref().ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "sample {} lacks lambda, required by the zip model",
                        s.id
                    ))
                })?;
                m.predict_voltages(lambda)
            }
        })
        .collect()
}

/// Evaluates a trained model against oracle samples.
pub fn evaluate_model(model: &TrainedModel, samples: &[OperatingSample]) -> Result<ErrorReport> {
    let predictions = predictions_for(model, samples)?;
    let truths: Vec<DVector<Complex64>> = samples.iter().map(|s| s.v_l.clone()).collect();
    relative_errors(&predictions, &truths)
}

/// Deterministic end-to-end run: generate, train, evaluate, emit one error
/// table and one quantile table per penalty. Returns the written paths.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let system = System::from_path(&config.feeder)?;
    let anchors = pick_anchor_states(&system)?;
    let scale = (config.scale_min, config.scale_max);
    let mut train = generate_samples(&system, config.train_count, scale, config.seed)?;
    let test = generate_samples(
        &system,
        config.test_count,
        scale,
        config.seed.wrapping_add(TEST_SEED_OFFSET),
    )?;
    if let Some(bad) = &config.bad_data {
        let mode = BadDataMode::parse(&bad.mode)?;
        train = inject_bad_data(
            &train,
            bad.count,
            mode,
            config.seed.wrapping_add(BAD_DATA_SEED_OFFSET),
        )?;
    }
    if let Some(rho) = config.rho {
        train = forgetting_weights(&train, rho)?;
    }

    std::fs::create_dir_all(&config.out_dir)?;
    let ids: Vec<usize> = test.iter().map(|s| s.id).collect();
    let mut written = Vec::new();
    for penalty_name in &config.penalties {
        let penalty = Penalty::parse(penalty_name)?;
        let opts = TrainerOptions {
            penalty,
            delta: config.delta,
            ..Default::default()
        };
        let (model, _fit) = train_model(&system, &train, &anchors, &opts)?;
        let report = evaluate_model(&model, &test)?;
        let errors_path =
            config
                .out_dir
                .join(format!("{}_{}_errors.csv", config.name, penalty.as_str()));
        let quant_path = config.out_dir.join(format!(
            "{}_{}_quantiles.csv",
            config.name,
            penalty.as_str()
        ));
        write_error_csv(&errors_path, &ids, &report)?;
        write_quantile_csv(&quant_path, &report)?;
        written.push(errors_path);
        written.push(quant_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_of_exact_predictions_is_zero() {
        let v = vec![DVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.9, -0.1),
        ])];
        let report = relative_errors(&v, &v).unwrap();
        assert_eq!(report.mean, 0.0);
        assert_eq!(report.max, 0.0);
    }

    #[test]
    fn uniform_scaling_gives_alpha() {
        let alpha = 0.03;
        let truth = vec![DVector::from_vec(vec![
            Complex64::new(1.0, -0.2),
            Complex64::new(0.8, 0.4),
        ])];
        let pred = vec![truth[0].map(|c| c * (1.0 + alpha))];
        let report = relative_errors(&pred, &truth).unwrap();
        assert!((report.mean - alpha).abs() < 1e-12);
    }

    #[test]
    fn normalized_errors_span_unit_interval() {
        let out = normalized_errors(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.5, 1.0]);
        assert!(normalized_errors(&[2.0, 2.0]).is_err());
        assert!(normalized_errors(&[1.0]).is_err());
    }

    #[test]
    fn normalization_preserves_ranks() {
        use rand::distributions::{Distribution, Uniform};
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let dist = Uniform::new(0.0, 1.0);
        let series: Vec<f64> = (0..40).map(|_| dist.sample(&mut rng)).collect();
        let normalized = normalized_errors(&series).unwrap();
        let rank = |v: &[f64]| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
            idx
        };
        assert_eq!(rank(&series), rank(&normalized));
        assert!(normalized.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn quantiles_are_monotone() {
        let sorted = [0.1, 0.2, 0.5, 0.9, 1.5];
        assert!(quantile(&sorted, 0.25) <= quantile(&sorted, 0.5));
        assert!(quantile(&sorted, 0.5) <= quantile(&sorted, 0.75));
        assert_eq!(quantile(&sorted, 0.0), 0.1);
        assert_eq!(quantile(&sorted, 1.0), 1.5);
    }

    /// The hybrid prediction beats the pure blend at every solvable loading
    /// of the two-bus system, not just inside the normal voltage band.
    #[test]
    fn hybrid_beats_pure_across_solvable_region() {
        use crate::data::pick_anchor_states_with;
        use crate::pf::{solve_zip_fixed_point, SolveOptions};
        use crate::trainer::{fit_mu, TrainerOptions};

        let system = System::from_json_str(
            r#"{
  "base_mva": 1.0,
  "nodes": [
    {"id": "0", "kind": "slack", "phases": "a"},
    {"id": "1", "kind": "pq", "phases": "a",
     "zip": {"a": [0.0], "b": [0.0], "c": [1.0],
             "s_nom": [[-0.25, -0.10]], "v_nom_mag": [1.0]}}
  ],
  "branches": [
    {"from": "0", "to": "1", "y_series": [[[5.0, -15.0]]]}
  ]
}"#,
        )
        .unwrap();
        let anchors = pick_anchor_states_with(&system, 0.1, 4.0).unwrap();
        let train = generate_samples(&system, 50, (0.2, 4.0), 19).unwrap();
        let (mu, _) = fit_mu(&train, &anchors, &TrainerOptions::default(), None).unwrap();

        let mut points = Vec::new();
        let mut lam = 0.2;
        loop {
            let lambda = DVector::from_element(1, lam);
            let Ok(sol) = solve_zip_fixed_point(
                &system.sys,
                &system.w,
                &system.zip,
                &lambda,
                &SolveOptions::default(),
            ) else {
                break;
            };
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
            lam += 0.5;
        }
        assert!(points.len() > 10, "sweep too short: {}", points.len());
        let rows = compare_hybrid_vs_pure(&system, &anchors, &mu, &points).unwrap();
        for row in rows {
            assert!(
                row.hybrid_err < row.pure_err,
                "sample {}: hybrid {:.3e} vs pure {:.3e}",
                row.sample_id,
                row.hybrid_err,
                row.pure_err
            );
        }
    }
}
