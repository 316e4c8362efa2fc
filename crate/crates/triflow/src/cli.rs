//! Batch command-line interface tying the pipeline together.
//!
//! The binary in `src/main.rs` is a thin shell around [`run`]; every
//! subcommand is idempotent given identical inputs and seeds and writes only
//! to caller-specified output paths.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use crate::data::{generate_samples, load_samples, pick_anchor_states, save_samples};
use crate::eval::{
    evaluate_model, load_experiment_config, run_experiment, write_error_csv, write_quantile_csv,
};
use crate::model::{
    effective_anchor_voltage, load_model, real_coefficients, save_model, sha256_hex, Provenance,
};
use crate::network::System;
use crate::pf::{solve_zip_fixed_point, SolveOptions};
use crate::qrange::{
    build_constraints, implied_injections, project_interval_fme, project_interval_lp,
    OperationalLimits, QrangeOptions, RangeResult, RangeStatus,
};
use crate::trainer::{Penalty, TrainerOptions};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "triflow",
    version,
    about = "Three-phase distribution power flow: exact solves, linear model \
             training, and PCC reactive-range evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the exact power flow for a feeder at a uniform load scaling.
    #[command(name = "solve-pf")]
    SolvePf {
        /// Feeder description (JSON).
        #[arg(long)]
        feeder: PathBuf,
        /// Uniform load change rate applied to every node-phase.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Voltage-update stopping tolerance, p.u.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        /// Voltage table destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate random operating samples with the exact solver.
    #[command(name = "gen-data")]
    GenData {
        #[arg(long)]
        feeder: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0.5)]
        scale_min: f64,
        #[arg(long, default_value_t = 1.5)]
        scale_max: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Sample table destination (CSV).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the anchor-blend coefficients from a sample file.
    Train {
        #[arg(long)]
        feeder: PathBuf,
        /// Sample table produced by gen-data (CSV).
        #[arg(long)]
        samples: PathBuf,
        /// Penalty on per-sample residual norms.
        #[arg(long, default_value = "squared")]
        penalty: String,
        /// Huber threshold; defaults to the 90th percentile rule.
        #[arg(long)]
        delta: Option<f64>,
        /// Forgetting factor in (0, 1]; 1 weights all samples equally.
        #[arg(long)]
        rho: Option<f64>,
        /// Seed recorded in the model provenance.
        #[arg(long)]
        seed: Option<u64>,
        /// Model destination (JSON); the fit report lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model against a sample file.
    Eval {
        #[arg(long)]
        feeder: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        /// Output prefix: writes `<out>_errors.csv` and `<out>_quantiles.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reactive-power support interval at the PCC of a balanced feeder.
    Range {
        #[arg(long)]
        feeder: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Operational limits (JSON).
        #[arg(long)]
        limits: PathBuf,
        /// Output prefix: writes `<out>_range.csv` plus certificate tables.
        #[arg(long)]
        out: PathBuf,
        /// Cross-check the interval with Fourier–Motzkin elimination.
        #[arg(long, default_value_t = false)]
        fme: bool,
    },
    /// Run a config-driven experiment (generate, train, evaluate, report).
    Experiment {
        /// Experiment description (JSON); paths resolve against it.
        #[arg(long)]
        config: PathBuf,
    },
}

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

fn write_voltage_table<W: Write>(
    mut out: W,
    system: &System,
    v: &DVector<nalgebra::Complex<f64>>,
) -> Result<()> {
    writeln!(out, "node,phase,v_re,v_im,v_mag")?;
    for (m, (node, phase)) in system.labels().iter().enumerate() {
        writeln!(
            out,
            "{node},{phase},{},{},{}",
            fmt(v[m].re),
            fmt(v[m].im),
            fmt(v[m].norm())
        )?;
    }
    Ok(())
}

fn report_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    name.push_str(".report.json");
    out.with_file_name(name)
}

/// Executes one parsed invocation.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SolvePf {
            feeder,
            lambda,
            tol,
            max_iter,
            out,
        } => {
            let system = System::from_path(&feeder)?;
            let lam = DVector::from_element(system.dim_l(), lambda);
            let opts = SolveOptions { tol, max_iter };
            let sol = solve_zip_fixed_point(&system.sys, &system.w, &system.zip, &lam, &opts)?;
            match out {
                Some(path) => {
                    let file = std::fs::File::create(path)?;
                    write_voltage_table(file, &system, &sol.v_l)?;
                }
                None => write_voltage_table(std::io::stdout().lock(), &system, &sol.v_l)?,
            }
            eprintln!(
                "converged in {} iterations, residual {:.3e} p.u.",
                sol.iterations, sol.residual
            );
            Ok(())
        }
        Command::GenData {
            feeder,
            count,
            scale_min,
            scale_max,
            seed,
            out,
        } => {
            let system = System::from_path(&feeder)?;
            let samples = generate_samples(&system, count, (scale_min, scale_max), seed)?;
            save_samples(&out, &system, &samples)?;
            eprintln!("wrote {} samples to {}", samples.len(), out.display());
            Ok(())
        }
        Command::Train {
            feeder,
            samples,
            penalty,
            delta,
            rho,
            seed,
            out,
        } => {
            let feeder_bytes = std::fs::read(&feeder)?;
            let system = System::from_json_str(&String::from_utf8_lossy(&feeder_bytes))?;
            let mut sample_set = load_samples(&samples, &system)?;
            if let Some(rho) = rho {
                sample_set = crate::data::forgetting_weights(&sample_set, rho)?;
            }
            let anchors = pick_anchor_states(&system)?;
            let opts = TrainerOptions {
                penalty: Penalty::parse(&penalty)?,
                delta,
                ..Default::default()
            };
            let (model, fit) = crate::eval::train_model(&system, &sample_set, &anchors, &opts)?;
            let provenance = Provenance {
                feeder_sha256: sha256_hex(&feeder_bytes),
                seed,
                trainer: Some(serde_json::json!({
                    "penalty": penalty,
                    "delta": delta,
                    "rho": rho,
                })),
            };
            save_model(&out, &model, &provenance)?;
            let report_file = report_path(&out);
            std::fs::write(
                &report_file,
                serde_json::to_string_pretty(&fit).map_err(Error::from)?,
            )?;
            eprintln!(
                "trained ({}) -> {}, report -> {}",
                fit.penalty,
                out.display(),
                report_file.display()
            );
            Ok(())
        }
        Command::Eval {
            feeder,
            model,
            samples,
            out,
        } => {
            let feeder_bytes = std::fs::read(&feeder)?;
            let system = System::from_json_str(&String::from_utf8_lossy(&feeder_bytes))?;
            let (trained, provenance) = load_model(&model)?;
            if provenance.feeder_sha256 != sha256_hex(&feeder_bytes) {
                eprintln!("warning: model was trained against a different feeder file");
            }
            let sample_set = load_samples(&samples, &system)?;
            let report = evaluate_model(&trained, &sample_set)?;
            let ids: Vec<usize> = sample_set.iter().map(|s| s.id).collect();
            let errors_path = with_suffix(&out, "_errors.csv");
            let quant_path = with_suffix(&out, "_quantiles.csv");
            write_error_csv(&errors_path, &ids, &report)?;
            write_quantile_csv(&quant_path, &report)?;
            println!("mean_rel_err,{}", fmt(report.mean));
            Ok(())
        }
        Command::Range {
            feeder,
            model,
            limits,
            out,
            fme,
        } => {
            let feeder_bytes = std::fs::read(&feeder)?;
            let system = System::from_json_str(&String::from_utf8_lossy(&feeder_bytes))?;
            let (trained, provenance) = load_model(&model)?;
            if provenance.feeder_sha256 != sha256_hex(&feeder_bytes) {
                eprintln!("warning: model was trained against a different feeder file");
            }
            let limits = OperationalLimits::from_path(&limits)?;
            let v_hat = effective_anchor_voltage(trained.mu(), trained.anchors())?;
            let coeffs = real_coefficients(&system.sys, &system.v0, &v_hat)?;
            let poly =
                build_constraints(&system, &coeffs, &v_hat, &limits, QrangeOptions::default())?;
            let range = project_interval_lp(&poly)?;
            if range.status == RangeStatus::Infeasible {
                return Err(Error::Infeasible);
            }
            write_range_outputs(&out, &system, &coeffs, &v_hat, &range)?;
            println!(
                "q_lo,q_hi,{},{}",
                fmt(range.q_lo * system.feeder.base_mva),
                fmt(range.q_hi * system.feeder.base_mva)
            );
            if fme {
                let cross = project_interval_fme(&poly)?;
                println!(
                    "fme_q_lo,fme_q_hi,{},{}",
                    fmt(cross.q_lo * system.feeder.base_mva),
                    fmt(cross.q_hi * system.feeder.base_mva)
                );
                let gap = (cross.q_lo - range.q_lo)
                    .abs()
                    .max((cross.q_hi - range.q_hi).abs());
                eprintln!("lp/fme gap: {gap:.3e} p.u.");
            }
            Ok(())
        }
        Command::Experiment { config } => {
            let config = load_experiment_config(&config)?;
            let written = run_experiment(&config)?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_range_outputs(
    prefix: &Path,
    system: &System,
    coeffs: &crate::model::RealCoefficients,
    v_hat: &DVector<nalgebra::Complex<f64>>,
    range: &RangeResult,
) -> Result<()> {
    let base = system.feeder.base_mva;
    let mut out = std::fs::File::create(with_suffix(prefix, "_range.csv"))?;
    writeln!(out, "q_lo_pu,q_hi_pu,q_lo_mvar,q_hi_mvar,status")?;
    let status = match range.status {
        RangeStatus::Bounded => "bounded",
        RangeStatus::Infeasible => "infeasible",
        RangeStatus::Unbounded => "unbounded",
    };
    writeln!(
        out,
        "{},{},{},{},{status}",
        fmt(range.q_lo),
        fmt(range.q_hi),
        fmt(range.q_lo * base),
        fmt(range.q_hi * base)
    )?;

    for (name, cert) in [("lo", &range.x_lo), ("hi", &range.x_hi)] {
        let Some(x) = cert else { continue };
        let n = system.dim_l();
        let v_re = DVector::from_fn(n, |m, _| x[2 * m]);
        let v_im = DVector::from_fn(n, |m, _| x[2 * m + 1]);
        let s = implied_injections(system, coeffs, v_hat, x, QrangeOptions::default().injection)?;
        let mut cert_out =
            std::fs::File::create(with_suffix(prefix, &format!("_cert_{name}.csv")))?;
        writeln!(cert_out, "node,v_re,v_im,p,q")?;
        for (m, (node, _)) in system.labels().iter().enumerate() {
            writeln!(
                cert_out,
                "{node},{},{},{},{}",
                fmt(v_re[m]),
                fmt(v_im[m]),
                fmt(s[m].re),
                fmt(s[m].im)
            )?;
        }
    }
    Ok(())
}
