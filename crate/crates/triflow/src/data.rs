//! Synthetic operating-sample generation, anchor-state selection, bad-data
//! injection and forgetting-factor weights.
//!
//! Every randomized operation is reproducible from its seed: the random draws
//! happen sequentially on a counter-based stream before any parallel solve, so
//! thread scheduling cannot change the output.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::network::{Phase, System};
use crate::pf::{solve_zip_fixed_point, SolveOptions};
use crate::{Error, Result};

/// Default load scalings used to realize the light and heavy anchor states.
pub const ANCHOR_LIGHT: f64 = 0.1;
pub const ANCHOR_HEAVY: f64 = 1.5;

/// One historical operating point.
#[derive(Debug, Clone)]
pub struct OperatingSample {
    pub id: usize,
    /// Monotone sample index; newer samples have larger timestamps.
    pub timestamp: u64,
    pub v_l: DVector<Complex64>,
    pub s_l: DVector<Complex64>,
    /// Per node-phase load change rates that produced the sample.
    pub lambda: Option<DVector<f64>>,
    pub weight: f64,
    pub corrupted: bool,
}

/// Light/heavy anchor voltage profiles blended by the trained coefficients.
#[derive(Debug, Clone)]
pub struct AnchorPair {
    pub v_hat_u: DVector<Complex64>,
    pub v_hat_l: DVector<Complex64>,
}

fn solve_for_lambda(system: &System, lambda: &DVector<f64>) -> Result<DVector<Complex64>> {
    let sol = solve_zip_fixed_point(
        &system.sys,
        &system.w,
        &system.zip,
        lambda,
        &SolveOptions::default(),
    )?;
    Ok(sol.v_l)
}

/// Generates `count` samples by scaling every node-phase load independently
/// with a factor drawn uniformly from `scale_range`, then solving the exact
/// power flow. Timestamps run 1..count.
pub fn generate_samples(
    system: &System,
    count: usize,
    scale_range: (f64, f64),
    seed: u64,
) -> Result<Vec<OperatingSample>> {
    if count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    let (lo, hi) = scale_range;
    if !(lo > 0.0) || hi < lo {
        return Err(Error::InvalidParameter(format!(
            "scale range [{lo}, {hi}] must satisfy 0 < lo <= hi"
        )));
    }
    let n = system.dim_l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(lo, hi);
    let lambdas: Vec<DVector<f64>> = (0..count)
        .map(|_| DVector::from_fn(n, |_, _| dist.sample(&mut rng)))
        .collect();
    solve_sample_batch(system, lambdas, 1)
}

/// Generates samples whose load base ramps linearly by `ramp` (e.g. 0.2 for
/// +20%) across the timeline, with a uniform jitter of ±`jitter` per
/// node-phase on top. Used for forgetting-factor drift scenarios.
pub fn generate_drift_samples(
    system: &System,
    count: usize,
    ramp: f64,
    jitter: f64,
    seed: u64,
) -> Result<Vec<OperatingSample>> {
    if count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    if !(jitter >= 0.0 && jitter < 1.0) {
        return Err(Error::InvalidParameter("jitter must be in [0, 1)".into()));
    }
    let n = system.dim_l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(1.0 - jitter, 1.0 + jitter);
    let lambdas: Vec<DVector<f64>> = (0..count)
        .map(|k| {
            let base = if count == 1 {
                1.0
            } else {
                1.0 + ramp * (k as f64) / ((count - 1) as f64)
            };
            DVector::from_fn(n, |_, _| base * dist.sample(&mut rng))
        })
        .collect();
    solve_sample_batch(system, lambdas, 1)
}

fn solve_sample_batch(
    system: &System,
    lambdas: Vec<DVector<f64>>,
    first_timestamp: u64,
) -> Result<Vec<OperatingSample>> {
    let mut samples: Vec<OperatingSample> = lambdas
        .into_par_iter()
        .enumerate()
        .map(|(k, lambda)| {
            let v_l = solve_for_lambda(system, &lambda).map_err(|e| match e {
                Error::NonConvergence { iterations, detail } => Error::NonConvergence {
                    iterations,
                    detail: format!("sample {k}: {detail}"),
                },
                other => other,
            })?;
            let s_l = system.zip.injections(&lambda, &v_l)?;
            Ok(OperatingSample {
                id: k,
                timestamp: first_timestamp + k as u64,
                v_l,
                s_l,
                lambda: Some(lambda),
                weight: 1.0,
                corrupted: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    samples.sort_by_key(|s| s.id);
    Ok(samples)
}

/// Solves the light and heavy anchor states at the default scalings.
pub fn pick_anchor_states(system: &System) -> Result<AnchorPair> {
    pick_anchor_states_with(system, ANCHOR_LIGHT, ANCHOR_HEAVY)
}

/// Solves anchors at explicit uniform scalings of every load.
pub fn pick_anchor_states_with(system: &System, u_light: f64, u_heavy: f64) -> Result<AnchorPair> {
    let n = system.dim_l();
    let v_hat_u = solve_for_lambda(system, &DVector::from_element(n, u_light))?;
    let v_hat_l = solve_for_lambda(system, &DVector::from_element(n, u_heavy))?;
    let distinct = (0..n).any(|m| (v_hat_u[m] - v_hat_l[m]).norm() > 1e-15);
    if !distinct {
        return Err(Error::UnidentifiableAnchors);
    }
    Ok(AnchorPair { v_hat_u, v_hat_l })
}

/// Which range corrupted voltage magnitudes are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BadDataMode {
    /// Magnitudes collapse toward zero, [1e-3, 1e-2].
    NearZero,
    /// Magnitudes blow up, [3.0, 3.5].
    OverThree,
    /// Mild outliers above range, [1.5, 1.8].
    Over1p5,
    /// Mild outliers below range, [0.2, 0.5].
    Under0p5,
}

impl BadDataMode {
    pub fn magnitude_range(self) -> (f64, f64) {
        match self {
            BadDataMode::NearZero => (1e-3, 1e-2),
            BadDataMode::OverThree => (3.0, 3.5),
            BadDataMode::Over1p5 => (1.5, 1.8),
            BadDataMode::Under0p5 => (0.2, 0.5),
        }
    }

    pub fn parse(s: &str) -> Result<BadDataMode> {
        match s {
            "near_zero" => Ok(BadDataMode::NearZero),
            "over_three" => Ok(BadDataMode::OverThree),
            "over_1p5" => Ok(BadDataMode::Over1p5),
            "under_0p5" => Ok(BadDataMode::Under0p5),
            other => Err(Error::InvalidParameter(format!(
                "unknown bad-data mode '{other}'"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BadDataMode::NearZero => "near_zero",
            BadDataMode::OverThree => "over_three",
            BadDataMode::Over1p5 => "over_1p5",
            BadDataMode::Under0p5 => "under_0p5",
        }
    }
}

/// Replaces the voltage magnitudes of `count` randomly chosen samples (every
/// node-phase of each chosen sample) with draws from the mode's range,
/// preserving angles and injections, and flags them corrupted.
pub fn inject_bad_data(
    samples: &[OperatingSample],
    count: usize,
    mode: BadDataMode,
    seed: u64,
) -> Result<Vec<OperatingSample>> {
    if count > samples.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot corrupt {count} of {} samples",
            samples.len()
        )));
    }
    let mut out = samples.to_vec();
    if count == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, samples.len(), count).into_vec();
    chosen.sort_unstable();
    let (lo, hi) = mode.magnitude_range();
    let dist = Uniform::new_inclusive(lo, hi);
    for k in chosen {
        let sample = &mut out[k];
        for m in 0..sample.v_l.len() {
            let mag = dist.sample(&mut rng);
            let old = sample.v_l[m];
            let dir = if old.norm() > 0.0 {
                old / old.norm()
            } else {
                Complex64::new(1.0, 0.0)
            };
            sample.v_l[m] = dir * mag;
        }
        sample.corrupted = true;
    }
    Ok(out)
}

/// Applies geometric forgetting weights w_k = rho^(t_max − t_k).
pub fn forgetting_weights(samples: &[OperatingSample], rho: f64) -> Result<Vec<OperatingSample>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "forgetting factor {rho} must lie in (0, 1]"
        )));
    }
    let t_max = samples.iter().map(|s| s.timestamp).max().unwrap_or(0);
    let mut out = samples.to_vec();
    for s in &mut out {
        s.weight = rho.powi((t_max - s.timestamp) as i32);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sample file I/O
// ---------------------------------------------------------------------------

const SAMPLE_HEADER: [&str; 11] = [
    "sample_id",
    "timestamp",
    "node",
    "phase",
    "v_re",
    "v_im",
    "p",
    "q",
    "lambda",
    "weight",
    "corrupted",
];

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

/// Writes samples as one row per (sample, node, phase), 17-digit decimals.
pub fn write_samples_csv<W: Write>(
    out: W,
    system: &System,
    samples: &[OperatingSample],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SAMPLE_HEADER)?;
    let labels = system.labels();
    for s in samples {
        if s.v_l.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: s.v_l.len(),
            });
        }
        for (m, (node, phase)) in labels.iter().enumerate() {
            let lambda = s.lambda.as_ref().map(|l| fmt(l[m])).unwrap_or_default();
            w.write_record([
                s.id.to_string(),
                s.timestamp.to_string(),
                node.clone(),
                phase.to_string(),
                fmt(s.v_l[m].re),
                fmt(s.v_l[m].im),
                fmt(s.s_l[m].re),
                fmt(s.s_l[m].im),
                lambda,
                fmt(s.weight),
                s.corrupted.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_samples<P: AsRef<Path>>(
    path: P,
    system: &System,
    samples: &[OperatingSample],
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_samples_csv(file, system, samples)
}

/// Reads a sample file back against the system's node-phase index. Every
/// sample must cover every node-phase exactly once.
pub fn load_samples<P: AsRef<Path>>(path: P, system: &System) -> Result<Vec<OperatingSample>> {
    let file = std::fs::File::open(path)?;
    read_samples_csv(file, system)
}

pub fn read_samples_csv<R: std::io::Read>(
    input: R,
    system: &System,
) -> Result<Vec<OperatingSample>> {
    let mut reader = csv::Reader::from_reader(input);
    {
        let headers = reader.headers()?;
        let expect: Vec<&str> = SAMPLE_HEADER.to_vec();
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(Error::Format(format!(
                "sample file header mismatch: {:?}",
                headers
            )));
        }
    }
    let n = system.dim_l();
    let mut order: Vec<usize> = Vec::new();
    let mut map: std::collections::HashMap<usize, OperatingSample> =
        std::collections::HashMap::new();
    let mut seen: std::collections::HashMap<usize, std::collections::HashSet<usize>> =
        std::collections::HashMap::new();

    let parse_f = |field: &str, what: &str| -> Result<f64> {
        field
            .parse::<f64>()
            .map_err(|_| Error::Format(format!("invalid {what}: '{field}'")))
    };

    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != SAMPLE_HEADER.len() {
            return Err(Error::Format(format!(
                "row {line}: expected {} fields, got {}",
                SAMPLE_HEADER.len(),
                record.len()
            )));
        }
        let id: usize = record[0]
            .parse()
            .map_err(|_| Error::Format(format!("invalid sample_id '{}'", &record[0])))?;
        let timestamp: u64 = record[1]
            .parse()
            .map_err(|_| Error::Format(format!("invalid timestamp '{}'", &record[1])))?;
        let node = &record[2];
        let phase_char = record[3]
            .chars()
            .next()
            .ok_or_else(|| Error::Format("empty phase field".into()))?;
        let phase = Phase::from_letter(phase_char)
            .ok_or_else(|| Error::Format(format!("invalid phase '{}'", &record[3])))?;
        let m = system
            .sys
            .index
            .position(node, phase)
            .ok_or_else(|| Error::Format(format!("unknown node-phase {node}:{phase_char}")))?;

        let v = Complex64::new(parse_f(&record[4], "v_re")?, parse_f(&record[5], "v_im")?);
        let s = Complex64::new(parse_f(&record[6], "p")?, parse_f(&record[7], "q")?);
        let lambda = if record[8].is_empty() {
            None
        } else {
            Some(parse_f(&record[8], "lambda")?)
        };
        let weight = parse_f(&record[9], "weight")?;
        let corrupted = match &record[10] {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::Format(format!("invalid corrupted flag '{other}'")));
            }
        };

        let entry = map.entry(id).or_insert_with(|| {
            order.push(id);
            OperatingSample {
                id,
                timestamp,
                v_l: DVector::from_element(n, Complex64::new(0.0, 0.0)),
                s_l: DVector::from_element(n, Complex64::new(0.0, 0.0)),
                lambda: lambda.map(|_| DVector::zeros(n)),
                weight,
                corrupted,
            }
        });
        entry.v_l[m] = v;
        entry.s_l[m] = s;
        match (&mut entry.lambda, lambda) {
            (Some(vec), Some(x)) => vec[m] = x,
            (None, None) => {}
            _ => {
                return Err(Error::Format(format!(
                    "sample {id}: lambda must be present for all node-phases or none"
                )));
            }
        }
        if !seen.entry(id).or_default().insert(m) {
            return Err(Error::Format(format!(
                "sample {id}: duplicate row for node-phase {node}:{phase_char}"
            )));
        }
    }

    for (&id, covered) in &seen {
        if covered.len() != n {
            return Err(Error::Format(format!(
                "sample {id} covers {} of {n} node-phases",
                covered.len()
            )));
        }
    }
    let mut samples: Vec<OperatingSample> = order
        .into_iter()
        .map(|id| map.remove(&id).expect("collected sample"))
        .collect();
    samples.sort_by_key(|s| s.id);
    Ok(samples)
}
