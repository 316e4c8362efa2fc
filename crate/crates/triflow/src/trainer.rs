//! Fitting the anchor-blend coefficients μ from operating samples.
//!
//! Per node-phase the residual is affine in μ, ε = c − μ·d, so the weighted
//! squared objective has a closed-form minimizer per element. The Huber
//! penalty is handled by iteratively reweighted least squares over per-sample
//! aggregate residuals, which caps the influence of corrupted samples.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::data::{AnchorPair, OperatingSample};
use crate::network::ZipLoadSpec;
use crate::{Error, Result};

/// Penalty applied to per-sample residual norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    Squared,
    Huber,
}

impl Penalty {
    pub fn parse(s: &str) -> Result<Penalty> {
        match s {
            "squared" => Ok(Penalty::Squared),
            "huber" => Ok(Penalty::Huber),
            other => Err(Error::InvalidParameter(format!(
                "unknown penalty '{other}' (expected 'squared' or 'huber')"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Penalty::Squared => "squared",
            Penalty::Huber => "huber",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainerOptions {
    pub penalty: Penalty,
    /// Huber threshold; `None` selects the 90th percentile of the residual
    /// norms, re-estimated from the current fit each IRLS sweep.
    pub delta: Option<f64>,
    pub max_irls_iter: usize,
    pub irls_tol: f64,
    /// Whether sample weights (forgetting factors) enter the objective.
    pub use_weights: bool,
}

impl Default for TrainerOptions {
    fn default() -> Self {
        TrainerOptions {
            penalty: Penalty::Squared,
            delta: None,
            max_irls_iter: 50,
            irls_tol: 1e-10,
            use_weights: true,
        }
    }
}

/// Normalized nodal power differences, one row per sample, one column per
/// node-phase.
#[derive(Debug, Clone)]
pub struct ResidualMatrix {
    pub eps: DMatrix<Complex64>,
}

/// Fit diagnostics written alongside the model file.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FitReport {
    pub penalty: &'static str,
    /// The Huber threshold actually used, if any.
    pub delta: Option<f64>,
    pub irls_iterations: usize,
    /// Sample ids whose IRLS weight multiplier fell below one.
    pub flagged_samples: Vec<usize>,
    pub residual_norm_mean: f64,
    pub residual_norm_max: f64,
    /// Node-phase indices where |μ| > 10, a diagnostic only.
    pub mu_out_of_range: Vec<usize>,
}

/// Per-element affine decomposition of the residual: ε[k,m] = c[k,m] − μ_m·d[k,m].
///
/// Constant-power: c = 1 − v/v̂_l, d = v/v̂_u − v/v̂_l. With ZIP loads the
/// voltage ratios are additionally scaled by A(|v̂|,v_nom)/A(|v|,v_nom).
fn residual_coefficients(
    samples: &[OperatingSample],
    anchors: &AnchorPair,
    zip: Option<&ZipLoadSpec>,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let n = anchors.v_hat_u.len();
    if anchors.v_hat_l.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: anchors.v_hat_l.len(),
        });
    }
    for m in 0..n {
        if anchors.v_hat_u[m].norm() == 0.0 || anchors.v_hat_l[m].norm() == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "anchor voltage is zero at node-phase {m}"
            )));
        }
    }
    if let Some(z) = zip {
        if z.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: z.len(),
            });
        }
    }
    let k = samples.len();
    let mut c = DMatrix::<Complex64>::zeros(k, n);
    let mut d = DMatrix::<Complex64>::zeros(k, n);
    let one = Complex64::new(1.0, 0.0);
    for (row, sample) in samples.iter().enumerate() {
        if sample.v_l.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: sample.v_l.len(),
            });
        }
        for m in 0..n {
            let v = sample.v_l[m];
            if v.norm() == 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "sample {} voltage is zero at node-phase {m}",
                    sample.id
                )));
            }
            let (ratio_u, ratio_l) = match zip {
                None => (one, one),
                Some(z) => {
                    let a_v = z.voltage_factor(m, v.norm());
                    if a_v.abs() < 1e-12 {
                        return Err(Error::InvalidParameter(format!(
                            "zip voltage factor vanishes at sample {} node-phase {m}",
                            sample.id
                        )));
                    }
                    let a_u = z.voltage_factor(m, anchors.v_hat_u[m].norm());
                    let a_l = z.voltage_factor(m, anchors.v_hat_l[m].norm());
                    (
                        Complex64::new(a_u / a_v, 0.0),
                        Complex64::new(a_l / a_v, 0.0),
                    )
                }
            };
            let term_u = v / anchors.v_hat_u[m] * ratio_u;
            let term_l = v / anchors.v_hat_l[m] * ratio_l;
            c[(row, m)] = one - term_l;
            d[(row, m)] = term_u - term_l;
        }
    }
    Ok((c, d))
}

/// Residual matrix ε(v, μ) for the given blend coefficients.
pub fn residuals(
    samples: &[OperatingSample],
    anchors: &AnchorPair,
    mu: &DVector<f64>,
    zip: Option<&ZipLoadSpec>,
) -> Result<ResidualMatrix> {
    let (c, d) = residual_coefficients(samples, anchors, zip)?;
    if mu.len() != c.ncols() {
        return Err(Error::DimensionMismatch {
            expected: c.ncols(),
            got: mu.len(),
        });
    }
    let eps = DMatrix::from_fn(c.nrows(), c.ncols(), |k, m| c[(k, m)] - d[(k, m)] * mu[m]);
    Ok(ResidualMatrix { eps })
}

/// Per-sample residual norm: sum of the moduli across node-phases.
fn row_norms(c: &DMatrix<Complex64>, d: &DMatrix<Complex64>, mu: &DVector<f64>) -> Vec<f64> {
    (0..c.nrows())
        .map(|k| {
            (0..c.ncols())
                .map(|m| (c[(k, m)] - d[(k, m)] * mu[m]).norm())
                .sum()
        })
        .collect()
}

/// Closed-form weighted least-squares per element:
/// μ_m = Σ_k w_k·Re(conj(d)·c) / Σ_k w_k·|d|².
fn weighted_closed_form(
    c: &DMatrix<Complex64>,
    d: &DMatrix<Complex64>,
    weights: &[f64],
) -> Result<DVector<f64>> {
    let n = c.ncols();
    let mut mu = DVector::zeros(n);
    for m in 0..n {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..c.nrows() {
            let w = weights[k];
            num += w * (d[(k, m)].conj() * c[(k, m)]).re;
            den += w * d[(k, m)].norm_sqr();
        }
        if den <= 1e-30 {
            return Err(Error::UnidentifiableElement { index: m });
        }
        mu[m] = num / den;
    }
    Ok(mu)
}

/// Nearest-rank 90th percentile of residual norms, floored away from zero.
fn delta_auto(r: &[f64]) -> f64 {
    let mut sorted = r.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
    let idx = ((sorted.len() as f64) * 0.9).ceil() as usize;
    let idx = idx.clamp(1, sorted.len()) - 1;
    sorted[idx].max(1e-12)
}

/// Fits μ from the training samples.
pub fn fit_mu(
    samples: &[OperatingSample],
    anchors: &AnchorPair,
    opts: &TrainerOptions,
    zip: Option<&ZipLoadSpec>,
) -> Result<(DVector<f64>, FitReport)> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 training samples, got {}",
            samples.len()
        )));
    }
    if let Some(delta) = opts.delta {
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter(
                "huber delta must be positive".into(),
            ));
        }
    }
    let (c, d) = residual_coefficients(samples, anchors, zip)?;
    let base_weights: Vec<f64> = samples
        .iter()
        .map(|s| if opts.use_weights { s.weight } else { 1.0 })
        .collect();
    if base_weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidParameter(
            "sample weights must be non-negative".into(),
        ));
    }

    let mut mu = weighted_closed_form(&c, &d, &base_weights)?;

    let (delta_used, irls_iterations, flagged) = match opts.penalty {
        Penalty::Squared => (None, 0, Vec::new()),
        Penalty::Huber => {
            // With delta unset, the 90th-percentile threshold is re-estimated
            // from the current residuals each sweep: the initial squared fit
            // is itself contaminated by the outliers, so a scale frozen there
            // would stay far too large to suppress them.
            let mut delta = match opts.delta {
                Some(x) => x,
                None => delta_auto(&row_norms(&c, &d, &mu)),
            };
            let mut iterations = 0;
            let mut converged = false;
            let mut flagged = Vec::new();
            while iterations < opts.max_irls_iter {
                iterations += 1;
                let r = row_norms(&c, &d, &mu);
                if opts.delta.is_none() {
                    delta = delta_auto(&r);
                }
                let mut weights = base_weights.clone();
                flagged.clear();
                for (k, rk) in r.iter().enumerate() {
                    if *rk > delta {
                        weights[k] *= delta / rk;
                        flagged.push(samples[k].id);
                    }
                }
                let mu_next = weighted_closed_form(&c, &d, &weights)?;
                let step = (&mu_next - &mu).amax();
                mu = mu_next;
                if step < opts.irls_tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NonConvergence {
                    iterations,
                    detail: "IRLS did not reach tolerance".into(),
                });
            }
            (Some(delta), iterations, flagged)
        }
    };

    let final_norms = row_norms(&c, &d, &mu);
    let mean = final_norms.iter().sum::<f64>() / final_norms.len() as f64;
    let max = final_norms.iter().copied().fold(0.0, f64::max);
    let mu_out_of_range = (0..mu.len()).filter(|m| mu[*m].abs() > 10.0).collect();

    Ok((
        mu,
        FitReport {
            penalty: opts.penalty.as_str(),
            delta: delta_used,
            irls_iterations,
            flagged_samples: flagged,
            residual_norm_mean: mean,
            residual_norm_max: max,
            mu_out_of_range,
        },
    ))
}
