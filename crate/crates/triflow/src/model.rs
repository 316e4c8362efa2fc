//! Linear voltage models built on the admittance partition.
//!
//! All variants predict complex load voltages as an affine map of injections:
//! the flat model works off a single guessed profile, the trained model blends
//! two anchor profiles per node-phase with learned real coefficients, and the
//! ZIP model folds the loads' voltage dependence into a sensitivity over the
//! change rates λ. A load-independent, purely data-driven blend is kept as the
//! comparison baseline.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::AnchorPair;
use crate::network::AdmittanceSystem;
pub use crate::network::ZipLoadSpec;
use crate::{Error, Result};

/// Trained complex linear model: ṽ = w + sens · conj(s).
#[derive(Debug, Clone)]
pub struct ComplexLinearModel {
    pub w: DVector<Complex64>,
    pub sens: DMatrix<Complex64>,
    pub anchors: AnchorPair,
    /// Diagonal blend coefficients, one real entry per node-phase.
    pub mu: DVector<f64>,
}

impl ComplexLinearModel {
    /// Pure affine prediction, no iteration: ṽ = w + sens · conj(s_l).
    pub fn predict_voltages(&self, s_l: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        if s_l.len() != self.w.len() {
            return Err(Error::DimensionMismatch {
                expected: self.w.len(),
                got: s_l.len(),
            });
        }
        let conj = DVector::from_fn(s_l.len(), |m, _| s_l[m].conj());
        Ok(&self.w + &self.sens * conj)
    }
}

/// ZIP-aware linear model: ṽ = w + sens_lambda · λ.
#[derive(Debug, Clone)]
pub struct ZipLinearModel {
    pub w: DVector<Complex64>,
    pub sens_lambda: DMatrix<Complex64>,
    pub anchors: AnchorPair,
    pub mu: DVector<f64>,
}

impl ZipLinearModel {
    pub fn predict_voltages(&self, lambda: &DVector<f64>) -> Result<DVector<Complex64>> {
        if lambda.len() != self.w.len() {
            return Err(Error::DimensionMismatch {
                expected: self.w.len(),
                got: lambda.len(),
            });
        }
        let lambda_c = DVector::from_fn(lambda.len(), |m, _| Complex64::new(lambda[m], 0.0));
        Ok(&self.w + &self.sens_lambda * lambda_c)
    }
}

/// Real/imaginary components of the approximate nodal current at the
/// linearization point; the coefficients that make p and q linear in the
/// voltage's real and imaginary parts.
#[derive(Debug, Clone)]
pub struct RealCoefficients {
    pub i_re: DVector<f64>,
    pub i_im: DVector<f64>,
}

fn check_nonzero_anchor(v: &DVector<Complex64>, what: &str) -> Result<()> {
    for m in 0..v.len() {
        if v[m].norm() == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "{what} has a zero element at node-phase {m}"
            )));
        }
    }
    Ok(())
}

/// Flat-guess model: sens = yll⁻¹ · diag(conj(v̂))⁻¹, both anchors set to v̂
/// and all blend coefficients one.
pub fn build_flat_model(
    sys: &AdmittanceSystem,
    w: &DVector<Complex64>,
    v_hat: &DVector<Complex64>,
) -> Result<ComplexLinearModel> {
    if v_hat.len() != sys.dim_l() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim_l(),
            got: v_hat.len(),
        });
    }
    check_nonzero_anchor(v_hat, "anchor voltage")?;
    let anchors = AnchorPair {
        v_hat_u: v_hat.clone(),
        v_hat_l: v_hat.clone(),
    };
    build_trained_model(sys, w, &anchors, &DVector::from_element(v_hat.len(), 1.0))
}

/// Element-wise effective anchor: v̂_eff = 1 / (μ/v̂_u + (1−μ)/v̂_l).
///
/// Its conjugate reciprocal equals the diagonal blend used by the trained
/// sensitivity, so this is the voltage profile the model implicitly assumes.
pub fn effective_anchor_voltage(
    mu: &DVector<f64>,
    anchors: &AnchorPair,
) -> Result<DVector<Complex64>> {
    let n = anchors.v_hat_u.len();
    if mu.len() != n || anchors.v_hat_l.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: mu.len().max(anchors.v_hat_l.len()),
        });
    }
    check_nonzero_anchor(&anchors.v_hat_u, "light anchor")?;
    check_nonzero_anchor(&anchors.v_hat_l, "heavy anchor")?;
    let mut out = DVector::from_element(n, Complex64::new(0.0, 0.0));
    for m in 0..n {
        let r = mu[m] / anchors.v_hat_u[m] + (1.0 - mu[m]) / anchors.v_hat_l[m];
        if r.norm() == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "combined anchor reciprocal vanishes at node-phase {m}"
            )));
        }
        out[m] = Complex64::new(1.0, 0.0) / r;
    }
    Ok(out)
}

/// Trained model: sens = yll⁻¹ [diag(μ) diag(conj(v̂_u))⁻¹ + diag(1−μ) diag(conj(v̂_l))⁻¹].
pub fn build_trained_model(
    sys: &AdmittanceSystem,
    w: &DVector<Complex64>,
    anchors: &AnchorPair,
    mu: &DVector<f64>,
) -> Result<ComplexLinearModel> {
    let n = sys.dim_l();
    if w.len() != n || anchors.v_hat_u.len() != n || mu.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: w.len().min(anchors.v_hat_u.len()).min(mu.len()),
        });
    }
    check_nonzero_anchor(&anchors.v_hat_u, "light anchor")?;
    check_nonzero_anchor(&anchors.v_hat_l, "heavy anchor")?;
    let mut rhs = DMatrix::<Complex64>::zeros(n, n);
    for m in 0..n {
        rhs[(m, m)] = mu[m] / anchors.v_hat_u[m].conj() + (1.0 - mu[m]) / anchors.v_hat_l[m].conj();
    }
    let sens = sys.solve_yll_matrix(&rhs)?;
    Ok(ComplexLinearModel {
        w: w.clone(),
        sens,
        anchors: anchors.clone(),
        mu: mu.clone(),
    })
}

/// ZIP model: sens_lambda = yll⁻¹ [diag(μ)·B(v̂_u) + diag(1−μ)·B(v̂_l)] diag(conj(s_nom))
/// with B(v̂)_m = A(|v̂_m|, v_nom_m) / conj(v̂_m).
pub fn build_zip_model(
    sys: &AdmittanceSystem,
    w: &DVector<Complex64>,
    anchors: &AnchorPair,
    mu: &DVector<f64>,
    zip: &ZipLoadSpec,
) -> Result<ZipLinearModel> {
    let n = sys.dim_l();
    if w.len() != n || anchors.v_hat_u.len() != n || mu.len() != n || zip.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: w.len().min(anchors.v_hat_u.len()).min(zip.len()),
        });
    }
    check_nonzero_anchor(&anchors.v_hat_u, "light anchor")?;
    check_nonzero_anchor(&anchors.v_hat_l, "heavy anchor")?;
    let mut rhs = DMatrix::<Complex64>::zeros(n, n);
    for m in 0..n {
        let b_u = zip.voltage_factor(m, anchors.v_hat_u[m].norm()) / anchors.v_hat_u[m].conj();
        let b_l = zip.voltage_factor(m, anchors.v_hat_l[m].norm()) / anchors.v_hat_l[m].conj();
        rhs[(m, m)] = (mu[m] * b_u + (1.0 - mu[m]) * b_l) * zip.s_nom()[m].conj();
    }
    let sens_lambda = sys.solve_yll_matrix(&rhs)?;
    Ok(ZipLinearModel {
        w: w.clone(),
        sens_lambda,
        anchors: anchors.clone(),
        mu: mu.clone(),
    })
}

/// Approximate nodal current at the linearization point:
/// ĩ = yl0·v0 + yll·v̂_eff, split into real and imaginary parts.
pub fn real_coefficients(
    sys: &AdmittanceSystem,
    v0: &DVector<Complex64>,
    v_hat_eff: &DVector<Complex64>,
) -> Result<RealCoefficients> {
    if v0.len() != sys.dim_slack() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim_slack(),
            got: v0.len(),
        });
    }
    if v_hat_eff.len() != sys.dim_l() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim_l(),
            got: v_hat_eff.len(),
        });
    }
    let i_tilde = &sys.yl0 * v0 + &sys.yll * v_hat_eff;
    Ok(RealCoefficients {
        i_re: i_tilde.map(|c| c.re),
        i_im: i_tilde.map(|c| c.im),
    })
}

/// Linear nodal power from the approximate-current coefficients:
/// p = i_re∘v_re + i_im∘v_im, q = i_re∘v_im − i_im∘v_re.
pub fn nodal_power_real(
    coeffs: &RealCoefficients,
    v_re: &DVector<f64>,
    v_im: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = coeffs.i_re.len();
    if v_re.len() != n || v_im.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: v_re.len().min(v_im.len()),
        });
    }
    let p = DVector::from_fn(n, |m, _| {
        coeffs.i_re[m] * v_re[m] + coeffs.i_im[m] * v_im[m]
    });
    let q = DVector::from_fn(n, |m, _| {
        coeffs.i_re[m] * v_im[m] - coeffs.i_im[m] * v_re[m]
    });
    Ok((p, q))
}

/// Load-independent purely data-driven prediction: the direct element-wise
/// blend ṽ_d = μ∘v̂_u + (1−μ)∘v̂_l.
pub fn pure_dd_predict(mu: &DVector<f64>, anchors: &AnchorPair) -> DVector<Complex64> {
    DVector::from_fn(anchors.v_hat_u.len(), |m, _| {
        anchors.v_hat_u[m] * mu[m] + anchors.v_hat_l[m] * (1.0 - mu[m])
    })
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

/// Either trained model variant, as stored on disk.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Power(ComplexLinearModel),
    Zip(ZipLinearModel),
}

impl TrainedModel {
    pub fn mu(&self) -> &DVector<f64> {
        match self {
            TrainedModel::Power(m) => &m.mu,
            TrainedModel::Zip(m) => &m.mu,
        }
    }

    pub fn anchors(&self) -> &AnchorPair {
        match self {
            TrainedModel::Power(m) => &m.anchors,
            TrainedModel::Zip(m) => &m.anchors,
        }
    }
}

/// Where a stored model came from.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub feeder_sha256: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub trainer: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    kind: String,
    w: Vec<[f64; 2]>,
    /// Row-major complex sensitivity; maps conj(s) for "power", λ for "zip".
    sens: Vec<Vec<[f64; 2]>>,
    v_hat_u: Vec<[f64; 2]>,
    v_hat_l: Vec<[f64; 2]>,
    mu: Vec<f64>,
    provenance: Provenance,
}

fn to_pairs(v: &DVector<Complex64>) -> Vec<[f64; 2]> {
    v.iter().map(|c| [c.re, c.im]).collect()
}

fn from_pairs(v: &[[f64; 2]]) -> DVector<Complex64> {
    DVector::from_iterator(v.len(), v.iter().map(|p| Complex64::new(p[0], p[1])))
}

/// Serializes a trained model with its provenance to JSON.
pub fn save_model<P: AsRef<Path>>(
    path: P,
    model: &TrainedModel,
    provenance: &Provenance,
) -> Result<()> {
    let (kind, w, sens, anchors, mu) = match model {
        TrainedModel::Power(m) => ("power", &m.w, &m.sens, &m.anchors, &m.mu),
        TrainedModel::Zip(m) => ("zip", &m.w, &m.sens_lambda, &m.anchors, &m.mu),
    };
    let file = ModelFile {
        kind: kind.to_string(),
        w: to_pairs(w),
        sens: (0..sens.nrows())
            .map(|r| {
                (0..sens.ncols())
                    .map(|c| [sens[(r, c)].re, sens[(r, c)].im])
                    .collect()
            })
            .collect(),
        v_hat_u: to_pairs(&anchors.v_hat_u),
        v_hat_l: to_pairs(&anchors.v_hat_l),
        mu: mu.iter().copied().collect(),
        provenance: provenance.clone(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(Error::from)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Loads a model file, returning the model and its provenance.
pub fn load_model<P: AsRef<Path>>(path: P) -> Result<(TrainedModel, Provenance)> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    let n = file.w.len();
    if file.mu.len() != n || file.v_hat_u.len() != n || file.v_hat_l.len() != n {
        return Err(Error::Format("model file arrays disagree in length".into()));
    }
    if file.sens.len() != n || file.sens.iter().any(|r| r.len() != n) {
        return Err(Error::Format("model sens matrix must be n x n".into()));
    }
    let sens = DMatrix::from_fn(n, n, |r, c| {
        Complex64::new(file.sens[r][c][0], file.sens[r][c][1])
    });
    let anchors = AnchorPair {
        v_hat_u: from_pairs(&file.v_hat_u),
        v_hat_l: from_pairs(&file.v_hat_l),
    };
    let w = from_pairs(&file.w);
    let mu = DVector::from_iterator(n, file.mu.iter().copied());
    let model = match file.kind.as_str() {
        "power" => TrainedModel::Power(ComplexLinearModel {
            w,
            sens,
            anchors,
            mu,
        }),
        "zip" => TrainedModel::Zip(ZipLinearModel {
            w,
            sens_lambda: sens,
            anchors,
            mu,
        }),
        other => {
            return Err(Error::Format(format!("unknown model kind '{other}'")));
        }
    };
    Ok((model, file.provenance))
}

/// Hex SHA-256 of raw bytes, for feeder provenance.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
