//! Exact nonlinear power flow by fixed-point (Z-bus) iteration.
//!
//! The iteration solves v = w + yll⁻¹ (conj(s) ./ conj(v)) by repeated
//! substitution from the zero-injection profile w, reusing the single LU
//! factorization held by the admittance system. Solutions are certified by a
//! power-mismatch check that shares no code with the iteration.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::network::{AdmittanceSystem, ZipLoadSpec};
use crate::{Error, Result};

/// Mismatch ceiling a returned solution must satisfy, in p.u.
pub const RESIDUAL_LIMIT: f64 = 1e-8;

/// Any iterate magnitude below this aborts the solve as a voltage collapse.
const COLLAPSE_GUARD: f64 = 1e-6;

/// Fixed-point stopping parameters.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Maximum infinity-norm voltage update between sweeps, p.u.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "max_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Converged power-flow state.
#[derive(Debug, Clone)]
pub struct PfSolution {
    pub v_l: DVector<Complex64>,
    pub iterations: usize,
    /// Infinity norm of the nodal power mismatch at `v_l`, p.u.
    pub residual: f64,
}

fn inf_norm(v: &DVector<Complex64>) -> f64 {
    v.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Infinity norm of s_spec − diag(v)·conj(i_l) with i_l = yl0·v0 + yll·v.
///
/// Evaluates the nodal balance by direct matrix-vector products against the
/// stored blocks; it never touches the LU factorization the iteration uses.
pub fn power_mismatch(
    sys: &AdmittanceSystem,
    v0: &DVector<Complex64>,
    v_l: &DVector<Complex64>,
    s_l: &DVector<Complex64>,
) -> f64 {
    let i_l = &sys.yl0 * v0 + &sys.yll * v_l;
    let mut worst = 0.0_f64;
    for m in 0..v_l.len() {
        let s = v_l[m] * i_l[m].conj();
        worst = worst.max((s_l[m] - s).norm());
    }
    worst
}

fn check_dims(sys: &AdmittanceSystem, w: &DVector<Complex64>, n: usize) -> Result<()> {
    if w.len() != sys.dim_l() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim_l(),
            got: w.len(),
        });
    }
    if n != sys.dim_l() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim_l(),
            got: n,
        });
    }
    Ok(())
}

/// Residual of the returned iterate via the blocks and w only; algebraically
/// equal to [`power_mismatch`] because yl0·v0 = −yll·w.
fn residual_from_w(
    sys: &AdmittanceSystem,
    w: &DVector<Complex64>,
    v_l: &DVector<Complex64>,
    s_l: &DVector<Complex64>,
) -> f64 {
    let i_l = &sys.yll * (v_l - w);
    let mut worst = 0.0_f64;
    for m in 0..v_l.len() {
        worst = worst.max((s_l[m] - v_l[m] * i_l[m].conj()).norm());
    }
    worst
}

/// Solves the constant-power fixed point for injections `s_l`.
pub fn solve_fixed_point(
    sys: &AdmittanceSystem,
    w: &DVector<Complex64>,
    s_l: &DVector<Complex64>,
    opts: &SolveOptions,
) -> Result<PfSolution> {
    opts.validate()?;
    check_dims(sys, w, s_l.len())?;
    solve_iterate(sys, w, opts, |_v| Ok(s_l.clone()))
}

/// Solves the ZIP fixed point: injections are recomputed from the current
/// voltage magnitudes each sweep, s = λ ∘ s_nom ∘ A(|v|, v_nom).
pub fn solve_zip_fixed_point(
    sys: &AdmittanceSystem,
    w: &DVector<Complex64>,
    zip: &ZipLoadSpec,
    lambda: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<PfSolution> {
    opts.validate()?;
    check_dims(sys, w, zip.len())?;
    if lambda.len() != zip.len() {
        return Err(Error::DimensionMismatch {
            expected: zip.len(),
            got: lambda.len(),
        });
    }
    solve_iterate(sys, w, opts, |v| zip.injections(lambda, v))
}

fn solve_iterate<F>(
    sys: &AdmittanceSystem,
    w: &DVector<Complex64>,
    opts: &SolveOptions,
    injections_at: F,
) -> Result<PfSolution>
where
    F: Fn(&DVector<Complex64>) -> Result<DVector<Complex64>>,
{
    let n = sys.dim_l();
    let mut v = w.clone();
    let mut s = injections_at(&v)?;
    for iter in 1..=opts.max_iter {
        for m in 0..n {
            if v[m].norm() < COLLAPSE_GUARD {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    detail: format!("voltage collapse at node-phase {m}"),
                });
            }
        }
        let rhs = DVector::from_fn(n, |m, _| s[m].conj() / v[m].conj());
        let v_next = w + sys.solve_yll(&rhs)?;
        let update = inf_norm(&(&v_next - &v));
        v = v_next;
        s = injections_at(&v)?;
        if update < opts.tol {
            let residual = residual_from_w(sys, w, &v, &s);
            if residual > RESIDUAL_LIMIT {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    detail: format!(
                        "update converged but power mismatch {residual:.3e} exceeds {RESIDUAL_LIMIT:.1e}"
                    ),
                });
            }
            return Ok(PfSolution {
                v_l: v,
                iterations: iter,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        detail: "maximum iterations reached".into(),
    })
}
