//! Reactive-power support range at the point of common coupling.
//!
//! For a balanced feeder modeled single-phase, the operational constraints
//! (voltage bands, injection boxes, branch current caps) are linearized around
//! the trained model's effective anchor voltage into a polyhedron over the
//! stacked real/imaginary load voltages. The attainable PCC reactive power is
//! the projection of that polyhedron onto the exact linear functional q₁(x),
//! computed either by two LP solves or by Fourier–Motzkin elimination.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Deserialize;

use crate::model::{nodal_power_real, RealCoefficients};
use crate::network::System;
use crate::pf::{solve_fixed_point, SolveOptions};
use crate::simplex::{minimize, LpResult};
use crate::{Error, Result};

/// Hard cap on the number of variables Fourier–Motzkin elimination accepts.
pub const FME_VARIABLE_LIMIT: usize = 12;

/// Feasibility slack applied when checking certificates against rows.
pub const CERTIFICATE_TOL: f64 = 1e-9;

/// Per-node operational bounds; absent fields are unbounded.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeLimits {
    #[serde(default)]
    pub v_min: Option<f64>,
    #[serde(default)]
    pub v_max: Option<f64>,
    #[serde(default)]
    pub p_min: Option<f64>,
    #[serde(default)]
    pub p_max: Option<f64>,
    #[serde(default)]
    pub q_min: Option<f64>,
    #[serde(default)]
    pub q_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchLimits {
    #[serde(default)]
    pub i_max: Option<f64>,
}

/// Operational limits keyed by node id and by "from-to" branch key.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperationalLimits {
    pub nodes: BTreeMap<String, NodeLimits>,
    #[serde(default)]
    pub branches: BTreeMap<String, BranchLimits>,
}

impl OperationalLimits {
    pub fn from_json_str(text: &str) -> Result<OperationalLimits> {
        let limits: OperationalLimits = serde_json::from_str(text)?;
        limits.validate()?;
        Ok(limits)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<OperationalLimits> {
        let text = std::fs::read_to_string(path)?;
        OperationalLimits::from_json_str(&text)
    }

    fn validate(&self) -> Result<()> {
        for (id, n) in &self.nodes {
            if let Some(vmin) = n.v_min {
                if !(vmin > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "node {id}: v_min must be positive"
                    )));
                }
            }
            for (lo, hi, what) in [
                (n.v_min, n.v_max, "v"),
                (n.p_min, n.p_max, "p"),
                (n.q_min, n.q_max, "q"),
            ] {
                if let (Some(lo), Some(hi)) = (lo, hi) {
                    if lo > hi {
                        return Err(Error::InvalidParameter(format!(
                            "node {id}: {what}_min exceeds {what}_max"
                        )));
                    }
                }
            }
        }
        for (key, b) in &self.branches {
            if let Some(imax) = b.i_max {
                if !(imax >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "branch {key}: i_max must be non-negative"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Branch limit by either key orientation.
    pub fn branch(&self, from: &str, to: &str) -> Option<&BranchLimits> {
        self.branches
            .get(&format!("{from}-{to}"))
            .or_else(|| self.branches.get(&format!("{to}-{from}")))
    }
}

/// How the quadratic magnitude terms are linearized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VoltageLinearization {
    /// |v|² ≈ Re(v)·v̂_re + Im(v)·v̂_im, exact only at v = v̂.
    #[default]
    Printed,
    /// First-order tangent: |v|² ≈ 2·Re(conj(v̂)·v) − |v̂|².
    Tangent,
}

/// Which factor of s = diag(v)·conj(i) is frozen at the linearization point
/// when the injection box constraints are written over the voltage variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InjectionLinearization {
    /// s̃_j = v̂_j · conj(i_j(v)) with the nodal current i(v) = yl0·v0 + yll·v
    /// kept variable. The rows couple the whole network, so the feasible
    /// voltages stay physical and bounded; this is the default.
    #[default]
    FrozenVoltage,
    /// s̃_j = v_j · conj(ĩ_j) with the current frozen at the linearization
    /// point. Each row touches a single node's voltage only; retained for
    /// comparison.
    FrozenCurrent,
}

/// Linearization switches for the polyhedron construction.
#[derive(Debug, Clone, Copy, Default)]
pub struct QrangeOptions {
    pub voltage: VoltageLinearization,
    pub injection: InjectionLinearization,
}

/// Inequality system A·x ≤ b over stacked (v_re, v_im) load-node variables,
/// with the PCC reactive power as a linear objective functional.
#[derive(Debug, Clone)]
pub struct Polyhedron {
    pub a_sys: DMatrix<f64>,
    pub b_sys: DVector<f64>,
    /// q₁(x) = objective · x + offset.
    pub objective: DVector<f64>,
    pub offset: f64,
    /// node id → (v_re column, v_im column).
    pub var_index: BTreeMap<String, (usize, usize)>,
    pub row_labels: Vec<String>,
}

impl Polyhedron {
    pub fn num_vars(&self) -> usize {
        self.a_sys.ncols()
    }

    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.objective.dot(x) + self.offset
    }

    /// Largest row violation a·x − b over all rows (≤ 0 means feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.a_sys.nrows() {
            let lhs: f64 = (0..self.a_sys.ncols())
                .map(|j| self.a_sys[(i, j)] * x[j])
                .sum();
            worst = worst.max(lhs - self.b_sys[i]);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeStatus {
    Bounded,
    Infeasible,
    Unbounded,
}

/// Projection outcome: the attainable PCC reactive interval with optimizer
/// certificates when the projection method produces them.
#[derive(Debug, Clone)]
pub struct RangeResult {
    pub q_lo: f64,
    pub q_hi: f64,
    pub x_lo: Option<DVector<f64>>,
    pub x_hi: Option<DVector<f64>>,
    pub status: RangeStatus,
    /// Direction of unbounded improvement when status is Unbounded.
    pub ray: Option<DVector<f64>>,
}

struct RowBuilder {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    labels: Vec<String>,
    ncols: usize,
}

impl RowBuilder {
    fn new(ncols: usize) -> Self {
        RowBuilder {
            rows: Vec::new(),
            rhs: Vec::new(),
            labels: Vec::new(),
            ncols,
        }
    }

    fn push(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64, label: String) {
        let mut row = vec![0.0; self.ncols];
        for (j, v) in coeffs {
            row[j] += v;
        }
        self.rows.push(row);
        self.rhs.push(rhs);
        self.labels.push(label);
    }
}

/// Per-node injection rows: s_j(x) = offset_j + Σ_col coef · x_col, split into
/// real (p) and imaginary (q) parts.
struct InjectionRows {
    p: Vec<Vec<(usize, f64)>>,
    q: Vec<Vec<(usize, f64)>>,
    p_offset: Vec<f64>,
    q_offset: Vec<f64>,
}

fn injection_rows(
    system: &System,
    coeffs: &RealCoefficients,
    v_hat_eff: &DVector<Complex64>,
    injection: InjectionLinearization,
) -> InjectionRows {
    let n = system.dim_l();
    let mut rows = InjectionRows {
        p: vec![Vec::new(); n],
        q: vec![Vec::new(); n],
        p_offset: vec![0.0; n],
        q_offset: vec![0.0; n],
    };
    match injection {
        InjectionLinearization::FrozenCurrent => {
            // p = ire·v_re + iim·v_im, q = ire·v_im − iim·v_re per node.
            for j in 0..n {
                let (ir, ii) = (coeffs.i_re[j], coeffs.i_im[j]);
                rows.p[j] = vec![(2 * j, ir), (2 * j + 1, ii)];
                rows.q[j] = vec![(2 * j, -ii), (2 * j + 1, ir)];
            }
        }
        InjectionLinearization::FrozenVoltage => {
            // s_j = v̂_j·conj(i_j(v)); i(v) = yl0·v0 + yll·v. With
            // v̂ = a+jb and yll[j,m] = g+jb':
            //   conj(i_j) = Σ (g·v_re + b'·v_im) − j(g·v_im − b'·v_re) + slack terms.
            let i0 = &system.sys.yl0 * &system.v0;
            for j in 0..n {
                let vh = v_hat_eff[j];
                let s_slack = vh * i0[j].conj();
                rows.p_offset[j] = s_slack.re;
                rows.q_offset[j] = s_slack.im;
                for m in 0..n {
                    let y = system.sys.yll[(j, m)];
                    // v̂_j·conj(y·v_m) expanded over (v_re_m, v_im_m).
                    let cre = vh * y.conj();
                    // contribution: cre·(v_re_m − j·v_im_m)
                    rows.p[j].push((2 * m, cre.re));
                    rows.p[j].push((2 * m + 1, cre.im));
                    rows.q[j].push((2 * m, cre.im));
                    rows.q[j].push((2 * m + 1, -cre.re));
                }
            }
        }
    }
    rows
}

/// Injections implied by a voltage certificate under the chosen linearization.
pub fn implied_injections(
    system: &System,
    coeffs: &RealCoefficients,
    v_hat_eff: &DVector<Complex64>,
    x: &DVector<f64>,
    injection: InjectionLinearization,
) -> Result<DVector<Complex64>> {
    let n = system.dim_l();
    if x.len() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            got: x.len(),
        });
    }
    match injection {
        InjectionLinearization::FrozenCurrent => {
            let v_re = DVector::from_fn(n, |m, _| x[2 * m]);
            let v_im = DVector::from_fn(n, |m, _| x[2 * m + 1]);
            let (p, q) = nodal_power_real(coeffs, &v_re, &v_im)?;
            Ok(DVector::from_fn(n, |m, _| Complex64::new(p[m], q[m])))
        }
        InjectionLinearization::FrozenVoltage => {
            let v = DVector::from_fn(n, |m, _| Complex64::new(x[2 * m], x[2 * m + 1]));
            let i = &system.sys.yl0 * &system.v0 + &system.sys.yll * v;
            Ok(DVector::from_fn(n, |m, _| v_hat_eff[m] * i[m].conj()))
        }
    }
}

/// Builds the linearized operational polyhedron for a balanced single-phase
/// feeder, with q₁ as the exact linear objective over the fixed slack voltage.
pub fn build_constraints(
    system: &System,
    coeffs: &RealCoefficients,
    v_hat_eff: &DVector<Complex64>,
    limits: &OperationalLimits,
    options: QrangeOptions,
) -> Result<Polyhedron> {
    for node in &system.feeder.nodes {
        if node.phases.len() != 1 {
            return Err(Error::InvalidParameter(format!(
                "node {} carries {} phases; the range evaluation requires a \
                 balanced single-phase model",
                node.id,
                node.phases.len()
            )));
        }
    }
    let n = system.dim_l();
    if coeffs.i_re.len() != n || v_hat_eff.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: coeffs.i_re.len().min(v_hat_eff.len()),
        });
    }
    let slack_id = system.feeder.slack().id.clone();
    let v0 = system.v0[0];

    let mut var_index = BTreeMap::new();
    for (m, (node, _)) in system.sys.index.l_entries().iter().enumerate() {
        var_index.insert(node.clone(), (2 * m, 2 * m + 1));
    }

    let mut builder = RowBuilder::new(2 * n);
    let inj = injection_rows(system, coeffs, v_hat_eff, options.injection);

    for (m, (node, _)) in system.sys.index.l_entries().iter().enumerate() {
        let lim = limits
            .nodes
            .get(node)
            .ok_or_else(|| Error::Format(format!("limits file has no entry for node {node}")))?;
        let (col_re, col_im) = var_index[node];
        let vh = v_hat_eff[m];

        // Voltage magnitude rows per the chosen |v|² linearization.
        let (vc_re, vc_im, v_shift) = match options.voltage {
            VoltageLinearization::Printed => (vh.re, vh.im, 0.0),
            VoltageLinearization::Tangent => (2.0 * vh.re, 2.0 * vh.im, vh.norm_sqr()),
        };
        if let Some(vmax) = lim.v_max {
            builder.push(
                vec![(col_re, vc_re), (col_im, vc_im)],
                vmax * vmax + v_shift,
                format!("v_max[{node}]"),
            );
        }
        if let Some(vmin) = lim.v_min {
            builder.push(
                vec![(col_re, -vc_re), (col_im, -vc_im)],
                -(vmin * vmin + v_shift),
                format!("v_min[{node}]"),
            );
        }

        // Injection rows through the linearized power map.
        let negate = |row: &[(usize, f64)]| -> Vec<(usize, f64)> {
            row.iter().map(|(j, v)| (*j, -*v)).collect()
        };
        if let Some(pmax) = lim.p_max {
            builder.push(
                inj.p[m].clone(),
                pmax - inj.p_offset[m],
                format!("p_max[{node}]"),
            );
        }
        if let Some(pmin) = lim.p_min {
            builder.push(
                negate(&inj.p[m]),
                inj.p_offset[m] - pmin,
                format!("p_min[{node}]"),
            );
        }
        if let Some(qmax) = lim.q_max {
            builder.push(
                inj.q[m].clone(),
                qmax - inj.q_offset[m],
                format!("q_max[{node}]"),
            );
        }
        if let Some(qmin) = lim.q_min {
            builder.push(
                negate(&inj.q[m]),
                inj.q_offset[m] - qmin,
                format!("q_min[{node}]"),
            );
        }
    }

    // Branch current rows: |i|² ≈ (g²+b²)·[Re(d)·d̂_re + Im(d)·d̂_im] with
    // d = v_from − v_to; slack terms are constants folded into the rhs.
    for branch in &system.feeder.branches {
        let y = branch.y_series[(0, 0)];
        let mag2 = y.norm_sqr();
        let vh_at = |id: &str| -> Complex64 {
            if id == slack_id {
                v0
            } else {
                let m = var_index[id].0 / 2;
                v_hat_eff[m]
            }
        };
        let dh = vh_at(&branch.from) - vh_at(&branch.to);
        let (c_re, c_im, shift) = match options.voltage {
            VoltageLinearization::Printed => (dh.re, dh.im, 0.0),
            VoltageLinearization::Tangent => (2.0 * dh.re, 2.0 * dh.im, dh.norm_sqr()),
        };

        let mut coeffs_row: Vec<(usize, f64)> = Vec::new();
        let mut constant = -shift * mag2;
        for (id, sign) in [(&branch.from, 1.0), (&branch.to, -1.0)] {
            if *id == slack_id {
                constant += sign * mag2 * (c_re * v0.re + c_im * v0.im);
            } else {
                let (col_re, col_im) = var_index[id.as_str()];
                coeffs_row.push((col_re, sign * mag2 * c_re));
                coeffs_row.push((col_im, sign * mag2 * c_im));
            }
        }

        // Lower bound 0 ≤ |i|² always applies; upper bound when a limit is given.
        let key = format!("{}-{}", branch.from, branch.to);
        builder.push(
            coeffs_row.iter().map(|(j, v)| (*j, -*v)).collect(),
            constant,
            format!("i_nonneg[{key}]"),
        );
        if let Some(bl) = limits.branch(&branch.from, &branch.to) {
            if let Some(imax) = bl.i_max {
                builder.push(
                    coeffs_row.clone(),
                    imax * imax - constant,
                    format!("i_max[{key}]"),
                );
            }
        }
    }

    // Exact PCC reactive power: q₁ = Im(v₀ · conj(y00·v₀ + y0l·v_L)).
    let mut objective = DVector::zeros(2 * n);
    for (m, (node, _)) in system.sys.index.l_entries().iter().enumerate() {
        let k = v0 * system.sys.y0l[(0, m)].conj();
        let (col_re, col_im) = var_index[node];
        objective[col_re] = k.im;
        objective[col_im] = -k.re;
    }
    let offset = (v0 * (system.sys.y00[(0, 0)] * v0).conj()).im;

    let nrows = builder.rows.len();
    let a_sys = DMatrix::from_fn(nrows, 2 * n, |i, j| builder.rows[i][j]);
    let b_sys = DVector::from_iterator(nrows, builder.rhs.iter().copied());
    Ok(Polyhedron {
        a_sys,
        b_sys,
        objective,
        offset,
        var_index,
        row_labels: builder.labels,
    })
}

/// Projects onto the objective by two runs of the dense two-phase simplex.
pub fn project_interval_lp(poly: &Polyhedron) -> Result<RangeResult> {
    let min_side = minimize(&poly.a_sys, &poly.b_sys, &poly.objective);
    let neg_obj = -poly.objective.clone();
    let max_side = minimize(&poly.a_sys, &poly.b_sys, &neg_obj);

    if matches!(min_side, LpResult::Infeasible) || matches!(max_side, LpResult::Infeasible) {
        return Ok(RangeResult {
            q_lo: f64::NAN,
            q_hi: f64::NAN,
            x_lo: None,
            x_hi: None,
            status: RangeStatus::Infeasible,
            ray: None,
        });
    }

    let mut status = RangeStatus::Bounded;
    let mut ray = None;
    let (q_lo, x_lo) = match min_side {
        LpResult::Optimal { x, value } => (value + poly.offset, Some(DVector::from_vec(x))),
        LpResult::Unbounded { ray: r } => {
            status = RangeStatus::Unbounded;
            ray = Some(DVector::from_vec(r));
            (f64::NEG_INFINITY, None)
        }
        LpResult::Infeasible => unreachable!(),
    };
    let (q_hi, x_hi) = match max_side {
        LpResult::Optimal { x, value } => (-value + poly.offset, Some(DVector::from_vec(x))),
        LpResult::Unbounded { ray: r } => {
            status = RangeStatus::Unbounded;
            if ray.is_none() {
                ray = Some(DVector::from_vec(r));
            }
            (f64::INFINITY, None)
        }
        LpResult::Infeasible => unreachable!(),
    };

    for (x, q) in [(&x_lo, q_lo), (&x_hi, q_hi)] {
        let Some(x) = x else { continue };
        let violation = poly.max_violation(x);
        if violation > CERTIFICATE_TOL {
            return Err(Error::InvalidParameter(format!(
                "simplex certificate violates a row by {violation:.3e}"
            )));
        }
        let drift = (poly.objective_value(x) - q).abs();
        if drift > CERTIFICATE_TOL {
            return Err(Error::InvalidParameter(format!(
                "certificate objective drifts from the reported bound by {drift:.3e}"
            )));
        }
    }

    Ok(RangeResult {
        q_lo,
        q_hi,
        x_lo,
        x_hi,
        status,
        ray,
    })
}

#[derive(Clone)]
struct FmeRow {
    coef: Vec<f64>,
    rhs: f64,
    /// Bitmask of the original rows this inequality was combined from;
    /// Chernikov's rule prunes any combination touching more than k+1
    /// originals after k eliminations.
    ancestors: u128,
}

enum Pruned {
    Rows(Vec<FmeRow>),
    Infeasible,
}

/// Projects by Fourier–Motzkin elimination after adjoining t = q₁(x); the
/// surviving one-variable rows bound the interval. No certificates.
pub fn project_interval_fme(poly: &Polyhedron) -> Result<RangeResult> {
    let n = poly.num_vars();
    if n > FME_VARIABLE_LIMIT {
        return Err(Error::VariableBudget {
            vars: n,
            limit: FME_VARIABLE_LIMIT,
        });
    }
    let n_original = poly.a_sys.nrows() + 2;
    // The ancestor bookkeeping uses a u128 mask; beyond that the Chernikov
    // rule is skipped and only syntactic pruning applies.
    let track_ancestors = n_original <= 128;

    // Variables 0..n are x, variable n is t.
    let mut rows: Vec<FmeRow> = Vec::new();
    for i in 0..poly.a_sys.nrows() {
        let mut coef = vec![0.0; n + 1];
        for j in 0..n {
            coef[j] = poly.a_sys[(i, j)];
        }
        rows.push(FmeRow {
            coef,
            rhs: poly.b_sys[i],
            ancestors: if track_ancestors { 1u128 << i } else { 0 },
        });
    }
    // t − obj·x ≤ offset and obj·x − t ≤ −offset.
    let mut up = vec![0.0; n + 1];
    let mut dn = vec![0.0; n + 1];
    for j in 0..n {
        up[j] = -poly.objective[j];
        dn[j] = poly.objective[j];
    }
    up[n] = 1.0;
    dn[n] = -1.0;
    let base = poly.a_sys.nrows();
    rows.push(FmeRow {
        coef: up,
        rhs: poly.offset,
        ancestors: if track_ancestors { 1u128 << base } else { 0 },
    });
    rows.push(FmeRow {
        coef: dn,
        rhs: -poly.offset,
        ancestors: if track_ancestors {
            1u128 << (base + 1)
        } else {
            0
        },
    });

    let tol = 1e-11;
    let mut active: Vec<usize> = (0..n).collect();
    let mut eliminated = 0usize;
    while !active.is_empty() {
        // Eliminate the variable with the smallest pos×neg fan-out.
        let mut best = (usize::MAX, active[0]);
        for &v in &active {
            let pos = rows.iter().filter(|r| r.coef[v] > tol).count();
            let neg = rows.iter().filter(|r| r.coef[v] < -tol).count();
            let fan = pos * neg;
            if fan < best.0 {
                best = (fan, v);
            }
        }
        let v = best.1;
        active.retain(|&u| u != v);
        eliminated += 1;

        let mut pos = Vec::new();
        let mut neg = Vec::new();
        let mut keep = Vec::new();
        for row in rows.drain(..) {
            if row.coef[v] > tol {
                pos.push(row);
            } else if row.coef[v] < -tol {
                neg.push(row);
            } else {
                keep.push(row);
            }
        }
        for p in &pos {
            for q in &neg {
                let ancestors = p.ancestors | q.ancestors;
                if track_ancestors && ancestors.count_ones() as usize > eliminated + 1 {
                    continue;
                }
                let wp = 1.0 / p.coef[v];
                let wn = -1.0 / q.coef[v];
                let mut coef = vec![0.0; n + 1];
                for j in 0..=n {
                    coef[j] = p.coef[j] * wp + q.coef[j] * wn;
                }
                coef[v] = 0.0;
                keep.push(FmeRow {
                    coef,
                    rhs: p.rhs * wp + q.rhs * wn,
                    ancestors,
                });
            }
        }
        match prune_rows(keep, n, tol) {
            Pruned::Rows(r) => rows = r,
            Pruned::Infeasible => return Ok(infeasible_range()),
        }
    }

    // Remaining rows constrain t alone.
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for row in &rows {
        let a = row.coef[n];
        if a > tol {
            upper = upper.min(row.rhs / a);
        } else if a < -tol {
            lower = lower.max(row.rhs / a);
        } else if row.rhs < -CERTIFICATE_TOL {
            return Ok(infeasible_range());
        }
    }
    if lower > upper + CERTIFICATE_TOL {
        return Ok(infeasible_range());
    }
    let status = if lower.is_finite() && upper.is_finite() {
        RangeStatus::Bounded
    } else {
        RangeStatus::Unbounded
    };
    Ok(RangeResult {
        q_lo: lower,
        q_hi: upper,
        x_lo: None,
        x_hi: None,
        status,
        ray: None,
    })
}

fn infeasible_range() -> RangeResult {
    RangeResult {
        q_lo: f64::NAN,
        q_hi: f64::NAN,
        x_lo: None,
        x_hi: None,
        status: RangeStatus::Infeasible,
        ray: None,
    }
}

/// Normalizes rows, drops constant non-binding rows, removes duplicates and
/// syntactically dominated rows (same direction, larger bound).
fn prune_rows(rows: Vec<FmeRow>, n: usize, tol: f64) -> Pruned {
    let mut normalized: Vec<FmeRow> = Vec::with_capacity(rows.len());
    for mut row in rows {
        let scale = row.coef.iter().map(|c| c.abs()).fold(0.0, f64::max);
        if scale <= tol {
            if row.rhs < -CERTIFICATE_TOL {
                return Pruned::Infeasible;
            }
            continue;
        }
        for c in row.coef.iter_mut() {
            *c /= scale;
        }
        row.rhs /= scale;
        normalized.push(row);
    }
    let mut kept: Vec<FmeRow> = Vec::with_capacity(normalized.len());
    'outer: for row in normalized {
        for k in kept.iter_mut() {
            let same = (0..=n).all(|j| (row.coef[j] - k.coef[j]).abs() <= 1e-12);
            if same {
                if row.rhs < k.rhs {
                    k.rhs = row.rhs;
                    k.ancestors = row.ancestors;
                }
                continue 'outer;
            }
        }
        kept.push(row);
    }
    Pruned::Rows(kept)
}

// ---------------------------------------------------------------------------
// Nonlinear verification of the approximate range
// ---------------------------------------------------------------------------

/// Exact PCC reactive power at a solved operating point.
pub fn pcc_reactive_power(system: &System, v_l: &DVector<Complex64>) -> f64 {
    let (i0, _) = system.sys.currents(&system.v0, v_l);
    (system.v0[0] * i0[0].conj()).im
}

/// Worst relative violation of the operational limits at a solved point.
/// Returns 0.0 when every limit holds.
pub fn worst_limit_violation(
    system: &System,
    limits: &OperationalLimits,
    v_l: &DVector<Complex64>,
    s_l: &DVector<Complex64>,
) -> f64 {
    let mut worst = 0.0_f64;
    let mut push = |value: f64, lo: Option<f64>, hi: Option<f64>, scale: f64| {
        if let Some(lo) = lo {
            worst = worst.max((lo - value) / scale);
        }
        if let Some(hi) = hi {
            worst = worst.max((value - hi) / scale);
        }
    };
    for (m, (node, _)) in system.sys.index.l_entries().iter().enumerate() {
        if let Some(lim) = limits.nodes.get(node) {
            push(v_l[m].norm(), lim.v_min, lim.v_max, 1.0);
            push(s_l[m].re, lim.p_min, lim.p_max, s_l[m].re.abs().max(1.0));
            push(s_l[m].im, lim.q_min, lim.q_max, s_l[m].im.abs().max(1.0));
        }
    }
    let slack_id = &system.feeder.slack().id;
    for branch in &system.feeder.branches {
        let Some(bl) = limits.branch(&branch.from, &branch.to) else {
            continue;
        };
        let Some(imax) = bl.i_max else { continue };
        let volt = |id: &str| -> Complex64 {
            if id == slack_id.as_str() {
                system.v0[0]
            } else {
                let m = system
                    .sys
                    .index
                    .l_entries()
                    .iter()
                    .position(|(n, _)| n == id)
                    .expect("known node");
                v_l[m]
            }
        };
        let y = branch.y_series[(0, 0)];
        let vf = volt(&branch.from);
        let vt = volt(&branch.to);
        let mut i_from = y * (vf - vt);
        let mut i_to = y * (vt - vf);
        if let Some(sh) = &branch.y_shunt_from {
            i_from += sh[(0, 0)] * vf;
        }
        if let Some(sh) = &branch.y_shunt_to {
            i_to += sh[(0, 0)] * vt;
        }
        let mag = i_from.norm().max(i_to.norm());
        if mag > imax {
            worst = worst.max((mag - imax) / imax.max(1.0));
        }
    }
    worst
}

/// Accurate range by bisection: starting from the box-midpoint injection
/// profile, walk toward each LP certificate's implied profile, solving the
/// exact power flow and keeping the furthest point that violates no limit.
/// Returns (q_lo, q_hi) from the exact solutions at those points.
pub fn refine_range_nonlinear(
    system: &System,
    coeffs: &RealCoefficients,
    v_hat_eff: &DVector<Complex64>,
    limits: &OperationalLimits,
    range: &RangeResult,
    injection: InjectionLinearization,
) -> Result<(f64, f64)> {
    let n = system.dim_l();
    let mut s_mid = DVector::from_element(n, Complex64::new(0.0, 0.0));
    for (m, (node, _)) in system.sys.index.l_entries().iter().enumerate() {
        let lim = limits
            .nodes
            .get(node)
            .ok_or_else(|| Error::Format(format!("limits file has no entry for node {node}")))?;
        let (Some(p_min), Some(p_max), Some(q_min), Some(q_max)) =
            (lim.p_min, lim.p_max, lim.q_min, lim.q_max)
        else {
            return Err(Error::InvalidParameter(format!(
                "node {node}: finite p/q boxes are required for the accurate range"
            )));
        };
        s_mid[m] = Complex64::new((p_min + p_max) / 2.0, (q_min + q_max) / 2.0);
    }

    let implied = |x: &DVector<f64>| -> Result<DVector<Complex64>> {
        implied_injections(system, coeffs, v_hat_eff, x, injection)
    };

    let feasible = |s: &DVector<Complex64>| -> Option<f64> {
        let sol = solve_fixed_point(&system.sys, &system.w, s, &SolveOptions::default()).ok()?;
        if worst_limit_violation(system, limits, &sol.v_l, s) > 1e-9 {
            return None;
        }
        Some(pcc_reactive_power(system, &sol.v_l))
    };

    if feasible(&s_mid).is_none() {
        return Err(Error::Infeasible);
    }

    let refine = |x: &Option<DVector<f64>>| -> Result<f64> {
        let x = x
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("range has no certificate".into()))?;
        let s_target = implied(x)?;
        // Bisect the largest feasible step toward (and slightly past) the
        // certificate profile.
        let mut lo = 0.0_f64;
        let mut hi = 1.2_f64;
        let mut q_best = feasible(&s_mid).expect("midpoint verified feasible");
        for _ in 0..40 {
            let alpha = 0.5 * (lo + hi);
            let s = DVector::from_fn(n, |m, _| s_mid[m] + (s_target[m] - s_mid[m]) * alpha);
            match feasible(&s) {
                Some(q) => {
                    q_best = q;
                    lo = alpha;
                }
                None => hi = alpha,
            }
        }
        Ok(q_best)
    };

    let q_lo = refine(&range.x_lo)?;
    let q_hi = refine(&range.x_hi)?;
    Ok((q_lo, q_hi))
}
