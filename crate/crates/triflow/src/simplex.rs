//! Dense two-phase primal simplex for small polyhedral projections.
//!
//! Solves min cᵀx subject to A·x ≤ b with free x. Free variables are split
//! into differences of nonnegatives, rows with negative right-hand sides get
//! artificial variables, and phase one drives the artificial sum to zero.
//! Pivot selection uses Bland's rule throughout, which rules out cycling.

use nalgebra::{DMatrix, DVector};

const TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub(crate) enum LpResult {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded { ray: Vec<f64> },
}

/// Row-major dense tableau.
struct Tableau {
    a: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    nrows: usize,
    ncols: usize,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.ncols + j]
    }

    fn pivot(&mut self, row: usize, col: usize, obj: &mut [f64], obj_val: &mut f64) {
        let ncols = self.ncols;
        let piv = self.a[row * ncols + col];
        let inv = 1.0 / piv;
        for j in 0..ncols {
            self.a[row * ncols + j] *= inv;
        }
        self.rhs[row] *= inv;
        for i in 0..self.nrows {
            if i == row {
                continue;
            }
            let factor = self.a[i * ncols + col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..ncols {
                let pivot_entry = self.a[row * ncols + j];
                self.a[i * ncols + j] -= factor * pivot_entry;
            }
            self.rhs[i] -= factor * self.rhs[row];
        }
        let factor = obj[col];
        if factor != 0.0 {
            for j in 0..ncols {
                obj[j] -= factor * self.a[row * ncols + j];
            }
            *obj_val -= factor * self.rhs[row];
        }
        self.basis[row] = col;
    }

    /// Bland iteration to optimality. Returns the entering column on
    /// unboundedness.
    fn run(&mut self, obj: &mut [f64], obj_val: &mut f64, usable: usize) -> Option<usize> {
        loop {
            let mut entering = None;
            for (j, &o) in obj.iter().enumerate().take(usable) {
                if o < -TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(e) = entering else {
                return None;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.nrows {
                let a_ie = self.at(i, e);
                if a_ie > TOL {
                    let ratio = self.rhs[i] / a_ie;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((best_i, best_ratio)) => {
                            if ratio < best_ratio - TOL
                                || ((ratio - best_ratio).abs() <= TOL
                                    && self.basis[i] < self.basis[best_i])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            match leave {
                Some((row, _)) => self.pivot(row, e, obj, obj_val),
                None => return Some(e),
            }
        }
    }
}

/// Minimizes cᵀx over {x : a·x ≤ b} with x free.
pub(crate) fn minimize(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> LpResult {
    let m = a.nrows();
    let n = a.ncols();
    debug_assert_eq!(c.len(), n);

    // Columns: u (n), v (n) for x = u − v, slack (m), artificials appended.
    let n_split = 2 * n;
    let n_art = (0..m).filter(|&i| b[i] < 0.0).count();
    let ncols = n_split + m + n_art;

    let mut t = Tableau {
        a: vec![0.0; m * ncols],
        rhs: vec![0.0; m],
        basis: vec![0; m],
        nrows: m,
        ncols,
    };
    let mut art_idx = 0;
    for i in 0..m {
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t.a[i * ncols + j] = flip * a[(i, j)];
            t.a[i * ncols + n + j] = -flip * a[(i, j)];
        }
        t.a[i * ncols + n_split + i] = flip;
        t.rhs[i] = flip * b[i];
        if flip < 0.0 {
            let col = n_split + m + art_idx;
            t.a[i * ncols + col] = 1.0;
            t.basis[i] = col;
            art_idx += 1;
        } else {
            t.basis[i] = n_split + i;
        }
    }

    // Phase one: minimize the artificial sum.
    if n_art > 0 {
        let mut obj = vec![0.0; ncols];
        for k in 0..n_art {
            obj[n_split + m + k] = 1.0;
        }
        let mut obj_val = 0.0;
        for i in 0..m {
            if t.basis[i] >= n_split + m {
                for j in 0..ncols {
                    obj[j] -= t.at(i, j);
                }
                obj_val -= t.rhs[i];
            }
        }
        // All columns participate in phase one.
        if t.run(&mut obj, &mut obj_val, ncols).is_some() {
            // The artificial sum is bounded below by zero, so this cannot
            // trigger; defensively treat it as infeasible.
            return LpResult::Infeasible;
        }
        if -obj_val > 1e-7 {
            return LpResult::Infeasible;
        }
        // Drive leftover artificials out of the basis; drop redundant rows.
        let mut drop_rows = Vec::new();
        for i in 0..m {
            if t.basis[i] >= n_split + m {
                let mut pivot_col = None;
                for j in 0..n_split + m {
                    if t.at(i, j).abs() > TOL {
                        pivot_col = Some(j);
                        break;
                    }
                }
                match pivot_col {
                    Some(j) => {
                        let mut dummy = vec![0.0; ncols];
                        let mut dummy_val = 0.0;
                        t.pivot(i, j, &mut dummy, &mut dummy_val);
                    }
                    None => drop_rows.push(i),
                }
            }
        }
        if !drop_rows.is_empty() {
            for &i in drop_rows.iter().rev() {
                let start = i * ncols;
                t.a.drain(start..start + ncols);
                t.rhs.remove(i);
                t.basis.remove(i);
                t.nrows -= 1;
            }
        }
    }

    // Phase two over the structural and slack columns only.
    let usable = n_split + m;
    let mut obj = vec![0.0; ncols];
    for j in 0..n {
        obj[j] = c[j];
        obj[n + j] = -c[j];
    }
    let mut obj_val = 0.0;
    for i in 0..t.nrows {
        let bj = t.basis[i];
        let cb = if bj < n {
            c[bj]
        } else if bj < n_split {
            -c[bj - n]
        } else {
            0.0
        };
        if cb != 0.0 {
            for j in 0..ncols {
                obj[j] -= cb * t.at(i, j);
            }
            obj_val -= cb * t.rhs[i];
        }
    }

    if let Some(e) = t.run(&mut obj, &mut obj_val, usable) {
        // Unbounded: ray has +1 on the entering column, basic adjustments
        // elsewhere; map split components back to x space.
        let mut dir = vec![0.0; usable];
        dir[e] = 1.0;
        for i in 0..t.nrows {
            if t.basis[i] < usable {
                dir[t.basis[i]] = -t.at(i, e);
            }
        }
        let ray: Vec<f64> = (0..n).map(|j| dir[j] - dir[n + j]).collect();
        return LpResult::Unbounded { ray };
    }

    let mut vals = vec![0.0; usable];
    for i in 0..t.nrows {
        if t.basis[i] < usable {
            vals[t.basis[i]] = t.rhs[i];
        }
    }
    let x: Vec<f64> = (0..n).map(|j| vals[j] - vals[n + j]).collect();
    let value = (0..n).map(|j| c[j] * x[j]).sum();
    LpResult::Optimal { x, value }
}
