//! Sparse symmetric linear algebra: CSR storage, matrix-vector products, and
//! a Jacobi-preconditioned conjugate gradient solver for SPD systems.
//!
//! The matrices handled here are small (desk-scale FEM operators) and
//! structurally symmetric: whenever (p, q) is stored, (q, p) is stored too.
//! Everything is single-threaded and deterministic; the same `(matrix, rhs,
//! tolerance)` triple always yields bitwise-identical solutions.

use thiserror::Error;

/// Default relative residual tolerance. Far below the O(h), O(Δt)
/// discretization errors the convergence studies measure, so solver error
/// never pollutes a rate.
pub const DEFAULT_RTOL: f64 = 1e-10;

/// Default iteration budget is `DEFAULT_MAX_ITER_PER_DOF`·n.
pub const DEFAULT_MAX_ITER_PER_DOF: usize = 10;

#[derive(Debug, Error)]
pub enum SolveError {
    /// CG exhausted its iteration budget. `residual` is relative to ‖b‖₂.
    #[error("conjugate gradient did not converge within {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    /// A non-finite value or non-positive curvature appeared, meaning the
    /// matrix is not SPD or the system is numerically broken.
    #[error("conjugate gradient breakdown at iteration {iteration}")]
    Breakdown { iteration: usize },
}

/// Compressed sparse row matrix. Immutable after construction; columns within
/// each row are sorted and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n`×`n` matrix from (row, col, value) triplets, summing
    /// duplicates. Duplicate entries are accumulated in insertion order, so
    /// assembly loops that emit mirrored local contributions produce exactly
    /// symmetric matrices.
    ///
    /// Panics if any index is out of range.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        for &(r, c, _) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) out of range for n={n}");
        }
        // Stable sort keeps equal (row, col) keys in insertion order.
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));

        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &k in &order {
            let (r, c, v) = triplets[k];
            if row_ptr[r + 1] > 0 && *col_idx.last().unwrap() == c && values.len() == row_ptr[r + 1]
            {
                // Same (row, col) as the previous sorted triplet: accumulate.
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] = values.len();
            }
        }
        // Rows with no entries inherit the running offset.
        for r in 0..n {
            if row_ptr[r + 1] < row_ptr[r] {
                row_ptr[r + 1] = row_ptr[r];
            }
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    /// Builds a diagonal matrix from the given entries.
    pub fn from_diagonal(diag: &[f64]) -> Self {
        let triplets: Vec<(usize, usize, f64)> =
            diag.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        CsrMatrix::from_triplets(diag.len(), &triplets)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored value at (row, col), or 0.0 if outside the sparsity pattern.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (cols, vals) = self.row(row);
        match cols.binary_search(&col) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// y = M·x. Panics on dimension mismatch.
    pub fn spmv(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "spmv dimension mismatch: {} vs {}", x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for (r, yr) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            *yr = acc;
        }
        y
    }

    /// vᵀ·M·v, the quadratic form used by the coercivity checks.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        self.spmv(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// self + scale·other with a merged sparsity pattern. Used to form the
    /// backward Euler step matrix R + Δt·A(tₙ).
    pub fn add_scaled(&self, other: &CsrMatrix, scale: f64) -> CsrMatrix {
        assert_eq!(self.n, other.n, "add_scaled dimension mismatch");
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(col_idx.capacity());
        for r in 0..self.n {
            let (ca, va) = self.row(r);
            let (cb, vb) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ca.len() || j < cb.len() {
                let next_a = ca.get(i).copied().unwrap_or(usize::MAX);
                let next_b = cb.get(j).copied().unwrap_or(usize::MAX);
                if next_a < next_b {
                    col_idx.push(next_a);
                    values.push(va[i]);
                    i += 1;
                } else if next_b < next_a {
                    col_idx.push(next_b);
                    values.push(scale * vb[j]);
                    j += 1;
                } else {
                    col_idx.push(next_a);
                    values.push(va[i] + scale * vb[j]);
                    i += 1;
                    j += 1;
                }
            }
            row_ptr[r + 1] = values.len();
        }
        CsrMatrix { n: self.n, row_ptr, col_idx, values }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    /// Exact (bitwise) symmetry check.
    pub fn is_symmetric(&self) -> bool {
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if self.get(c, r) != v {
                    return false;
                }
            }
        }
        true
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves M·x = b for SPD `M` by Jacobi-preconditioned conjugate gradients,
/// stopping when ‖M·x − b‖₂ ≤ rtol·‖b‖₂.
///
/// `b = 0` returns `x = 0` without iterating. Requires `rtol ∈ (0, 1)`.
pub fn solve_spd(
    m: &CsrMatrix,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, SolveError> {
    solve_spd_from(m, b, None, rtol, max_iter)
}

/// `solve_spd` with an optional initial guess (warm start). The time stepper
/// passes the previous state, which roughly halves the CG iterations on fine
/// grids without affecting the converged tolerance.
pub fn solve_spd_from(
    m: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    rtol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, SolveError> {
    assert_eq!(b.len(), m.n(), "solve dimension mismatch");
    assert!(rtol > 0.0 && rtol < 1.0, "rtol must lie in (0, 1), got {rtol}");

    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; m.n()]);
    }

    // Jacobi preconditioning needs a strictly positive, finite diagonal;
    // NaN entries fail the finiteness test.
    let diag = m.diagonal();
    if diag.iter().any(|&d| d <= 0.0 || !d.is_finite()) {
        return Err(SolveError::Breakdown { iteration: 0 });
    }

    let mut x = match x0 {
        Some(g) => {
            assert_eq!(g.len(), m.n(), "initial guess dimension mismatch");
            g.to_vec()
        }
        None => vec![0.0; m.n()],
    };
    let mut r: Vec<f64> = if x0.is_some() {
        let mx = m.spmv(&x);
        b.iter().zip(&mx).map(|(bi, mi)| bi - mi).collect()
    } else {
        b.to_vec()
    };

    let mut r_norm = norm(&r);
    if r_norm <= rtol * b_norm {
        return Ok(x);
    }

    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);

    for it in 1..=max_iter {
        let ap = m.spmv(&p);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(SolveError::Breakdown { iteration: it });
        }
        let alpha = rz / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        r_norm = norm(&r);
        if !r_norm.is_finite() {
            return Err(SolveError::Breakdown { iteration: it });
        }
        if r_norm <= rtol * b_norm {
            return Ok(x);
        }
        for i in 0..z.len() {
            z[i] = r[i] / diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }

    Err(SolveError::NonConvergence { iterations: max_iter, residual: r_norm / b_norm })
}
