//! Symmetric sparse matrices and a Jacobi-preconditioned conjugate gradient
//! solver.

use crate::error::{Error, Result};
use crate::real::Real;

/// Symmetric matrix in compressed sparse row layout. Both triangles are
/// stored so that a row gives every neighbour of a degree of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix<T> {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SparseSymMatrix<T> {
    /// Sums duplicate `(row, col, value)` entries. The caller supplies both
    /// `(i, j)` and `(j, i)` for off-diagonal couplings.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        let mut count = vec![0usize; dim + 1];
        for &(i, j, _) in triplets {
            if i >= dim || j >= dim {
                return Err(Error::invalid(format!("entry ({i}, {j}) outside a {dim}x{dim} matrix")));
            }
            count[i + 1] += 1;
        }
        for i in 0..dim {
            count[i + 1] += count[i];
        }
        let mut next = count.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![T::zero(); triplets.len()];
        for &(i, j, v) in triplets {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::with_capacity(triplets.len() / 2);
        let mut values = Vec::with_capacity(triplets.len() / 2);
        row_ptr.push(0);
        let mut scratch: Vec<(usize, T)> = Vec::new();
        for i in 0..dim {
            scratch.clear();
            scratch.extend((count[i]..count[i + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_unstable_by_key(|e| e.0);
            for &(j, v) in &scratch {
                if col_idx.len() > row_ptr[i] && *col_idx.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(SparseSymMatrix {
            dim,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(a: &[Vec<T>]) -> Result<Self> {
        let n = a.len();
        let mut trip = Vec::new();
        for (i, row) in a.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid("dense matrix is not square"));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != T::zero() {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, &trip)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (c, v) = self.row(i);
        c.binary_search(&j).map_or(T::zero(), |k| v[k])
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum();
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.dim];
        self.matvec_into(x, &mut y);
        y
    }

    /// `max |a_ij - a_ji|` relative to `max |a_ij|`.
    pub fn symmetry_defect(&self) -> T {
        let mut worst = T::zero();
        let mut scale = T::zero();
        for i in 0..self.dim {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                scale = scale.max(a.abs());
                worst = worst.max((a - self.get(j, i)).abs());
            }
        }
        if scale == T::zero() {
            T::zero()
        } else {
            worst / scale
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolveConfig<T> {
    /// Stop when `||b - A x|| <= tolerance * ||b||`.
    pub tolerance: T,
    /// `None` means `10 * dim`.
    pub max_iterations: Option<usize>,
}

impl<T: Real> Default for LinearSolveConfig<T> {
    fn default() -> Self {
        LinearSolveConfig {
            tolerance: T::lit(1e-10),
            max_iterations: None,
        }
    }
}

impl<T: Real> LinearSolveConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > T::zero() && self.tolerance < T::one()) {
            return Err(Error::invalid("linear solver tolerance must lie in (0, 1)"));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::invalid("linear solver needs at least one iteration"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats<T> {
    pub iterations: usize,
    pub relative_residual: T,
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Solves `A x = b` by diagonally preconditioned conjugate gradients from a
/// zero initial guess.
pub fn solve_spd<T: Real>(a: &SparseSymMatrix<T>, b: &[T], cfg: &LinearSolveConfig<T>) -> Result<Vec<T>> {
    let mut x = vec![T::zero(); a.dim()];
    pcg(a, b, &mut x, cfg)?;
    Ok(x)
}

/// Conjugate gradients starting from the contents of `x`.
pub fn pcg<T: Real>(a: &SparseSymMatrix<T>, b: &[T], x: &mut [T], cfg: &LinearSolveConfig<T>) -> Result<CgStats<T>> {
    cfg.validate()?;
    let n = a.dim();
    if b.len() != n || x.len() != n {
        return Err(Error::invalid(format!(
            "dimension mismatch: matrix {n}, rhs {}, guess {}",
            b.len(),
            x.len()
        )));
    }
    let bnorm = dot(b, b).sqrt();
    if bnorm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(CgStats {
            iterations: 0,
            relative_residual: T::zero(),
        });
    }
    let diag = a.diagonal();
    if let Some(i) = diag.iter().position(|&d| !(d > T::zero())) {
        return Err(Error::NotSpd {
            pivot: i,
            value: diag[i].as_f64(),
        });
    }
    let inv_diag: Vec<T> = diag.iter().map(|&d| T::one() / d).collect();
    let mut r = a.matvec(x);
    r.iter_mut().zip(b).for_each(|(ri, &bi)| *ri = bi - *ri);
    let mut res = dot(&r, &r).sqrt() / bnorm;
    if res <= cfg.tolerance {
        return Ok(CgStats {
            iterations: 0,
            relative_residual: res,
        });
    }
    let mut z: Vec<T> = r.iter().zip(&inv_diag).map(|(&ri, &d)| ri * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![T::zero(); n];
    let max_it = cfg.max_iterations.unwrap_or(10 * n.max(1));
    for it in 1..=max_it {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(Error::NotSpd {
                pivot: it,
                value: pap.as_f64(),
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dot(&r, &r).sqrt() / bnorm;
        if res <= cfg.tolerance {
            return Ok(CgStats {
                iterations: it,
                relative_residual: res,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure {
        iterations: max_it,
        residual: res.as_f64(),
    })
}
