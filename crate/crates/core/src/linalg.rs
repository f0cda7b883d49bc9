//! Linear solvers for kernel calibration.
//!
//! Symmetric Toeplitz systems use a Levinson recursion; general systems use
//! LU with partial pivoting. Every dense solve reports a 1-norm condition
//! estimate so callers can decide to fail or regularise.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition threshold above which a system counts as ill-conditioned.
pub const DEFAULT_COND_LIMIT: f64 = 1e10;

/// What to do when a dense system exceeds the condition limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IllConditionedPolicy {
    /// Return [`Error::IllConditioned`].
    Fail,
    /// Add `lambda = rel * trace / dim` to the diagonal and solve again.
    Ridge { rel: f64 },
}

/// Result of a dense solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub cond: f64,
    /// Ridge parameter actually applied, zero when none.
    pub ridge: f64,
}

/// Solves `T x = b` for the symmetric Toeplitz matrix `T[i][j] = col[|i - j|]`.
///
/// Runs in `O(n^2)`. A vanishing or negative-definite prediction error means
/// the matrix is not positive definite and is reported as ill-conditioned.
pub fn levinson_symmetric(col: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if col.len() < n {
        return Err(Error::ShapeMismatch(format!(
            "Toeplitz column of length {} for system of size {n}",
            col.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = col[0].abs();
    let tiny = scale * 1e-12;
    if !(col[0] > tiny) || !scale.is_finite() {
        return Err(Error::IllConditioned { cond: f64::INFINITY });
    }
    // a: forward prediction filter with a[0] = 1; err: prediction error power.
    let mut a = vec![1.0];
    let mut err = col[0];
    let mut x = vec![b[0] / col[0]];
    for k in 1..n {
        let acc: f64 = (0..k).map(|i| a[i] * col[k - i]).sum();
        let refl = -acc / err;
        let mut next = vec![0.0; k + 1];
        for i in 0..=k {
            let fwd = if i < k { a[i] } else { 0.0 };
            let bwd = if i > 0 { a[k - i] } else { 0.0 };
            next[i] = fwd + refl * bwd;
        }
        err *= 1.0 - refl * refl;
        if !(err > tiny) {
            return Err(Error::IllConditioned {
                cond: scale / err.abs().max(f64::MIN_POSITIVE),
            });
        }
        a = next;
        // Extend the solution with the backward filter (reversed forward filter).
        let resid: f64 = (0..k).map(|i| x[i] * col[k - i]).sum();
        let mu = (b[k] - resid) / err;
        x.push(0.0);
        for i in 0..=k {
            x[i] += mu * a[k - i];
        }
    }
    Ok(x)
}

/// 1-norm condition estimate `||A||_1 ||A^-1||_1`, infinite when singular.
pub fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    match a.clone().try_inverse() {
        Some(inv) => one_norm(a) * one_norm(&inv),
        None => f64::INFINITY,
    }
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `A x = b` by LU, applying `policy` when the condition estimate
/// exceeds `cond_limit`.
pub fn solve_dense(
    a: &DMatrix<f64>,
    b: &[f64],
    cond_limit: f64,
    policy: IllConditionedPolicy,
) -> Result<Solution> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} system with right-hand side of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Undefined("non-finite entry in linear system".into()));
    }
    let rhs = DVector::from_column_slice(b);
    let cond = condition_estimate(a);
    if cond <= cond_limit {
        let x = a.clone().lu().solve(&rhs).ok_or(Error::Singular)?;
        return Ok(Solution {
            x: x.as_slice().to_vec(),
            cond,
            ridge: 0.0,
        });
    }
    match policy {
        IllConditionedPolicy::Fail => Err(Error::IllConditioned { cond }),
        IllConditionedPolicy::Ridge { rel } => {
            let dim = a.nrows().max(1) as f64;
            let lambda = rel * a.trace().abs() / dim;
            if !(lambda > 0.0) {
                return Err(Error::IllConditioned { cond });
            }
            let mut reg = a.clone();
            for i in 0..a.nrows() {
                reg[(i, i)] += lambda;
            }
            let x = reg.lu().solve(&rhs).ok_or(Error::Singular)?;
            Ok(Solution {
                x: x.as_slice().to_vec(),
                cond,
                ridge: lambda,
            })
        }
    }
}
