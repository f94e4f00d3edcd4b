//! Dense symmetric-matrix helpers: half-vectorisation, the duplication
//! matrix, symmetric square roots and guarded covariance inverses.
//!
//! Matrices are plain `nalgebra` dynamic matrices. Functions that expect a
//! symmetric argument check it (to 1e-12 relative) and functions that return
//! a theoretically symmetric result re-symmetrise it as `(M + M') / 2`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition-number cap applied to every covariance inverse.
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

/// Relative tolerance for the symmetry check.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Relative tolerance below zero that eigenvalues may reach and still be
/// treated as rounding noise.
pub const PSD_TOL: f64 = 1e-10;

/// Length of `vech` for a `p × p` matrix.
pub fn vech_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Position of entry `(i, j)` (either triangle) inside `vech` of a `p × p` matrix.
pub fn vech_index(i: usize, j: usize, p: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    // column c starts after p + (p-1) + ... + (p-c+1) entries
    c * (2 * p + 1 - c) / 2 + (r - c)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn check_square(m: &DMatrix<f64>, what: &'static str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::dim(format!("{what} must have dimension >= 1")));
    }
    Ok(m.nrows())
}

pub fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(what, "contains non-finite entries"))
    }
}

/// Square, finite and symmetric to [`SYMMETRY_TOL`] relative.
pub fn check_symmetric(m: &DMatrix<f64>, what: &'static str) -> Result<usize> {
    let p = check_square(m, what)?;
    check_finite(m, what)?;
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * max_abs(m).max(1.0) {
        return Err(Error::NotSymmetric {
            what,
            asymmetry: asym,
        });
    }
    Ok(p)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Lower triangle stacked column by column.
pub fn vech(s: &DMatrix<f64>) -> Result<DVector<f64>> {
    let p = check_symmetric(s, "vech argument")?;
    let mut out = Vec::with_capacity(vech_len(p));
    for j in 0..p {
        for i in j..p {
            out.push(s[(i, j)]);
        }
    }
    Ok(DVector::from_vec(out))
}

/// Inverse of [`vech`].
pub fn unvech(v: &DVector<f64>, p: usize) -> Result<DMatrix<f64>> {
    if p == 0 || v.len() != vech_len(p) {
        return Err(Error::dim(format!(
            "vech of a {p}x{p} matrix has length {}, got {}",
            vech_len(p),
            v.len()
        )));
    }
    let mut s = DMatrix::zeros(p, p);
    let mut k = 0;
    for j in 0..p {
        for i in j..p {
            s[(i, j)] = v[k];
            s[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(s)
}

/// Full column stacking.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// The `p² × p(p+1)/2` matrix `G` with `vec(S) = G · vech(S)` for symmetric `S`.
pub fn duplication_matrix(p: usize) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(Error::invalid("p", "duplication matrix needs p >= 1"));
    }
    let mut g = DMatrix::zeros(p * p, vech_len(p));
    for j in 0..p {
        for i in 0..p {
            g[(j * p + i, vech_index(i, j, p))] = 1.0;
        }
    }
    Ok(g)
}

fn eigen(s: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrize(s))
}

pub fn min_eigenvalue(s: &DMatrix<f64>) -> f64 {
    eigen(s).eigenvalues.min()
}

fn rebuild(e: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(f));
    symmetrize(&(&e.eigenvectors * d * e.eigenvectors.transpose()))
}

/// Symmetric PSD square root `M` with `M·M = S`.
pub fn sym_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(s, "sym_sqrt argument")?;
    let e = eigen(s);
    let scale = e.eigenvalues.amax();
    let min = e.eigenvalues.min();
    if min < -PSD_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveSemiDefinite {
            min_eigenvalue: min,
        });
    }
    Ok(rebuild(&e, |l| l.max(0.0).sqrt()))
}

/// Symmetric square root of `S⁻¹`.
pub fn sym_sqrt_inv(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(s, "sym_sqrt_inv argument")?;
    let e = eigen(s);
    guard_definite(&e, DEFAULT_CONDITION_CAP)?;
    Ok(rebuild(&e, |l| 1.0 / l.sqrt()))
}

fn guard_definite(e: &SymmetricEigen<f64, nalgebra::Dyn>, cap: f64) -> Result<()> {
    let min = e.eigenvalues.min();
    let max = e.eigenvalues.max();
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min,
        });
    }
    let condition = max / min;
    if condition > cap {
        return Err(Error::Singular { condition });
    }
    Ok(())
}

/// Fails unless `s` is symmetric positive definite with condition number below
/// the cap.
pub fn check_spd(s: &DMatrix<f64>, what: &'static str) -> Result<()> {
    check_symmetric(s, what)?;
    guard_definite(&eigen(s), DEFAULT_CONDITION_CAP)
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = check_symmetric(s, "inverse argument")?;
    let chol = guarded_cholesky(s)?;
    Ok(symmetrize(&chol.solve(&DMatrix::identity(p, p))))
}

/// Solves `S X = rhs` for symmetric positive-definite `S`.
pub fn spd_solve(s: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = check_symmetric(s, "solve matrix")?;
    if rhs.nrows() != p {
        return Err(Error::dim(format!(
            "right-hand side has {} rows, matrix is {p}x{p}",
            rhs.nrows()
        )));
    }
    Ok(guarded_cholesky(s)?.solve(rhs))
}

fn guarded_cholesky(s: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let sym = symmetrize(s);
    guard_definite(&SymmetricEigen::new(sym.clone()), DEFAULT_CONDITION_CAP)?;
    nalgebra::Cholesky::new(sym).ok_or(Error::Singular {
        condition: f64::INFINITY,
    })
}

/// `A_xy = Cov(X, Y) · Var(Y)⁻¹`.
pub fn regression_matrix(cov_xy: &DMatrix<f64>, var_y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = check_symmetric(var_y, "var_y")?;
    if cov_xy.ncols() != p {
        return Err(Error::dim(format!(
            "cov_xy has {} columns but var_y is {p}x{p}",
            cov_xy.ncols()
        )));
    }
    // A' = Var(Y)⁻¹ Cov(Y, X)
    Ok(spd_solve(var_y, &cov_xy.transpose())?.transpose())
}

/// Quadratic form `d' S⁻¹ d`.
pub fn inv_quad_form(s: &DMatrix<f64>, d: &DVector<f64>) -> Result<f64> {
    let rhs = DMatrix::from_column_slice(d.len(), 1, d.as_slice());
    let x = spd_solve(s, &rhs)?;
    Ok(d.iter().zip(x.iter()).map(|(a, b)| a * b).sum())
}

/// Rounding repair for a matrix that should be PSD: eigenvalues in
/// `(-1e-10·‖S‖, 0)` are clipped to zero, anything more negative is an error.
pub fn psd_repair(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = symmetrize(s);
    let e = eigen(&s);
    let min = e.eigenvalues.min();
    if min >= 0.0 {
        return Ok(s);
    }
    let scale = e.eigenvalues.amax().max(1.0);
    if min < -PSD_TOL * scale {
        return Err(Error::NotPositiveSemiDefinite {
            min_eigenvalue: min,
        });
    }
    Ok(rebuild(&e, |l| l.max(0.0)))
}

/// Default eigenvalue floor for [`psd_project`]: `1e-8 · trace / p`.
pub fn default_projection_floor(s: &DMatrix<f64>) -> f64 {
    let p = s.nrows().max(1) as f64;
    (1e-8 * s.trace() / p).max(f64::MIN_POSITIVE)
}

/// Eigenvalue clipping at `floor` (default [`default_projection_floor`]).
pub fn psd_project(s: &DMatrix<f64>, floor: Option<f64>) -> DMatrix<f64> {
    let floor = floor.unwrap_or_else(|| default_projection_floor(s));
    rebuild(&eigen(s), |l| l.max(floor))
}
