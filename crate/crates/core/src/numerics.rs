use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Floor applied before taking logarithms of probabilities.
pub(crate) const LOG_FLOOR: f64 = 1e-300;

/// `x ln x` with the `0 ln 0 = 0` convention.
pub(crate) fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `ln x` clamped below at [`LOG_FLOOR`], warning once per call site hit.
pub(crate) fn clamped_ln(x: f64, context: &str) -> f64 {
    if x < LOG_FLOOR {
        log::warn!("{context}: probability {x:e} clamped to {LOG_FLOOR:e} before log");
        LOG_FLOOR.ln()
    } else {
        x.ln()
    }
}

/// Ratio of extreme singular values, used for solver diagnostics.
pub(crate) fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub(crate) fn lu_solve(m: DMatrix<f64>, rhs: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let backup = m.clone();
    m.lu().solve(rhs).ok_or_else(|| Error::Singular {
        what,
        condition: condition_estimate(&backup),
    })
}

pub(crate) fn lu_inverse(m: DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let backup = m.clone();
    m.try_inverse().ok_or_else(|| Error::Singular {
        what,
        condition: condition_estimate(&backup),
    })
}

/// Damped pseudo-inverse solve `x = Σ_i v_i (v_iᵀ b) / (λ_i + ε)` for a
/// symmetric positive semidefinite `g`, over the eigenpairs with
/// `λ_i > rcond · λ_max`. Eigenvalues at or below the cutoff are treated as
/// the null space and contribute nothing.
pub(crate) fn damped_lstsq(g: &DMatrix<f64>, b: &DVector<f64>, damping: f64) -> Result<DVector<f64>> {
    const RCOND: f64 = 1e-12;
    if g.nrows() != b.len() || !g.is_square() {
        return Err(Error::DimensionMismatch { expected: g.nrows(), got: b.len() });
    }
    if g.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Domain("least-squares solve on non-finite input".into()));
    }
    let sym = (g + g.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let mut x = DVector::zeros(b.len());
    for (i, lambda) in eig.eigenvalues.iter().enumerate() {
        if *lambda <= RCOND * lmax {
            continue;
        }
        let v = eig.eigenvectors.column(i);
        x += v * (v.dot(b) / (lambda + damping));
    }
    Ok(x)
}

pub(crate) fn mat_sup_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}
