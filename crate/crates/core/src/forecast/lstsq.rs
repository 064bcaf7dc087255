//! Dense least squares with rank detection and an optional ridge fallback.

use nalgebra::DMatrix;

/// Penalty used when a rank-deficient design is allowed to fall back to ridge.
pub const RIDGE_PENALTY: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LstsqError {
    /// Rank below column count and no ridge fallback allowed.
    RankDeficient { rank: usize, columns: usize },
    /// Ridge system could not be factorized either.
    Singular,
}

#[derive(Debug, Clone)]
pub(crate) struct Fit {
    /// `columns x outputs`
    pub coef: DMatrix<f64>,
    pub ridge: bool,
}

/// Numerical rank of `x` with the usual `s_max * max(rows, cols) * eps` cut-off.
#[cfg(test)]
pub(crate) fn rank(x: &DMatrix<f64>) -> usize {
    let sv = x.clone().svd(false, false).singular_values;
    let s_max = sv.iter().copied().fold(0.0, f64::max);
    let tol = s_max * x.nrows().max(x.ncols()) as f64 * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Solves `min ||X B - Y||` for `B`.
///
/// Full-rank designs are solved through the SVD. Rank-deficient designs
/// return an error unless `allow_ridge`, in which case
/// `(X'X + RIDGE_PENALTY I) B = X'Y` is solved instead.
pub(crate) fn solve(x: &DMatrix<f64>, y: &DMatrix<f64>, allow_ridge: bool) -> Result<Fit, LstsqError> {
    debug_assert_eq!(x.nrows(), y.nrows());
    let columns = x.ncols();
    let svd = x.clone().svd(true, true);
    let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = s_max * x.nrows().max(columns) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank == columns && x.nrows() >= columns {
        let coef = svd.solve(y, tol).map_err(|_| LstsqError::Singular)?;
        return Ok(Fit { coef, ridge: false });
    }
    if !allow_ridge {
        return Err(LstsqError::RankDeficient { rank, columns });
    }
    let xt = x.transpose();
    let gram = &xt * x + DMatrix::<f64>::identity(columns, columns) * RIDGE_PENALTY;
    let rhs = &xt * y;
    let coef = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram.lu().solve(&rhs).ok_or(LstsqError::Singular)?,
    };
    Ok(Fit { coef, ridge: true })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        // y = 2 + 3x
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DMatrix::from_column_slice(4, 1, &[2.0, 5.0, 8.0, 11.0]);
        let fit = solve(&x, &y, false).unwrap();
        assert!((fit.coef[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((fit.coef[(1, 0)] - 3.0).abs() < 1e-12);
        assert!(!fit.ridge);
    }

    #[test]
    fn collinear_needs_ridge() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert_eq!(rank(&x), 1);
        assert_eq!(solve(&x, &y, false).unwrap_err(), LstsqError::RankDeficient { rank: 1, columns: 2 });
        let fit = solve(&x, &y, true).unwrap();
        assert!(fit.ridge);
        let pred = &x * &fit.coef;
        assert!((pred - &y).abs().max() < 1e-6);
    }
}
