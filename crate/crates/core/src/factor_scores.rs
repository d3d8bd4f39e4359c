//! Bartlett factor scores for the time-invariant block.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RsssError};

/// U2 x O2 weights with `weights * lambda2 = I`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorScoreWeights {
    pub f2: DMatrix<f64>,
}

/// `F2 = (L' R^-1 L)^-1 L' R^-1` for diagonal `R` given as its diagonal.
pub fn bartlett_weights(lambda2: &DMatrix<f64>, r2: &DVector<f64>) -> Result<FactorScoreWeights> {
    if lambda2.nrows() != r2.len() {
        return Err(RsssError::Estimation(format!(
            "lambda2 has {} rows but r2 has {} entries",
            lambda2.nrows(),
            r2.len()
        )));
    }
    if let Some(k) = r2.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(RsssError::Estimation(format!(
            "residual variance of item {} is not positive ({})",
            k + 1,
            r2[k]
        )));
    }
    if let Some(k) = (0..lambda2.ncols()).find(|&k| lambda2.column(k).iter().all(|&v| v == 0.0)) {
        return Err(RsssError::Estimation(format!("factor {} has no non-zero loading", k + 1)));
    }
    // L' R^-1 : scale columns of L' by 1/r
    let mut lt_rinv = lambda2.transpose();
    for (j, mut col) in lt_rinv.column_iter_mut().enumerate() {
        col /= r2[j];
    }
    let info = &lt_rinv * lambda2;
    let chol = info.clone().cholesky().ok_or_else(|| {
        let weakest = (0..info.nrows())
            .min_by(|&a, &b| info[(a, a)].total_cmp(&info[(b, b)]))
            .unwrap_or(0);
        RsssError::Estimation(format!(
            "L' R^-1 L is singular; factor {} is not identified by its indicators",
            weakest + 1
        ))
    })?;
    Ok(FactorScoreWeights {
        f2: chol.solve(&lt_rinv),
    })
}

/// Scores `F2 y2_i` for every row of `y2`.
pub fn score(y2: &[DVector<f64>], weights: &FactorScoreWeights) -> Vec<DVector<f64>> {
    y2.iter().map(|y| &weights.f2 * y).collect()
}

/// Log-density of every `y2` row under the measurement model
/// `y2 ~ N(0, L P2 L' + R2)`.
pub fn measurement_loglik(
    y2: &[DVector<f64>],
    lambda2: &DMatrix<f64>,
    r2: &DVector<f64>,
    p2: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let mut cov = lambda2 * p2 * lambda2.transpose();
    for (k, v) in r2.iter().enumerate() {
        cov[(k, k)] += v;
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| RsssError::Estimation("implied covariance of the between items is not positive definite".into()))?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let constant = r2.len() as f64 * (2.0 * std::f64::consts::PI).ln() + log_det;
    Ok(y2.iter().map(|y| -0.5 * (constant + y.dot(&chol.solve(y)))).collect())
}
