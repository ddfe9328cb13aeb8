//! Robust covariance and Wald tests for GEE fits.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use crate::association::LorAlpha;
use crate::data::LongDataset;
use crate::error::{Error, Result};
use crate::gee::{all_subject_terms, GeeFit, InversionMethod};
use crate::ipf::IpfConfig;
use crate::marginal::MarginalModel;

#[derive(Debug, Clone, PartialEq)]
pub struct Covariances {
    /// `S0^-1 S1 S0^-1`
    pub sandwich: DMatrix<f64>,
    /// `S0^-1`
    pub naive: DMatrix<f64>,
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Sandwich and model-based covariance of the estimator at `beta`, with
/// `S0 = sum D'V^-1 D` and `S1 = sum D'V^-1 r r' V^-1 D`, `r = Y - pi`.
pub fn sandwich_cov(
    model: &MarginalModel,
    data: &LongDataset,
    beta: &[f64],
    alpha: &LorAlpha,
    ipf: &IpfConfig,
    inversion: InversionMethod,
) -> Result<Covariances> {
    model.check_beta(beta)?;
    let p = model.n_params();
    let terms = all_subject_terms(model, data, beta, alpha, ipf, inversion)?;
    let mut s0 = DMatrix::<f64>::zeros(p, p);
    let mut s1 = DMatrix::<f64>::zeros(p, p);
    for t in &terms {
        s0 += &t.info;
        s1 += &t.score * t.score.transpose();
    }
    let naive = symmetrize(
        inversion
            .inverse(&symmetrize(s0))
            .map_err(|_| Error::Singular("information matrix sum D'V^-1D".into()))?,
    );
    let sandwich = symmetrize(&naive * s1 * &naive);
    Ok(Covariances { sandwich, naive })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Coefficients involved in the tested constraints.
    pub tested: Vec<String>,
}

pub fn chi_square_upper_tail(statistic: f64, df: usize) -> f64 {
    ChiSquared::new(df as f64)
        .map(|d| d.sf(statistic.max(0.0)))
        .unwrap_or(f64::NAN)
}

/// Two-sided standard normal p-value.
pub fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

fn matrix_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let tol = sv.max() * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Wald statistic `(C b)' (C Cov C')^-1 (C b)` with the fit's sandwich covariance.
pub fn wald_test(fit: &GeeFit, constraint: &DMatrix<f64>) -> Result<WaldResult> {
    let p = fit.beta.len();
    if constraint.ncols() != p || constraint.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "constraint is {}x{}, model has {p} coefficients",
            constraint.nrows(),
            constraint.ncols()
        )));
    }
    let q = constraint.nrows();
    let rank = matrix_rank(constraint);
    if rank < q {
        return Err(Error::RankDeficient { rank, rows: q });
    }
    let b = DVector::from_column_slice(&fit.beta);
    let cb = constraint * b;
    let middle = constraint * &fit.sandwich_cov * constraint.transpose();
    let sol = middle
        .clone()
        .lu()
        .solve(&cb)
        .ok_or_else(|| Error::Singular("C Cov C'".into()))?;
    let statistic = cb.dot(&sol);
    let tested = (0..p)
        .filter(|&k| constraint.column(k).iter().any(|&v| v != 0.0))
        .map(|k| fit.coefficient_names[k].clone())
        .collect();
    Ok(WaldResult {
        statistic,
        df: q,
        p_value: chi_square_upper_tail(statistic, q),
        tested,
    })
}

/// Constraint matrix selecting the given coefficient positions.
pub fn selection_matrix(positions: &[usize], p: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(positions.len(), p);
    for (r, &k) in positions.iter().enumerate() {
        c[(r, k)] = 1.0;
    }
    c
}

/// Test that every covariate coefficient is zero.
pub fn null_model_test(fit: &GeeFit) -> Result<WaldResult> {
    let slopes = fit.model.slope_positions();
    if slopes.is_empty() {
        return Err(Error::InvalidParameter(
            "intercept-only model has no covariate coefficients to test".into(),
        ));
    }
    wald_test(fit, &selection_matrix(&slopes, fit.beta.len()))
}

/// Goodness of fit of `smaller` against the nested `larger` fit: tests the
/// coefficients of `larger` absent from `smaller`. Only `larger` is used
/// numerically.
pub fn compare_nested(smaller: &GeeFit, larger: &GeeFit) -> Result<WaldResult> {
    if smaller.model.link != larger.model.link {
        return Err(Error::Usage("nested fits must share the same link".into()));
    }
    if let Some(missing) = smaller
        .coefficient_names
        .iter()
        .find(|n| !larger.coefficient_names.contains(n))
    {
        return Err(Error::Usage(format!(
            "coefficient `{missing}` of the smaller model is absent from the larger one"
        )));
    }
    let extra: Vec<usize> = larger
        .coefficient_names
        .iter()
        .enumerate()
        .filter(|(_, n)| !smaller.coefficient_names.contains(n))
        .map(|(k, _)| k)
        .collect();
    if extra.is_empty() {
        return Err(Error::Usage("the larger model adds no coefficients".into()));
    }
    wald_test(larger, &selection_matrix(&extra, larger.beta.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn chi_square_tail_values() {
        // exp(-x/2) for two degrees of freedom
        assert_abs_diff_eq!(chi_square_upper_tail(3.0, 2), (-1.5f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(normal_two_sided(1.959963984540054), 0.05, epsilon = 1e-10);
    }

    #[test]
    fn rank_detection() {
        let c = DMatrix::from_row_slice(2, 3, &[1., 0., 0., 2., 0., 0.]);
        assert_eq!(matrix_rank(&c), 1);
        assert_eq!(matrix_rank(&selection_matrix(&[0, 2], 3)), 2);
    }
}
