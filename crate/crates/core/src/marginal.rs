//! Marginal category probabilities and their derivatives for the
//! cumulative link, adjacent-categories logit and baseline-category logit
//! models.
//!
//! Parameter layout: the `J - 1` category intercepts come first. Ordinal
//! links follow with one shared slope per covariate; the baseline-category
//! logit follows with `J - 1` category-specific slope blocks, block `j`
//! holding the slopes of `log(pi_j / pi_J)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Smallest category probability allowed into weight-matrix assembly.
pub const PROB_FLOOR: f64 = 1e-10;
/// Largest shift the floor may apply before a probability is declared degenerate.
pub const PROB_FLOOR_SLACK: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    CumulativeLogit,
    CumulativeProbit,
    CumulativeCauchit,
    CumulativeCloglog,
    AdjacentCategoriesLogit,
    BaselineCategoryLogit,
}

impl LinkKind {
    pub const ALL: [LinkKind; 6] = [
        LinkKind::CumulativeLogit,
        LinkKind::CumulativeProbit,
        LinkKind::CumulativeCauchit,
        LinkKind::CumulativeCloglog,
        LinkKind::AdjacentCategoriesLogit,
        LinkKind::BaselineCategoryLogit,
    ];

    pub fn is_cumulative(self) -> bool {
        self.cdf().is_some()
    }

    pub fn is_ordinal(self) -> bool {
        self != LinkKind::BaselineCategoryLogit
    }

    /// Short option name accepted on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            LinkKind::CumulativeLogit => "logit",
            LinkKind::CumulativeProbit => "probit",
            LinkKind::CumulativeCauchit => "cauchit",
            LinkKind::CumulativeCloglog => "cloglog",
            LinkKind::AdjacentCategoriesLogit => "acl",
            LinkKind::BaselineCategoryLogit => "bcl",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            LinkKind::CumulativeLogit => "Cumulative logit",
            LinkKind::CumulativeProbit => "Cumulative probit",
            LinkKind::CumulativeCauchit => "Cumulative cauchit",
            LinkKind::CumulativeCloglog => "Cumulative cloglog",
            LinkKind::AdjacentCategoriesLogit => "Adjacent categories logit",
            LinkKind::BaselineCategoryLogit => "Baseline category logit",
        }
    }

    pub fn cdf(self) -> Option<Cdf> {
        match self {
            LinkKind::CumulativeLogit => Some(Cdf::Logistic),
            LinkKind::CumulativeProbit => Some(Cdf::Normal),
            LinkKind::CumulativeCauchit => Some(Cdf::Cauchy),
            LinkKind::CumulativeCloglog => Some(Cdf::Gumbel),
            _ => None,
        }
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for LinkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LinkKind::ALL
            .into_iter()
            .find(|l| l.short_name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown link `{s}`")))
    }
}

/// Distribution function of a cumulative link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cdf {
    Logistic,
    Normal,
    Cauchy,
    /// `1 - exp(-exp(x))`, the complementary log-log link.
    Gumbel,
}

impl Cdf {
    pub fn cdf(self, x: f64) -> f64 {
        match self {
            Cdf::Logistic => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Cdf::Normal => 0.5 * erfc(-x * FRAC_1_SQRT_2),
            Cdf::Cauchy => 0.5 + x.atan() / PI,
            Cdf::Gumbel => -(-x.exp()).exp_m1(),
        }
    }

    pub fn pdf(self, x: f64) -> f64 {
        match self {
            Cdf::Logistic => {
                let e = (-x.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            Cdf::Normal => (-0.5 * x * x).exp() / (2.0 * PI).sqrt(),
            Cdf::Cauchy => 1.0 / (PI * (1.0 + x * x)),
            Cdf::Gumbel => (x - x.exp()).exp(),
        }
    }
}

/// Regression parameter vector; layout given by [`MarginalModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaVector(pub Vec<f64>);

impl Deref for BetaVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for BetaVector {
    fn from(v: Vec<f64>) -> Self {
        BetaVector(v)
    }
}

/// All `J` category probabilities; the first `J - 1` are the modeled means.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn full(&self) -> &[f64] {
        &self.0
    }

    pub fn free(&self) -> &[f64] {
        &self.0[..self.0.len() - 1]
    }
}

/// Link plus dimensions: `J` categories and `p_x` covariates per occasion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginalModel {
    pub link: LinkKind,
    pub n_categories: usize,
    pub n_covariates: usize,
}

impl MarginalModel {
    pub fn new(link: LinkKind, n_categories: usize, n_covariates: usize) -> Result<Self> {
        if n_categories < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 categories, got {n_categories}"
            )));
        }
        Ok(MarginalModel {
            link,
            n_categories,
            n_covariates,
        })
    }

    /// `J - 1`
    pub fn n_free(&self) -> usize {
        self.n_categories - 1
    }

    pub fn n_params(&self) -> usize {
        let k = self.n_free();
        if self.link.is_ordinal() {
            k + self.n_covariates
        } else {
            k * (1 + self.n_covariates)
        }
    }

    /// Index of the slope of covariate `c` in logit `j` (ordinal links ignore `j`).
    fn slope_index(&self, j: usize, c: usize) -> usize {
        if self.link.is_ordinal() {
            self.n_free() + c
        } else {
            self.n_free() + j * self.n_covariates + c
        }
    }

    pub fn parameter_names(&self, covariate_names: &[String]) -> Vec<String> {
        let k = self.n_free();
        let mut names: Vec<String> = (1..=k).map(|j| format!("beta0{j}")).collect();
        if self.link.is_ordinal() {
            names.extend(covariate_names.iter().cloned());
        } else {
            for j in 1..=k {
                names.extend(covariate_names.iter().map(|c| format!("{c}:{j}")));
            }
        }
        names
    }

    /// Positions of non-intercept coefficients.
    pub fn slope_positions(&self) -> Vec<usize> {
        (self.n_free()..self.n_params()).collect()
    }

    pub fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "beta has length {}, model needs {}",
                beta.len(),
                self.n_params()
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParameter("beta has non-finite entries".into()));
        }
        if self.link.is_cumulative() && !intercepts_monotone(&beta[..self.n_free()]) {
            return Err(Error::InvalidParameter(
                "cumulative link intercepts must be non-decreasing".into(),
            ));
        }
        Ok(())
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_covariates {
            return Err(Error::DimensionMismatch(format!(
                "covariate vector has length {}, model needs {}",
                x.len(),
                self.n_covariates
            )));
        }
        Ok(())
    }

    /// Linear predictor of logit/cutpoint `j` (zero-based, `j < J - 1`).
    pub fn linear_predictor(&self, beta: &[f64], x: &[f64], j: usize) -> Result<f64> {
        if j >= self.n_free() {
            return Err(Error::IndexOutOfRange {
                what: "category",
                index: j,
                len: self.n_free(),
            });
        }
        if beta.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "beta has length {}, model needs {}",
                beta.len(),
                self.n_params()
            )));
        }
        self.check_x(x)?;
        Ok(self.eta_unchecked(beta, x, j))
    }

    fn eta_unchecked(&self, beta: &[f64], x: &[f64], j: usize) -> f64 {
        beta[j]
            + x.iter()
                .enumerate()
                .map(|(c, xc)| beta[self.slope_index(j, c)] * xc)
                .sum::<f64>()
    }

    fn etas(&self, beta: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.n_free()).map(|j| self.eta_unchecked(beta, x, j)).collect()
    }

    /// Probabilities before flooring.
    fn raw_probs(&self, beta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_beta(beta)?;
        self.check_x(x)?;
        let eta = self.etas(beta, x);
        let n = self.n_categories;
        let probs = match self.link.cdf() {
            Some(cdf) => {
                let mut p = Vec::with_capacity(n);
                let mut prev = 0.0;
                for &e in &eta {
                    let c = cdf.cdf(e);
                    p.push(c - prev);
                    prev = c;
                }
                p.push(1.0 - prev);
                p
            }
            None => softmax(&self.softmax_scores(&eta)),
        };
        Ok(probs)
    }

    /// Log-ratio scores `s_j` against the last category (`s_J = 0`).
    fn softmax_scores(&self, eta: &[f64]) -> Vec<f64> {
        let mut s = Vec::with_capacity(eta.len() + 1);
        match self.link {
            LinkKind::AdjacentCategoriesLogit => {
                // log(pi_j / pi_J) = sum_{k >= j} eta_k
                let mut acc = 0.0;
                let mut rev: Vec<f64> = eta
                    .iter()
                    .rev()
                    .map(|e| {
                        acc += e;
                        acc
                    })
                    .collect();
                rev.reverse();
                s.extend(rev);
            }
            _ => s.extend_from_slice(eta),
        }
        s.push(0.0);
        s
    }

    /// Category probabilities at covariates `x`, floored at [`PROB_FLOOR`].
    pub fn category_probs(&self, beta: &[f64], x: &[f64]) -> Result<ProbVector> {
        let mut p = self.raw_probs(beta, x)?;
        let mut clamped = false;
        for (j, v) in p.iter_mut().enumerate() {
            if !v.is_finite() || PROB_FLOOR - *v > PROB_FLOOR_SLACK {
                return Err(Error::DegenerateProbability(format!(
                    "category {} has probability {v}",
                    j + 1
                )));
            }
            if *v < PROB_FLOOR {
                *v = PROB_FLOOR;
                clamped = true;
            }
        }
        if clamped {
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
        }
        Ok(ProbVector(p))
    }

    /// `d pi_j / d beta` for the `J - 1` free categories, a `(J-1) x p` matrix.
    pub fn jacobian_block(&self, beta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_beta(beta)?;
        self.check_x(x)?;
        let k = self.n_free();
        let p = self.n_params();
        let eta = self.etas(beta, x);
        // d pi_j / d eta_m, (J-1) x (J-1)
        let mut d_eta = DMatrix::<f64>::zeros(k, k);
        match self.link.cdf() {
            Some(cdf) => {
                for m in 0..k {
                    let dens = cdf.pdf(eta[m]);
                    d_eta[(m, m)] += dens;
                    if m + 1 < k {
                        d_eta[(m + 1, m)] -= dens;
                    }
                }
            }
            None => {
                let pi = softmax(&self.softmax_scores(&eta));
                for j in 0..k {
                    for m in 0..k {
                        d_eta[(j, m)] = match self.link {
                            LinkKind::AdjacentCategoriesLogit => {
                                let head: f64 = pi[..=m].iter().sum();
                                pi[j] * (if j <= m { 1.0 } else { 0.0 } - head)
                            }
                            _ => pi[j] * (if j == m { 1.0 } else { 0.0 } - pi[m]),
                        };
                    }
                }
            }
        }
        let mut out = DMatrix::<f64>::zeros(k, p);
        for j in 0..k {
            for m in 0..k {
                let g = d_eta[(j, m)];
                if g == 0.0 {
                    continue;
                }
                out[(j, m)] += g;
                for (c, xc) in x.iter().enumerate() {
                    out[(j, self.slope_index(m, c))] += g * xc;
                }
            }
        }
        Ok(out)
    }
}

fn intercepts_monotone(b: &[f64]) -> bool {
    b.windows(2).all(|w| w[0] <= w[1])
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_beta_gives_zero_predictor() {
        for link in LinkKind::ALL {
            let m = MarginalModel::new(link, 4, 2).unwrap();
            let beta = vec![0.0; m.n_params()];
            for j in 0..3 {
                assert_eq!(m.linear_predictor(&beta, &[0.3, -2.0], j).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn cumulative_predictor_by_hand() {
        let m = MarginalModel::new(LinkKind::CumulativeLogit, 5, 1).unwrap();
        let beta = [-3.0, -1.0, 1.0, 3.0, 1.0];
        assert_abs_diff_eq!(m.linear_predictor(&beta, &[0.5], 1).unwrap(), -0.5, epsilon = 1e-15);
        assert!(matches!(
            m.linear_predictor(&beta, &[0.5], 4),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn baseline_predictor_by_hand() {
        // J = 3, two covariates: [b01, b02, b1(2), b2(2)]
        let m = MarginalModel::new(LinkKind::BaselineCategoryLogit, 3, 2).unwrap();
        let beta = [0.0, 0.2, 0.0, 0.0, 1.0, -1.0];
        assert_abs_diff_eq!(m.linear_predictor(&beta, &[2.0, 1.0], 1).unwrap(), 1.2, epsilon = 1e-15);
    }

    #[test]
    fn binary_logit_symmetric() {
        let m = MarginalModel::new(LinkKind::CumulativeLogit, 2, 1).unwrap();
        let p = m.category_probs(&[0.0, 0.0], &[1.7]).unwrap();
        assert_abs_diff_eq!(p.free()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn baseline_uniform_softmax() {
        let m = MarginalModel::new(LinkKind::BaselineCategoryLogit, 3, 1).unwrap();
        let p = m.category_probs(&[0.0; 4], &[0.4]).unwrap();
        for v in p.full() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let d = m.jacobian_block(&[0.0; 4], &[0.4]).unwrap();
        assert_abs_diff_eq!(d[(0, 0)], 2.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(1, 1)], 2.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn non_monotone_intercepts_rejected() {
        let m = MarginalModel::new(LinkKind::CumulativeProbit, 4, 0).unwrap();
        assert!(matches!(
            m.category_probs(&[0.0, -1.0, 1.0], &[]),
            Err(Error::InvalidParameter(_))
        ));
        // the same vector is fine for a non-cumulative link
        let a = MarginalModel::new(LinkKind::AdjacentCategoriesLogit, 4, 0).unwrap();
        assert!(a.category_probs(&[0.0, -1.0, 1.0], &[]).is_ok());
    }

    #[test]
    fn symmetric_intercepts_mirror_slope_derivative() {
        // f(-0.8) = f(0.8), so the middle category does not move with the slope
        let m = MarginalModel::new(LinkKind::CumulativeLogit, 3, 1).unwrap();
        let d = m.jacobian_block(&[-0.8, 0.8, 0.0], &[1.0]).unwrap();
        let f = (-0.8f64).exp() / (1.0 + (-0.8f64).exp()).powi(2);
        assert_abs_diff_eq!(d[(0, 2)], f, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(1, 2)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn probit_matches_reference_cdf() {
        // Abramowitz-Stegun 26.2.17 approximation as an independent oracle (|err| < 7.5e-8)
        fn phi_ref(x: f64) -> f64 {
            let t = 1.0 / (1.0 + 0.2316419 * x.abs());
            let poly = t
                * (0.319381530
                    + t * (-0.356563782 + t * (1.781477937 + t * (-1.821255978 + t * 1.330274429))));
            let tail = (-0.5 * x * x).exp() / (2.0 * PI).sqrt() * poly;
            if x >= 0.0 {
                1.0 - tail
            } else {
                tail
            }
        }
        let m = MarginalModel::new(LinkKind::CumulativeProbit, 5, 1).unwrap();
        let beta = [-3.0, -1.0, 1.0, 3.0, 1.0];
        for x in [-2.0, -0.3, 0.0, 0.7, 1.9] {
            let p = m.category_probs(&beta, &[x]).unwrap();
            let mut prev = 0.0;
            for j in 0..4 {
                let c = phi_ref(beta[j] + x);
                assert_abs_diff_eq!(p.full()[j], c - prev, epsilon = 2e-7);
                prev = c;
            }
            assert_abs_diff_eq!(p.full()[4], 1.0 - prev, epsilon = 2e-7);
        }
    }

    #[test]
    fn floor_clamps_tiny_probabilities() {
        let m = MarginalModel::new(LinkKind::CumulativeLogit, 3, 0).unwrap();
        let p = m.category_probs(&[-40.0, 40.0], &[]).unwrap();
        assert!(p.full().iter().all(|&v| v >= PROB_FLOOR * 0.999));
        assert_abs_diff_eq!(p.full().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn link_names_round_trip() {
        for l in LinkKind::ALL {
            assert_eq!(l.short_name().parse::<LinkKind>().unwrap(), l);
        }
        assert!("loglog".parse::<LinkKind>().is_err());
    }

    #[test]
    fn parameter_names_layout() {
        let names = vec!["a".to_string(), "b".to_string()];
        let m = MarginalModel::new(LinkKind::BaselineCategoryLogit, 3, 2).unwrap();
        assert_eq!(m.parameter_names(&names), ["beta01", "beta02", "a:1", "b:1", "a:2", "b:2"]);
        let o = MarginalModel::new(LinkKind::CumulativeLogit, 3, 2).unwrap();
        assert_eq!(o.parameter_names(&names), ["beta01", "beta02", "a", "b"]);
    }
}
