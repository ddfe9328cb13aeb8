//! Fisher scoring for the local odds ratios GEE.
//!
//! The association structure is estimated once from the marginalized pair
//! tables and then held fixed; only the marginal regression vector is
//! iterated. Each subject's weight matrix has the multinomial covariance of
//! every observed occasion on its diagonal and, off the diagonal, the
//! pseudo-joint probabilities obtained by raking the structure's table for
//! that time-pair to the subject's two marginal distributions.

use std::fmt;
use std::str::FromStr;

use log::info;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::association::{
    fit_structure, pair_tables_with_default, LorAlpha, LorKind, LorStructure, ResponseScale,
};
use crate::data::{LongDataset, PairGrouping, SubjectBlock};
use crate::error::{Error, Result};
use crate::inference::{sandwich_cov, Covariances};
use crate::ipf::{ipf_adjust, IpfConfig};
use crate::marginal::{BetaVector, Cdf, LinkKind, MarginalModel, ProbVector};

/// Step halvings tried before a Fisher step is declared infeasible.
pub const MAX_STEP_HALVINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InversionMethod {
    /// LU decomposition.
    Solve,
    Qr,
    Cholesky,
}

impl InversionMethod {
    pub fn name(self) -> &'static str {
        match self {
            InversionMethod::Solve => "solve",
            InversionMethod::Qr => "qr.solve",
            InversionMethod::Cholesky => "cholesky",
        }
    }

    /// Solve `a x = b`.
    pub fn solve(self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let singular = || Error::Singular(format!("{}x{} system", a.nrows(), a.ncols()));
        let x = match self {
            InversionMethod::Solve => a.clone().lu().solve(b),
            InversionMethod::Qr => a.clone().qr().solve(b),
            InversionMethod::Cholesky => a.clone().cholesky().map(|c| c.solve(b)),
        }
        .ok_or_else(singular)?;
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(singular())
        }
    }

    pub fn inverse(self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.solve(a, &DMatrix::identity(a.nrows(), a.ncols()))
    }
}

impl fmt::Display for InversionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InversionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "solve" => Ok(InversionMethod::Solve),
            "qr" | "qr.solve" => Ok(InversionMethod::Qr),
            "cholesky" => Ok(InversionMethod::Cholesky),
            _ => Err(Error::Usage(format!("unknown inversion method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitControl {
    /// Bound on the elementwise relative change between iterates.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub inversion: InversionMethod,
    pub verbose: bool,
}

impl Default for FitControl {
    fn default() -> Self {
        FitControl {
            tolerance: 1e-3,
            max_iterations: 15,
            inversion: InversionMethod::Solve,
            verbose: false,
        }
    }
}

impl FitControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything `solve_gee` needs besides the data.
#[derive(Debug, Clone)]
pub struct GeeConfig {
    pub link: LinkKind,
    pub structure: LorStructure,
    pub control: FitControl,
    pub ipf: IpfConfig,
    /// Constant added to each pair-table cell; `None` means 0 with one
    /// automatic retry at `1e-4` if a table is sparse.
    pub add: Option<f64>,
    pub start: Option<BetaVector>,
}

impl GeeConfig {
    pub fn new(link: LinkKind, structure: LorStructure) -> Self {
        GeeConfig {
            link,
            structure,
            control: FitControl::default(),
            ipf: IpfConfig::default(),
            add: None,
            start: None,
        }
    }

    pub fn scale(&self) -> ResponseScale {
        if self.link.is_ordinal() {
            ResponseScale::Ordinal
        } else {
            ResponseScale::Nominal
        }
    }
}

/// Per-subject weight matrix over the subject's observed occasions.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub times: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct GeeFit {
    pub model: MarginalModel,
    pub coefficient_names: Vec<String>,
    pub beta: BetaVector,
    pub iterations: usize,
    pub converged: bool,
    pub alpha: LorAlpha,
    pub structure: LorStructure,
    pub control: FitControl,
    pub ipf: IpfConfig,
    /// Constant actually added to the pair tables.
    pub add: f64,
    /// One entry per retained observation, in dataset order.
    pub fitted_probs: Vec<ProbVector>,
    /// `Y_itj - pi_itj` for the `J - 1` free categories, per observation.
    pub residuals: Vec<Vec<f64>>,
    /// Robust covariance of the estimator.
    pub sandwich_cov: DMatrix<f64>,
    /// Model-based covariance, inverse of the information matrix.
    pub naive_cov: DMatrix<f64>,
    pub n_subjects: usize,
    pub n_times: usize,
}

impl GeeFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.beta.len())
            .map(|k| self.sandwich_cov[(k, k)].max(0.0).sqrt())
            .collect()
    }

    pub fn naive_standard_errors(&self) -> Vec<f64> {
        (0..self.beta.len())
            .map(|k| self.naive_cov[(k, k)].max(0.0).sqrt())
            .collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficient_names
            .iter()
            .position(|n| n == name)
            .map(|k| self.beta[k])
    }

    pub fn scale(&self) -> ResponseScale {
        if self.model.link.is_ordinal() {
            ResponseScale::Ordinal
        } else {
            ResponseScale::Nominal
        }
    }
}

fn indicator(category: usize, n_free: usize) -> DVector<f64> {
    DVector::from_fn(n_free, |j, _| if j == category { 1.0 } else { 0.0 })
}

fn pair_index(alpha: &LorAlpha, t: usize, u: usize) -> Option<usize> {
    alpha.pairs.iter().position(|&p| p == (t, u))
}

/// Weight matrix of one subject at `beta`.
pub fn assemble_weight(
    model: &MarginalModel,
    beta: &[f64],
    alpha: &LorAlpha,
    block: &SubjectBlock<'_>,
    ipf: &IpfConfig,
) -> Result<WeightMatrix> {
    let probs = block
        .observations
        .iter()
        .map(|o| model.category_probs(beta, &o.covariates))
        .collect::<Result<Vec<_>>>()?;
    weight_from_probs(model, &probs, alpha, block, ipf)
}

fn weight_from_probs(
    model: &MarginalModel,
    probs: &[ProbVector],
    alpha: &LorAlpha,
    block: &SubjectBlock<'_>,
    ipf: &IpfConfig,
) -> Result<WeightMatrix> {
    let k = model.n_free();
    let n = block.len();
    let mut v = DMatrix::<f64>::zeros(n * k, n * k);
    let independent = alpha.kind == LorKind::Independence;
    for (a, pa) in probs.iter().enumerate() {
        let p = pa.free();
        for r in 0..k {
            for c in 0..k {
                v[(a * k + r, a * k + c)] = if r == c { p[r] - p[r] * p[r] } else { -p[r] * p[c] };
            }
        }
        if independent {
            continue;
        }
        for (b, pb) in probs.iter().enumerate().skip(a + 1) {
            let t = block.observations[a].time;
            let u = block.observations[b].time;
            let wrap = |e: Error| Error::WeightAssembly {
                subject: block.subject,
                t1: t,
                t2: u,
                source: Box::new(e),
            };
            let g = pair_index(alpha, t, u).ok_or_else(|| {
                wrap(Error::IndexOutOfRange {
                    what: "time-pair",
                    index: t,
                    len: alpha.n_pairs(),
                })
            })?;
            let joint = ipf_adjust(&alpha.tables[g], pa.full(), pb.full(), ipf).map_err(wrap)?;
            let q = pb.free();
            for r in 0..k {
                for c in 0..k {
                    let cov = joint[(r, c)] - p[r] * q[c];
                    v[(a * k + r, b * k + c)] = cov;
                    v[(b * k + c, a * k + r)] = cov;
                }
            }
        }
    }
    Ok(WeightMatrix {
        times: block.times().collect(),
        matrix: v,
    })
}

/// Per-subject pieces of the estimating equations at `beta`:
/// `D' V^-1 D` and `D' V^-1 (Y - pi)`.
pub(crate) struct SubjectTerms {
    pub info: DMatrix<f64>,
    pub score: DVector<f64>,
}

pub(crate) fn subject_terms(
    model: &MarginalModel,
    beta: &[f64],
    alpha: &LorAlpha,
    block: &SubjectBlock<'_>,
    ipf: &IpfConfig,
    inversion: InversionMethod,
) -> Result<SubjectTerms> {
    let k = model.n_free();
    let p = model.n_params();
    let n = block.len();
    let mut d = DMatrix::<f64>::zeros(n * k, p);
    let mut resid = DVector::<f64>::zeros(n * k);
    let mut probs = Vec::with_capacity(n);
    for (a, o) in block.observations.iter().enumerate() {
        let pr = model.category_probs(beta, &o.covariates)?;
        d.rows_mut(a * k, k).copy_from(&model.jacobian_block(beta, &o.covariates)?);
        let y = indicator(o.category, k);
        for r in 0..k {
            resid[a * k + r] = y[r] - pr.free()[r];
        }
        probs.push(pr);
    }
    let v = weight_from_probs(model, &probs, alpha, block, ipf)?.matrix;
    let mut rhs = DMatrix::<f64>::zeros(n * k, p + 1);
    rhs.columns_mut(0, p).copy_from(&d);
    rhs.set_column(p, &resid);
    let sol = inversion.solve(&v, &rhs).map_err(|e| match e {
        Error::Singular(_) => Error::Singular(format!("weight matrix of subject {}", block.subject + 1)),
        other => other,
    })?;
    let info = d.tr_mul(&sol.columns(0, p));
    let score = d.tr_mul(&sol.column(p));
    Ok(SubjectTerms { info, score })
}

/// Per-subject terms in subject order.
pub(crate) fn all_subject_terms(
    model: &MarginalModel,
    data: &LongDataset,
    beta: &[f64],
    alpha: &LorAlpha,
    ipf: &IpfConfig,
    inversion: InversionMethod,
) -> Result<Vec<SubjectTerms>> {
    data.subject_blocks()
        .par_iter()
        .map(|b| subject_terms(model, beta, alpha, b, ipf, inversion))
        .collect()
}

fn accumulate(terms: &[SubjectTerms], p: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut info = DMatrix::zeros(p, p);
    let mut score = DVector::zeros(p);
    for t in terms {
        info += &t.info;
        score += &t.score;
    }
    (info, score)
}

/// `U(beta, alpha) = (1/N) sum_i D_i' V_i^-1 (Y_i - pi_i)`.
pub fn estimating_equations(
    model: &MarginalModel,
    data: &LongDataset,
    beta: &[f64],
    alpha: &LorAlpha,
    ipf: &IpfConfig,
    inversion: InversionMethod,
) -> Result<DVector<f64>> {
    model.check_beta(beta)?;
    let terms = all_subject_terms(model, data, beta, alpha, ipf, inversion)?;
    let (_, score) = accumulate(&terms, model.n_params());
    Ok(score / data.n_subjects() as f64)
}

fn feasible(model: &MarginalModel, data: &LongDataset, beta: &[f64]) -> bool {
    model.check_beta(beta).is_ok()
        && data
            .observations()
            .iter()
            .all(|o| model.category_probs(beta, &o.covariates).is_ok())
}

fn quantile(cdf: Cdf, p: f64) -> f64 {
    match cdf {
        Cdf::Logistic => (p / (1.0 - p)).ln(),
        Cdf::Normal => Normal::standard().inverse_cdf(p),
        Cdf::Cauchy => (std::f64::consts::PI * (p - 0.5)).tan(),
        Cdf::Gumbel => (-(1.0 - p).ln()).ln(),
    }
}

/// Intercepts matching the pooled response distribution, slopes zero.
fn crude_start(model: &MarginalModel, data: &LongDataset) -> Vec<f64> {
    let j = model.n_categories;
    let mut counts = vec![0.5; j];
    for o in data.observations() {
        counts[o.category] += 1.0;
    }
    let n: f64 = counts.iter().sum();
    let p: Vec<f64> = counts.iter().map(|c| c / n).collect();
    let mut beta = vec![0.0; model.n_params()];
    match model.link.cdf() {
        Some(cdf) => {
            let mut cum = 0.0;
            for k in 0..j - 1 {
                cum += p[k];
                beta[k] = quantile(cdf, cum);
            }
        }
        None => {
            for k in 0..j - 1 {
                beta[k] = match model.link {
                    LinkKind::AdjacentCategoriesLogit => (p[k] / p[k + 1]).ln(),
                    _ => (p[k] / p[j - 1]).ln(),
                };
            }
        }
    }
    beta
}

struct ScoringOutcome {
    beta: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Fisher scoring with step halving. Convergence when
/// `max_k |b_new - b_old| / max(|b_old|, 1) <= tolerance`.
#[allow(clippy::too_many_arguments)]
fn fisher_scoring(
    model: &MarginalModel,
    data: &LongDataset,
    alpha: &LorAlpha,
    start: Vec<f64>,
    tolerance: f64,
    max_iterations: usize,
    ipf: &IpfConfig,
    inversion: InversionMethod,
    verbose: bool,
) -> Result<ScoringOutcome> {
    let p = model.n_params();
    let mut beta = start;
    for it in 1..=max_iterations {
        let terms = all_subject_terms(model, data, &beta, alpha, ipf, inversion)?;
        let (info, score) = accumulate(&terms, p);
        let step = inversion
            .solve(&info, &DMatrix::from_column_slice(p, 1, score.as_slice()))
            .map_err(|_| Error::Singular("information matrix sum D'V^-1D".into()))?;
        let mut scale = 1.0;
        let mut next = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            if feasible(model, data, &cand) {
                next = Some(cand);
                break;
            }
            scale *= 0.5;
        }
        let next = next.ok_or_else(|| {
            Error::InvalidParameter(format!(
                "iteration {it}: no feasible step after {MAX_STEP_HALVINGS} halvings"
            ))
        })?;
        let change = beta
            .iter()
            .zip(&next)
            .map(|(o, n)| (n - o).abs() / o.abs().max(1.0))
            .fold(0.0, f64::max);
        beta = next;
        if verbose {
            info!("iteration {it}: max relative change {change:.3e}");
        }
        if change <= tolerance {
            return Ok(ScoringOutcome {
                beta,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(ScoringOutcome {
        beta,
        iterations: max_iterations,
        converged: false,
    })
}

/// Independence maximum likelihood fit of the marginal model, treating all
/// observations as independent. A supplied start is validated and returned.
pub fn initial_beta(
    model: &MarginalModel,
    data: &LongDataset,
    user_start: Option<&BetaVector>,
) -> Result<BetaVector> {
    if let Some(s) = user_start {
        model.check_beta(s)?;
        return Ok(s.clone());
    }
    let alpha = LorAlpha::independence(Vec::new(), model.n_categories);
    let out = fisher_scoring(
        model,
        data,
        &alpha,
        crude_start(model, data),
        1e-10,
        100,
        &IpfConfig::default(),
        InversionMethod::Solve,
        false,
    )
    .map_err(|e| Error::InitialFit(e.to_string()))?;
    if !out.converged {
        return Err(Error::InitialFit(format!(
            "no convergence in {} iterations",
            out.iterations
        )));
    }
    Ok(BetaVector(out.beta))
}

/// Estimate the association structure for `data` under `config`.
pub fn estimate_alpha(data: &LongDataset, config: &GeeConfig) -> Result<(LorAlpha, f64)> {
    let j = data.n_categories();
    if config.structure.kind == LorKind::Independence {
        let pairs = if data.n_times() >= 2 {
            PairGrouping::new(data.n_times())?.pairs().to_vec()
        } else {
            Vec::new()
        };
        return Ok((LorAlpha::independence(pairs, j), config.add.unwrap_or(0.0)));
    }
    let grouping = PairGrouping::new(data.n_times())?;
    let tables = pair_tables_with_default(data, &grouping, config.add)?;
    let alpha = fit_structure(&tables, &config.structure, config.scale())?;
    Ok((alpha, tables.add))
}

/// Fit the marginal model by GEE with a fixed association structure.
pub fn solve_gee(data: &LongDataset, config: &GeeConfig) -> Result<GeeFit> {
    config.control.validate()?;
    config.ipf.validate()?;
    let model = MarginalModel::new(config.link, data.n_categories(), data.n_covariates())?;
    let n_pairs = data.n_times() * data.n_times().saturating_sub(1) / 2;
    config
        .structure
        .validate(config.scale(), data.n_categories(), n_pairs)?;

    let (alpha, add) = estimate_alpha(data, config)?;
    let start = initial_beta(&model, data, config.start.as_ref())?;
    let out = fisher_scoring(
        &model,
        data,
        &alpha,
        start.0,
        config.control.tolerance,
        config.control.max_iterations,
        &config.ipf,
        config.control.inversion,
        config.control.verbose,
    )?;
    if !out.converged {
        return Err(Error::NonConvergence {
            iterations: out.iterations,
            last_beta: out.beta,
        });
    }
    let beta = out.beta;
    let Covariances { sandwich, naive } =
        sandwich_cov(&model, data, &beta, &alpha, &config.ipf, config.control.inversion)?;

    let k = model.n_free();
    let mut fitted_probs = Vec::with_capacity(data.observations().len());
    let mut residuals = Vec::with_capacity(data.observations().len());
    for o in data.observations() {
        let pr = model.category_probs(&beta, &o.covariates)?;
        residuals.push(
            (0..k)
                .map(|j| if j == o.category { 1.0 } else { 0.0 } - pr.free()[j])
                .collect(),
        );
        fitted_probs.push(pr);
    }

    Ok(GeeFit {
        coefficient_names: model.parameter_names(data.covariate_names()),
        model,
        beta: BetaVector(beta),
        iterations: out.iterations,
        converged: true,
        alpha,
        structure: config.structure.clone(),
        control: config.control,
        ipf: config.ipf,
        add,
        fitted_probs,
        residuals,
        sandwich_cov: sandwich,
        naive_cov: naive,
        n_subjects: data.n_subjects(),
        n_times: data.n_times(),
    })
}

/// Ordinal fit with the given link and structure, defaults otherwise.
pub fn fit_ordinal(data: &LongDataset, link: LinkKind, structure: LorStructure) -> Result<GeeFit> {
    if !link.is_ordinal() {
        return Err(Error::Usage(format!("link `{link}` is not an ordinal link")));
    }
    solve_gee(data, &GeeConfig::new(link, structure))
}

/// Baseline-category logit fit with the given structure, defaults otherwise.
pub fn fit_nominal(data: &LongDataset, structure: LorStructure) -> Result<GeeFit> {
    solve_gee(data, &GeeConfig::new(LinkKind::BaselineCategoryLogit, structure))
}
