//! Marginalized local odds ratios: pair tables, association-model fits for
//! each structure, and the table utilities `local_or_of_table` and
//! `matrix_lor`.
//!
//! For every time-pair the responses at the two occasions are
//! cross-classified over subjects, ignoring covariates. A log-linear
//! row-column association model is fitted to those tables and the
//! normalized fitted tables become the nuisance parameter: the seeds from
//! which pseudo-joint probabilities are later raked.
//!
//! Identifiability: unit-spaced structures use the scores `1..J` as they
//! are, so `phi` is the linear-by-linear coefficient and the local log odds
//! ratio. Estimated scores are standardized to weighted mean 0 and weighted
//! variance 1 under the pooled marginal distribution of the fitted tables,
//! with `mu_1 < mu_J`; `phi` carries the scale.

mod loglinear;

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use log::{debug, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LongDataset, PairGrouping};
use crate::error::{Error, Result};
use crate::ipf::{ipf_adjust, IpfConfig};
use loglinear::{AssocFit, AssocProblem, ScoreMode};

/// Constant tried when a pair table turns out to be sparse and the caller
/// did not choose `add` explicitly.
pub const DEFAULT_RETRY_ADD: f64 = 1e-4;

/// Square two-way table.
pub type Table = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseScale {
    Ordinal,
    Nominal,
}

impl FromStr for ResponseScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ordinal" => Ok(ResponseScale::Ordinal),
            "nominal" => Ok(ResponseScale::Nominal),
            _ => Err(Error::Usage(format!("unknown response scale `{s}`"))),
        }
    }
}

/// Cross-classified responses for each time-pair, in pair order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTableSet {
    pub grouping: PairGrouping,
    pub tables: Vec<Table>,
    pub add: f64,
}

impl PairTableSet {
    pub fn n_categories(&self) -> usize {
        self.tables.first().map_or(0, |t| t.nrows())
    }

    /// Observed row and column proportions of pair `g`.
    pub fn margins(&self, g: usize) -> (Vec<f64>, Vec<f64>) {
        let t = &self.tables[g];
        let n = t.sum();
        (
            t.row_iter().map(|r| r.sum() / n).collect(),
            t.column_iter().map(|c| c.sum() / n).collect(),
        )
    }
}

/// Tally subjects observed at both occasions of each pair, then add `add`
/// to every cell.
pub fn build_pair_tables(
    data: &LongDataset,
    grouping: &PairGrouping,
    add: f64,
) -> Result<PairTableSet> {
    if !(add >= 0.0) || !add.is_finite() {
        return Err(Error::InvalidParameter(format!("add must be >= 0, got {add}")));
    }
    if grouping.n_times() != data.n_times() {
        return Err(Error::DimensionMismatch(format!(
            "grouping built for {} occasions, data has {}",
            grouping.n_times(),
            data.n_times()
        )));
    }
    let j = data.n_categories();
    let mut tables = vec![Table::zeros(j, j); grouping.len()];
    for block in data.subject_blocks() {
        let obs = block.observations;
        for (k, a) in obs.iter().enumerate() {
            for b in &obs[k + 1..] {
                let g = grouping.index_of(a.time, b.time).expect("sorted block");
                tables[g][(a.category, b.category)] += 1.0;
            }
        }
    }
    for (g, t) in tables.iter_mut().enumerate() {
        t.add_scalar_mut(add);
        let empty_row = t.row_iter().any(|r| r.sum() <= 0.0);
        let empty_col = t.column_iter().any(|c| c.sum() <= 0.0);
        if empty_row || empty_col {
            return Err(Error::SparseTable { pair: g });
        }
    }
    Ok(PairTableSet {
        grouping: grouping.clone(),
        tables,
        add,
    })
}

/// Local odds ratios `f[j,j'] f[j+1,j'+1] / (f[j,j'+1] f[j+1,j'])`.
pub fn local_or_of_table(table: &Table) -> Result<DMatrix<f64>> {
    if table.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain("local odds ratios need a strictly positive table".into()));
    }
    let (r, c) = table.shape();
    if r < 2 || c < 2 {
        return Err(Error::DimensionMismatch("table must be at least 2 x 2".into()));
    }
    Ok(DMatrix::from_fn(r - 1, c - 1, |a, b| {
        table[(a, b)] * table[(a + 1, b + 1)] / (table[(a, b + 1)] * table[(a + 1, b)])
    }))
}

/// Probability table whose local odds ratios equal `target`:
/// `f[j,j'] ∝ prod_{a<j, b<j'} target[a,b]`.
pub fn matrix_lor(target: &DMatrix<f64>) -> Result<Table> {
    if target.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain("target local odds ratios must be positive and finite".into()));
    }
    let (r, c) = target.shape();
    let mut log_f = DMatrix::<f64>::zeros(r + 1, c + 1);
    for a in 1..=r {
        for b in 1..=c {
            log_f[(a, b)] =
                log_f[(a - 1, b)] + log_f[(a, b - 1)] - log_f[(a - 1, b - 1)] + target[(a - 1, b - 1)].ln();
        }
    }
    let m = log_f.max();
    let mut f = log_f.map(|v| (v - m).exp());
    let s = f.sum();
    f /= s;
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LorKind {
    Independence,
    Uniform,
    CategoryExch,
    TimeExch,
    Rc,
    Fixed,
}

impl LorKind {
    pub fn name(self) -> &'static str {
        match self {
            LorKind::Independence => "independence",
            LorKind::Uniform => "uniform",
            LorKind::CategoryExch => "category.exch",
            LorKind::TimeExch => "time.exch",
            LorKind::Rc => "RC",
            LorKind::Fixed => "fixed",
        }
    }

    /// Unit-spaced structures presume ordered categories.
    pub fn requires_ordinal(self) -> bool {
        matches!(self, LorKind::Uniform | LorKind::CategoryExch)
    }
}

impl fmt::Display for LorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', ".").as_str() {
            "independence" => Ok(LorKind::Independence),
            "uniform" => Ok(LorKind::Uniform),
            "category.exch" => Ok(LorKind::CategoryExch),
            "time.exch" => Ok(LorKind::TimeExch),
            "rc" => Ok(LorKind::Rc),
            "fixed" => Ok(LorKind::Fixed),
            _ => Err(Error::Usage(format!("unknown local odds ratios structure `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LorMethod {
    /// One model over the full stack of pair tables.
    ThreeWay,
    /// Independent per-pair fits, then averaging.
    TwoWay,
}

impl LorMethod {
    pub fn name(self) -> &'static str {
        match self {
            LorMethod::ThreeWay => "3way",
            LorMethod::TwoWay => "2way",
        }
    }
}

impl FromStr for LorMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3way" | "threeway" => Ok(LorMethod::ThreeWay),
            "2way" | "twoway" => Ok(LorMethod::TwoWay),
            _ => Err(Error::Usage(format!("unknown estimation method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LorStructure {
    pub kind: LorKind,
    /// Row scores equal column scores (time.exch and RC only).
    pub homogeneous: bool,
    /// Only meaningful for uniform and time.exch.
    pub method: LorMethod,
    /// Probability tables for `LorKind::Fixed`, one per pair.
    pub fixed_tables: Option<Vec<Table>>,
}

impl LorStructure {
    pub fn new(kind: LorKind) -> Self {
        LorStructure {
            kind,
            homogeneous: true,
            method: LorMethod::ThreeWay,
            fixed_tables: None,
        }
    }

    pub fn fixed(tables: Vec<Table>) -> Self {
        LorStructure {
            fixed_tables: Some(tables),
            ..LorStructure::new(LorKind::Fixed)
        }
    }

    pub fn with_method(mut self, method: LorMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_homogeneous(mut self, homogeneous: bool) -> Self {
        self.homogeneous = homogeneous;
        self
    }

    pub fn default_for(scale: ResponseScale) -> Self {
        match scale {
            ResponseScale::Ordinal => LorStructure::new(LorKind::CategoryExch),
            ResponseScale::Nominal => LorStructure::new(LorKind::TimeExch),
        }
    }

    /// Estimation method that actually applies to this kind.
    pub fn effective_method(&self) -> LorMethod {
        match self.kind {
            LorKind::Uniform | LorKind::TimeExch => self.method,
            LorKind::CategoryExch | LorKind::Rc => LorMethod::TwoWay,
            _ => LorMethod::ThreeWay,
        }
    }

    pub fn validate(&self, scale: ResponseScale, n_categories: usize, n_pairs: usize) -> Result<()> {
        if scale == ResponseScale::Nominal && self.kind.requires_ordinal() {
            return Err(Error::Usage(format!(
                "structure `{}` assumes ordered categories and is not available for nominal responses",
                self.kind
            )));
        }
        if self.kind == LorKind::Fixed {
            let tables = self
                .fixed_tables
                .as_ref()
                .ok_or_else(|| Error::Usage("structure `fixed` needs fixed tables".into()))?;
            if tables.len() != n_pairs {
                return Err(Error::Usage(format!(
                    "fixed structure has {} tables, data has {n_pairs} time-pairs",
                    tables.len()
                )));
            }
            for (g, t) in tables.iter().enumerate() {
                if t.shape() != (n_categories, n_categories) {
                    return Err(Error::Usage(format!(
                        "fixed table {g} is {}x{}, expected {n_categories}x{n_categories}",
                        t.nrows(),
                        t.ncols()
                    )));
                }
                if t.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(Error::Usage(format!("fixed table {g} must be strictly positive")));
                }
                if (t.sum() - 1.0).abs() > 1e-6 {
                    return Err(Error::Usage(format!(
                        "fixed table {g} sums to {}, expected 1",
                        t.sum()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Fitted marginalized local odds ratios structure.
#[derive(Debug, Clone, PartialEq)]
pub struct LorAlpha {
    pub kind: LorKind,
    pub homogeneous: bool,
    pub method: LorMethod,
    pub pairs: Vec<(usize, usize)>,
    /// Normalized fitted probability tables, one per pair.
    pub tables: Vec<Table>,
    /// Closed-form log local odds ratios of the structure, one per pair.
    pub log_theta: Vec<DMatrix<f64>>,
    /// Intrinsic parameter per pair (repeated when shared); empty when the
    /// structure has none.
    pub phi: Vec<f64>,
    pub row_scores: Vec<Vec<f64>>,
    pub col_scores: Vec<Vec<f64>>,
}

impl LorAlpha {
    pub fn n_pairs(&self) -> usize {
        self.tables.len()
    }

    pub fn n_categories(&self) -> usize {
        self.tables.first().map_or(0, |t| t.nrows())
    }

    /// `(J-1) x (J-1)` local odds ratios of pair `g`.
    pub fn local_odds_ratios(&self, g: usize) -> DMatrix<f64> {
        self.log_theta[g].map(f64::exp)
    }

    /// Symmetric `T(J-1)` square block matrix: zero diagonal blocks, block
    /// `(t, t')` holding the local odds ratios of pair `(t, t')` and block
    /// `(t', t)` its transpose.
    pub fn theta_block_matrix(&self, n_times: usize) -> DMatrix<f64> {
        let k = self.n_categories().saturating_sub(1);
        let mut m = DMatrix::zeros(n_times * k, n_times * k);
        for (g, &(t, u)) in self.pairs.iter().enumerate() {
            let th = self.local_odds_ratios(g);
            m.view_mut((t * k, u * k), (k, k)).copy_from(&th);
            m.view_mut((u * k, t * k), (k, k)).copy_from(&th.transpose());
        }
        m
    }

    /// Independence structure without needing data.
    pub fn independence(pairs: Vec<(usize, usize)>, n_categories: usize) -> Self {
        let j = n_categories;
        let l = pairs.len();
        LorAlpha {
            kind: LorKind::Independence,
            homogeneous: true,
            method: LorMethod::ThreeWay,
            pairs,
            tables: vec![Table::from_element(j, j, 1.0 / (j * j) as f64); l],
            log_theta: vec![DMatrix::zeros(j - 1, j - 1); l],
            phi: Vec::new(),
            row_scores: Vec::new(),
            col_scores: Vec::new(),
        }
    }
}

fn closed_form_log_theta(phi: f64, u: &[f64], v: &[f64]) -> DMatrix<f64> {
    let k = u.len() - 1;
    DMatrix::from_fn(k, k, |a, b| phi * (u[a] - u[a + 1]) * (v[b] - v[b + 1]))
}

fn normalized(t: &Table) -> Table {
    t / t.sum()
}

fn assoc_error(pair: Option<usize>) -> impl Fn(String) -> Error {
    move |detail| Error::AssociationFit { pair, detail }
}

fn fit_separately(
    tables: &PairTableSet,
    scores: ScoreMode,
) -> Result<Vec<AssocFit>> {
    tables
        .tables
        .par_iter()
        .enumerate()
        .map(|(g, t)| {
            AssocProblem {
                tables: vec![t],
                shared_phi: true,
                scores,
            }
            .fit()
            .map_err(assoc_error(Some(g)))
            .inspect(|f| log_fit(Some(g), f))
        })
        .collect()
}

fn fit_stacked(tables: &PairTableSet, scores: ScoreMode) -> Result<AssocFit> {
    AssocProblem {
        tables: tables.tables.iter().collect(),
        shared_phi: true,
        scores,
    }
    .fit()
    .map_err(assoc_error(None))
    .inspect(|f| log_fit(None, f))
}

fn log_fit(pair: Option<usize>, f: &AssocFit) {
    debug!(
        "association fit {}: loglik {:.6} after {} iterations",
        pair.map_or("stacked".to_string(), |g| format!("pair {}", g + 1)),
        f.loglik,
        f.iterations
    );
}

/// Table with local log odds ratios `log_theta` raked to the observed
/// margins of pair `g`.
fn table_with_margins(tables: &PairTableSet, g: usize, log_theta: &DMatrix<f64>) -> Result<Table> {
    let seed = matrix_lor(&log_theta.map(f64::exp))?;
    let (r, c) = tables.margins(g);
    let cfg = IpfConfig {
        tolerance: 1e-12,
        max_iterations: 100_000,
    };
    ipf_adjust(&seed, &r, &c, &cfg).map_err(|e| Error::AssociationFit {
        pair: Some(g),
        detail: e.to_string(),
    })
}

fn alpha_from_fits(
    structure: &LorStructure,
    tables: &PairTableSet,
    fits: Vec<(f64, Vec<f64>, Vec<f64>, Table)>,
) -> LorAlpha {
    let mut out = LorAlpha {
        kind: structure.kind,
        homogeneous: structure.homogeneous,
        method: structure.effective_method(),
        pairs: tables.grouping.pairs().to_vec(),
        tables: Vec::new(),
        log_theta: Vec::new(),
        phi: Vec::new(),
        row_scores: Vec::new(),
        col_scores: Vec::new(),
    };
    for (phi, u, v, fitted) in fits {
        out.log_theta.push(closed_form_log_theta(phi, &u, &v));
        out.tables.push(normalized(&fitted));
        out.phi.push(phi);
        out.row_scores.push(u);
        out.col_scores.push(v);
    }
    out
}

/// Fit the association structure to the pair tables.
pub fn fit_structure(
    tables: &PairTableSet,
    structure: &LorStructure,
    scale: ResponseScale,
) -> Result<LorAlpha> {
    let j = tables.n_categories();
    let l = tables.tables.len();
    structure.validate(scale, j, l)?;
    let pairs = tables.grouping.pairs().to_vec();
    let estimated = ScoreMode::Estimated {
        homogeneous: structure.homogeneous,
    };

    let per_pair = |fits: Vec<AssocFit>| -> Vec<(f64, Vec<f64>, Vec<f64>, Table)> {
        fits.into_iter()
            .map(|f| {
                let t = f.fitted.into_iter().next().unwrap();
                (f.phi[0], f.row_scores, f.col_scores, t)
            })
            .collect()
    };
    let stacked = |f: AssocFit| -> Vec<(f64, Vec<f64>, Vec<f64>, Table)> {
        f.fitted
            .into_iter()
            .zip(f.phi)
            .map(|(t, phi)| (phi, f.row_scores.clone(), f.col_scores.clone(), t))
            .collect()
    };

    match (structure.kind, structure.effective_method()) {
        (LorKind::Independence, _) => {
            let mut a = LorAlpha::independence(pairs, j);
            for g in 0..l {
                let (r, c) = tables.margins(g);
                a.tables[g] = Table::from_fn(j, j, |x, y| r[x] * c[y]);
            }
            Ok(a)
        }
        (LorKind::Fixed, _) => {
            let fixed = structure.fixed_tables.as_ref().unwrap();
            let log_theta = fixed
                .iter()
                .map(|t| local_or_of_table(t).map(|m| m.map(f64::ln)))
                .collect::<Result<Vec<_>>>()?;
            Ok(LorAlpha {
                kind: LorKind::Fixed,
                homogeneous: structure.homogeneous,
                method: LorMethod::ThreeWay,
                pairs,
                tables: fixed.iter().map(normalized).collect(),
                log_theta,
                phi: Vec::new(),
                row_scores: Vec::new(),
                col_scores: Vec::new(),
            })
        }
        (LorKind::Uniform, LorMethod::ThreeWay) => {
            Ok(alpha_from_fits(structure, tables, stacked(fit_stacked(tables, ScoreMode::Unit)?)))
        }
        (LorKind::Uniform, LorMethod::TwoWay) => {
            let fits = fit_separately(tables, ScoreMode::Unit)?;
            let phi = fits.iter().map(|f| f.phi[0]).sum::<f64>() / l as f64;
            let unit: Vec<f64> = (1..=j).map(|k| k as f64).collect();
            let lt = closed_form_log_theta(phi, &unit, &unit);
            let mut a = alpha_from_fits(structure, tables, Vec::new());
            for g in 0..l {
                a.tables.push(table_with_margins(tables, g, &lt)?);
                a.log_theta.push(lt.clone());
                a.phi.push(phi);
                a.row_scores.push(unit.clone());
                a.col_scores.push(unit.clone());
            }
            Ok(a)
        }
        (LorKind::CategoryExch, _) => Ok(alpha_from_fits(
            structure,
            tables,
            per_pair(fit_separately(tables, ScoreMode::Unit)?),
        )),
        (LorKind::Rc, _) => Ok(alpha_from_fits(
            structure,
            tables,
            per_pair(fit_separately(tables, estimated)?),
        )),
        (LorKind::TimeExch, LorMethod::ThreeWay) => {
            Ok(alpha_from_fits(structure, tables, stacked(fit_stacked(tables, estimated)?)))
        }
        (LorKind::TimeExch, LorMethod::TwoWay) => {
            let fits = fit_separately(tables, estimated)?;
            let mut mean = DMatrix::<f64>::zeros(j - 1, j - 1);
            for f in &fits {
                mean += closed_form_log_theta(f.phi[0], &f.row_scores, &f.col_scores);
            }
            mean /= l as f64;
            let mut a = alpha_from_fits(structure, tables, Vec::new());
            for g in 0..l {
                a.tables.push(table_with_margins(tables, g, &mean)?);
                a.log_theta.push(mean.clone());
            }
            Ok(a)
        }
    }
}

/// Build pair tables, retrying once with [`DEFAULT_RETRY_ADD`] when `add`
/// was left to the default and a table is sparse.
pub fn pair_tables_with_default(
    data: &LongDataset,
    grouping: &PairGrouping,
    add: Option<f64>,
) -> Result<PairTableSet> {
    match add {
        Some(a) => build_pair_tables(data, grouping, a),
        None => match build_pair_tables(data, grouping, 0.0) {
            Err(Error::SparseTable { pair }) => {
                warn!(
                    "pair table {pair} has an empty row or column; adding {DEFAULT_RETRY_ADD} to every cell"
                );
                build_pair_tables(data, grouping, DEFAULT_RETRY_ADD)
            }
            other => other,
        },
    }
}

/// Estimated intrinsic parameter of each time-pair: category.exch for
/// ordinal responses, homogeneous RC for nominal ones.
pub fn intrinsic_pars(data: &LongDataset, scale: ResponseScale, add: Option<f64>) -> Result<Vec<f64>> {
    let grouping = PairGrouping::new(data.n_times())?;
    let tables = pair_tables_with_default(data, &grouping, add)?;
    let structure = match scale {
        ResponseScale::Ordinal => LorStructure::new(LorKind::CategoryExch),
        ResponseScale::Nominal => LorStructure::new(LorKind::Rc),
    };
    Ok(fit_structure(&tables, &structure, scale)?.phi)
}

/// Read fixed tables: one row per pair, `J^2` entries each in row-major
/// order. A leading non-numeric header row is skipped.
pub fn read_fixed_tables<R: Read>(source: R, n_categories: usize, delimiter: u8) -> Result<Vec<Table>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(source);
    let j = n_categories;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let vals = match vals {
            Ok(v) => v,
            Err(_) if line == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    line: line + 1,
                    column: "fixed table".into(),
                    value: rec.iter().collect::<Vec<_>>().join(","),
                })
            }
        };
        if vals.len() != j * j {
            return Err(Error::DimensionMismatch(format!(
                "fixed table row {} has {} entries, expected {}",
                line + 1,
                vals.len(),
                j * j
            )));
        }
        out.push(Table::from_row_slice(j, j, &vals));
    }
    Ok(out)
}
