//! Covariate terms for tabular input: numeric columns pass through, factor
//! columns expand to treatment dummies against their smallest level.

use std::fmt;
use std::str::FromStr;

use crate::data::{LabelMap, LongDataset, RawRow, RawTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Numeric(String),
    Factor(String),
}

impl Term {
    pub fn column(&self) -> &str {
        match self {
            Term::Numeric(c) | Term::Factor(c) => c,
        }
    }
}

impl FromStr for Term {
    type Err = Error;

    /// `factor:col`, `numeric:col` or a bare `col` (numeric).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let term = match s.split_once(':') {
            Some(("factor", c)) => Term::Factor(c.trim().to_string()),
            Some(("numeric", c)) => Term::Numeric(c.trim().to_string()),
            Some((kind, _)) => {
                return Err(Error::Usage(format!("unknown term kind `{kind}` in `{s}`")))
            }
            None => Term::Numeric(s.to_string()),
        };
        if term.column().is_empty() {
            return Err(Error::Usage(format!("empty column name in term `{s}`")));
        }
        Ok(term)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Numeric(c) => f.write_str(c),
            Term::Factor(c) => write!(f, "factor({c})"),
        }
    }
}

pub fn parse_terms(list: &str) -> Result<Vec<Term>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Right-hand side as `y ~ a + factor(b)` style text.
pub fn formula_text(response: &str, terms: &[Term]) -> String {
    if terms.is_empty() {
        return format!("{response} ~ 1");
    }
    let rhs: Vec<String> = terms.iter().map(Term::to_string).collect();
    format!("{response} ~ {}", rhs.join(" + "))
}

#[derive(Debug, Clone)]
pub struct DesignSpec {
    pub response: String,
    pub id: String,
    pub time: Option<String>,
    pub terms: Vec<Term>,
}

/// Expand `spec.terms` over the complete rows of `table` and canonicalize.
pub fn build_dataset(table: &RawTable, spec: &DesignSpec) -> Result<LongDataset> {
    let id_col = table.column(&spec.id)?;
    let resp_col = table.column(&spec.response)?;
    let time_col = spec.time.as_deref().map(|t| table.column(t)).transpose()?;
    let term_cols = spec
        .terms
        .iter()
        .map(|t| table.column(t.column()))
        .collect::<Result<Vec<_>>>()?;
    let numeric: Vec<Option<Vec<Option<f64>>>> = spec
        .terms
        .iter()
        .zip(&term_cols)
        .map(|(t, &c)| match t {
            Term::Numeric(_) => table.numeric_column(c).map(Some),
            Term::Factor(_) => Ok(None),
        })
        .collect::<Result<_>>()?;

    let ids = table.text_column(id_col);
    let responses = table.text_column(resp_col);
    let times = table.time_labels(id_col, time_col);
    let n = table.rows.len();
    let complete: Vec<bool> = (0..n)
        .map(|k| {
            ids[k].is_some()
                && responses[k].is_some()
                && times[k].is_some()
                && term_cols.iter().all(|&c| table.rows[k].get(c).is_some_and(Option::is_some))
        })
        .collect();

    let mut names = Vec::new();
    // per term: column values for each row, possibly several dummies
    let mut columns: Vec<Vec<Option<f64>>> = Vec::new();
    for ((term, &c), num) in spec.terms.iter().zip(&term_cols).zip(numeric) {
        match term {
            Term::Numeric(name) => {
                names.push(name.clone());
                columns.push(num.unwrap());
            }
            Term::Factor(name) => {
                let raw = table.text_column(c);
                let levels = LabelMap::from_labels(
                    (0..n).filter(|&k| complete[k]).map(|k| raw[k].as_deref().unwrap()),
                );
                for level in 1..levels.len() {
                    names.push(format!("factor({name}){}", levels.label(level)));
                    columns.push(
                        raw.iter()
                            .map(|v| {
                                v.as_deref().and_then(|s| levels.index_of(s)).map(|i| {
                                    if i == level {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                })
                            })
                            .collect(),
                    );
                }
            }
        }
    }

    let rows = (0..n)
        .map(|k| RawRow {
            subject: ids[k].clone(),
            time: times[k].clone(),
            response: responses[k].clone(),
            covariates: columns
                .iter()
                .map(|col| if complete[k] { col[k] } else { None })
                .collect(),
        })
        .collect();
    LongDataset::from_rows(rows, names)
}
