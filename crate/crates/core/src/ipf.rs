//! Iterative proportional fitting of a two-way table to prescribed margins.
//!
//! Row and column rescaling leaves every local odds ratio of the seed
//! untouched, so the result is the unique table with the seed's odds
//! ratios and the target margins.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpfConfig {
    /// Bound on the largest absolute margin deviation.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IpfConfig {
    fn default() -> Self {
        IpfConfig {
            tolerance: 1e-6,
            max_iterations: 200,
        }
    }
}

impl IpfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("IPF tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("IPF needs at least one iteration".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpfOutcome {
    pub table: DMatrix<f64>,
    /// Full row-then-column sweeps performed.
    pub iterations: usize,
    pub deviation: f64,
}

const TARGET_SUM_TOL: f64 = 1e-10;

fn check_targets(name: &str, t: &[f64], n: usize) -> Result<()> {
    if t.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{name} targets have length {}, table has {n}",
            t.len()
        )));
    }
    if t.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("{name} targets must be strictly positive")));
    }
    let s: f64 = t.iter().sum();
    if (s - 1.0).abs() > TARGET_SUM_TOL {
        return Err(Error::Domain(format!("{name} targets sum to {s}, expected 1")));
    }
    Ok(())
}

fn margin_deviation(m: &DMatrix<f64>, rows: &[f64], cols: &[f64]) -> f64 {
    let r = (0..m.nrows()).map(|i| (m.row(i).sum() - rows[i]).abs());
    let c = (0..m.ncols()).map(|j| (m.column(j).sum() - cols[j]).abs());
    r.chain(c).fold(0.0, f64::max)
}

/// Scale `seed` to row margins `rows` and column margins `cols`.
pub fn ipf_fit(
    seed: &DMatrix<f64>,
    rows: &[f64],
    cols: &[f64],
    config: &IpfConfig,
) -> Result<IpfOutcome> {
    config.validate()?;
    check_targets("row", rows, seed.nrows())?;
    check_targets("column", cols, seed.ncols())?;
    if seed.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain("IPF seed must be strictly positive".into()));
    }

    let mut m = seed.clone();
    let mut deviation = margin_deviation(&m, rows, cols);
    if deviation <= config.tolerance {
        return Ok(IpfOutcome {
            table: m,
            iterations: 0,
            deviation,
        });
    }
    for it in 1..=config.max_iterations {
        for i in 0..m.nrows() {
            let f = rows[i] / m.row(i).sum();
            m.row_mut(i).scale_mut(f);
        }
        for j in 0..m.ncols() {
            let f = cols[j] / m.column(j).sum();
            m.column_mut(j).scale_mut(f);
        }
        deviation = margin_deviation(&m, rows, cols);
        if deviation <= config.tolerance {
            return Ok(IpfOutcome {
                table: m,
                iterations: it,
                deviation,
            });
        }
    }
    Err(Error::IpfNonConvergence {
        iterations: config.max_iterations,
        deviation,
    })
}

/// [`ipf_fit`] returning only the adjusted table.
pub fn ipf_adjust(
    seed: &DMatrix<f64>,
    rows: &[f64],
    cols: &[f64],
    config: &IpfConfig,
) -> Result<DMatrix<f64>> {
    ipf_fit(seed, rows, cols, config).map(|o| o.table)
}
