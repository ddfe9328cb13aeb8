//! Fit summaries as plain text and as a flat key-value JSON document.

use std::fmt::{self, Write as _};

use nalgebra::DMatrix;
use serde_json::{Map, Value};

use crate::association::ResponseScale;
use crate::gee::GeeFit;
use crate::inference::{normal_two_sided, null_model_test, WaldResult};

#[derive(Debug, Clone, PartialEq)]
pub struct CoefRow {
    pub name: String,
    pub estimate: f64,
    pub san_se: f64,
    pub san_z: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub title: String,
    pub link: String,
    pub structure: String,
    pub method: String,
    pub call: String,
    /// Min, first quartile, median, mean, third quartile, max.
    pub residual_summary: [f64; 6],
    pub iterations: usize,
    pub coefficients: Vec<CoefRow>,
    /// `T(J-1)` square block matrix of local odds ratios.
    pub theta: DMatrix<f64>,
    pub null_test: Option<WaldResult>,
    pub n_subjects: usize,
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn residual_summary(fit: &GeeFit) -> [f64; 6] {
    let mut r: Vec<f64> = fit.residuals.iter().flatten().copied().collect();
    if r.is_empty() {
        return [f64::NAN; 6];
    }
    r.sort_by(f64::total_cmp);
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    [
        r[0],
        quantile_sorted(&r, 0.25),
        quantile_sorted(&r, 0.5),
        mean,
        quantile_sorted(&r, 0.75),
        r[r.len() - 1],
    ]
}

/// Build the summary of a fit; `call` is echoed verbatim.
pub fn summarize(fit: &GeeFit, call: &str) -> Report {
    let se = fit.standard_errors();
    let coefficients = fit
        .coefficient_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let z = fit.beta[k] / se[k];
            CoefRow {
                name: name.clone(),
                estimate: fit.beta[k],
                san_se: se[k],
                san_z: z,
                p_value: normal_two_sided(z),
            }
        })
        .collect();
    let title = match fit.scale() {
        ResponseScale::Ordinal => "GEE FOR ORDINAL MULTINOMIAL RESPONSES",
        ResponseScale::Nominal => "GEE FOR NOMINAL MULTINOMIAL RESPONSES",
    };
    Report {
        title: title.to_string(),
        link: fit.model.link.description().to_string(),
        structure: fit.alpha.kind.name().to_string(),
        method: fit.alpha.method.name().to_string(),
        call: call.to_string(),
        residual_summary: residual_summary(fit),
        iterations: fit.iterations,
        coefficients,
        theta: fit.alpha.theta_block_matrix(fit.n_times),
        null_test: null_model_test(fit).ok(),
        n_subjects: fit.n_subjects,
    }
}

fn signif_stars(p: f64) -> &'static str {
    match p {
        p if p < 0.001 => "***",
        p if p < 0.01 => "**",
        p if p < 0.05 => "*",
        p if p < 0.1 => ".",
        _ => "",
    }
}

fn format_p(p: f64) -> String {
    if p < 1e-5 {
        "<0.00001".to_string()
    } else {
        format!("{p:.5}")
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.title)?;
        writeln!(f, "lorgee version {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(f)?;
        writeln!(f, "Link : {}", self.link)?;
        writeln!(f)?;
        writeln!(f, "Local Odds Ratios:")?;
        writeln!(f, "Structure:         {}", self.structure)?;
        writeln!(f, "Model:             {}", self.method)?;
        writeln!(f)?;
        writeln!(f, "call:")?;
        writeln!(f, "{}", self.call)?;
        writeln!(f)?;
        writeln!(f, "Summary of residuals:")?;
        let heads = ["Min.", "1st Qu.", "Median", "Mean", "3rd Qu.", "Max."];
        let line: String = heads.iter().map(|h| format!("{h:>11}")).collect();
        writeln!(f, "{line}")?;
        let vals: String = self
            .residual_summary
            .iter()
            .map(|v| format!("{v:>11.7}"))
            .collect();
        writeln!(f, "{vals}")?;
        writeln!(f)?;
        writeln!(f, "Number of Iterations: {}", self.iterations)?;
        writeln!(f)?;
        writeln!(f, "Coefficients:")?;
        let w = self
            .coefficients
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(0)
            .max(8);
        writeln!(
            f,
            "{:<w$} {:>10} {:>9} {:>9} {:>13}",
            "", "Estimate", "san.se", "san.z", "Pr(>|san.z|)"
        )?;
        for c in &self.coefficients {
            writeln!(
                f,
                "{:<w$} {:>10.5} {:>9.5} {:>9.4} {:>13} {}",
                c.name,
                c.estimate,
                c.san_se,
                c.san_z,
                format_p(c.p_value),
                signif_stars(c.p_value)
            )?;
        }
        writeln!(f, "---")?;
        writeln!(f, "Signif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1")?;
        writeln!(f)?;
        writeln!(f, "Local Odds Ratios Estimates:")?;
        write!(f, "{}", format_block_matrix(&self.theta))?;
        writeln!(f)?;
        match &self.null_test {
            Some(t) if t.p_value < 1e-4 => writeln!(f, "pvalue of Null model: <0.0001")?,
            Some(t) => writeln!(f, "pvalue of Null model: {:.4}", t.p_value)?,
            None => writeln!(f, "pvalue of Null model: NA")?,
        }
        Ok(())
    }
}

/// R-style matrix print with 3 decimals.
pub fn format_block_matrix(m: &DMatrix<f64>) -> String {
    let cells: Vec<Vec<String>> = (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| format!("{:.3}", m[(r, c)])).collect())
        .collect();
    let col_heads: Vec<String> = (1..=m.ncols()).map(|c| format!("[,{c}]")).collect();
    let row_heads: Vec<String> = (1..=m.nrows()).map(|r| format!("[{r},]")).collect();
    let rw = row_heads.iter().map(String::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..m.ncols())
        .map(|c| {
            cells
                .iter()
                .map(|row| row[c].len())
                .chain([col_heads[c].len()])
                .max()
                .unwrap()
        })
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:rw$}", "");
    for (c, h) in col_heads.iter().enumerate() {
        let _ = write!(out, " {:>w$}", h, w = widths[c]);
    }
    out.push('\n');
    for (r, row) in cells.iter().enumerate() {
        let _ = write!(out, "{:>rw$}", row_heads[r]);
        for (c, v) in row.iter().enumerate() {
            let _ = write!(out, " {:>w$}", v, w = widths[c]);
        }
        out.push('\n');
    }
    out
}

impl Report {
    /// Flat key-value document; numbers keep full double precision.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        let mut put = |k: String, v: Value| {
            m.insert(k, v);
        };
        put("title".into(), self.title.clone().into());
        put("link".into(), self.link.clone().into());
        put("structure".into(), self.structure.clone().into());
        put("model".into(), self.method.clone().into());
        put("call".into(), self.call.clone().into());
        put("n_subjects".into(), self.n_subjects.into());
        put("iterations".into(), self.iterations.into());
        let keys = ["min", "q1", "median", "mean", "q3", "max"];
        for (k, v) in keys.iter().zip(self.residual_summary) {
            put(format!("residuals.{k}"), v.into());
        }
        put(
            "coefficients".into(),
            self.coefficients.iter().map(|c| c.name.clone()).collect::<Vec<_>>().into(),
        );
        for c in &self.coefficients {
            put(format!("coef.{}.estimate", c.name), c.estimate.into());
            put(format!("coef.{}.san_se", c.name), c.san_se.into());
            put(format!("coef.{}.san_z", c.name), c.san_z.into());
            put(format!("coef.{}.p_value", c.name), c.p_value.into());
        }
        put("lor.dim".into(), self.theta.nrows().into());
        for r in 0..self.theta.nrows() {
            for c in 0..self.theta.ncols() {
                put(format!("lor.{}.{}", r + 1, c + 1), self.theta[(r, c)].into());
            }
        }
        match &self.null_test {
            Some(t) => {
                put("null.statistic".into(), t.statistic.into());
                put("null.df".into(), t.df.into());
                put("null.p_value".into(), t.p_value.into());
            }
            None => put("null.p_value".into(), Value::Null),
        }
        Value::Object(m)
    }
}

/// Flat key-value document for a Wald comparison.
pub fn wald_json(result: &WaldResult, h0: &str, h1: &str) -> Value {
    let mut m = Map::new();
    m.insert("h0".into(), h0.into());
    m.insert("h1".into(), h1.into());
    m.insert("statistic".into(), result.statistic.into());
    m.insert("df".into(), result.df.into());
    m.insert("p_value".into(), result.p_value.into());
    m.insert("tested".into(), result.tested.clone().into());
    Value::Object(m)
}

pub fn format_wald(result: &WaldResult, h0: &str, h1: &str) -> String {
    format!(
        "Goodness of Fit based on the Wald test \n\nModel under H_0: {h0}\nModel under H_1: {h1}\n\nWald Statistic={:.4}, df={}, p-value={:.4}\n",
        result.statistic, result.df, result.p_value
    )
}
