//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 association fit,
//! 5 GEE non-convergence, 6 numerical failure.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::association::{
    intrinsic_pars, matrix_lor, read_fixed_tables, LorKind, LorMethod, LorStructure,
    ResponseScale,
};
use crate::data::RawTable;
use crate::design::{build_dataset, formula_text, parse_terms, DesignSpec, Term};
use crate::error::{Error, Result};
use crate::gee::{solve_gee, GeeConfig, GeeFit, InversionMethod};
use crate::inference::compare_nested;
use crate::marginal::{BetaVector, LinkKind};
use crate::report::{format_block_matrix, format_wald, summarize, wald_json};

#[derive(Debug, Parser)]
#[command(name = "lorgee", version, about = "Local odds ratios GEE for correlated multinomial responses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a cumulative link or adjacent-categories logit marginal model.
    FitOrdinal(FitArgs),
    /// Fit a baseline-category logit marginal model.
    FitNominal(FitArgs),
    /// Estimated intrinsic association parameter of each time-pair.
    IntrinsicPars(IntrinsicArgs),
    /// Wald goodness-of-fit test of a model against one with extra terms.
    Wald(WaldArgs),
    /// Probability table with prescribed local odds ratios.
    MatrixLor(MatrixLorArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub response: String,
    #[arg(long)]
    pub id: String,
    #[arg(long)]
    pub time: Option<String>,
    #[arg(long, default_value = ",")]
    pub delimiter: char,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Comma-separated terms: `factor:col`, `numeric:col` or `col`.
    #[arg(long, default_value = "")]
    pub covariates: String,
    /// logit, probit, cauchit, cloglog or acl (ordinal fits only).
    #[arg(long)]
    pub link: Option<String>,
    /// independence, uniform, category.exch, time.exch, RC or fixed.
    #[arg(long)]
    pub structure: Option<String>,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub homogeneous: bool,
    /// 3way or 2way.
    #[arg(long, default_value = "3way")]
    pub method: String,
    /// Constant added to every pair-table cell.
    #[arg(long)]
    pub add: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 15)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub ipf_tolerance: f64,
    #[arg(long, default_value_t = 200)]
    pub ipf_max_iterations: usize,
    /// solve, qr or cholesky.
    #[arg(long, default_value = "solve")]
    pub inversion: String,
    /// File of starting values, separated by commas or whitespace.
    #[arg(long)]
    pub start: Option<PathBuf>,
    /// CSV of L rows with J^2 probabilities each (structure `fixed`).
    #[arg(long)]
    pub fixed_tables: Option<PathBuf>,
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "text")]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args)]
pub struct IntrinsicArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "ordinal")]
    pub scale: String,
    #[arg(long)]
    pub add: Option<f64>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args)]
pub struct WaldArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Terms added under the alternative hypothesis.
    #[arg(long)]
    pub extra: String,
    #[arg(long, default_value = "ordinal")]
    pub scale: String,
    #[arg(long, value_enum, default_value = "text")]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args)]
pub struct MatrixLorArgs {
    /// CSV with the (J-1) x (J-1) local odds ratios.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub format: OutputFormat,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn delimiter_byte(c: char) -> Result<u8> {
    u8::try_from(c).map_err(|_| Error::Usage(format!("--delimiter `{c}` is not a single byte")))
}

fn read_table(args: &DataArgs) -> Result<RawTable> {
    RawTable::from_reader(open(&args.data)?, delimiter_byte(args.delimiter)?)
}

fn read_numbers(path: &Path) -> Result<Vec<f64>> {
    let text = io::read_to_string(open(path)?)?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: 0,
                column: path.display().to_string(),
                value: s.to_string(),
            })
        })
        .collect()
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        match rec.iter().map(str::parse::<f64>).collect::<std::result::Result<Vec<_>, _>>() {
            Ok(v) => rows.push(v),
            Err(_) if k == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    line: k + 1,
                    column: path.display().to_string(),
                    value: rec.iter().collect::<Vec<_>>().join(","),
                })
            }
        }
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::DimensionMismatch("target must be a non-empty rectangular matrix".into()));
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |r, c| rows[r][c]))
}

struct PreparedFit {
    config: GeeConfig,
    design: DesignSpec,
}

fn prepare_fit(
    data: &DataArgs,
    model: &ModelArgs,
    scale: ResponseScale,
    terms: Vec<Term>,
    n_categories: impl Fn(&DesignSpec) -> Result<usize>,
) -> Result<PreparedFit> {
    let link = match (scale, &model.link) {
        (ResponseScale::Nominal, Some(_)) => {
            return Err(Error::Usage("--link is not available for nominal responses".into()))
        }
        (ResponseScale::Nominal, None) => LinkKind::BaselineCategoryLogit,
        (ResponseScale::Ordinal, None) => LinkKind::CumulativeLogit,
        (ResponseScale::Ordinal, Some(l)) => {
            let link: LinkKind = l.parse()?;
            if !link.is_ordinal() {
                return Err(Error::Usage(format!("--link {l} is not an ordinal link")));
            }
            link
        }
    };
    let design = DesignSpec {
        response: data.response.clone(),
        id: data.id.clone(),
        time: data.time.clone(),
        terms,
    };
    let kind: LorKind = match &model.structure {
        Some(s) => s.parse()?,
        None => LorStructure::default_for(scale).kind,
    };
    if scale == ResponseScale::Nominal && kind.requires_ordinal() {
        return Err(Error::Usage(format!(
            "--structure {kind} assumes ordered categories and is not available for nominal responses"
        )));
    }
    let mut structure = LorStructure::new(kind)
        .with_homogeneous(model.homogeneous)
        .with_method(model.method.parse::<LorMethod>()?);
    if kind == LorKind::Fixed {
        let path = model
            .fixed_tables
            .as_ref()
            .ok_or_else(|| Error::Usage("--structure fixed needs --fixed-tables".into()))?;
        let j = n_categories(&design)?;
        structure.fixed_tables = Some(read_fixed_tables(
            open(path)?,
            j,
            delimiter_byte(data.delimiter)?,
        )?);
    }
    let mut config = GeeConfig::new(link, structure);
    config.add = model.add;
    config.control.tolerance = model.tolerance;
    config.control.max_iterations = model.max_iterations;
    config.control.inversion = model.inversion.parse::<InversionMethod>()?;
    config.control.verbose = model.verbose;
    config.ipf.tolerance = model.ipf_tolerance;
    config.ipf.max_iterations = model.ipf_max_iterations;
    if let Some(p) = &model.start {
        config.start = Some(BetaVector(read_numbers(p)?));
    }
    Ok(PreparedFit { config, design })
}

fn fit_from_table(table: &RawTable, prepared: &PreparedFit) -> Result<GeeFit> {
    let data = build_dataset(table, &prepared.design)?;
    solve_gee(&data, &prepared.config)
}

fn write_json(out: &mut dyn Write, v: &serde_json::Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, v).map_err(|e| Error::Io(e.into()))?;
    writeln!(out)?;
    Ok(())
}

fn run_fit(args: &FitArgs, scale: ResponseScale, call: &str, out: &mut dyn Write) -> Result<()> {
    let table = read_table(&args.data)?;
    let terms = parse_terms(&args.model.covariates)?;
    let prepared = prepare_fit(&args.data, &args.model, scale, terms, |d| {
        Ok(build_dataset(&table, d)?.n_categories())
    })?;
    let fit = fit_from_table(&table, &prepared)?;
    let report = summarize(&fit, call);
    match args.format {
        OutputFormat::Text => write!(out, "{report}")?,
        OutputFormat::Json => write_json(out, &report.to_json())?,
    }
    Ok(())
}

fn run_intrinsic(args: &IntrinsicArgs, out: &mut dyn Write) -> Result<()> {
    let table = read_table(&args.data)?;
    let scale: ResponseScale = args.scale.parse()?;
    let design = DesignSpec {
        response: args.data.response.clone(),
        id: args.data.id.clone(),
        time: args.data.time.clone(),
        terms: Vec::new(),
    };
    let data = build_dataset(&table, &design)?;
    let phi = intrinsic_pars(&data, scale, args.add)?;
    match args.format {
        OutputFormat::Text => {
            let s: Vec<String> = phi.iter().map(|v| format!("{v:.7}")).collect();
            writeln!(out, "{}", s.join(" "))?;
        }
        OutputFormat::Json => {
            write_json(out, &serde_json::json!({ "intrinsic_parameters": phi }))?
        }
    }
    Ok(())
}

fn run_wald(args: &WaldArgs, out: &mut dyn Write) -> Result<()> {
    let table = read_table(&args.data)?;
    let scale: ResponseScale = args.scale.parse()?;
    let h0_terms = parse_terms(&args.model.covariates)?;
    let extra = parse_terms(&args.extra)?;
    if extra.is_empty() {
        return Err(Error::Usage("--extra needs at least one term".into()));
    }
    let h1_terms: Vec<Term> = h0_terms.iter().cloned().chain(extra).collect();
    let n_cat = |d: &DesignSpec| Ok(build_dataset(&table, d)?.n_categories());
    let p0 = prepare_fit(&args.data, &args.model, scale, h0_terms.clone(), n_cat)?;
    let mut p1 = prepare_fit(&args.data, &args.model, scale, h1_terms.clone(), n_cat)?;
    p1.config.start = None;
    let fit0 = fit_from_table(&table, &p0)?;
    let fit1 = fit_from_table(&table, &p1)?;
    let result = compare_nested(&fit0, &fit1)?;
    let h0 = formula_text(&args.data.response, &h0_terms);
    let h1 = formula_text(&args.data.response, &h1_terms);
    match args.format {
        OutputFormat::Text => write!(out, "{}", format_wald(&result, &h0, &h1))?,
        OutputFormat::Json => write_json(out, &wald_json(&result, &h0, &h1))?,
    }
    Ok(())
}

fn run_matrix_lor(args: &MatrixLorArgs, out: &mut dyn Write) -> Result<()> {
    let target = read_matrix(&args.target)?;
    let table = matrix_lor(&target)?;
    match args.format {
        OutputFormat::Text => write!(out, "{}", format_block_matrix_full(&table))?,
        OutputFormat::Json => {
            let rows: Vec<Vec<f64>> = table.row_iter().map(|r| r.iter().copied().collect()).collect();
            write_json(out, &serde_json::json!({ "table": rows }))?
        }
    }
    Ok(())
}

fn format_block_matrix_full(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.10}", m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    if m.nrows() == 0 {
        s.push_str(&format_block_matrix(m));
    }
    s
}

/// Run with explicit argument vector and sinks; returns the exit status.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    let call = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    let res = match &cli.command {
        Command::FitOrdinal(a) => run_fit(a, ResponseScale::Ordinal, &call, out),
        Command::FitNominal(a) => run_fit(a, ResponseScale::Nominal, &call, out),
        Command::IntrinsicPars(a) => run_intrinsic(a, out),
        Command::Wald(a) => run_wald(a, out),
        Command::MatrixLor(a) => run_matrix_lor(a, out),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
