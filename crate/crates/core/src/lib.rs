//! Generalized estimating equations for correlated nominal and ordinal
//! multinomial responses, with the association between repeated responses
//! modelled through local odds ratios.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod cli;
pub mod data;
pub mod design;
pub mod error;
pub mod gee;
pub mod inference;
pub mod ipf;
pub mod marginal;
pub mod report;

pub use association::{
    fit_structure, intrinsic_pars, local_or_of_table, matrix_lor, LorAlpha, LorKind, LorMethod,
    LorStructure, ResponseScale,
};
pub use data::{load_dataset, ColumnSpec, LongDataset, PairGrouping, RawTable};
pub use design::{build_dataset, DesignSpec, Term};
pub use error::{Error, Result};
pub use gee::{fit_nominal, fit_ordinal, solve_gee, FitControl, GeeConfig, GeeFit, InversionMethod};
pub use inference::{compare_nested, null_model_test, wald_test, WaldResult};
pub use ipf::{ipf_adjust, ipf_fit, IpfConfig};
pub use marginal::{BetaVector, LinkKind, MarginalModel};
pub use report::{summarize, Report};
