#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::io::Write;

use common::*;
use lorgee::cli::run_with;
use lorgee::{solve_gee, GeeConfig, LinkKind, LorKind, LorStructure};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("lorgee").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn arthritis_args(extra: &[&'static str]) -> Vec<String> {
    let path = data_path("arthritis.csv").display().to_string();
    let mut v: Vec<String> = vec![
        "--data".into(),
        path,
        "--response".into(),
        "y".into(),
        "--id".into(),
        "id".into(),
        "--time".into(),
        "time".into(),
    ];
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run_owned(sub: &str, args: &[String]) -> (i32, String, String) {
    let mut all: Vec<&str> = vec![sub];
    all.extend(args.iter().map(String::as_str));
    run(&all)
}

const MODEL: [&str; 6] = [
    "--covariates",
    "factor:time,factor:trt,factor:baseline",
    "--link",
    "logit",
    "--structure",
    "uniform",
];

#[test]
fn ordinal_report_shows_the_fitted_model() {
    let (code, out, err) = run_owned("fit-ordinal", &arthritis_args(&MODEL));
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("GEE FOR ORDINAL MULTINOMIAL RESPONSES\n"));
    assert!(out.contains("Link : Cumulative logit"));
    assert!(out.contains("Structure:         uniform"));
    assert!(out.contains("Model:             3way"));
    let row = out.lines().find(|l| l.starts_with("factor(trt)2")).unwrap();
    let cells: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(&cells[1..5], ["-0.51213", "0.16799", "-3.0486", "0.00230"]);
    assert!(out.contains(" [1,] 0.000 0.000 0.000 0.000 2.257 2.257"));
    assert!(out.contains("pvalue of Null model: <0.0001"));
}

#[test]
fn text_report_is_byte_stable() {
    let a = run_owned("fit-ordinal", &arthritis_args(&MODEL));
    let b = run_owned("fit-ordinal", &arthritis_args(&MODEL));
    assert_eq!(a, b);
}

#[test]
fn structured_report_round_trips_full_precision() {
    let mut args = arthritis_args(&MODEL);
    args.extend(["--format".to_string(), "json".to_string()]);
    let (code, out, err) = run_owned("fit-ordinal", &args);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let fit = solve_gee(
        &arthritis(),
        &GeeConfig::new(LinkKind::CumulativeLogit, LorStructure::new(LorKind::Uniform)),
    )
    .unwrap();
    let se = fit.standard_errors();
    for (k, name) in fit.coefficient_names.iter().enumerate() {
        assert_eq!(v[format!("coef.{name}.estimate")].as_f64().unwrap(), fit.beta[k]);
        assert_eq!(v[format!("coef.{name}.san_se")].as_f64().unwrap(), se[k]);
    }
    let theta = fit.alpha.theta_block_matrix(3);
    assert_eq!(v["lor.dim"].as_u64().unwrap(), 12);
    for r in 0..12 {
        for c in 0..12 {
            assert_eq!(v[format!("lor.{}.{}", r + 1, c + 1)].as_f64().unwrap(), theta[(r, c)]);
        }
    }
}

#[test]
fn intrinsic_pars_prints_seven_decimals() {
    let mut args = arthritis_args(&[]);
    args.extend(["--scale".to_string(), "ordinal".to_string()]);
    let (code, out, _) = run_owned("intrinsic-pars", &args);
    assert_eq!(code, 0);
    assert_eq!(out, "0.6517843 0.9097341 0.9022272\n");
}

#[test]
fn wald_subcommand_reports_the_comparison() {
    let (code, out, err) = run_owned(
        "wald",
        &arthritis_args(&[
            "--covariates",
            "factor:time,factor:trt,factor:baseline",
            "--structure",
            "uniform",
            "--extra",
            "factor:sex,age",
        ]),
    );
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("Model under H_1: y ~ factor(time) + factor(trt) + factor(baseline) + factor(sex) + age"));
    assert!(out.contains("df=2"));
    assert!(out.contains("Wald Statistic=3.955"));
}

#[test]
fn matrix_lor_with_unit_ratios_is_uniform() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "1,1\n1,1").unwrap();
    let p = f.path().display().to_string();
    let (code, out, _) = run(&["matrix-lor", "--target", &p]);
    assert_eq!(code, 0);
    let vals: Vec<f64> = out.split_whitespace().map(|s| s.parse().unwrap()).collect();
    assert_eq!(vals.len(), 9);
    assert!(vals.iter().all(|v| (v - 1.0 / 9.0).abs() < 1e-10));
}

#[test]
fn nominal_fit_rejects_link_and_unit_score_structures() {
    let path = data_path("housing.csv").display().to_string();
    let base = ["--data", &path, "--response", "y", "--id", "id", "--time", "time"];
    let mut a = vec!["fit-nominal"];
    a.extend(base);
    a.extend(["--link", "logit"]);
    let (code, _, err) = run(&a);
    assert_eq!(code, 2);
    assert!(err.contains("--link"));
    for s in ["uniform", "category.exch"] {
        let mut a = vec!["fit-nominal"];
        a.extend(base);
        a.extend(["--structure", s]);
        let (code, _, err) = run(&a);
        assert_eq!(code, 2, "{s}: {err}");
    }
    let mut a = vec!["fit-nominal"];
    a.extend(base);
    a.extend(["--covariates", "factor:sec", "--structure", "time.exch"]);
    let (code, out, err) = run(&a);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("GEE FOR NOMINAL MULTINOMIAL RESPONSES"));
    assert!(out.contains("factor(sec)1:1"));
}

#[test]
fn exit_codes_follow_error_class() {
    assert_eq!(run(&["fit-ordinal"]).0, 2);
    assert_eq!(run(&["--help"]).0, 0);
    let (code, _, err) = run_owned("fit-ordinal", &arthritis_args(&["--covariates", "nope"]));
    assert_eq!(code, 3, "{err}");
    let (code, _, _) = run_owned(
        "fit-ordinal",
        &arthritis_args(&["--covariates", "factor:trt", "--max-iterations", "1", "--tolerance", "1e-12"]),
    );
    assert_eq!(code, 5);
    let (code, _, _) = run_owned("fit-ordinal", &arthritis_args(&["--structure", "banana"]));
    assert_eq!(code, 2);
}
