#![allow(dead_code)]

use std::path::PathBuf;

use lorgee::data::RawRow;
use lorgee::{build_dataset, DesignSpec, LinkKind, LongDataset, RawTable, Term};
use rand::rngs::StdRng;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn raw(name: &str) -> RawTable {
    let f = std::fs::File::open(data_path(name)).unwrap();
    RawTable::from_reader(f, b',').unwrap()
}

pub fn arthritis_with(terms: &[Term]) -> LongDataset {
    let spec = DesignSpec {
        response: "y".into(),
        id: "id".into(),
        time: Some("time".into()),
        terms: terms.to_vec(),
    };
    build_dataset(&raw("arthritis.csv"), &spec).unwrap()
}

pub fn arthritis_terms() -> Vec<Term> {
    vec![
        Term::Factor("time".into()),
        Term::Factor("trt".into()),
        Term::Factor("baseline".into()),
    ]
}

pub fn arthritis() -> LongDataset {
    arthritis_with(&arthritis_terms())
}

pub fn housing() -> LongDataset {
    let spec = DesignSpec {
        response: "y".into(),
        id: "id".into(),
        time: Some("time".into()),
        terms: vec![Term::Factor("time".into()), Term::Factor("sec".into())],
    };
    build_dataset(&raw("housing.csv"), &spec).unwrap()
}

/// Category probabilities written out directly from the link definitions.
pub fn oracle_probs(link: LinkKind, j: usize, beta: &[f64], x: &[f64]) -> Vec<f64> {
    let k = j - 1;
    let q = x.len();
    let dot = |b: &[f64]| b.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    let cum = |f: &dyn Fn(f64) -> f64| {
        let s = dot(&beta[k..k + q]);
        let mut c: Vec<f64> = (0..k).map(|i| f(beta[i] + s)).collect();
        c.push(1.0);
        let mut p = vec![c[0]];
        for i in 1..j {
            p.push(c[i] - c[i - 1]);
        }
        p
    };
    match link {
        LinkKind::CumulativeLogit => cum(&|e| 1.0 / (1.0 + (-e).exp())),
        LinkKind::CumulativeProbit => {
            let n = Normal::new(0.0, 1.0).unwrap();
            cum(&|e| n.cdf(e))
        }
        LinkKind::CumulativeCauchit => cum(&|e| 0.5 + e.atan() / std::f64::consts::PI),
        LinkKind::CumulativeCloglog => cum(&|e| 1.0 - (-(e.exp())).exp()),
        LinkKind::AdjacentCategoriesLogit => {
            // log(p_i / p_{i+1}) = eta_i, so log p_i - log p_J = sum_{m >= i} eta_m
            let s = dot(&beta[k..k + q]);
            let mut lp = vec![0.0; j];
            for i in (0..k).rev() {
                lp[i] = lp[i + 1] + beta[i] + s;
            }
            softmax(&lp)
        }
        LinkKind::BaselineCategoryLogit => {
            let mut lp = vec![0.0; j];
            for i in 0..k {
                lp[i] = beta[i] + dot(&beta[k + i * q..k + (i + 1) * q]);
            }
            softmax(&lp)
        }
    }
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|a| (a - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|a| a / s).collect()
}

pub fn n_params(link: LinkKind, j: usize, q: usize) -> usize {
    if link == LinkKind::BaselineCategoryLogit {
        (j - 1) * (1 + q)
    } else {
        j - 1 + q
    }
}

/// Random parameter vector; cumulative intercepts are increasing.
pub fn random_beta(rng: &mut StdRng, link: LinkKind, j: usize, q: usize) -> Vec<f64> {
    let p = n_params(link, j, q);
    let mut b: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
    if link.is_cumulative() {
        let mut c = rng.gen_range(-1.5..-0.5);
        for v in b.iter_mut().take(j - 1) {
            *v = c;
            c += rng.gen_range(0.5..1.5);
        }
    }
    b
}

pub fn draw_category(rng: &mut StdRng, p: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Long-format rows from per-subject responses and covariates.
pub fn dataset_from(
    responses: &[Vec<usize>],
    covariates: &[Vec<Vec<f64>>],
    names: &[&str],
) -> LongDataset {
    let mut rows = Vec::new();
    for (i, ys) in responses.iter().enumerate() {
        for (t, &y) in ys.iter().enumerate() {
            rows.push(RawRow {
                subject: Some(format!("{i}")),
                time: Some(format!("{}", t + 1)),
                response: Some(format!("{}", y + 1)),
                covariates: covariates[i][t].iter().map(|&v| Some(v)).collect(),
            });
        }
    }
    LongDataset::from_rows(rows, names.iter().map(|s| s.to_string()).collect()).unwrap()
}

/// Multinomial log-likelihood of independent observations.
pub fn loglik(link: LinkKind, j: usize, beta: &[f64], ys: &[usize], xs: &[Vec<f64>]) -> f64 {
    let mut l = 0.0;
    for (y, x) in ys.iter().zip(xs) {
        let p = oracle_probs(link, j, beta, x)[*y];
        if !(p > 0.0) {
            return f64::NEG_INFINITY;
        }
        l += p.ln();
    }
    l
}

fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, b: &[f64], h: f64) -> Vec<f64> {
    (0..b.len())
        .map(|k| {
            let mut up = b.to_vec();
            let mut dn = b.to_vec();
            up[k] += h;
            dn[k] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

/// Maximum likelihood by Newton's method on finite-difference derivatives.
pub fn fd_newton_mle(
    link: LinkKind,
    j: usize,
    start: &[f64],
    ys: &[usize],
    xs: &[Vec<f64>],
) -> Vec<f64> {
    let f = |b: &[f64]| loglik(link, j, b, ys, xs);
    let p = start.len();
    let mut b = start.to_vec();
    for _ in 0..200 {
        let g = fd_gradient(&f, &b, 1e-5);
        let mut h = nalgebra::DMatrix::<f64>::zeros(p, p);
        let eps = 1e-4;
        for k in 0..p {
            let mut up = b.clone();
            let mut dn = b.clone();
            up[k] += eps;
            dn[k] -= eps;
            let gu = fd_gradient(&f, &up, 1e-5);
            let gd = fd_gradient(&f, &dn, 1e-5);
            for m in 0..p {
                h[(m, k)] = (gu[m] - gd[m]) / (2.0 * eps);
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        let step = (-h)
            .lu()
            .solve(&nalgebra::DVector::from_vec(g.clone()))
            .expect("singular oracle Hessian");
        let base = f(&b);
        let mut s = 1.0;
        let mut next = b.clone();
        for _ in 0..30 {
            next = b.iter().zip(step.iter()).map(|(a, d)| a + s * d).collect();
            if f(&next) >= base - 1e-12 {
                break;
            }
            s *= 0.5;
        }
        let change = b.iter().zip(&next).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        b = next;
        if change < 1e-11 {
            break;
        }
    }
    b
}

/// Closed-form cell (1,1) of the 2x2 table with odds ratio `psi` and
/// margins `r1`, `c1`.
pub fn two_by_two_p11(psi: f64, r1: f64, c1: f64) -> f64 {
    if (psi - 1.0).abs() < 1e-14 {
        return r1 * c1;
    }
    // psi (r1 - p)(c1 - p) = p (1 - r1 - c1 + p)
    let a = psi - 1.0;
    let b = -(psi * (r1 + c1) + 1.0 - r1 - c1);
    let c = psi * r1 * c1;
    let disc = (b * b - 4.0 * a * c).sqrt();
    let lo = (r1 + c1 - 1.0).max(0.0);
    let hi = r1.min(c1);
    [(-b - disc) / (2.0 * a), (-b + disc) / (2.0 * a)]
        .into_iter()
        .find(|p| *p > lo && *p < hi)
        .expect("no admissible root")
}

/// Log local odds ratios computed directly from the cells.
pub fn log_local_or(t: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
    let (r, c) = t.shape();
    nalgebra::DMatrix::from_fn(r - 1, c - 1, |a, b| {
        (t[(a, b)] * t[(a + 1, b + 1)] / (t[(a, b + 1)] * t[(a + 1, b)])).ln()
    })
}
