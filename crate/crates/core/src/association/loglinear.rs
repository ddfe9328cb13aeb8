//! Poisson log-linear fits behind the association structures.
//!
//! A problem stacks `G` two-way tables of size `J x J`. Each table gets its
//! own intercept, row and column main effects. The association term is
//! `phi_g * u_a * v_b` with the intrinsic parameter either shared or per
//! table, and the scores `u`, `v` shared by every table of the problem.
//! Scores are either the unit-spaced `1..J` or estimated by alternating a
//! Poisson GLM in `(lambda, phi)` with Fisher-scoring updates of the scores.

use nalgebra::{DMatrix, DVector};

pub(crate) const OUTER_TOL: f64 = 1e-8;
pub(crate) const OUTER_MAX: usize = 500;
const GLM_MAX: usize = 200;
const INNER_SCORE_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ScoreMode {
    Unit,
    Estimated { homogeneous: bool },
}

#[derive(Debug, Clone)]
pub(crate) struct AssocProblem<'a> {
    pub tables: Vec<&'a DMatrix<f64>>,
    pub shared_phi: bool,
    pub scores: ScoreMode,
}

#[derive(Debug, Clone)]
pub(crate) struct AssocFit {
    /// One entry per table.
    pub phi: Vec<f64>,
    pub row_scores: Vec<f64>,
    pub col_scores: Vec<f64>,
    /// Fitted expected counts per table.
    pub fitted: Vec<DMatrix<f64>>,
    pub loglik: f64,
    pub iterations: usize,
}

pub(crate) struct GlmFit {
    pub beta: DVector<f64>,
    pub eta: DVector<f64>,
    pub loglik: f64,
}

fn poisson_loglik(y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    y.iter()
        .zip(eta.iter())
        .map(|(&yi, &e)| yi * e - e.exp())
        .sum()
}

fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    match a.clone().cholesky() {
        Some(c) => Some(c.solve(b)),
        None => a.lu().solve(b),
    }
}

/// Newton-Raphson for a Poisson log-linear model with offset.
pub(crate) fn poisson_glm(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    offset: &DVector<f64>,
    start: Option<&DVector<f64>>,
) -> Result<GlmFit, String> {
    let mut beta = match start {
        Some(b) if b.len() == x.ncols() => b.clone(),
        _ => {
            // one weighted least squares step from mu = y + 0.5
            let mu0 = y.map(|v| v + 0.5);
            let z = DVector::from_iterator(
                y.len(),
                (0..y.len()).map(|i| mu0[i].ln() + (y[i] - mu0[i]) / mu0[i] - offset[i]),
            );
            let xtw = weighted_t(x, &mu0);
            solve_spd(&xtw * x, &(&xtw * z)).ok_or("singular design at start")?
        }
    };
    let mut eta = offset + x * &beta;
    let mut ll = poisson_loglik(y, &eta);
    for _ in 0..GLM_MAX {
        let mu = eta.map(f64::exp);
        let xtw = weighted_t(x, &mu);
        let score = x.tr_mul(&(y - &mu));
        let step = solve_spd(&xtw * x, &score).ok_or("singular information matrix")?;
        let decrement = score.dot(&step);
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &step * s;
            let cand_eta = offset + x * &cand;
            let cand_ll = poisson_loglik(y, &cand_eta);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = cand;
                eta = cand_eta;
                let change = cand_ll - ll;
                ll = cand_ll;
                accepted = true;
                if decrement.abs() < 1e-20 || change.abs() <= 1e-14 * ll.abs().max(1.0) {
                    return Ok(GlmFit { beta, eta, loglik: ll });
                }
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            // no ascent along the Newton direction: at the optimum to machine precision
            if decrement.abs() < 1e-8 * ll.abs().max(1.0) {
                return Ok(GlmFit { beta, eta, loglik: ll });
            }
            return Err("step halving failed".into());
        }
    }
    Err(format!("Poisson GLM did not converge in {GLM_MAX} iterations"))
}

fn weighted_t(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xt = x.transpose();
    for (j, mut col) in xt.column_iter_mut().enumerate() {
        col *= w[j];
    }
    xt
}

impl AssocProblem<'_> {
    fn n_cat(&self) -> usize {
        self.tables[0].nrows()
    }

    fn counts(&self) -> DVector<f64> {
        let j = self.n_cat();
        let mut y = DVector::zeros(self.tables.len() * j * j);
        for (g, t) in self.tables.iter().enumerate() {
            for a in 0..j {
                for b in 0..j {
                    y[g * j * j + a * j + b] = t[(a, b)];
                }
            }
        }
        y
    }

    fn main_design(&self) -> DMatrix<f64> {
        let j = self.n_cat();
        let g_count = self.tables.len();
        let per = 2 * j - 1;
        let mut x = DMatrix::zeros(g_count * j * j, g_count * per);
        for g in 0..g_count {
            for a in 0..j {
                for b in 0..j {
                    let r = g * j * j + a * j + b;
                    let c0 = g * per;
                    x[(r, c0)] = 1.0;
                    if a > 0 {
                        x[(r, c0 + a)] = 1.0;
                    }
                    if b > 0 {
                        x[(r, c0 + j - 1 + b)] = 1.0;
                    }
                }
            }
        }
        x
    }

    fn n_phi(&self) -> usize {
        if self.shared_phi {
            1
        } else {
            self.tables.len()
        }
    }

    fn full_design(&self, main: &DMatrix<f64>, u: &[f64], v: &[f64]) -> DMatrix<f64> {
        let j = self.n_cat();
        let nm = main.ncols();
        let mut x = DMatrix::zeros(main.nrows(), nm + self.n_phi());
        x.columns_mut(0, nm).copy_from(main);
        for g in 0..self.tables.len() {
            let col = nm + if self.shared_phi { 0 } else { g };
            for a in 0..j {
                for b in 0..j {
                    x[(g * j * j + a * j + b, col)] = u[a] * v[b];
                }
            }
        }
        x
    }

    /// Marginal weights for score normalization, pooled over tables.
    fn margin_weights(&self) -> (Vec<f64>, Vec<f64>) {
        let j = self.n_cat();
        let mut r = vec![0.0; j];
        let mut c = vec![0.0; j];
        for t in &self.tables {
            for a in 0..j {
                for b in 0..j {
                    r[a] += t[(a, b)];
                    c[b] += t[(a, b)];
                }
            }
        }
        let total: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= total);
        c.iter_mut().for_each(|v| *v /= total);
        (r, c)
    }

    pub fn fit(&self) -> Result<AssocFit, String> {
        let j = self.n_cat();
        let g_count = self.tables.len();
        let y = self.counts();
        let main = self.main_design();
        let zero = DVector::zeros(y.len());
        let unit: Vec<f64> = (1..=j).map(|k| k as f64).collect();

        let (w_row, w_col) = self.margin_weights();
        let homogeneous = matches!(self.scores, ScoreMode::Estimated { homogeneous: true });
        let w_hom: Vec<f64> = w_row.iter().zip(&w_col).map(|(a, b)| 0.5 * (a + b)).collect();
        let (mut u, mut v) = match self.scores {
            ScoreMode::Unit => (unit.clone(), unit),
            ScoreMode::Estimated { homogeneous } => {
                if homogeneous {
                    let s = standardize(&unit, &w_hom)?;
                    (s.clone(), s)
                } else {
                    (standardize(&unit, &w_row)?, standardize(&unit, &w_col)?)
                }
            }
        };

        let mut start: Option<DVector<f64>> = None;
        let mut prev_ll = f64::NAN;
        for outer in 1..=OUTER_MAX {
            let x = self.full_design(&main, &u, &v);
            let glm = poisson_glm(&y, &x, &zero, start.as_ref())?;
            let nm = main.ncols();
            let phis: Vec<f64> = (0..g_count)
                .map(|g| glm.beta[nm + if self.shared_phi { 0 } else { g }])
                .collect();

            let done = match self.scores {
                ScoreMode::Unit => true,
                ScoreMode::Estimated { .. } => {
                    outer > 1 && (glm.loglik - prev_ll).abs() <= OUTER_TOL * prev_ll.abs().max(1.0)
                }
            };
            if done {
                let fitted = (0..g_count)
                    .map(|g| DMatrix::from_fn(j, j, |a, b| glm.eta[g * j * j + a * j + b].exp()))
                    .collect();
                return Ok(AssocFit {
                    phi: phis,
                    row_scores: u,
                    col_scores: v,
                    fitted,
                    loglik: glm.loglik,
                    iterations: outer,
                });
            }
            prev_ll = glm.loglik;

            let main_eta = &main * glm.beta.rows(0, nm);
            let (nu, nv) = update_scores(&y, &main_eta, &phis, j, &u, &v, homogeneous)?;
            if homogeneous {
                u = standardize(&nu, &w_hom)?;
                v = u.clone();
            } else {
                u = standardize(&nu, &w_row)?;
                v = standardize(&nv, &w_col)?;
            }
            start = Some(glm.beta);
        }
        Err(format!(
            "alternating association fit did not converge in {OUTER_MAX} iterations"
        ))
    }
}

/// Weighted mean 0, weighted variance 1, first score below the last.
pub(crate) fn standardize(s: &[f64], w: &[f64]) -> Result<Vec<f64>, String> {
    let m: f64 = s.iter().zip(w).map(|(a, b)| a * b).sum();
    let var: f64 = s.iter().zip(w).map(|(a, b)| b * (a - m) * (a - m)).sum();
    if !(var > 1e-300) || !var.is_finite() {
        return Err("score parameters collapsed to a constant".into());
    }
    let sd = var.sqrt();
    let mut out: Vec<f64> = s.iter().map(|a| (a - m) / sd).collect();
    if out[0] > out[out.len() - 1] {
        out.iter_mut().for_each(|a| *a = -*a);
    }
    Ok(out)
}

/// Fisher scoring on the scores with main effects and phi held fixed.
fn update_scores(
    y: &DVector<f64>,
    offset: &DVector<f64>,
    phis: &[f64],
    j: usize,
    u: &[f64],
    v: &[f64],
    homogeneous: bool,
) -> Result<(Vec<f64>, Vec<f64>), String> {
    let n_par = if homogeneous { j } else { 2 * j };
    let mut theta: Vec<f64> = if homogeneous {
        u.to_vec()
    } else {
        u.iter().chain(v).copied().collect()
    };
    let split = |t: &[f64]| -> (Vec<f64>, Vec<f64>) {
        if homogeneous {
            (t.to_vec(), t.to_vec())
        } else {
            (t[..j].to_vec(), t[j..].to_vec())
        }
    };
    let eta_of = |t: &[f64]| -> DVector<f64> {
        let (uu, vv) = split(t);
        DVector::from_fn(y.len(), |r, _| {
            let g = r / (j * j);
            let a = (r / j) % j;
            let b = r % j;
            offset[r] + phis[g] * uu[a] * vv[b]
        })
    };

    let mut eta = eta_of(&theta);
    let mut ll = poisson_loglik(y, &eta);
    for _ in 0..INNER_SCORE_STEPS {
        let (uu, vv) = split(&theta);
        let mut jac = DMatrix::<f64>::zeros(y.len(), n_par);
        for r in 0..y.len() {
            let g = r / (j * j);
            let a = (r / j) % j;
            let b = r % j;
            let phi = phis[g];
            if homogeneous {
                jac[(r, a)] += phi * vv[b];
                jac[(r, b)] += phi * uu[a];
            } else {
                jac[(r, a)] += phi * vv[b];
                jac[(r, j + b)] += phi * uu[a];
            }
        }
        let mu = eta.map(f64::exp);
        let info = weighted_t(&jac, &mu) * &jac;
        let score = jac.tr_mul(&(y - &mu));
        let svd = info.svd(true, true);
        let eps = 1e-12 * svd.singular_values.max().max(1e-300);
        let step = svd.solve(&score, eps)?;
        let mut s = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, d)| t + s * d).collect();
            let ce = eta_of(&cand);
            let cl = poisson_loglik(y, &ce);
            if cl.is_finite() && cl >= ll {
                let gain = cl - ll;
                theta = cand;
                eta = ce;
                ll = cl;
                moved = gain > 1e-12 * ll.abs().max(1.0);
                break;
            }
            s *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(split(&theta))
}
