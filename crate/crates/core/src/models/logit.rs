use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{log1p_exp, sigmoid, Design};
use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 40;
/// Fitted log-odds beyond this put a probability within 2e-9 of 0 or 1.
const SEPARATION_ETA: f64 = 20.0;

#[derive(Debug, Clone, Serialize)]
pub struct LogitFit {
    pub names: Vec<String>,
    /// Log-odds coefficients on the original covariate scale.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    /// Set when the likelihood has no finite maximizer along the Newton path.
    pub separated: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Max-norm of the mean-log-likelihood gradient, on column-scaled covariates.
    pub gradient_norm: f64,
    /// Log-likelihood after every accepted Newton step.
    pub trace: Vec<f64>,
}

impl LogitFit {
    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Vec<f64> {
        assert_eq!(x.ncols(), self.coefficients.len(), "design width mismatch");
        (0..x.nrows())
            .map(|i| (0..x.ncols()).map(|j| x[(i, j)] * self.coefficients[j]).sum())
            .collect()
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.linear_predictor(x).into_iter().map(sigmoid).collect()
    }
}

fn log_likelihood(x: &DMatrix<f64>, w: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(w)
        .map(|(&e, &wi)| wi * e - log1p_exp(e))
        .sum()
}

/// Maximum-likelihood logistic regression by damped Newton iterations.
///
/// Columns are rescaled by their max-abs value internally; the step is halved
/// until the likelihood improves.
pub fn fit_logit(design: &Design, labels: &[u8]) -> Result<LogitFit> {
    let (n, k) = design.x.shape();
    if labels.len() != n {
        return Err(Error::Argument("label length mismatch".into()));
    }
    let positives = labels.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == n {
        return Err(Error::Argument(
            "logistic regression needs both classes present".into(),
        ));
    }
    let scale: Vec<f64> = (0..k)
        .map(|j| {
            let m = design.x.column(j).amax();
            if m > 0.0 {
                m
            } else {
                1.0
            }
        })
        .collect();
    let xs = DMatrix::from_fn(n, k, |r, c| design.x[(r, c)] / scale[c]);
    let w: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    let nf = n as f64;

    let mut beta = DVector::zeros(k);
    let mut ll = log_likelihood(&xs, &w, &beta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;

    for it in 0..MAX_ITER {
        iterations = it;
        let eta = &xs * &beta;
        let p: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid = DVector::from_fn(n, |i, _| w[i] - p[i]);
        let grad = xs.transpose() * &resid / nf;
        grad_norm = grad.amax();

        let mut hess = DMatrix::zeros(k, k);
        for i in 0..n {
            let v = p[i] * (1.0 - p[i]);
            if v == 0.0 {
                continue;
            }
            let row = xs.row(i);
            for a in 0..k {
                let va = row[a] * v;
                for b in a..k {
                    hess[(a, b)] += va * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        hess /= nf;

        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let ridge = 1e-10 * (1.0 + hess.diagonal().amax());
                let regularized = &hess + DMatrix::identity(k, k) * ridge;
                match regularized.cholesky() {
                    Some(ch) => ch.solve(&grad),
                    None => grad.clone(),
                }
            }
        };
        let decrement = grad.dot(&step);
        if grad_norm <= GRAD_TOL && decrement <= 1e-12 {
            converged = true;
            break;
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let candidate = &beta + &step * t;
            let cand_ll = log_likelihood(&xs, &w, &candidate);
            if cand_ll.is_finite() && cand_ll > ll {
                beta = candidate;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Near the optimum the likelihood gain drowns in summation
            // rounding; fall back to the gradient norm.
            let candidate = &beta + &step;
            let eta = &xs * &candidate;
            let resid = DVector::from_fn(n, |i, _| w[i] - sigmoid(eta[i]));
            let cand_grad = (xs.transpose() * &resid / nf).amax();
            if cand_grad < grad_norm {
                beta = candidate;
                ll = log_likelihood(&xs, &w, &beta);
                iterations = it + 1;
                continue;
            }
            converged = grad_norm <= GRAD_TOL;
            iterations = it + 1;
            break;
        }
        trace.push(ll);
        iterations = it + 1;
    }

    let eta = &xs * &beta;
    let max_eta = eta.amax();
    let separated = max_eta > SEPARATION_ETA || (!converged && max_eta > 10.0);
    if separated {
        converged = false;
    }
    if separated {
        log::warn!(
            "logistic regression: quasi-complete separation suspected after {iterations} iterations (max |eta| = {max_eta:.1})"
        );
    }
    let coefficients = beta.iter().zip(&scale).map(|(b, s)| b / s).collect();
    Ok(LogitFit {
        names: design.names.clone(),
        coefficients,
        converged,
        separated,
        iterations,
        log_likelihood: ll,
        gradient_norm: grad_norm,
        trace,
    })
}
