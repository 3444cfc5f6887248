use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::Design;
use crate::error::{Error, Result};

/// Relative size of a QR pivot below which a column counts as collinear.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct LinearFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// HC1 heteroskedasticity-robust covariance of the coefficients.
    #[serde(skip)]
    pub covariance: DMatrix<f64>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    pub n_used: usize,
}

impl LinearFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.coefficients[j])
    }

    pub fn robust_se(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.covariance[(j, j)].max(0.0).sqrt())
    }

    /// Fitted values for rows laid out like the training design.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        assert_eq!(x.ncols(), self.coefficients.len(), "design width mismatch");
        (0..x.nrows())
            .map(|i| {
                (0..x.ncols())
                    .map(|j| x[(i, j)] * self.coefficients[j])
                    .sum()
            })
            .collect()
    }

    /// Variance of `a' beta` under the robust covariance.
    pub fn linear_combination_variance(&self, a: &[f64]) -> f64 {
        let a = DVector::from_column_slice(a);
        (a.transpose() * &self.covariance * &a)[(0, 0)]
    }
}

/// Weighted least squares via Householder QR, with HC1 robust covariance.
pub fn fit_ols(design: &Design, y: &[f64], weights: Option<&[f64]>) -> Result<LinearFit> {
    let (n, k) = design.x.shape();
    if y.len() != n {
        return Err(Error::Argument(format!("{} outcomes for {n} design rows", y.len())));
    }
    let weights: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::Argument("weight vector length mismatch".into()));
            }
            if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::Argument("weights must be finite and nonnegative".into()));
            }
            if w.iter().all(|&v| v == 0.0) {
                return Err(Error::Argument("weights are all zero".into()));
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    let used: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
    let m = used.len();
    if m <= k {
        return Err(Error::Degenerate(format!(
            "{m} usable rows for {k} regression coefficients"
        )));
    }

    let root_w: Vec<f64> = used.iter().map(|&i| weights[i].sqrt()).collect();
    let xs = DMatrix::from_fn(m, k, |r, c| design.x[(used[r], c)] * root_w[r]);
    let ys = DVector::from_fn(m, |r, _| y[used[r]] * root_w[r]);

    let qr = xs.clone().qr();
    let r = qr.r();
    let collinear: Vec<String> = (0..k)
        .filter(|&j| {
            let norm = xs.column(j).norm();
            norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm
        })
        .map(|j| design.names[j].clone())
        .collect();
    if !collinear.is_empty() {
        return Err(Error::SingularDesign { columns: collinear });
    }
    let qty = qr.q().transpose() * &ys;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;

    let residuals: Vec<f64> = (0..n)
        .map(|i| y[i] - (0..k).map(|j| design.x[(i, j)] * beta[j]).sum::<f64>())
        .collect();

    // bread = (X'WX)^-1 = R^-1 R^-T
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Numerical("R is not invertible".into()))?;
    let bread = &r_inv * r_inv.transpose();
    let mut meat = DMatrix::zeros(k, k);
    for (row, &i) in used.iter().enumerate() {
        let s = weights[i] * residuals[i] * residuals[i];
        let xr = xs.row(row);
        for a in 0..k {
            let va = xr[a] * s;
            for b in 0..k {
                meat[(a, b)] += va * xr[b];
            }
        }
    }
    let scale = m as f64 / (m - k) as f64;
    let covariance = &bread * meat * &bread * scale;

    Ok(LinearFit {
        names: design.names.clone(),
        coefficients: beta.iter().copied().collect(),
        covariance,
        residuals,
        n_used: m,
    })
}
