//! Parametric learners used as estimator components.

mod elastic_net;
mod logit;
mod ols;

pub use elastic_net::{
    elastic_net_at, fit_elastic_net, lambda_grid, Family, NetFit, NetParams, NetSolution,
};
pub use logit::{fit_logit, LogitFit};
pub use ols::{fit_ols, LinearFit};

use nalgebra::DMatrix;

use crate::dataset::ObservationTable;
use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(intercept)";

/// A named design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
}

impl Design {
    pub fn new(x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if x.ncols() != names.len() {
            return Err(Error::Argument(format!(
                "{} names for {} design columns",
                names.len(),
                x.ncols()
            )));
        }
        Ok(Self { x, names })
    }

    /// Prepends a column of ones.
    pub fn with_intercept(x: &DMatrix<f64>, names: &[String]) -> Self {
        let (n, p) = x.shape();
        let m = DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { x[(r, c - 1)] });
        let mut all = Vec::with_capacity(p + 1);
        all.push(INTERCEPT.to_string());
        all.extend(names.iter().cloned());
        Self { x: m, names: all }
    }

    /// `1 + W + X` for the pooled earnings regression.
    pub fn treatment_and_covariates(table: &ObservationTable) -> Self {
        let (n, p) = table.x().shape();
        let m = DMatrix::from_fn(n, p + 2, |r, c| match c {
            0 => 1.0,
            1 => table.w()[r] as f64,
            _ => table.x()[(r, c - 2)],
        });
        let mut names = vec![INTERCEPT.to_string(), "treat".to_string()];
        names.extend(table.covariate_names().iter().cloned());
        Self { x: m, names }
    }

    pub fn rows(&self, indices: &[usize]) -> Self {
        let x = DMatrix::from_fn(indices.len(), self.x.ncols(), |r, c| self.x[(indices[r], c)]);
        Self {
            x,
            names: self.names.clone(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }
}

pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(eta)) without overflow.
pub(crate) fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}
