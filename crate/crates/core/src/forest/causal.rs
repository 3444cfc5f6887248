use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::Tree;
use super::{
    audit_trees, check_finite, fit_probability_forest, fit_regression_forest, grow_trees,
    row_major, schema_fingerprint, ForestParams, HonestyAudit, FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Causal forest on locally centered data.
///
/// Outcome and treatment are first residualized on out-of-bag forest
/// predictions. Splits then maximize `sum_child n_child * mean(rho)^2`, where
/// `rho` is the influence of each structure unit on the parent's
/// residual-on-residual slope. Predictions solve the same slope equation
/// under the forest's kernel weights, using only leaves that hold both arms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausalForestFit {
    version: u32,
    params: ForestParams,
    covariates: Vec<String>,
    fingerprint: String,
    n_train: usize,
    train: Vec<f64>,
    trees: Vec<Tree>,
    w: Vec<u8>,
    y_hat: Vec<f64>,
    w_hat: Vec<f64>,
    y_tilde: Vec<f64>,
    w_tilde: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectPrediction {
    pub estimate: f64,
    /// Kernel-weighted sandwich standard error. It ignores the randomness of
    /// the forest structure, so it is a proxy, not an interval width.
    pub se: f64,
    pub valid_trees: usize,
}

/// Residual-on-residual slope influence values for one node.
fn pseudo_outcomes(idx: &[u32], y_tilde: &[f64], w_tilde: &[f64]) -> Option<Vec<f64>> {
    let m = idx.len() as f64;
    let wbar = idx.iter().map(|&i| w_tilde[i as usize]).sum::<f64>() / m;
    let ybar = idx.iter().map(|&i| y_tilde[i as usize]).sum::<f64>() / m;
    let (mut a, mut b) = (0.0, 0.0);
    for &i in idx {
        let dw = w_tilde[i as usize] - wbar;
        a += dw * dw;
        b += dw * (y_tilde[i as usize] - ybar);
    }
    if a <= 1e-12 * m {
        return None;
    }
    let tau = b / a;
    let a_mean = a / m;
    Some(
        idx.iter()
            .map(|&i| {
                let dw = w_tilde[i as usize] - wbar;
                dw * ((y_tilde[i as usize] - ybar) - dw * tau) / a_mean
            })
            .collect(),
    )
}

pub fn fit_causal_forest(
    x: &DMatrix<f64>,
    names: &[String],
    w: &[u8],
    y: &[f64],
    params: &ForestParams,
) -> Result<CausalForestFit> {
    let n = x.nrows();
    if w.len() != n || y.len() != n || names.len() != x.ncols() {
        return Err(Error::Argument("forest inputs have mismatched shapes".into()));
    }
    params.validate()?;
    check_finite(x)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("forest outcome must be finite".into()));
    }
    let treated = w.iter().filter(|&&v| v == 1).count();
    if treated == 0 || treated == n || w.iter().any(|&v| v > 1) {
        return Err(Error::Argument("causal forest needs 0/1 treatment with both arms".into()));
    }
    if n < 4 * params.min_leaf {
        return Err(Error::Degenerate(format!(
            "{n} rows is below 4 x min_leaf ({})",
            params.min_leaf
        )));
    }

    let y_params = ForestParams {
        seed: derive_seed(params.seed, "center-outcome"),
        ..params.clone()
    };
    let w_params = ForestParams {
        seed: derive_seed(params.seed, "center-treatment"),
        ..params.clone()
    };
    let y_hat = fit_regression_forest(x, names, y, &y_params)?.predict_oob();
    let w_hat = fit_probability_forest(x, names, w, &w_params)?.predict_oob();
    let y_tilde: Vec<f64> = y.iter().zip(&y_hat).map(|(a, b)| a - b).collect();
    let w_tilde: Vec<f64> = w.iter().zip(&w_hat).map(|(&a, b)| a as f64 - b).collect();

    let response = |idx: &[u32]| pseudo_outcomes(idx, &y_tilde, &w_tilde);
    let leaf_value = |idx: &[u32]| {
        local_slope(idx.iter().map(|&i| (i as usize, 1.0 / idx.len() as f64)), &y_tilde, &w_tilde)
            .map_or(0.0, |(tau, _)| tau)
    };
    let trees = grow_trees(x, params, Some(w), &response, &leaf_value)?;
    Ok(CausalForestFit {
        version: FORMAT_VERSION,
        params: params.clone(),
        covariates: names.to_vec(),
        fingerprint: schema_fingerprint(names),
        n_train: n,
        train: row_major(x),
        trees,
        w: w.to_vec(),
        y_hat,
        w_hat,
        y_tilde,
        w_tilde,
    })
}

/// Weighted slope of `y_tilde` on `w_tilde` and its sandwich variance.
fn local_slope(
    weights: impl Iterator<Item = (usize, f64)> + Clone,
    y_tilde: &[f64],
    w_tilde: &[f64],
) -> Option<(f64, f64)> {
    let (mut wbar, mut ybar) = (0.0, 0.0);
    for (i, a) in weights.clone() {
        wbar += a * w_tilde[i];
        ybar += a * y_tilde[i];
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, a) in weights.clone() {
        let dw = w_tilde[i] - wbar;
        num += a * dw * (y_tilde[i] - ybar);
        den += a * dw * dw;
    }
    if den <= 1e-12 {
        return None;
    }
    let tau = num / den;
    let meat: f64 = weights
        .map(|(i, a)| {
            let dw = w_tilde[i] - wbar;
            let psi = dw * (y_tilde[i] - ybar - tau * dw);
            a * a * psi * psi
        })
        .sum();
    Some((tau, meat / (den * den)))
}

impl CausalForestFit {
    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn covariates(&self) -> &[String] {
        &self.covariates
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Out-of-bag marginal outcome predictions used for centering.
    pub fn outcome_centering(&self) -> &[f64] {
        &self.y_hat
    }

    /// Out-of-bag treatment probabilities used for centering.
    pub fn treatment_centering(&self) -> &[f64] {
        &self.w_hat
    }

    fn p(&self) -> usize {
        self.covariates.len()
    }

    fn leaf_is_valid(&self, members: &[u32]) -> bool {
        let treated = members.iter().filter(|&&i| self.w[i as usize] == 1).count();
        treated > 0 && treated < members.len()
    }

    fn predict_row(&self, row: &[f64], exclude: Option<u32>) -> Result<EffectPrediction> {
        let mut alpha = vec![0.0; self.n_train];
        let mut used = 0usize;
        for t in &self.trees {
            if exclude.is_some_and(|i| t.in_sample(i)) {
                continue;
            }
            let (members, _) = t.leaf(t.leaf_of(row));
            if !self.leaf_is_valid(members) {
                continue;
            }
            let share = 1.0 / members.len() as f64;
            for &m in members {
                alpha[m as usize] += share;
            }
            used += 1;
        }
        if used == 0 {
            return Err(Error::Degenerate(
                "no tree has a leaf with both arms for this profile".into(),
            ));
        }
        let scale = 1.0 / used as f64;
        let weights = alpha
            .iter()
            .enumerate()
            .filter(|(_, a)| **a > 0.0)
            .map(|(i, a)| (i, a * scale));
        let (estimate, var) = local_slope(weights, &self.y_tilde, &self.w_tilde).ok_or_else(|| {
            Error::Numerical("no treatment variation under the forest weights".into())
        })?;
        Ok(EffectPrediction {
            estimate,
            se: var.max(0.0).sqrt(),
            valid_trees: used,
        })
    }

    /// Conditional effect at each query row. The outer error is a schema
    /// mismatch; inner errors are per-profile failures.
    pub fn predict(&self, x: &DMatrix<f64>, names: &[String]) -> Result<Vec<Result<EffectPrediction>>> {
        if schema_fingerprint(names) != self.fingerprint || x.ncols() != self.p() {
            return Err(Error::Schema(format!(
                "forest trained on [{}], queried with [{}]",
                self.covariates.join(", "),
                names.join(", ")
            )));
        }
        let rows = row_major(x);
        let p = self.p();
        Ok((0..x.nrows())
            .into_par_iter()
            .map(|i| self.predict_row(&rows[i * p..(i + 1) * p], None))
            .collect())
    }

    /// Out-of-bag conditional effects at the given training rows.
    pub fn predict_oob(&self, rows: &[usize]) -> Vec<Result<EffectPrediction>> {
        let p = self.p();
        rows.par_iter()
            .map(|&i| {
                let row = &self.train[i * p..(i + 1) * p];
                let oob = self.predict_row(row, Some(i as u32));
                match oob {
                    Err(Error::Degenerate(_)) => self.predict_row(row, None),
                    other => other,
                }
            })
            .collect()
    }

    pub fn honesty_audit(&self) -> HonestyAudit {
        audit_trees(
            &self.trees,
            &self.train,
            self.p(),
            self.params.min_leaf,
            self.params.honesty_fraction >= 1.0,
        )
    }
}
