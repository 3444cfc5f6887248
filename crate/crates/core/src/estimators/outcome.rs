use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean, require_arms, sample_variance, AttEstimate, Diagnostics, EstimatorTag};
use crate::dataset::ObservationTable;
use crate::error::{Error, Result};
use crate::forest::{fit_regression_forest, ForestParams};
use crate::models::{fit_ols, Design};

/// Difference in arm means with the unpooled two-sample standard error.
pub fn diff_in_means(sample: &ObservationTable) -> Result<AttEstimate> {
    let (t, c) = require_arms(sample)?;
    let y = sample.y();
    let yt: Vec<f64> = t.iter().map(|&i| y[i]).collect();
    let yc: Vec<f64> = c.iter().map(|&i| y[i]).collect();
    let point = mean(yt.iter().copied()) - mean(yc.iter().copied());
    let mut diagnostics = Diagnostics::default();
    let part = |v: &[f64], arm: &str, d: &mut Diagnostics| match sample_variance(v) {
        Some(s2) => s2 / v.len() as f64,
        None => {
            d.warn(format!("{arm} arm has a single unit; its variance term is taken as 0"));
            0.0
        }
    };
    let var = part(&yt, "treated", &mut diagnostics) + part(&yc, "control", &mut diagnostics);
    Ok(AttEstimate::analytic(EstimatorTag::DiffInMeans, point, var.sqrt(), t.len(), c.len())
        .with_diagnostics(diagnostics))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeModel {
    /// Treatment coefficient in the pooled regression `Y ~ 1 + W + X`.
    Ols,
    /// Control-arm regression imputed at treated covariates.
    OlsInteract,
    /// Control-arm regression forest imputed at treated covariates.
    Forest,
}

/// Outcome-model ATT. `forest` is used only by [`OutcomeModel::Forest`].
pub fn outcome_model_att(sample: &ObservationTable, model: OutcomeModel, forest: &ForestParams) -> Result<AttEstimate> {
    let (t, c) = require_arms(sample)?;
    match model {
        OutcomeModel::Ols => {
            let design = Design::treatment_and_covariates(sample);
            let fit = fit_ols(&design, sample.y(), None)?;
            let point = fit.coefficient("treat").expect("treatment column present");
            let se = fit.robust_se("treat").expect("treatment column present");
            Ok(AttEstimate::analytic(EstimatorTag::Ols, point, se, t.len(), c.len()))
        }
        OutcomeModel::OlsInteract => imputation_ols(sample, &t, &c),
        OutcomeModel::Forest => imputation_forest(sample, &t, &c, forest),
    }
}

/// `mean_t(Y - X'b0)` with `b0` fit on controls. The variance adds the
/// treated-residual dispersion to `xbar_t' V(b0) xbar_t`.
fn imputation_ols(sample: &ObservationTable, t: &[usize], c: &[usize]) -> Result<AttEstimate> {
    let controls = sample.subset(c);
    let design = Design::with_intercept(controls.x(), controls.covariate_names());
    let fit = fit_ols(&design, controls.y(), None)?;
    let treated = sample.subset(t);
    let td = Design::with_intercept(treated.x(), treated.covariate_names());
    let resid: Vec<f64> = fit
        .predict(&td.x)
        .iter()
        .zip(treated.y())
        .map(|(m, y)| y - m)
        .collect();
    let point = mean(resid.iter().copied());
    let n1 = t.len() as f64;
    let xbar: Vec<f64> = (0..td.ncols())
        .map(|j| td.x.column(j).iter().sum::<f64>() / n1)
        .collect();
    let var = sample_variance(&resid).unwrap_or(0.0) / n1 + fit.linear_combination_variance(&xbar);
    Ok(AttEstimate::analytic(EstimatorTag::OlsInteract, point, var.max(0.0).sqrt(), t.len(), c.len()))
}

/// Forest imputation. The control term of the variance propagates each
/// control's out-of-bag squared residual through its average kernel weight
/// at the treated profiles.
fn imputation_forest(sample: &ObservationTable, t: &[usize], c: &[usize], params: &ForestParams) -> Result<AttEstimate> {
    let controls = sample.subset(c);
    let treated = sample.subset(t);
    let names = sample.covariate_names();
    let fit = fit_regression_forest(controls.x(), names, controls.y(), params)?;
    let mu_t = fit.predict(treated.x(), names)?;
    let resid: Vec<f64> = treated.y().iter().zip(&mu_t).map(|(y, m)| y - m).collect();
    let point = mean(resid.iter().copied());
    let n1 = t.len() as f64;

    let oob = fit.predict_oob();
    let sigma2: Vec<f64> = controls
        .y()
        .iter()
        .zip(&oob)
        .map(|(y, m)| (y - m).powi(2))
        .collect();
    let kernels: Vec<Vec<(usize, f64)>> = (0..treated.n())
        .into_par_iter()
        .map(|r| {
            let row: Vec<f64> = treated.x().row(r).iter().copied().collect();
            fit.kernel_weights(&row, None)
        })
        .collect();
    // Summed in row order so the result does not depend on the thread count.
    let mut alpha_bar = vec![0.0; controls.n()];
    for w in kernels {
        for (i, v) in w {
            alpha_bar[i] += v;
        }
    }
    let control_term: f64 = alpha_bar
        .iter()
        .zip(&sigma2)
        .map(|(a, s2)| (a / n1).powi(2) * s2)
        .sum();
    let var = sample_variance(&resid).unwrap_or(0.0) / n1 + control_term;
    let mut diagnostics = Diagnostics::default();
    diagnostics.set("trees", params.trees as f64);
    if !var.is_finite() {
        return Err(Error::Numerical("forest outcome variance is not finite".into()));
    }
    Ok(AttEstimate::analytic(EstimatorTag::ForestOutcome, point, var.sqrt(), t.len(), c.len())
        .with_diagnostics(diagnostics))
}
