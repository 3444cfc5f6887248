use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{require_arms, AttEstimate, Diagnostics, EstimatorTag};
use crate::dataset::ObservationTable;
use crate::error::{Error, Result};
use crate::forest::{fit_probability_forest, fit_regression_forest, ForestParams};
use crate::models::{fit_elastic_net, Family, NetParams};
use crate::overlap::clamp_score;
use crate::rng::{derive_seed, stream};

/// Doubly robust ATT from per-unit nuisances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrScore {
    pub point: f64,
    pub se: f64,
    /// Mean treated residual `Y - mu0`.
    pub treated_term: f64,
    /// Odds-weighted mean control residual.
    pub control_term: f64,
    pub effective_sample_size: f64,
}

/// `mean_t(Y - mu0) - Σ_c o_c (Y - mu0) / Σ_c o_c` with `o = e / (1 - e)`.
///
/// Scores are clamped before use. The standard error is the plug-in
/// variance of the two residual means.
pub fn dr_att_from_nuisances(y: &[f64], w: &[u8], mu0: &[f64], e: &[f64]) -> Result<DrScore> {
    let n = y.len();
    if w.len() != n || mu0.len() != n || e.len() != n {
        return Err(Error::Argument("nuisance vectors differ in length".into()));
    }
    let mut r1 = Vec::new();
    let mut r0 = Vec::new();
    let mut odds = Vec::new();
    for i in 0..n {
        let r = y[i] - mu0[i];
        if !r.is_finite() {
            return Err(Error::Numerical(format!("non-finite residual at row {i}")));
        }
        if w[i] == 1 {
            r1.push(r);
        } else {
            let p = clamp_score(e[i]);
            odds.push(p / (1.0 - p));
            r0.push(r);
        }
    }
    if r1.is_empty() || r0.is_empty() {
        return Err(Error::Degenerate("doubly robust score needs both arms".into()));
    }
    let n1 = r1.len() as f64;
    let m1 = r1.iter().sum::<f64>() / n1;
    let total: f64 = odds.iter().sum();
    let m0 = odds.iter().zip(&r0).map(|(o, r)| o * r).sum::<f64>() / total;
    let var = r1.iter().map(|r| (r - m1).powi(2)).sum::<f64>() / (n1 * n1)
        + odds
            .iter()
            .zip(&r0)
            .map(|(o, r)| (o * (r - m0)).powi(2))
            .sum::<f64>()
            / (total * total);
    let ess = total * total / odds.iter().map(|o| o * o).sum::<f64>();
    Ok(DrScore {
        point: m1 - m0,
        se: var.sqrt(),
        treated_term: m1,
        control_term: m0,
        effective_sample_size: ess,
    })
}

fn to_estimate(tag: EstimatorTag, s: DrScore, n1: usize, n0: usize, mut d: Diagnostics) -> AttEstimate {
    d.set("treated_term", s.treated_term);
    d.set("control_term", s.control_term);
    d.set("effective_sample_size", s.effective_sample_size);
    AttEstimate::analytic(tag, s.point, s.se, n1, n0).with_diagnostics(d)
}

/// Stratified fold labels: each arm is shuffled and dealt round-robin.
fn stratified_folds(w: &[u8], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, 0);
    let mut folds = vec![0; w.len()];
    for arm in [0u8, 1] {
        let mut idx: Vec<usize> = (0..w.len()).filter(|&i| w[i] == arm).collect();
        idx.shuffle(&mut rng);
        for (rank, i) in idx.into_iter().enumerate() {
            folds[i] = rank % k;
        }
    }
    folds
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

/// Cross-fitted DR ATT with elastic-net nuisances: a Gaussian net on
/// controls for `mu0` and a binomial net on all units for `e`, each fit
/// without the fold it predicts.
pub fn dml_att(sample: &ObservationTable, folds: usize, net: &NetParams, seed: u64) -> Result<AttEstimate> {
    let (t, c) = require_arms(sample)?;
    if folds < 2 {
        return Err(Error::Argument("cross-fitting needs at least 2 folds".into()));
    }
    if folds > t.len() || folds > c.len() {
        return Err(Error::Degenerate(format!(
            "{folds} folds cannot each hold both arms ({} treated, {} controls)",
            t.len(),
            c.len()
        )));
    }
    let (x, y, w) = (sample.x(), sample.y(), sample.w());
    let label = stratified_folds(w, folds, seed);
    let per_fold: Vec<Result<Vec<(usize, f64, f64)>>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = (0..sample.n()).filter(|&i| label[i] != k).collect();
            let test: Vec<usize> = (0..sample.n()).filter(|&i| label[i] == k).collect();
            let train_c: Vec<usize> = train.iter().copied().filter(|&i| w[i] == 0).collect();
            let yc: Vec<f64> = train_c.iter().map(|&i| y[i]).collect();
            let params = NetParams {
                seed: derive_seed(net.seed, &format!("fold-{k}")),
                ..net.clone()
            };
            let outcome = fit_elastic_net(&rows(x, &train_c), &yc, Family::Gaussian, &params)?;
            let wt: Vec<f64> = train.iter().map(|&i| w[i] as f64).collect();
            let propensity = fit_elastic_net(&rows(x, &train), &wt, Family::Binomial, &params)?;
            let xt = rows(x, &test);
            let mu = outcome.predict(&xt);
            let e = propensity.predict(&xt);
            Ok(test.into_iter().zip(mu).zip(e).map(|((i, m), p)| (i, m, p)).collect())
        })
        .collect();
    let mut mu0 = vec![0.0; sample.n()];
    let mut e = vec![0.0; sample.n()];
    for fold in per_fold {
        for (i, m, p) in fold? {
            mu0[i] = m;
            e[i] = p;
        }
    }
    let score = dr_att_from_nuisances(y, w, &mu0, &e)?;
    let mut d = Diagnostics::default();
    d.set("folds", folds as f64);
    Ok(to_estimate(EstimatorTag::Dml, score, t.len(), c.len(), d))
}

/// DR ATT with forest nuisances evaluated out of bag: control outcomes use
/// trees that did not see them, treated units use the whole forest, and
/// propensities come from an out-of-bag probability forest.
pub fn aipw_att(sample: &ObservationTable, params: &ForestParams) -> Result<AttEstimate> {
    let (t, c) = require_arms(sample)?;
    let names = sample.covariate_names();
    let controls = sample.subset(&c);
    let outcome_params = ForestParams {
        seed: derive_seed(params.seed, "aipw-outcome"),
        ..params.clone()
    };
    let propensity_params = ForestParams {
        seed: derive_seed(params.seed, "aipw-propensity"),
        ..params.clone()
    };
    let (outcome, propensity) = rayon::join(
        || fit_regression_forest(controls.x(), names, controls.y(), &outcome_params),
        || fit_probability_forest(sample.x(), names, sample.w(), &propensity_params),
    );
    let (outcome, propensity) = (outcome?, propensity?);
    let mut mu0 = vec![0.0; sample.n()];
    for (r, m) in c.iter().zip(outcome.predict_oob()) {
        mu0[*r] = m;
    }
    let treated = sample.subset(&t);
    for (r, m) in t.iter().zip(outcome.predict(treated.x(), names)?) {
        mu0[*r] = m;
    }
    let e = propensity.predict_oob();
    aipw_att_with(sample, &mu0, &e)
}

/// AIPW estimate from caller-supplied nuisances.
pub fn aipw_att_with(sample: &ObservationTable, mu0: &[f64], e: &[f64]) -> Result<AttEstimate> {
    let (t, c) = require_arms(sample)?;
    let score = dr_att_from_nuisances(sample.y(), sample.w(), mu0, e)?;
    Ok(to_estimate(EstimatorTag::Aipw, score, t.len(), c.len(), Diagnostics::default()))
}
