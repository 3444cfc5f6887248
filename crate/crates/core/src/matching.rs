//! Nearest-neighbour covariate matching with regression bias correction.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationTable;
use crate::error::{Error, Result};
use crate::estimators::{AttEstimate, Diagnostics, EstimatorTag};
use crate::models::{fit_ols, Design};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Euclidean after dividing each covariate by its pooled standard deviation.
    NormalizedEuclidean,
    Mahalanobis,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized-euclidean" => Ok(Self::NormalizedEuclidean),
            "mahalanobis" => Ok(Self::Mahalanobis),
            other => Err(Error::Argument(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedUnit {
    /// Row of the treated covariate matrix.
    pub treated: usize,
    /// Rows of the control covariate matrix, nearest first.
    pub controls: Vec<usize>,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchSet {
    pub metric: Metric,
    pub k: usize,
    pub with_replacement: bool,
    pub units: Vec<MatchedUnit>,
    /// Covariates whose scale was forced to 1 (zero variance).
    pub unit_scaled: Vec<usize>,
}

impl MatchSet {
    /// Times each control row is used across all treated units.
    pub fn reuse_counts(&self, n_control: usize) -> Vec<usize> {
        let mut k = vec![0; n_control];
        for u in &self.units {
            for &c in &u.controls {
                k[c] += 1;
            }
        }
        k
    }
}

/// Linear map applied to covariates before Euclidean distance.
struct Whitener {
    transform: DMatrix<f64>,
    unit_scaled: Vec<usize>,
}

fn pooled(treated: &DMatrix<f64>, control: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (n1, n0, p) = (treated.nrows(), control.nrows(), treated.ncols());
    let n = (n1 + n0) as f64;
    let row = |i: usize, j: usize| if i < n1 { treated[(i, j)] } else { control[(i - n1, j)] };
    let mean: Vec<f64> = (0..p).map(|j| (0..n1 + n0).map(|i| row(i, j)).sum::<f64>() / n).collect();
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..n1 + n0 {
        for a in 0..p {
            let da = row(i, a) - mean[a];
            for b in a..p {
                cov[(a, b)] += da * (row(i, b) - mean[b]);
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            cov[(a, b)] /= n - 1.0;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    (mean, cov)
}

fn whitener(treated: &DMatrix<f64>, control: &DMatrix<f64>, metric: Metric) -> Result<Whitener> {
    let p = treated.ncols();
    let (_, cov) = pooled(treated, control);
    let mut unit_scaled = Vec::new();
    let sd: Vec<f64> = (0..p)
        .map(|j| {
            let s = cov[(j, j)].max(0.0).sqrt();
            if s > 0.0 {
                s
            } else {
                unit_scaled.push(j);
                1.0
            }
        })
        .collect();
    if !unit_scaled.is_empty() {
        log::warn!("matching: zero-variance covariate(s) {unit_scaled:?} left unscaled");
    }
    let transform = match metric {
        Metric::NormalizedEuclidean => DMatrix::from_fn(p, p, |a, b| if a == b { 1.0 / sd[a] } else { 0.0 }),
        Metric::Mahalanobis => {
            // Correlation of the scaled covariates, inverted through Cholesky.
            let mut corr = DMatrix::from_fn(p, p, |a, b| cov[(a, b)] / (sd[a] * sd[b]));
            for &j in &unit_scaled {
                corr[(j, j)] = 1.0;
            }
            let chol = corr.clone().cholesky().or_else(|| {
                (corr + DMatrix::identity(p, p) * 1e-8).cholesky()
            });
            let l = chol
                .ok_or_else(|| Error::Numerical("covariate covariance is not positive definite".into()))?
                .l();
            let l_inv = l
                .solve_lower_triangular(&DMatrix::identity(p, p))
                .ok_or_else(|| Error::Numerical("singular covariance factor".into()))?;
            let scale = DMatrix::from_fn(p, p, |a, b| if a == b { 1.0 / sd[a] } else { 0.0 });
            l_inv * scale
        }
    };
    Ok(Whitener {
        transform,
        unit_scaled,
    })
}

fn apply(w: &DMatrix<f64>, x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| {
            (0..w.nrows())
                .map(|a| (0..x.ncols()).map(|b| w[(a, b)] * x[(i, b)]).sum())
                .collect()
        })
        .collect()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `k` nearest controls for each row of `u`, with replacement; equal
/// distances resolve to the lower control row.
fn nearest(u: &[f64], pool: &[Vec<f64>], k: usize, skip: Option<usize>) -> (Vec<usize>, Vec<f64>) {
    let mut cand: Vec<(f64, usize)> = pool
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(j, v)| (squared_distance(u, v), j))
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, order);
        cand.truncate(k);
    }
    cand.sort_by(order);
    (cand.iter().map(|c| c.1).collect(), cand.iter().map(|c| c.0.sqrt()).collect())
}

/// For every treated row, the `k` closest control rows (with replacement).
pub fn match_knn(
    treated: &DMatrix<f64>,
    control: &DMatrix<f64>,
    k: usize,
    metric: Metric,
) -> Result<MatchSet> {
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if control.nrows() < k {
        return Err(Error::Degenerate(format!(
            "{} controls cannot supply {k} matches",
            control.nrows()
        )));
    }
    if treated.ncols() != control.ncols() {
        return Err(Error::Argument("treated and control covariates differ in width".into()));
    }
    let wh = whitener(treated, control, metric)?;
    let tz = apply(&wh.transform, treated);
    let cz = apply(&wh.transform, control);
    let units = tz
        .par_iter()
        .enumerate()
        .map(|(t, u)| {
            let (controls, distances) = nearest(u, &cz, k, None);
            MatchedUnit {
                treated: t,
                controls,
                distances,
            }
        })
        .collect();
    Ok(MatchSet {
        metric,
        k,
        with_replacement: true,
        units,
        unit_scaled: wh.unit_scaled,
    })
}

/// Bias-corrected matching ATT.
///
/// The match set must index `sample`'s treated and control rows in table
/// order. Each treated unit's imputed control outcome averages
/// `Y_c + mu0(X_t) - mu0(X_c)` over its matches, with `mu0` an OLS fit on all
/// controls. The variance adds the treated-effect dispersion to a control
/// term weighted by reuse counts, with conditional control variances taken
/// from each control's nearest other control.
pub fn bias_corrected_att(sample: &ObservationTable, ms: &MatchSet) -> Result<AttEstimate> {
    let t_idx = sample.treated_indices();
    let c_idx = sample.control_indices();
    let (n1, n0) = (t_idx.len(), c_idx.len());
    if ms.units.len() != n1 || ms.units.iter().any(|u| u.controls.iter().any(|&c| c >= n0)) {
        return Err(Error::Argument("match set does not fit this sample".into()));
    }
    let y = sample.y();
    let x = sample.x();
    let mut diagnostics = Diagnostics::default();

    let controls = sample.subset(&c_idx);
    let mu0: Option<Vec<f64>> = {
        let design = Design::with_intercept(controls.x(), controls.covariate_names());
        match fit_ols(&design, controls.y(), None) {
            Ok(fit) => Some(fit.predict(&Design::with_intercept(x, sample.covariate_names()).x)),
            Err(e @ (Error::SingularDesign { .. } | Error::Degenerate(_))) => {
                diagnostics.warn(format!("bias correction disabled: {e}"));
                None
            }
            Err(e) => return Err(e),
        }
    };

    let k = ms.k as f64;
    let mut tau = Vec::with_capacity(n1);
    let mut correction = 0.0;
    for u in &ms.units {
        let t = t_idx[u.treated];
        let mut imputed = 0.0;
        for &c in &u.controls {
            let row = c_idx[c];
            let adj = mu0.as_ref().map_or(0.0, |m| m[t] - m[row]);
            imputed += y[row] + adj;
            correction += adj / k;
        }
        tau.push(y[t] - imputed / k);
    }
    let point = tau.iter().sum::<f64>() / n1 as f64;
    correction /= n1 as f64;

    let reuse = ms.reuse_counts(n0);
    let reused: Vec<usize> = (0..n0).filter(|&c| reuse[c] >= 2).collect();
    let sigma2 = if reused.is_empty() {
        Vec::new()
    } else {
        let wh = whitener(&controls.x().clone(), controls.x(), ms.metric)?;
        let cz = apply(&wh.transform, controls.x());
        reused
            .par_iter()
            .map(|&c| {
                let (nn, _) = nearest(&cz[c], &cz, 1, Some(c));
                let d = controls.y()[c] - controls.y()[nn[0]];
                0.5 * d * d
            })
            .collect()
    };
    let n1f = n1 as f64;
    let dispersion: f64 = tau.iter().map(|t| (t - point).powi(2)).sum::<f64>() / (n1f * n1f);
    let reuse_term: f64 = reused
        .iter()
        .zip(&sigma2)
        .map(|(&c, s2)| {
            let kc = reuse[c] as f64;
            kc * (kc - 1.0) / (k * k) * s2
        })
        .sum::<f64>()
        / (n1f * n1f);
    let se = (dispersion + reuse_term).sqrt();

    diagnostics.set("bias_correction", correction);
    diagnostics.set("k", k);
    diagnostics.set(
        "distinct_controls_matched",
        reuse.iter().filter(|&&r| r > 0).count() as f64,
    );
    Ok(AttEstimate::analytic(EstimatorTag::Matching, point, se, n1, n0).with_diagnostics(diagnostics))
}

/// Builds the match set on the sample's covariates and applies the bias
/// correction.
pub fn matching_att(sample: &ObservationTable, k: usize, metric: Metric) -> Result<AttEstimate> {
    let t = sample.subset(&sample.treated_indices());
    let c = sample.subset(&sample.control_indices());
    let ms = match_knn(t.x(), c.x(), k, metric)?;
    bias_corrected_att(sample, &ms)
}
