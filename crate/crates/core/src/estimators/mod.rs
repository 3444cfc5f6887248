//! ATT estimators, their shared result type, the bootstrap, and the suite runner.

mod bootstrap;
mod doubly_robust;
mod outcome;
mod weighting;

pub use bootstrap::{bootstrap_ci, MIN_REPLICATES};
pub use doubly_robust::{aipw_att, aipw_att_with, dml_att, dr_att_from_nuisances, DrScore};
pub use outcome::{diff_in_means, outcome_model_att, OutcomeModel};
pub use weighting::{balance_att, balance_weights, hajek_weights, ipw_att, BalanceMethod, WeightVector};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationTable;
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::matching::{matching_att, Metric};
use crate::models::NetParams;
use crate::overlap::{estimate_propensity_with, PropensityMethod};
use crate::rng::derive_seed;

pub const Z95: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    DiffInMeans,
    Ols,
    OlsInteract,
    ForestOutcome,
    Matching,
    Ipw,
    Cbps,
    Entropy,
    Dml,
    Aipw,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 10] = [
        Self::DiffInMeans,
        Self::Ols,
        Self::OlsInteract,
        Self::ForestOutcome,
        Self::Matching,
        Self::Ipw,
        Self::Cbps,
        Self::Entropy,
        Self::Dml,
        Self::Aipw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DiffInMeans => "diff_in_means",
            Self::Ols => "ols",
            Self::OlsInteract => "ols_interact",
            Self::ForestOutcome => "forest_outcome",
            Self::Matching => "matching",
            Self::Ipw => "ipw",
            Self::Cbps => "cbps",
            Self::Entropy => "entropy",
            Self::Dml => "dml",
            Self::Aipw => "aipw",
        }
    }

    /// Whether the estimator draws random numbers (forests or fold splits).
    pub fn is_randomized(self) -> bool {
        matches!(self, Self::ForestOutcome | Self::Ipw | Self::Dml | Self::Aipw)
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown estimator `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Analytic,
    Bootstrap,
}

/// Free-form diagnostics attached to an estimate. Keys are sorted so JSON
/// output is stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub values: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    /// Set when a single control carries more than half the weight.
    pub dominance: bool,
}

impl Diagnostics {
    pub fn set(&mut self, key: &str, value: f64) {
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttEstimate {
    pub estimator: EstimatorTag,
    pub sample: String,
    pub point: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub ci_method: CiMethod,
    pub n_treated: usize,
    pub n_control: usize,
    pub diagnostics: Diagnostics,
}

impl AttEstimate {
    /// Normal-approximation interval `point ± 1.96 se`.
    pub fn analytic(estimator: EstimatorTag, point: f64, se: f64, n_treated: usize, n_control: usize) -> Self {
        Self {
            estimator,
            sample: String::new(),
            point,
            se,
            ci95: (point - Z95 * se, point + Z95 * se),
            ci_method: CiMethod::Analytic,
            n_treated,
            n_control,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn with_sample(mut self, sample: impl Into<String>) -> Self {
        self.sample = sample.into();
        self
    }

    pub fn with_diagnostics(mut self, diagnostics: Diagnostics) -> Self {
        self.diagnostics = diagnostics;
        self
    }

    pub fn ci_excludes_zero(&self) -> bool {
        self.ci95.0 > 0.0 || self.ci95.1 < 0.0
    }

    pub fn ci_covers(&self, value: f64) -> bool {
        self.ci95.0 <= value && value <= self.ci95.1
    }
}

/// Options shared by every estimator in a suite run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorOptions {
    pub seed: u64,
    pub forest: ForestParams,
    pub net: NetParams,
    pub dml_folds: usize,
    pub match_k: usize,
    pub metric: Metric,
    /// Covariates balanced by cbps/entropy; `None` means all.
    pub balance_moments: Option<Vec<String>>,
    /// Also balance squared non-binary covariates.
    pub balance_second_moments: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            forest: ForestParams::default(),
            net: NetParams::default(),
            dml_folds: 5,
            match_k: 5,
            metric: Metric::NormalizedEuclidean,
            balance_moments: None,
            balance_second_moments: false,
        }
    }
}

impl EstimatorOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Forest settings for one estimator, on a seed derived from the run seed
    /// and the estimator tag so estimators do not share random streams.
    pub fn forest_for(&self, tag: EstimatorTag) -> ForestParams {
        ForestParams {
            seed: derive_seed(self.seed, tag.as_str()),
            ..self.forest.clone()
        }
    }
}

/// Runs one estimator on one sample.
pub fn estimate(sample: &ObservationTable, tag: EstimatorTag, opts: &EstimatorOptions) -> Result<AttEstimate> {
    match tag {
        EstimatorTag::DiffInMeans => diff_in_means(sample),
        EstimatorTag::Ols => outcome_model_att(sample, OutcomeModel::Ols, &opts.forest_for(tag)),
        EstimatorTag::OlsInteract => outcome_model_att(sample, OutcomeModel::OlsInteract, &opts.forest_for(tag)),
        EstimatorTag::ForestOutcome => outcome_model_att(sample, OutcomeModel::Forest, &opts.forest_for(tag)),
        EstimatorTag::Matching => matching_att(sample, opts.match_k, opts.metric),
        EstimatorTag::Ipw => {
            let fit = estimate_propensity_with(sample, PropensityMethod::Forest, &opts.forest_for(tag))?;
            ipw_att(sample, &fit)
        }
        EstimatorTag::Cbps => balance_att(sample, BalanceMethod::Cbps, opts.balance_moments.as_deref(), opts.balance_second_moments),
        EstimatorTag::Entropy => {
            balance_att(sample, BalanceMethod::Entropy, opts.balance_moments.as_deref(), opts.balance_second_moments)
        }
        EstimatorTag::Dml => {
            let net = NetParams {
                seed: derive_seed(opts.seed, "dml-net"),
                ..opts.net.clone()
            };
            dml_att(sample, opts.dml_folds, &net, derive_seed(opts.seed, "dml-folds"))
        }
        EstimatorTag::Aipw => aipw_att(sample, &opts.forest_for(tag)),
    }
}

/// One cell of an estimator-by-sample grid. Failures are recorded, not fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCell {
    pub estimator: EstimatorTag,
    pub sample: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<AttEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs each estimator on the sample. Cells are returned in the order of
/// `estimators` whatever the scheduling.
pub fn run_suite(
    sample: &ObservationTable,
    sample_tag: &str,
    estimators: &[EstimatorTag],
    opts: &EstimatorOptions,
) -> Vec<SuiteCell> {
    estimators
        .par_iter()
        .map(|&tag| match estimate(sample, tag, opts) {
            Ok(est) => SuiteCell {
                estimator: tag,
                sample: sample_tag.to_string(),
                estimate: Some(est.with_sample(sample_tag)),
                error: None,
            },
            Err(e) => {
                log::warn!("{tag} on {sample_tag} failed: {e}");
                SuiteCell {
                    estimator: tag,
                    sample: sample_tag.to_string(),
                    estimate: None,
                    error: Some(e.to_string()),
                }
            }
        })
        .collect()
}

/// Delimited results table: one row per cell.
pub fn cells_to_delimited(cells: &[SuiteCell], sep: char) -> String {
    let mut out = ["sample", "estimator", "point", "se", "ci_lo", "ci_hi", "n_treated", "n_control", "error"]
        .join(&sep.to_string());
    out.push('\n');
    for c in cells {
        let fields: Vec<String> = match &c.estimate {
            Some(e) => vec![
                c.sample.clone(),
                c.estimator.to_string(),
                e.point.to_string(),
                e.se.to_string(),
                e.ci95.0.to_string(),
                e.ci95.1.to_string(),
                e.n_treated.to_string(),
                e.n_control.to_string(),
                String::new(),
            ],
            None => {
                let mut f = vec![c.sample.clone(), c.estimator.to_string()];
                f.extend(std::iter::repeat_n(String::new(), 6));
                f.push(c.error.clone().unwrap_or_default().replace(sep, " "));
                f
            }
        };
        out.push_str(&fields.join(&sep.to_string()));
        out.push('\n');
    }
    out
}

pub(crate) fn require_arms(sample: &ObservationTable) -> Result<(Vec<usize>, Vec<usize>)> {
    let t = sample.treated_indices();
    let c = sample.control_indices();
    if t.is_empty() || c.is_empty() {
        return Err(Error::Degenerate(format!(
            "need both arms, got {} treated and {} controls",
            t.len(),
            c.len()
        )));
    }
    Ok((t, c))
}

pub(crate) fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Sample variance with the n-1 denominator; `None` below two values.
pub(crate) fn sample_variance(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v.iter().copied());
    Some(v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64)
}

/// Effective sample size `1 / Σ w²` of normalized weights.
pub(crate) fn effective_sample_size(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|v| v * v).sum::<f64>()
}
