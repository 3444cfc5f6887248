//! Synthetic data with known effects, for Monte Carlo checks of the estimators.
//!
//! Covariates are independent: standard normals followed by Bernoulli
//! indicators. Treatment is logistic in the covariates with propensities
//! clipped to `[epsilon, 1 - epsilon]`; the untreated outcome is linear.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationTable;
use crate::error::{Error, Result};
use crate::estimators::{estimate, AttEstimate, EstimatorOptions, EstimatorTag};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    Constant { tau: f64 },
    /// `low` below `threshold` on the first covariate, `high` at or above.
    Step { threshold: f64, low: f64, high: f64 },
    /// `base + slope * x_0`.
    Linear { base: f64, slope: f64 },
}

impl Effect {
    pub fn at(&self, x: &[f64]) -> f64 {
        match *self {
            Effect::Constant { tau } => tau,
            Effect::Step { threshold, low, high } => {
                if x[0] < threshold {
                    low
                } else {
                    high
                }
            }
            Effect::Linear { base, slope } => base + slope * x[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n: usize,
    pub continuous: usize,
    pub binary: usize,
    /// Success probability of each binary covariate.
    pub binary_share: f64,
    /// Treated share at the covariate origin; sets the log-odds intercept.
    pub baseline_share: f64,
    /// Multiplier on the default log-odds slopes; 0 gives randomization.
    pub confounding: f64,
    /// Explicit log-odds slopes, overriding `confounding`.
    pub propensity_coefficients: Option<Vec<f64>>,
    pub outcome_intercept: f64,
    /// Explicit untreated-outcome slopes; defaults decay with the index.
    pub outcome_coefficients: Option<Vec<f64>>,
    pub effect: Effect,
    pub noise_sd: f64,
    /// Propensities are clipped into `[epsilon, 1 - epsilon]`.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: 5000,
            continuous: 6,
            binary: 4,
            binary_share: 0.4,
            baseline_share: 0.3,
            confounding: 0.5,
            propensity_coefficients: None,
            outcome_intercept: 10_000.0,
            outcome_coefficients: None,
            effect: Effect::Constant { tau: 1000.0 },
            noise_sd: 5000.0,
            epsilon: 0.01,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn p(&self) -> usize {
        self.continuous + self.binary
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (0..self.continuous)
            .map(|j| format!("x{j}"))
            .chain((0..self.binary).map(|j| format!("d{j}")))
            .collect()
    }

    fn propensity_slopes(&self) -> Vec<f64> {
        self.propensity_coefficients.clone().unwrap_or_else(|| {
            (0..self.p())
                .map(|j| {
                    let base = if j < self.continuous { 1.0 - 0.15 * j as f64 } else { 0.5 };
                    self.confounding * base.max(0.0)
                })
                .collect()
        })
    }

    fn outcome_slopes(&self) -> Vec<f64> {
        self.outcome_coefficients.clone().unwrap_or_else(|| {
            (0..self.p())
                .map(|j| if j < self.continuous { 2000.0 / (1 + j) as f64 } else { 800.0 })
                .collect()
        })
    }

    /// Every problem with the configuration.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n < 4 {
            out.push(format!("n = {} is below the minimum of 4", self.n));
        }
        if self.continuous == 0 {
            out.push("at least one continuous covariate is required".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            out.push(format!("epsilon {} must lie in (0, 0.5)", self.epsilon));
        }
        if !(self.baseline_share > 0.0 && self.baseline_share < 1.0) {
            out.push(format!("baseline share {} must lie in (0, 1)", self.baseline_share));
        }
        if !(self.baseline_share >= self.epsilon && self.baseline_share <= 1.0 - self.epsilon) {
            out.push(format!(
                "baseline share {} violates the propensity bound [{}, {}]",
                self.baseline_share,
                self.epsilon,
                1.0 - self.epsilon
            ));
        }
        if !(0.0..=1.0).contains(&self.binary_share) {
            out.push(format!("binary share {} must lie in [0, 1]", self.binary_share));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            out.push(format!("noise sd {} must be finite and nonnegative", self.noise_sd));
        }
        for (name, v) in [
            ("propensity", &self.propensity_coefficients),
            ("outcome", &self.outcome_coefficients),
        ] {
            if let Some(v) = v {
                if v.len() != self.p() {
                    out.push(format!("{} {name} coefficients for {} covariates", v.len(), self.p()));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Ground truth for one draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub tau: Vec<f64>,
    pub propensity: Vec<f64>,
    pub mu0: Vec<f64>,
    /// Mean of `tau` over the realized treated units.
    pub att: f64,
    /// Mean propensity, the expected treated share of this draw.
    pub expected_share: f64,
    /// Units whose propensity was clipped.
    pub clipped: usize,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One sample and its truth. Identical configurations give identical draws.
pub fn generate(config: &DgpConfig) -> Result<(ObservationTable, Truth)> {
    config.validate()?;
    let (n, p) = (config.n, config.p());
    let gamma = config.propensity_slopes();
    let beta = config.outcome_slopes();
    let intercept = (config.baseline_share / (1.0 - config.baseline_share)).ln();
    let mut rng = stream(config.seed, 0);
    let mut x = DMatrix::zeros(n, p);
    let mut w = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    let mut propensity = Vec::with_capacity(n);
    let mut mu0 = Vec::with_capacity(n);
    let mut clipped = 0;
    let mut row = vec![0.0; p];
    for i in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if j < config.continuous {
                StandardNormal.sample(&mut rng)
            } else {
                (rng.random::<f64>() < config.binary_share) as u8 as f64
            };
            x[(i, j)] = *v;
        }
        let raw = sigmoid(intercept + row.iter().zip(&gamma).map(|(a, b)| a * b).sum::<f64>());
        let e = raw.clamp(config.epsilon, 1.0 - config.epsilon);
        if e != raw {
            clipped += 1;
        }
        let wi = (rng.random::<f64>() < e) as u8;
        let m0 = config.outcome_intercept + row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        let t = config.effect.at(&row);
        let noise: f64 = StandardNormal.sample(&mut rng);
        y.push(m0 + wi as f64 * t + config.noise_sd * noise);
        w.push(wi);
        tau.push(t);
        propensity.push(e);
        mu0.push(m0);
    }
    let treated: Vec<f64> = (0..n).filter(|&i| w[i] == 1).map(|i| tau[i]).collect();
    if treated.is_empty() || treated.len() == n {
        return Err(Error::Degenerate("draw has a single arm".into()));
    }
    let att = treated.iter().sum::<f64>() / treated.len() as f64;
    let expected_share = propensity.iter().sum::<f64>() / n as f64;
    let table = ObservationTable::from_parts(config.covariate_names(), x, w, y)?;
    Ok((
        table,
        Truth {
            tau,
            propensity,
            mu0,
            att,
            expected_share,
            clipped,
        },
    ))
}

/// Replicate summaries against the realized ATT of each draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub label: String,
    pub replicates: usize,
    pub failures: usize,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_se: f64,
    /// Share of successful replicates with a weight-dominance warning.
    pub dominance_rate: f64,
}

pub const MIN_MC_REPLICATES: usize = 100;

/// Monte Carlo with a caller-supplied estimator. Replicate `r` draws with a
/// seed derived from the configuration seed and `r`, and passes another
/// derived seed to the estimator.
pub fn monte_carlo_with<F>(config: &DgpConfig, replicates: usize, label: &str, f: F) -> Result<CoverageReport>
where
    F: Fn(&ObservationTable, &Truth, u64) -> Result<AttEstimate> + Sync,
{
    config.validate()?;
    if replicates < MIN_MC_REPLICATES {
        return Err(Error::Argument(format!(
            "Monte Carlo needs at least {MIN_MC_REPLICATES} replicates, got {replicates}"
        )));
    }
    let results: Vec<Option<(AttEstimate, f64)>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let cfg = DgpConfig {
                seed: derive_seed(config.seed, &format!("replicate-{r}")),
                ..config.clone()
            };
            let (table, truth) = generate(&cfg).ok()?;
            match f(&table, &truth, derive_seed(config.seed, &format!("estimator-{r}"))) {
                Ok(e) if e.point.is_finite() && e.se.is_finite() => Some((e, truth.att)),
                Ok(_) => None,
                Err(e) => {
                    log::debug!("replicate {r} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let ok: Vec<&(AttEstimate, f64)> = results.iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::Numerical("every Monte Carlo replicate failed".into()));
    }
    let m = ok.len() as f64;
    let err: Vec<f64> = ok.iter().map(|(e, t)| e.point - t).collect();
    Ok(CoverageReport {
        label: label.to_string(),
        replicates,
        failures: replicates - ok.len(),
        bias: err.iter().sum::<f64>() / m,
        rmse: (err.iter().map(|v| v * v).sum::<f64>() / m).sqrt(),
        coverage: ok.iter().filter(|(e, t)| e.ci_covers(*t)).count() as f64 / m,
        mean_se: ok.iter().map(|(e, _)| e.se).sum::<f64>() / m,
        dominance_rate: ok.iter().filter(|(e, _)| e.diagnostics.dominance).count() as f64 / m,
    })
}

/// Monte Carlo for one suite estimator.
pub fn monte_carlo(config: &DgpConfig, tag: EstimatorTag, opts: &EstimatorOptions, replicates: usize) -> Result<CoverageReport> {
    monte_carlo_with(config, replicates, tag.as_str(), |table, _, seed| {
        let o = EstimatorOptions {
            seed,
            ..opts.clone()
        };
        estimate(table, tag, &o)
    })
}
