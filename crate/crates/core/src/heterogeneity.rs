//! Conditional effects on the treated (CATT) from a causal forest, paired
//! comparisons between samples, and a consistency check against an ATT.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::ObservationTable;
use crate::error::{Error, Result};
use crate::estimators::AttEstimate;
use crate::forest::{fit_causal_forest, ForestParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CattEntry {
    pub key: String,
    pub profile: Vec<f64>,
    pub catt: f64,
}

/// One CATT per treated unit, evaluated at that unit's covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CattProfile {
    pub sample: String,
    pub covariates: Vec<String>,
    pub params: ForestParams,
    pub entries: Vec<CattEntry>,
}

impl CattProfile {
    pub fn estimates(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.catt).collect()
    }

    pub fn mean(&self) -> f64 {
        self.entries.iter().map(|e| e.catt).sum::<f64>() / self.entries.len() as f64
    }

    /// `(min, max)` of the estimates.
    pub fn range(&self) -> (f64, f64) {
        self.entries.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.catt), hi.max(e.catt))
        })
    }

    pub fn share_negative(&self) -> f64 {
        self.entries.iter().filter(|e| e.catt < 0.0).count() as f64 / self.entries.len() as f64
    }

    pub fn to_delimited(&self, sep: char) -> String {
        let mut out = format!("key{sep}catt");
        for c in &self.covariates {
            out.push(sep);
            out.push_str(c);
        }
        out.push('\n');
        for e in &self.entries {
            out.push_str(&e.key);
            out.push(sep);
            out.push_str(&e.catt.to_string());
            for v in &e.profile {
                out.push(sep);
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Fits a causal forest on the whole sample and predicts out of bag at each
/// treated unit.
pub fn estimate_catt(sample: &ObservationTable, params: &ForestParams, sample_tag: &str) -> Result<CattProfile> {
    let treated = sample.treated_indices();
    if treated.is_empty() || sample.n_control() == 0 {
        return Err(Error::Degenerate("CATT needs both arms".into()));
    }
    let fit = fit_causal_forest(sample.x(), sample.covariate_names(), sample.w(), sample.y(), params)?;
    let preds = fit.predict_oob(&treated);
    let mut entries = Vec::with_capacity(treated.len());
    for (&row, pred) in treated.iter().zip(preds) {
        let catt = pred?.estimate;
        if !catt.is_finite() {
            return Err(Error::Numerical(format!("non-finite CATT for row {row}")));
        }
        entries.push(CattEntry {
            key: sample.keys()[row].to_string(),
            profile: sample.x().row(row).iter().copied().collect(),
            catt,
        });
    }
    Ok(CattProfile {
        sample: sample_tag.to_string(),
        covariates: sample.covariate_names().to_vec(),
        params: params.clone(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CattPair {
    pub key: String,
    pub experimental: f64,
    pub nonexperimental: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub experimental_range: (f64, f64),
    pub nonexperimental_range: (f64, f64),
    pub experimental_share_negative: f64,
    pub nonexperimental_share_negative: f64,
    /// Pearson correlation; absent when either side is constant.
    pub correlation: Option<f64>,
    /// Endpoints of the 45-degree reference line covering both axes.
    pub diagonal: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CattComparison {
    pub pairs: Vec<CattPair>,
    /// `(experimental, nonexperimental)` ATT points.
    pub att: (f64, f64),
    pub summary: ComparisonSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalBins {
    pub bin_width: f64,
    pub edges: Vec<f64>,
    pub experimental: Vec<usize>,
    pub nonexperimental: Vec<usize>,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn range_of(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Pairs two profiles by treated-unit key. Both must cover the same keys.
pub fn compare_catt(exp: &CattProfile, nonexp: &CattProfile, att: (f64, f64)) -> Result<CattComparison> {
    let a: BTreeMap<&str, f64> = exp.entries.iter().map(|e| (e.key.as_str(), e.catt)).collect();
    let b: BTreeMap<&str, f64> = nonexp.entries.iter().map(|e| (e.key.as_str(), e.catt)).collect();
    let mut offenders: Vec<String> = a
        .keys()
        .filter(|k| !b.contains_key(*k))
        .chain(b.keys().filter(|k| !a.contains_key(*k)))
        .map(|k| k.to_string())
        .collect();
    if a.len() != exp.entries.len() || b.len() != nonexp.entries.len() {
        offenders.push("duplicate keys".into());
    }
    if !offenders.is_empty() {
        offenders.sort();
        return Err(Error::Pairing { keys: offenders });
    }
    let pairs: Vec<CattPair> = exp
        .entries
        .iter()
        .map(|e| CattPair {
            key: e.key.clone(),
            experimental: e.catt,
            nonexperimental: b[e.key.as_str()],
        })
        .collect();
    let xs: Vec<f64> = pairs.iter().map(|p| p.experimental).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.nonexperimental).collect();
    let share = |v: &[f64]| v.iter().filter(|&&x| x < 0.0).count() as f64 / v.len() as f64;
    let (rx, ry) = (range_of(&xs), range_of(&ys));
    let summary = ComparisonSummary {
        experimental_range: rx,
        nonexperimental_range: ry,
        experimental_share_negative: share(&xs),
        nonexperimental_share_negative: share(&ys),
        correlation: pearson(&xs, &ys),
        diagonal: (rx.0.min(ry.0), rx.1.max(ry.1)),
    };
    Ok(CattComparison { pairs, att, summary })
}

impl CattComparison {
    /// Scatter data: `experimental, nonexperimental, key`.
    pub fn to_delimited(&self, sep: char) -> String {
        let mut out = format!("experimental{sep}nonexperimental{sep}key\n");
        for p in &self.pairs {
            out.push_str(&format!("{}{sep}{}{sep}{}\n", p.experimental, p.nonexperimental, p.key));
        }
        out
    }

    /// Histograms of both axes on shared bins aligned to multiples of the width.
    pub fn marginal_bins(&self, bin_width: f64) -> Result<MarginalBins> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::Argument(format!("bin width must be positive, got {bin_width}")));
        }
        let (lo, hi) = self.summary.diagonal;
        let first = (lo / bin_width).floor() as i64;
        let last = (hi / bin_width).floor() as i64;
        let bins = (last - first + 1) as usize;
        let edges = (0..=bins).map(|k| (first + k as i64) as f64 * bin_width).collect();
        let mut experimental = vec![0; bins];
        let mut nonexperimental = vec![0; bins];
        let slot = |v: f64| ((v / bin_width).floor() as i64 - first) as usize;
        for p in &self.pairs {
            experimental[slot(p.experimental)] += 1;
            nonexperimental[slot(p.nonexperimental)] += 1;
        }
        Ok(MarginalBins {
            bin_width,
            edges,
            experimental,
            nonexperimental,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub mean_catt: f64,
    pub att: f64,
    pub att_se: f64,
    pub gap: f64,
    /// Set when the gap exceeds twice the ATT standard error.
    pub flagged: bool,
}

/// Compares the average CATT with an ATT estimate on the same sample.
pub fn catt_calibration(profile: &CattProfile, att: &AttEstimate) -> CalibrationReport {
    let mean_catt = profile.mean();
    let gap = (mean_catt - att.point).abs();
    CalibrationReport {
        mean_catt,
        att: att.point,
        att_se: att.se,
        gap,
        flagged: gap > 2.0 * att.se,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorTag;

    fn profile(values: &[f64], prefix: &str) -> CattProfile {
        CattProfile {
            sample: prefix.into(),
            covariates: vec![],
            params: ForestParams::default(),
            entries: values
                .iter()
                .enumerate()
                .map(|(i, &v)| CattEntry {
                    key: format!("unit:{i}"),
                    profile: vec![],
                    catt: v,
                })
                .collect(),
        }
    }

    #[test]
    fn identical_profiles_lie_on_the_diagonal() {
        let p = profile(&[1.0, -2.0, 5.0], "a");
        let c = compare_catt(&p, &p, (1.0, 1.0)).unwrap();
        assert!(c.pairs.iter().all(|q| q.experimental == q.nonexperimental));
        assert!((c.summary.correlation.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(c.summary.experimental_range, (-2.0, 5.0));
        let bins = c.marginal_bins(1.0).unwrap();
        assert_eq!(bins.experimental.iter().sum::<usize>(), 3);
        assert_eq!(bins.experimental, bins.nonexperimental);
    }

    #[test]
    fn disjoint_keys_fail_to_pair() {
        let a = profile(&[1.0], "a");
        let mut b = profile(&[1.0], "b");
        b.entries[0].key = "other:0".into();
        match compare_catt(&a, &b, (0.0, 0.0)) {
            Err(Error::Pairing { keys }) => assert_eq!(keys, vec!["other:0".to_string(), "unit:0".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn calibration_flags_large_gaps() {
        let p = profile(&[100.0, 120.0], "a");
        let near = AttEstimate::analytic(EstimatorTag::Aipw, 105.0, 10.0, 2, 2);
        assert!(!catt_calibration(&p, &near).flagged);
        let far = AttEstimate::analytic(EstimatorTag::Aipw, 500.0, 10.0, 2, 2);
        assert!(catt_calibration(&p, &far).flagged);
    }
}
