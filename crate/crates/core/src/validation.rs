//! Placebo-outcome checks and comparisons against experimental benchmarks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationTable;
use crate::error::{Error, Result};
use crate::estimators::{run_suite, AttEstimate, EstimatorOptions, EstimatorTag, SuiteCell};
use crate::forest::ForestParams;
use crate::overlap::trim_paper_pipeline;

/// A pre-treatment column used as the outcome, with the covariates that
/// would otherwise reveal it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboSpec {
    pub outcome: String,
    pub excluded: Vec<String>,
    /// Rebuild trimmed samples from the reduced covariate set.
    pub retrim: bool,
}

impl Default for PlaceboSpec {
    fn default() -> Self {
        Self {
            outcome: "re75".into(),
            excluded: vec!["re75".into(), "u75".into()],
            retrim: true,
        }
    }
}

impl PlaceboSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.excluded.contains(&self.outcome) {
            return Err(Error::Argument(format!(
                "placebo outcome `{}` must be among the excluded covariates",
                self.outcome
            )));
        }
        Ok(())
    }
}

/// Moves the placebo column into the outcome slot and drops the excluded
/// covariates.
pub fn make_placebo_sample(sample: &ObservationTable, spec: &PlaceboSpec) -> Result<ObservationTable> {
    spec.validate()?;
    if sample.outcome_name() == spec.outcome {
        return Err(Error::Argument(format!("`{}` is already the outcome", spec.outcome)));
    }
    let y = sample
        .covariate(&spec.outcome)
        .ok_or_else(|| Error::Schema(format!("placebo column `{}` is not a covariate", spec.outcome)))?;
    let keep: Vec<String> = sample
        .covariate_names()
        .iter()
        .filter(|c| !spec.excluded.contains(c))
        .cloned()
        .collect();
    sample.with_outcome(spec.outcome.clone(), y)?.select_covariates(&keep)
}

/// A named sample for a suite run.
#[derive(Debug, Clone)]
pub struct NamedSample {
    pub tag: String,
    pub table: ObservationTable,
}

/// Builds the placebo grid: the experimental sample, each nonexperimental
/// sample, and (when `spec.retrim`) each trimmed nonexperimental sample with
/// its experimental benchmark, trimmed on the reduced covariates.
pub fn placebo_samples(
    treated: &ObservationTable,
    exp_controls: &ObservationTable,
    comparisons: &[(String, ObservationTable)],
    spec: &PlaceboSpec,
    threshold: f64,
    forest: &ForestParams,
) -> Result<Vec<NamedSample>> {
    let t = make_placebo_sample(treated, spec)?;
    let c = make_placebo_sample(exp_controls, spec)?;
    let mut out = vec![NamedSample {
        tag: "experimental".into(),
        table: t.concat(&c)?,
    }];
    for (tag, controls) in comparisons {
        let nonexp = t.concat(&make_placebo_sample(controls, spec)?)?;
        if spec.retrim {
            let piped = trim_paper_pipeline(&nonexp, &c, threshold, forest)?;
            out.push(NamedSample {
                tag: tag.clone(),
                table: nonexp,
            });
            out.push(NamedSample {
                tag: format!("{tag}-trimmed"),
                table: piped.trimmed,
            });
            out.push(NamedSample {
                tag: format!("{tag}-trimmed-benchmark"),
                table: piped.benchmark,
            });
        } else {
            out.push(NamedSample {
                tag: tag.clone(),
                table: nonexp,
            });
        }
    }
    Ok(out)
}

/// Every estimator on every placebo sample. Cells come back in sample-major
/// order; failures are recorded in the cell.
pub fn run_placebo_suite(samples: &[NamedSample], estimators: &[EstimatorTag], opts: &EstimatorOptions) -> Vec<SuiteCell> {
    samples
        .par_iter()
        .flat_map_iter(|s| run_suite(&s.table, &s.tag, estimators, opts))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkDelta {
    pub estimator: EstimatorTag,
    pub nonexperimental: f64,
    pub benchmark: f64,
    pub delta: f64,
    /// Whether the two 95% intervals intersect.
    pub ci_overlap: bool,
}

pub fn benchmark_delta(nonexp: &AttEstimate, bench: &AttEstimate) -> BenchmarkDelta {
    BenchmarkDelta {
        estimator: nonexp.estimator,
        nonexperimental: nonexp.point,
        benchmark: bench.point,
        delta: nonexp.point - bench.point,
        ci_overlap: nonexp.ci95.0 <= bench.ci95.1 && bench.ci95.0 <= nonexp.ci95.1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn table(names: &[&str]) -> ObservationTable {
        let p = names.len();
        let x = DMatrix::from_fn(4, p, |r, c| (r * p + c) as f64);
        ObservationTable::from_parts(names.iter().map(|s| s.to_string()).collect(), x, vec![1, 1, 0, 0], vec![1.0; 4])
            .unwrap()
    }

    #[test]
    fn placebo_moves_column_and_drops_companions() {
        let t = table(&["age", "re74", "re75", "u74", "u75"]);
        let p = make_placebo_sample(&t, &PlaceboSpec::default()).unwrap();
        assert_eq!(p.covariate_names(), ["age", "re74", "u74"]);
        assert_eq!(p.outcome_name(), "re75");
        assert_eq!(p.y(), t.covariate("re75").unwrap().as_slice());
        assert!(make_placebo_sample(&p, &PlaceboSpec::default()).is_err());
    }

    #[test]
    fn missing_placebo_column_is_an_error() {
        let t = table(&["age", "re74"]);
        assert!(matches!(make_placebo_sample(&t, &PlaceboSpec::default()), Err(Error::Schema(_))));
    }

    #[test]
    fn identical_estimates_overlap_with_zero_delta() {
        let e = AttEstimate::analytic(EstimatorTag::Ols, 3.0, 1.0, 5, 5);
        let d = benchmark_delta(&e, &e);
        assert_eq!(d.delta, 0.0);
        assert!(d.ci_overlap);
        let far = AttEstimate::analytic(EstimatorTag::Ols, 30.0, 1.0, 5, 5);
        assert!(!benchmark_delta(&far, &e).ci_overlap);
    }
}
