use rand::Rng;
use rayon::prelude::*;

use super::{estimate, require_arms, AttEstimate, CiMethod, EstimatorOptions, EstimatorTag};
use crate::dataset::ObservationTable;
use crate::error::{Error, Result};
use crate::rng::stream;

pub const MIN_REPLICATES: usize = 200;
const MAX_FAILURE_SHARE: f64 = 0.10;

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap with resampling within each arm.
///
/// The point estimate is the full-sample estimate; `se` is the standard
/// deviation of the replicate estimates. Replicate `b` draws from its own
/// random stream, so results do not depend on scheduling.
pub fn bootstrap_ci(
    sample: &ObservationTable,
    tag: EstimatorTag,
    opts: &EstimatorOptions,
    replicates: usize,
    seed: u64,
) -> Result<AttEstimate> {
    if replicates < MIN_REPLICATES {
        return Err(Error::Argument(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates, got {replicates}"
        )));
    }
    let (t, c) = require_arms(sample)?;
    let base = estimate(sample, tag, opts)?;
    let draws: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, b as u64);
            let mut rows = Vec::with_capacity(sample.n());
            for arm in [&t, &c] {
                rows.extend((0..arm.len()).map(|_| arm[rng.random_range(0..arm.len())]));
            }
            let resampled = sample.subset(&rows);
            match estimate(&resampled, tag, opts) {
                Ok(e) if e.point.is_finite() => Some(e.point),
                Ok(_) => None,
                Err(e) => {
                    log::debug!("bootstrap replicate {b} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let failures = draws.iter().filter(|d| d.is_none()).count();
    if failures as f64 > MAX_FAILURE_SHARE * replicates as f64 {
        return Err(Error::Numerical(format!(
            "{failures} of {replicates} bootstrap replicates failed"
        )));
    }
    let mut points: Vec<f64> = draws.into_iter().flatten().collect();
    points.sort_by(f64::total_cmp);
    let m = points.iter().sum::<f64>() / points.len() as f64;
    let sd = (points.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (points.len() - 1) as f64).sqrt();
    let mut out = base;
    out.se = sd;
    out.ci95 = (quantile(&points, 0.025), quantile(&points, 0.975));
    out.ci_method = CiMethod::Bootstrap;
    out.diagnostics.set("bootstrap_replicates", replicates as f64);
    out.diagnostics.set("bootstrap_failures", failures as f64);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.125), 1.5);
    }

    #[test]
    fn identical_data_gives_zero_width() {
        let t = ObservationTable::from_parts(vec!["x".into()], DMatrix::zeros(6, 1), vec![1, 1, 1, 0, 0, 0], vec![3.0, 3.0, 3.0, 1.0, 1.0, 1.0])
            .unwrap();
        let e = bootstrap_ci(&t, EstimatorTag::DiffInMeans, &EstimatorOptions::default(), 200, 9).unwrap();
        assert_eq!(e.ci95, (2.0, 2.0));
        assert!(bootstrap_ci(&t, EstimatorTag::DiffInMeans, &EstimatorOptions::default(), 199, 9).is_err());
    }
}
