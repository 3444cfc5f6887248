use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{effective_sample_size, mean, require_arms, sample_variance, AttEstimate, Diagnostics, EstimatorTag};
use crate::dataset::ObservationTable;
use crate::error::{Error, Result};
use crate::models::{fit_ols, Design};
use crate::overlap::PropensityFit;

const DOMINANCE_SHARE: f64 = 0.5;
const NEWTON_MAX_ITER: usize = 200;
const NEWTON_TOL: f64 = 1e-11;
/// Residual standardized imbalance above which a non-converged solve is infeasible.
const FEASIBILITY_TOL: f64 = 1e-6;

/// Nonnegative control weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    /// Normalizes nonnegative raw weights.
    pub fn normalize(raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Numerical("weights must be finite and nonnegative".into()));
        }
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Numerical("weights sum to zero".into()));
        }
        Ok(Self {
            weights: raw.into_iter().map(|v| v / total).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.weights)
    }

    pub fn weighted_mean(&self, v: &[f64]) -> f64 {
        self.weights.iter().zip(v).map(|(w, x)| w * x).sum()
    }

    fn describe(&self, d: &mut Diagnostics) {
        d.set("effective_sample_size", self.effective_sample_size());
        d.set("max_weight", self.max());
        if self.max() > DOMINANCE_SHARE {
            d.dominance = true;
            d.warn(format!(
                "one control carries {:.1}% of the weight",
                100.0 * self.max()
            ));
        }
    }
}

/// Hájek odds weights `e/(1-e)` over controls, normalized.
pub fn hajek_weights(control_scores: &[f64]) -> Result<WeightVector> {
    if control_scores.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::Domain("propensity scores must lie strictly inside (0, 1)".into()));
    }
    WeightVector::normalize(control_scores.iter().map(|e| e / (1.0 - e)).collect())
}

/// Treated mean minus the weighted control mean. The variance combines the
/// treated-mean variance with `Σ w² e²` over controls, where `e` are the
/// control outcomes net of the weighted mean.
pub fn ipw_att(sample: &ObservationTable, fit: &PropensityFit) -> Result<AttEstimate> {
    let (t, c) = require_arms(sample)?;
    if fit.w != sample.w() {
        return Err(Error::Argument("propensity fit does not belong to this sample".into()));
    }
    let weights = hajek_weights(&c.iter().map(|&i| fit.scores[i]).collect::<Vec<_>>())?;
    let y = sample.y();
    let yt: Vec<f64> = t.iter().map(|&i| y[i]).collect();
    let yc: Vec<f64> = c.iter().map(|&i| y[i]).collect();
    let m1 = mean(yt.iter().copied());
    let m0 = weights.weighted_mean(&yc);
    let n1 = t.len() as f64;
    let var = yt.iter().map(|v| (v - m1).powi(2)).sum::<f64>() / (n1 * n1)
        + weights
            .as_slice()
            .iter()
            .zip(&yc)
            .map(|(w, v)| (w * (v - m0)).powi(2))
            .sum::<f64>();
    let mut d = Diagnostics::default();
    weights.describe(&mut d);
    Ok(AttEstimate::analytic(EstimatorTag::Ipw, m1 - m0, var.sqrt(), t.len(), c.len()).with_diagnostics(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMethod {
    /// Minimum-KL weights under exact mean balance, via the Lagrange dual.
    Entropy,
    /// Just-identified logit whose odds weights satisfy the balance equations.
    Cbps,
}

/// Moment columns: selected covariates, optionally with squares of the
/// non-binary ones.
struct Moments {
    names: Vec<String>,
    treated: DMatrix<f64>,
    control: DMatrix<f64>,
}

fn moments(sample: &ObservationTable, selected: Option<&[String]>, squares: bool, t: &[usize], c: &[usize]) -> Result<Moments> {
    let all = sample.covariate_names();
    let names: Vec<String> = match selected {
        Some(s) => {
            for n in s {
                if sample.covariate_index(n).is_none() {
                    return Err(Error::Argument(format!("unknown balance covariate `{n}`")));
                }
            }
            s.to_vec()
        }
        None => all.to_vec(),
    };
    let mut cols: Vec<(String, Vec<f64>)> = names
        .iter()
        .map(|n| (n.clone(), sample.covariate(n).expect("checked above")))
        .collect();
    if squares {
        let extra: Vec<(String, Vec<f64>)> = cols
            .iter()
            .filter(|(_, v)| v.iter().any(|&x| x != 0.0 && x != 1.0))
            .map(|(n, v)| (format!("{n}^2"), v.iter().map(|x| x * x).collect()))
            .collect();
        cols.extend(extra);
    }
    let pick = |rows: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |r, j| cols[j].1[rows[r]]);
    Ok(Moments {
        names: cols.iter().map(|c| c.0.clone()).collect(),
        treated: pick(t),
        control: pick(c),
    })
}

fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|j| m.column(j).mean()).collect()
}

/// Checks each target mean lies strictly inside the control range; returns
/// the columns that carry a constraint (non-constant among controls).
fn feasible_columns(mo: &Moments, target: &[f64]) -> Result<Vec<usize>> {
    let mut bad = Vec::new();
    let mut active = Vec::new();
    for j in 0..mo.names.len() {
        let col = mo.control.column(j);
        let (lo, hi) = (col.min(), col.max());
        if lo == hi {
            if target[j] != lo {
                bad.push(mo.names[j].clone());
            }
        } else if target[j] <= lo || target[j] >= hi {
            bad.push(mo.names[j].clone());
        } else {
            active.push(j);
        }
    }
    if !bad.is_empty() {
        return Err(Error::Infeasible { covariates: bad });
    }
    Ok(active)
}

/// Column scale: control standard deviation.
fn scale_of(m: &DMatrix<f64>, j: usize) -> f64 {
    let v: Vec<f64> = m.column(j).iter().copied().collect();
    sample_variance(&v).unwrap_or(1.0).sqrt().max(f64::MIN_POSITIVE)
}

fn solve_psd(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let k = h.nrows();
    let trace = h.trace().abs().max(1e-300) / k as f64;
    for ridge in [0.0, 1e-12, 1e-9, 1e-6] {
        if let Some(ch) = (h + DMatrix::identity(k, k) * (ridge * trace)).cholesky() {
            return Some(ch.solve(g));
        }
    }
    None
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

struct Solve {
    raw: Vec<f64>,
    iterations: usize,
    gradient: Vec<f64>,
}

/// Entropy dual: minimize `log Σ exp(λ'z_c)` with `z` centered at the target
/// means, so the stationary point has weighted mean zero in every column.
fn entropy_dual(z: &DMatrix<f64>) -> Solve {
    let (n, k) = z.shape();
    let mut lambda = DVector::zeros(k);
    let eval = |l: &DVector<f64>| -> (f64, Vec<f64>) {
        let eta: Vec<f64> = (z * l).iter().copied().collect();
        (log_sum_exp(&eta), eta)
    };
    let (mut f, mut eta) = eval(&lambda);
    let mut iterations = 0;
    let mut grad = DVector::zeros(k);
    for it in 0..NEWTON_MAX_ITER {
        iterations = it;
        let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = eta.iter().map(|e| (e - m).exp()).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        grad = DVector::from_fn(k, |j, _| (0..n).map(|i| w[i] * z[(i, j)]).sum());
        if grad.amax() < NEWTON_TOL {
            break;
        }
        let mut h = DMatrix::zeros(k, k);
        for i in 0..n {
            for a in 0..k {
                let za = w[i] * z[(i, a)];
                for b in a..k {
                    h[(a, b)] += za * z[(i, b)];
                }
            }
        }
        for a in 0..k {
            for b in a..k {
                h[(a, b)] -= grad[a] * grad[b];
                h[(b, a)] = h[(a, b)];
            }
        }
        let Some(step) = solve_psd(&h, &grad) else { break };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &lambda - &step * t;
            let (fc, ec) = eval(&cand);
            if fc.is_finite() && fc < f {
                lambda = cand;
                f = fc;
                eta = ec;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Solve {
        raw: eta.iter().map(|e| (e - m).exp()).collect(),
        iterations,
        gradient: grad.iter().copied().collect(),
    }
}

/// Just-identified CBPS for the ATT: minimize
/// `Σ_c exp(β'z_c) - Σ_t β'z_t` over `z = (1, standardized moments)`; the
/// gradient is the balance condition on odds-weighted controls.
fn cbps_newton(zt: &DMatrix<f64>, zc: &DMatrix<f64>) -> Solve {
    let (n0, k) = zc.shape();
    let n1 = zt.nrows() as f64;
    let target = DVector::from_fn(k, |j, _| zt.column(j).sum());
    let mut beta = DVector::zeros(k);
    beta[0] = (n1 / n0 as f64).ln();
    let eval = |b: &DVector<f64>| -> (f64, Vec<f64>) {
        let odds: Vec<f64> = (zc * b).iter().map(|e| e.exp()).collect();
        (odds.iter().sum::<f64>() - b.dot(&target), odds)
    };
    let (mut f, mut odds) = eval(&beta);
    let mut iterations = 0;
    let mut grad = DVector::zeros(k);
    for it in 0..NEWTON_MAX_ITER {
        iterations = it;
        grad = DVector::from_fn(k, |j, _| (0..n0).map(|i| odds[i] * zc[(i, j)]).sum::<f64>() - target[j]);
        if grad.amax() / n1 < NEWTON_TOL {
            break;
        }
        let mut h = DMatrix::zeros(k, k);
        for i in 0..n0 {
            for a in 0..k {
                let za = odds[i] * zc[(i, a)];
                for b in a..k {
                    h[(a, b)] += za * zc[(i, b)];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        let Some(step) = solve_psd(&h, &grad) else { break };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &beta - &step * t;
            let (fc, oc) = eval(&cand);
            if fc.is_finite() && fc < f {
                beta = cand;
                f = fc;
                odds = oc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Solve {
        raw: odds,
        iterations,
        gradient: grad.iter().map(|g| g / n1).collect(),
    }
}

/// Balancing weights over the sample's controls, with diagnostics including
/// `max_imbalance`, the largest absolute gap between weighted control and
/// treated means on the original moment scale.
pub fn balance_weights(
    sample: &ObservationTable,
    method: BalanceMethod,
    selected: Option<&[String]>,
    squares: bool,
) -> Result<(WeightVector, Diagnostics)> {
    let (t, c) = require_arms(sample)?;
    let mo = moments(sample, selected, squares, &t, &c)?;
    let target = column_means(&mo.treated);
    let active = feasible_columns(&mo, &target)?;
    let scales: Vec<f64> = active.iter().map(|&j| scale_of(&mo.control, j)).collect();

    let solve = match method {
        BalanceMethod::Entropy => {
            let z = DMatrix::from_fn(c.len(), active.len(), |i, a| {
                let j = active[a];
                (mo.control[(i, j)] - target[j]) / scales[a]
            });
            entropy_dual(&z)
        }
        BalanceMethod::Cbps => {
            let pooled_mean: Vec<f64> = active
                .iter()
                .map(|&j| {
                    (mo.treated.column(j).sum() + mo.control.column(j).sum()) / (t.len() + c.len()) as f64
                })
                .collect();
            let standardize = |m: &DMatrix<f64>| {
                DMatrix::from_fn(m.nrows(), active.len() + 1, |i, a| {
                    if a == 0 {
                        1.0
                    } else {
                        (m[(i, active[a - 1])] - pooled_mean[a - 1]) / scales[a - 1]
                    }
                })
            };
            cbps_newton(&standardize(&mo.treated), &standardize(&mo.control))
        }
    };
    let weights = WeightVector::normalize(solve.raw)?;
    let residual = solve.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if residual > FEASIBILITY_TOL {
        let offenders: Vec<String> = (0..mo.names.len())
            .filter(|&j| {
                let col: Vec<f64> = mo.control.column(j).iter().copied().collect();
                let gap = (weights.weighted_mean(&col) - target[j]).abs();
                gap > FEASIBILITY_TOL * scale_of(&mo.control, j)
            })
            .map(|j| mo.names[j].clone())
            .collect();
        return Err(Error::Infeasible {
            covariates: if offenders.is_empty() { mo.names.clone() } else { offenders },
        });
    }
    let mut d = Diagnostics::default();
    let imbalance = (0..mo.names.len())
        .map(|j| {
            let col: Vec<f64> = mo.control.column(j).iter().copied().collect();
            (weights.weighted_mean(&col) - target[j]).abs()
        })
        .fold(0.0, f64::max);
    d.set("max_imbalance", imbalance);
    d.set("newton_iterations", solve.iterations as f64);
    d.set("moments", mo.names.len() as f64);
    weights.describe(&mut d);
    Ok((weights, d))
}

/// Balancing-weight ATT. The standard error uses residuals from a weighted
/// regression of control outcomes on the balanced moments, so variation
/// explained by balanced covariates is not counted twice.
pub fn balance_att(
    sample: &ObservationTable,
    method: BalanceMethod,
    selected: Option<&[String]>,
    squares: bool,
) -> Result<AttEstimate> {
    let (t, c) = require_arms(sample)?;
    let (weights, mut d) = balance_weights(sample, method, selected, squares)?;
    let y = sample.y();
    let yt: Vec<f64> = t.iter().map(|&i| y[i]).collect();
    let yc: Vec<f64> = c.iter().map(|&i| y[i]).collect();
    let m1 = mean(yt.iter().copied());
    let m0 = weights.weighted_mean(&yc);

    let mo = moments(sample, selected, squares, &t, &c)?;
    let (rt, ec) = {
        let design = Design::with_intercept(&mo.control, &mo.names);
        match fit_ols(&design, &yc, Some(weights.as_slice())) {
            Ok(fit) => {
                let slope = |m: &DMatrix<f64>, i: usize| -> f64 {
                    (0..m.ncols()).map(|j| fit.coefficients[j + 1] * m[(i, j)]).sum()
                };
                let rt: Vec<f64> = (0..t.len()).map(|i| yt[i] - slope(&mo.treated, i)).collect();
                let ec: Vec<f64> = (0..c.len())
                    .map(|i| yc[i] - fit.coefficients[0] - slope(&mo.control, i))
                    .collect();
                (rt, ec)
            }
            Err(_) => {
                d.warn("weighted outcome regression failed; standard error ignores covariates");
                (yt.clone(), yc.iter().map(|v| v - m0).collect())
            }
        }
    };
    let n1 = t.len() as f64;
    let rbar = mean(rt.iter().copied());
    let var = rt.iter().map(|v| (v - rbar).powi(2)).sum::<f64>() / (n1 * n1)
        + weights
            .as_slice()
            .iter()
            .zip(&ec)
            .map(|(w, e)| (w * e).powi(2))
            .sum::<f64>();
    let tag = match method {
        BalanceMethod::Entropy => EstimatorTag::Entropy,
        BalanceMethod::Cbps => EstimatorTag::Cbps,
    };
    Ok(AttEstimate::analytic(tag, m1 - m0, var.sqrt(), t.len(), c.len()).with_diagnostics(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlap::PropensityMethod;

    fn table(x: &[f64], w: &[u8], y: &[f64]) -> ObservationTable {
        ObservationTable::from_parts(
            vec!["x".into()],
            DMatrix::from_column_slice(x.len(), 1, x),
            w.to_vec(),
            y.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn hajek_toy() {
        let t = table(&[0.0, 0.0, 0.0, 0.0], &[1, 1, 0, 0], &[10.0, 20.0, 10.0, 20.0]);
        let fit = PropensityFit::from_scores(vec![0.5, 0.5, 0.5, 0.8], t.w().to_vec(), PropensityMethod::Logit).unwrap();
        let e = ipw_att(&t, &fit).unwrap();
        assert_eq!(e.point, -3.0);
        let w = hajek_weights(&[0.5, 0.8]).unwrap();
        assert!((w.as_slice()[0] - 0.2).abs() < 1e-15 && (w.as_slice()[1] - 0.8).abs() < 1e-15);
        assert!(e.diagnostics.dominance);
    }

    #[test]
    fn constant_scores_reduce_to_difference() {
        let t = table(&[0.0; 5], &[1, 1, 0, 0, 0], &[4.0, 6.0, 1.0, 2.0, 6.0]);
        let fit = PropensityFit::from_scores(vec![0.3; 5], t.w().to_vec(), PropensityMethod::Logit).unwrap();
        assert!((ipw_att(&t, &fit).unwrap().point - 2.0).abs() < 1e-12);
    }

    #[test]
    fn linear_outcome_is_balanced_exactly() {
        // Treated mean x = 3, y = 18; controls x in {0, 2, 4} with y = 5x.
        let t = table(&[2.0, 4.0, 0.0, 2.0, 4.0], &[1, 1, 0, 0, 0], &[16.0, 20.0, 0.0, 10.0, 20.0]);
        for m in [BalanceMethod::Entropy, BalanceMethod::Cbps] {
            let e = balance_att(&t, m, None, false).unwrap();
            assert!((e.point - 3.0).abs() < 1e-9, "{m:?}: {}", e.point);
            assert!(e.diagnostics.get("max_imbalance").unwrap() <= 1e-9);
        }
    }

    #[test]
    fn balanced_sample_gets_uniform_entropy_weights() {
        let t = table(&[1.0, 3.0, 1.0, 3.0, 2.0], &[1, 1, 0, 0, 0], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let (w, _) = balance_weights(&t, BalanceMethod::Entropy, None, false).unwrap();
        for v in w.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hull_violation_is_infeasible() {
        let t = table(&[5.0, 5.0, 0.0, 2.0, 4.0], &[1, 1, 0, 0, 0], &[1.0; 5]);
        match balance_att(&t, BalanceMethod::Entropy, None, false) {
            Err(Error::Infeasible { covariates }) => assert_eq!(covariates, vec!["x".to_string()]),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn entropy_and_cbps_agree() {
        let x = DMatrix::from_fn(60, 2, |r, c| ((r * 13 + c * 7) % 17) as f64 + if c == 1 { (r % 2) as f64 } else { 0.0 });
        let w: Vec<u8> = (0..60).map(|r| (r % 4 == 0) as u8).collect();
        let y: Vec<f64> = (0..60).map(|r| (r as f64).sin() * 3.0 + x[(r, 0)]).collect();
        let t = ObservationTable::from_parts(vec!["a".into(), "b".into()], x, w, y).unwrap();
        let (we, _) = balance_weights(&t, BalanceMethod::Entropy, None, false).unwrap();
        let (wc, _) = balance_weights(&t, BalanceMethod::Cbps, None, false).unwrap();
        for (a, b) in we.as_slice().iter().zip(wc.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
