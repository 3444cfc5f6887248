//! Elastic-net regression (squared-error and logistic loss) by cyclic
//! coordinate descent on the Gram matrix, with K-fold cross-validated
//! penalty selection.
//!
//! Objective, on internally standardized covariates:
//!
//! ```text
//! loss(b0, beta) + lambda * (alpha * |beta|_1 + (1 - alpha) / (2 s) * |beta|_2^2)
//! ```
//!
//! where `loss` is half the mean squared error or the mean negative
//! log-likelihood, and `s` is the outcome's standard deviation for squared
//! error (1 for logistic loss), so squared-error fits scale with the outcome. The logistic case is solved by proximal Newton: each outer
//! step minimizes a weighted quadratic approximation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{log1p_exp, sigmoid};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 200_000;
const MAX_OUTER: usize = 100;
const MIN_WEIGHT: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Binomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    /// Mixing between lasso (1) and ridge (0).
    pub alpha: f64,
    pub n_lambda: usize,
    /// Smallest penalty as a fraction of the smallest all-zero penalty.
    pub lambda_min_ratio: f64,
    /// Explicit descending grid; overrides `n_lambda` / `lambda_min_ratio`.
    pub lambdas: Option<Vec<f64>>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for NetParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            n_lambda: 100,
            lambda_min_ratio: 1e-4,
            lambdas: None,
            folds: 5,
            seed: 0,
        }
    }
}

/// Coefficients at a single penalty, on the original covariate scale.
#[derive(Debug, Clone, Serialize)]
pub struct NetSolution {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub sweeps: usize,
    /// Penalized objective after each coordinate sweep (final proximal-Newton
    /// subproblem for the logistic family).
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NetFit {
    pub family: Family,
    pub alpha: f64,
    pub lambda: f64,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub cv_lambdas: Vec<f64>,
    pub cv_loss: Vec<f64>,
}

impl NetFit {
    /// Conditional mean (Gaussian) or class-1 probability (binomial).
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        predict_linear(self.intercept, &self.coefficients, x)
            .into_iter()
            .map(|eta| match self.family {
                Family::Gaussian => eta,
                Family::Binomial => sigmoid(eta),
            })
            .collect()
    }
}

fn predict_linear(intercept: f64, beta: &[f64], x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| intercept + (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum::<f64>())
        .collect()
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Covariates centered and scaled to unit (population) variance, with a
/// leading column of ones. Constant columns are kept but frozen at zero.
struct Standardized {
    a: DMatrix<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl Standardized {
    fn new(x: &DMatrix<f64>) -> Self {
        let (n, p) = x.shape();
        let nf = n as f64;
        let means: Vec<f64> = (0..p).map(|j| x.column(j).sum() / nf).collect();
        let sds: Vec<f64> = (0..p)
            .map(|j| {
                let ss: f64 = x.column(j).iter().map(|v| (v - means[j]).powi(2)).sum();
                (ss / nf).sqrt()
            })
            .collect();
        let a = DMatrix::from_fn(n, p + 1, |r, c| {
            if c == 0 {
                1.0
            } else if sds[c - 1] > 0.0 {
                (x[(r, c - 1)] - means[c - 1]) / sds[c - 1]
            } else {
                0.0
            }
        });
        Self { a, means, sds }
    }

    fn p(&self) -> usize {
        self.sds.len()
    }

    fn free(&self, j: usize) -> bool {
        j == 0 || self.sds[j - 1] > 0.0
    }

    fn destandardize(&self, theta: &DVector<f64>) -> (f64, Vec<f64>) {
        let beta: Vec<f64> = (0..self.p())
            .map(|j| {
                if self.sds[j] > 0.0 {
                    theta[j + 1] / self.sds[j]
                } else {
                    0.0
                }
            })
            .collect();
        let intercept = theta[0] - beta.iter().zip(&self.means).map(|(b, m)| b * m).sum::<f64>();
        (intercept, beta)
    }
}

fn penalty(theta: &DVector<f64>, lambda: f64, alpha: f64) -> f64 {
    let (l1, l2) = theta
        .iter()
        .skip(1)
        .fold((0.0, 0.0), |(a, b), t| (a + t.abs(), b + t * t));
    lambda * (alpha * l1 + 0.5 * (1.0 - alpha) * l2)
}

/// Minimizes 0.5 theta' H theta - c' theta + penalty(theta[1..]) in place.
/// Returns the sweep count and per-sweep objective values.
fn coordinate_descent(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    free: &[bool],
    lambda: f64,
    alpha: f64,
    tol: f64,
    theta: &mut DVector<f64>,
) -> (usize, Vec<f64>) {
    let k = theta.len();
    let mut h_theta = h * &*theta;
    let objective = |theta: &DVector<f64>, h_theta: &DVector<f64>| {
        0.5 * theta.dot(h_theta) - c.dot(theta) + penalty(theta, lambda, alpha)
    };
    let mut trace = vec![objective(theta, &h_theta)];
    for sweep in 1..=MAX_SWEEPS {
        let mut max_delta: f64 = 0.0;
        for j in 0..k {
            if !free[j] || h[(j, j)] <= 0.0 {
                continue;
            }
            let rho = c[j] - h_theta[j] + h[(j, j)] * theta[j];
            let new = if j == 0 {
                rho / h[(j, j)]
            } else {
                soft_threshold(rho, lambda * alpha) / (h[(j, j)] + lambda * (1.0 - alpha))
            };
            let delta = new - theta[j];
            if delta != 0.0 {
                theta[j] = new;
                for r in 0..k {
                    h_theta[r] += delta * h[(r, j)];
                }
                max_delta = max_delta.max(delta.abs() * h[(j, j)].sqrt());
            }
        }
        trace.push(objective(theta, &h_theta));
        if max_delta <= tol {
            return (sweep, trace);
        }
    }
    (MAX_SWEEPS, trace)
}

fn weighted_gram(a: &DMatrix<f64>, v: &[f64], z: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let (n, k) = a.shape();
    let nf = n as f64;
    let mut h = DMatrix::zeros(k, k);
    let mut c = DVector::zeros(k);
    for i in 0..n {
        let row = a.row(i);
        for p in 0..k {
            let vp = v[i] * row[p];
            c[p] += vp * z[i];
            for q in p..k {
                h[(p, q)] += vp * row[q];
            }
        }
    }
    for p in 0..k {
        for q in 0..p {
            h[(p, q)] = h[(q, p)];
        }
    }
    (h / nf, c / nf)
}

struct Problem<'a> {
    std: &'a Standardized,
    y: &'a [f64],
    family: Family,
    free: Vec<bool>,
    /// Gram and cross-product for the Gaussian family (fixed).
    gaussian: Option<(DMatrix<f64>, DVector<f64>)>,
    /// Outcome scale the Gaussian problem is solved on.
    y_scale: f64,
    tol: f64,
}

impl<'a> Problem<'a> {
    fn new(std: &'a Standardized, y: &'a [f64], family: Family) -> Self {
        let n = y.len();
        let free = (0..=std.p()).map(|j| std.free(j)).collect();
        let mean = y.iter().sum::<f64>() / n as f64;
        let spread = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let y_scale = if family == Family::Gaussian && spread > 0.0 { spread } else { 1.0 };
        let gaussian = (family == Family::Gaussian).then(|| {
            let scaled: Vec<f64> = y.iter().map(|v| v / y_scale).collect();
            weighted_gram(&std.a, &vec![1.0; n], &scaled)
        });
        Self {
            std,
            y,
            family,
            free,
            gaussian,
            y_scale,
            tol: 1e-13,
        }
    }

    fn start(&self) -> DVector<f64> {
        let n = self.y.len() as f64;
        let mean = self.y.iter().sum::<f64>() / n;
        let mut theta = DVector::zeros(self.std.p() + 1);
        theta[0] = match self.family {
            Family::Gaussian => mean,
            Family::Binomial => {
                let m = mean.clamp(1e-10, 1.0 - 1e-10);
                (m / (1.0 - m)).ln()
            }
        };
        theta
    }

    fn mean_nll(&self, theta: &DVector<f64>) -> f64 {
        let eta = &self.std.a * theta;
        let n = self.y.len() as f64;
        eta.iter()
            .zip(self.y)
            .map(|(&e, &y)| log1p_exp(e) - y * e)
            .sum::<f64>()
            / n
    }

    fn solve(&self, lambda: f64, alpha: f64, theta: &mut DVector<f64>) -> (usize, Vec<f64>) {
        match self.family {
            Family::Gaussian => {
                let (h, c) = self.gaussian.as_ref().expect("gaussian gram");
                let s = self.y_scale;
                *theta /= s;
                let (sweeps, trace) = coordinate_descent(h, c, &self.free, lambda / s, alpha, self.tol, theta);
                *theta *= s;
                (sweeps, trace.into_iter().map(|v| v * s * s).collect())
            }
            Family::Binomial => {
                let n = self.y.len();
                let mut obj = self.mean_nll(theta) + penalty(theta, lambda, alpha);
                let mut sweeps = 0;
                let mut trace = Vec::new();
                for _ in 0..MAX_OUTER {
                    let eta = &self.std.a * &*theta;
                    let mut v = vec![0.0; n];
                    let mut z = vec![0.0; n];
                    for i in 0..n {
                        let p = sigmoid(eta[i]);
                        v[i] = (p * (1.0 - p)).max(MIN_WEIGHT);
                        z[i] = eta[i] + (self.y[i] - p) / v[i];
                    }
                    let (h, c) = weighted_gram(&self.std.a, &v, &z);
                    let old = theta.clone();
                    let (s, t) = coordinate_descent(&h, &c, &self.free, lambda, alpha, 1e-12, theta);
                    sweeps += s;
                    trace = t;
                    let mut new_obj = self.mean_nll(theta) + penalty(theta, lambda, alpha);
                    let mut halvings = 0;
                    while new_obj > obj && halvings < 30 {
                        *theta = (&old + &*theta) * 0.5;
                        new_obj = self.mean_nll(theta) + penalty(theta, lambda, alpha);
                        halvings += 1;
                    }
                    let change = obj - new_obj;
                    obj = new_obj.min(obj);
                    if new_obj > obj {
                        *theta = old;
                        break;
                    }
                    if change.abs() <= 1e-12 * (1.0 + obj.abs()) {
                        break;
                    }
                }
                (sweeps, trace)
            }
        }
    }
}

/// Smallest penalty at which every slope is zero (for the given mixing).
fn lambda_max(std: &Standardized, y: &[f64], alpha: f64) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mut best: f64 = 0.0;
    for j in 1..=std.p() {
        if !std.free(j) {
            continue;
        }
        let dot: f64 = std.a.column(j).iter().zip(y).map(|(a, y)| a * (y - mean)).sum();
        best = best.max(dot.abs() / n);
    }
    best / alpha.max(1e-3)
}

/// Descending log-spaced penalty grid from the all-zero penalty down
/// `min_ratio` (e.g. four decades for 1e-4).
pub fn lambda_grid(x: &DMatrix<f64>, y: &[f64], alpha: f64, n_lambda: usize, min_ratio: f64) -> Vec<f64> {
    let std = Standardized::new(x);
    let top = lambda_max(&std, y, alpha);
    let top = if top > 0.0 { top } else { 1e-8 };
    if n_lambda <= 1 {
        return vec![top];
    }
    (0..n_lambda)
        .map(|i| top * min_ratio.powf(i as f64 / (n_lambda - 1) as f64))
        .collect()
}

fn validate(x: &DMatrix<f64>, y: &[f64], family: Family, alpha: f64) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Argument("outcome length mismatch".into()));
    }
    if x.nrows() < 2 {
        return Err(Error::Degenerate("elastic net needs at least two rows".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("mixing parameter {alpha} outside [0, 1]")));
    }
    if family == Family::Binomial {
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Argument("binomial outcome must be 0/1".into()));
        }
        let pos = y.iter().filter(|&&v| v == 1.0).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::Argument("binomial outcome needs both classes".into()));
        }
    }
    Ok(())
}

/// Solution at a single penalty, warm-started along a short path from the
/// all-zero penalty.
pub fn elastic_net_at(
    x: &DMatrix<f64>,
    y: &[f64],
    family: Family,
    alpha: f64,
    lambda: f64,
) -> Result<NetSolution> {
    validate(x, y, family, alpha)?;
    if !(lambda >= 0.0) {
        return Err(Error::Argument("penalty must be nonnegative".into()));
    }
    let std = Standardized::new(x);
    let problem = Problem::new(&std, y, family);
    let mut theta = problem.start();
    let top = lambda_max(&std, y, alpha);
    if lambda < top && lambda > 0.0 {
        for i in 0..10 {
            let l = top * (lambda / top).powf(i as f64 / 10.0);
            problem.solve(l, alpha, &mut theta);
        }
    }
    let (sweeps, objective_trace) = problem.solve(lambda, alpha, &mut theta);
    let (intercept, coefficients) = std.destandardize(&theta);
    Ok(NetSolution {
        intercept,
        coefficients,
        lambda,
        alpha,
        sweeps,
        objective_trace,
    })
}

fn path(
    x: &DMatrix<f64>,
    y: &[f64],
    family: Family,
    alpha: f64,
    lambdas: &[f64],
) -> Vec<(f64, Vec<f64>)> {
    let std = Standardized::new(x);
    let problem = Problem::new(&std, y, family);
    let mut theta = problem.start();
    lambdas
        .iter()
        .map(|&l| {
            problem.solve(l, alpha, &mut theta);
            std.destandardize(&theta)
        })
        .collect()
}

fn fold_assignment(y: &[f64], family: Family, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; y.len()];
    let strata: Vec<Vec<usize>> = match family {
        Family::Gaussian => vec![(0..y.len()).collect()],
        Family::Binomial => vec![
            (0..y.len()).filter(|&i| y[i] == 0.0).collect(),
            (0..y.len()).filter(|&i| y[i] == 1.0).collect(),
        ],
    };
    let mut offset = 0;
    for mut stratum in strata {
        stratum.shuffle(&mut rng);
        for (rank, i) in stratum.into_iter().enumerate() {
            folds[i] = (rank + offset) % k;
        }
        offset += 1;
    }
    folds
}

fn loss(family: Family, y: f64, eta: f64) -> f64 {
    match family {
        Family::Gaussian => (y - eta).powi(2),
        Family::Binomial => 2.0 * (log1p_exp(eta) - y * eta),
    }
}

/// Cross-validated elastic net: the penalty minimizing mean K-fold squared
/// error (Gaussian) or binomial deviance is refit on all rows.
pub fn fit_elastic_net(
    x: &DMatrix<f64>,
    y: &[f64],
    family: Family,
    params: &NetParams,
) -> Result<NetFit> {
    validate(x, y, family, params.alpha)?;
    if params.folds < 2 {
        return Err(Error::Argument("cross-validation needs at least 2 folds".into()));
    }
    if params.folds > y.len() {
        return Err(Error::Argument("more folds than rows".into()));
    }
    let lambdas = match &params.lambdas {
        Some(l) if l.is_empty() => return Err(Error::Argument("empty penalty grid".into())),
        Some(l) => {
            if l.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Argument("penalties must be nonnegative".into()));
            }
            let mut l = l.clone();
            l.sort_by(|a, b| b.total_cmp(a));
            l
        }
        None => {
            if params.n_lambda == 0 {
                return Err(Error::Argument("empty penalty grid".into()));
            }
            lambda_grid(x, y, params.alpha, params.n_lambda, params.lambda_min_ratio)
        }
    };
    let folds = fold_assignment(y, family, params.folds, params.seed);

    let per_fold: Vec<Vec<f64>> = (0..params.folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
            let xt = DMatrix::from_fn(train.len(), x.ncols(), |r, c| x[(train[r], c)]);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let xv = DMatrix::from_fn(test.len(), x.ncols(), |r, c| x[(test[r], c)]);
            let single_class = family == Family::Binomial
                && (yt.iter().all(|&v| v == 0.0) || yt.iter().all(|&v| v == 1.0));
            if single_class {
                return vec![f64::INFINITY; lambdas.len()];
            }
            path(&xt, &yt, family, params.alpha, &lambdas)
                .into_iter()
                .map(|(b0, beta)| {
                    predict_linear(b0, &beta, &xv)
                        .into_iter()
                        .zip(&test)
                        .map(|(eta, &i)| loss(family, y[i], eta))
                        .sum::<f64>()
                })
                .collect()
        })
        .collect();

    let n = y.len() as f64;
    let cv_loss: Vec<f64> = (0..lambdas.len())
        .map(|l| per_fold.iter().map(|f| f[l]).sum::<f64>() / n)
        .collect();
    let best = cv_loss
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v < cv_loss[best] { i } else { best });
    let lambda = lambdas[best];
    let (intercept, coefficients) = path(x, y, family, params.alpha, &lambdas[..=best])
        .pop()
        .expect("nonempty path");
    Ok(NetFit {
        family,
        alpha: params.alpha,
        lambda,
        intercept,
        coefficients,
        cv_lambdas: lambdas,
        cv_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit_ols, Design};
    use rand::Rng;

    fn sample(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 3, |_, c| rng.random::<f64>() * (c + 1) as f64 * 10.0);
        let y = (0..n)
            .map(|i| 5.0 + 2.0 * x[(i, 0)] - 1.5 * x[(i, 1)] + 0.2 * x[(i, 2)] + rng.random::<f64>() * 4.0)
            .collect();
        (x, y)
    }

    #[test]
    fn zero_penalty_matches_ols() {
        let (x, y) = sample(300, 1);
        let net = elastic_net_at(&x, &y, Family::Gaussian, 0.5, 0.0).unwrap();
        let names: Vec<String> = (0..3).map(|j| format!("x{j}")).collect();
        let ols = fit_ols(&Design::with_intercept(&x, &names), &y, None).unwrap();
        assert!((net.intercept - ols.coefficients[0]).abs() < 1e-6);
        for j in 0..3 {
            assert!((net.coefficients[j] - ols.coefficients[j + 1]).abs() < 1e-6);
        }
    }

    #[test]
    fn huge_penalty_zeros_every_slope() {
        let (x, y) = sample(100, 2);
        let net = elastic_net_at(&x, &y, Family::Gaussian, 0.5, 1e9).unwrap();
        assert!(net.coefficients.iter().all(|&b| b == 0.0));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((net.intercept - mean).abs() < 1e-9);
    }

    #[test]
    fn univariate_lasso_matches_soft_threshold() {
        // Closed form on a standardized covariate: sign(rho) (|rho| - lambda)_+
        // with rho = mean(z * (y - ybar)).
        let x = DMatrix::from_column_slice(6, 1, &[1.0, 2.0, 3.0, 4.0, 5.0, 9.0]);
        let y = [2.0, 1.0, 4.0, 3.0, 7.0, 8.0];
        let n: f64 = 6.0;
        let xbar = x.sum() / n;
        let sd = (x.iter().map(|v| (v - xbar).powi(2)).sum::<f64>() / n).sqrt();
        let ybar = y.iter().sum::<f64>() / n;
        let rho: f64 = x.iter().zip(&y).map(|(xi, yi)| (xi - xbar) / sd * (yi - ybar)).sum::<f64>() / n;
        for lambda in [0.1, 0.5, 1.0, rho * 0.9, rho * 1.1] {
            let expected = rho.signum() * (rho.abs() - lambda).max(0.0) / sd;
            let net = elastic_net_at(&x, &y, Family::Gaussian, 1.0, lambda).unwrap();
            assert!((net.coefficients[0] - expected).abs() < 1e-10, "lambda {lambda}");
        }
    }

    #[test]
    fn objective_is_monotone_and_kkt_holds() {
        let (x, y) = sample(200, 3);
        let (alpha, lambda) = (0.5, 0.3);
        let sol = elastic_net_at(&x, &y, Family::Gaussian, alpha, lambda).unwrap();
        assert!(sol.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs()));
        // KKT on the standardized scale.
        let std = Standardized::new(&x);
        let n = 200.0;
        let ybar = y.iter().sum::<f64>() / n;
        let sd_y = (y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / n).sqrt();
        let beta_std: Vec<f64> = (0..3).map(|j| sol.coefficients[j] * std.sds[j]).collect();
        let fitted: Vec<f64> = predict_linear(sol.intercept, &sol.coefficients, &x);
        for j in 0..3 {
            let grad: f64 = (0..200).map(|i| std.a[(i, j + 1)] * (y[i] - fitted[i])).sum::<f64>() / n;
            let g = grad - lambda * (1.0 - alpha) * beta_std[j] / sd_y;
            if beta_std[j] != 0.0 {
                assert!((g - lambda * alpha * beta_std[j].signum()).abs() < 1e-6);
            } else {
                assert!(g.abs() <= lambda * alpha + 1e-6);
            }
        }
    }

    #[test]
    fn gaussian_fit_scales_with_the_outcome() {
        let (x, y) = sample(150, 4);
        let y8: Vec<f64> = y.iter().map(|v| v * 8.0).collect();
        let a = fit_elastic_net(&x, &y, Family::Gaussian, &NetParams::default()).unwrap();
        let b = fit_elastic_net(&x, &y8, Family::Gaussian, &NetParams::default()).unwrap();
        assert_eq!(a.lambda * 8.0, b.lambda);
        assert!((a.intercept * 8.0 - b.intercept).abs() < 1e-9 * b.intercept.abs());
        for (p, q) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((p * 8.0 - q).abs() < 1e-9 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn binomial_zero_penalty_matches_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 2000;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let y: Vec<f64> = (0..n)
            .map(|i| rng.random_bool(sigmoid(0.5 + x[(i, 0)] - 0.7 * x[(i, 1)])) as u8 as f64)
            .collect();
        let net = elastic_net_at(&x, &y, Family::Binomial, 0.5, 0.0).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let labels: Vec<u8> = y.iter().map(|&v| v as u8).collect();
        let logit = crate::models::fit_logit(&Design::with_intercept(&x, &names), &labels).unwrap();
        assert!((net.intercept - logit.coefficients[0]).abs() < 1e-6);
        assert!((net.coefficients[0] - logit.coefficients[1]).abs() < 1e-6);
        assert!((net.coefficients[1] - logit.coefficients[2]).abs() < 1e-6);
    }

    #[test]
    fn cross_validation_is_deterministic_and_validates_grid() {
        let (x, y) = sample(150, 4);
        let params = NetParams { seed: 9, ..Default::default() };
        let a = fit_elastic_net(&x, &y, Family::Gaussian, &params).unwrap();
        let b = fit_elastic_net(&x, &y, Family::Gaussian, &params).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
        assert_eq!(a.cv_loss.len(), 100);
        let empty = NetParams { lambdas: Some(vec![]), ..Default::default() };
        assert!(matches!(fit_elastic_net(&x, &y, Family::Gaussian, &empty), Err(Error::Argument(_))));
    }
}
