//! Propensity scores, log-odds overlap histograms and trimming rules.

use serde::{Deserialize, Serialize};

use crate::dataset::ObservationTable;
use crate::error::{Error, Result};
use crate::forest::{fit_probability_forest, ForestParams};
use crate::models::{fit_logit, Design};
use crate::rng::derive_seed;

/// Scores are clamped to [SCORE_CLAMP, 1 - SCORE_CLAMP].
pub const SCORE_CLAMP: f64 = 1e-4;
pub const DEFAULT_BIN_WIDTH: f64 = 0.5;
pub const DEFAULT_MEMBERSHIP_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMethod {
    Logit,
    Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropensityFit {
    pub scores: Vec<f64>,
    /// Treatment arm of each scored unit.
    pub w: Vec<u8>,
    pub method: PropensityMethod,
    /// Whether in-sample scores are out-of-bag.
    pub oob: bool,
    /// Logit only: the likelihood had no finite maximizer.
    pub separated: bool,
}

impl PropensityFit {
    /// Wraps externally computed scores, clamping them.
    pub fn from_scores(scores: Vec<f64>, w: Vec<u8>, method: PropensityMethod) -> Result<Self> {
        if scores.len() != w.len() {
            return Err(Error::Argument("score and arm vectors differ in length".into()));
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Domain("propensity scores must lie in [0, 1]".into()));
        }
        Ok(Self {
            scores: scores.into_iter().map(clamp_score).collect(),
            w,
            method,
            oob: false,
            separated: false,
        })
    }

    pub fn treated_scores(&self) -> Vec<f64> {
        self.arm_scores(1)
    }

    pub fn control_scores(&self) -> Vec<f64> {
        self.arm_scores(0)
    }

    fn arm_scores(&self, arm: u8) -> Vec<f64> {
        self.scores
            .iter()
            .zip(&self.w)
            .filter(|(_, &w)| w == arm)
            .map(|(s, _)| *s)
            .collect()
    }
}

pub fn clamp_score(e: f64) -> f64 {
    e.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

fn require_both_arms(table: &ObservationTable) -> Result<()> {
    if table.n_treated() == 0 || table.n_control() == 0 {
        return Err(Error::Degenerate(format!(
            "sample needs both arms ({} treated, {} control)",
            table.n_treated(),
            table.n_control()
        )));
    }
    Ok(())
}

/// Propensity scores with default forest settings.
pub fn estimate_propensity(
    table: &ObservationTable,
    method: PropensityMethod,
    seed: u64,
) -> Result<PropensityFit> {
    estimate_propensity_with(table, method, &ForestParams::with_seed(seed))
}

/// Logit scores are fitted probabilities; forest scores are out-of-bag.
pub fn estimate_propensity_with(
    table: &ObservationTable,
    method: PropensityMethod,
    params: &ForestParams,
) -> Result<PropensityFit> {
    require_both_arms(table)?;
    let (raw, separated, oob) = match method {
        PropensityMethod::Logit => {
            let design = Design::with_intercept(table.x(), table.covariate_names());
            let fit = fit_logit(&design, table.w())?;
            (fit.predict_proba(&design.x), fit.separated, false)
        }
        PropensityMethod::Forest => {
            let fit = fit_probability_forest(table.x(), table.covariate_names(), table.w(), params)?;
            (fit.predict_oob(), false, true)
        }
    };
    Ok(PropensityFit {
        scores: raw.into_iter().map(clamp_score).collect(),
        w: table.w().to_vec(),
        method,
        oob,
        separated,
    })
}

pub fn log_odds(e: f64) -> Result<f64> {
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::Domain(format!("log-odds undefined at probability {e}")));
    }
    Ok((e / (1.0 - e)).ln())
}

/// Log-odds histogram with bins shared by both arms. Bin `k` covers
/// `[edges[k], edges[k + 1])`; edges sit on multiples of the bin width.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramData {
    pub bin_width: f64,
    pub edges: Vec<f64>,
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
}

impl HistogramData {
    /// Columns: bin_lo, bin_hi, treated, control.
    pub fn to_delimited(&self, sep: char) -> String {
        let mut out = format!("bin_lo{sep}bin_hi{sep}treated{sep}control\n");
        for k in 0..self.treated.len() {
            out.push_str(&format!(
                "{}{sep}{}{sep}{}{sep}{}\n",
                self.edges[k],
                self.edges[k + 1],
                self.treated[k],
                self.control[k]
            ));
        }
        out
    }
}

pub fn overlap_histogram(fit: &PropensityFit, bin_width: f64) -> Result<HistogramData> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Argument(format!("bin width must be positive, got {bin_width}")));
    }
    if fit.scores.is_empty() {
        return Err(Error::Degenerate("no scores to histogram".into()));
    }
    let lo: Vec<f64> = fit
        .scores
        .iter()
        .map(|&e| log_odds(clamp_score(e)))
        .collect::<Result<_>>()?;
    let bin = |v: f64| (v / bin_width).floor() as i64;
    let first = lo.iter().map(|&v| bin(v)).min().expect("nonempty");
    let last = lo.iter().map(|&v| bin(v)).max().expect("nonempty");
    let bins = (last - first + 1) as usize;
    let mut treated = vec![0; bins];
    let mut control = vec![0; bins];
    for (v, &w) in lo.iter().zip(&fit.w) {
        let k = (bin(*v) - first) as usize;
        if w == 1 {
            treated[k] += 1;
        } else {
            control[k] += 1;
        }
    }
    let edges = (0..=bins).map(|k| (first + k as i64) as f64 * bin_width).collect();
    Ok(HistogramData {
        bin_width,
        edges,
        treated,
        control,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimRule {
    None,
    Threshold,
    Crump,
    Dehejia,
    Paper,
}

impl std::str::FromStr for TrimRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "threshold" => Ok(Self::Threshold),
            "crump" => Ok(Self::Crump),
            "dehejia" => Ok(Self::Dehejia),
            "paper" => Ok(Self::Paper),
            other => Err(Error::Argument(format!("unknown trim rule `{other}`"))),
        }
    }
}

/// Which units a trim kept. Indices refer to rows of the trimmed input; for
/// each arm, retained and dropped partition the arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrimReport {
    pub rule: TrimRule,
    pub retained_treated: Vec<usize>,
    pub retained_control: Vec<usize>,
    pub dropped_treated: Vec<usize>,
    pub dropped_control: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub seed: Option<u64>,
    /// Paper pipeline only: rows of the experimental-control input matched
    /// into the benchmark sample.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark_control: Option<Vec<usize>>,
}

impl TrimReport {
    fn from_mask(rule: TrimRule, w: &[u8], keep: &[bool], thresholds: Vec<f64>) -> Result<Self> {
        let mut r = Self {
            rule,
            retained_treated: Vec::new(),
            retained_control: Vec::new(),
            dropped_treated: Vec::new(),
            dropped_control: Vec::new(),
            thresholds,
            seed: None,
            benchmark_control: None,
        };
        for (i, (&arm, &k)) in w.iter().zip(keep).enumerate() {
            match (arm == 1, k) {
                (true, true) => r.retained_treated.push(i),
                (true, false) => r.dropped_treated.push(i),
                (false, true) => r.retained_control.push(i),
                (false, false) => r.dropped_control.push(i),
            }
        }
        if r.retained_treated.is_empty() || r.retained_control.is_empty() {
            return Err(Error::Degenerate(format!(
                "trim leaves {} treated and {} control units",
                r.retained_treated.len(),
                r.retained_control.len()
            )));
        }
        Ok(r)
    }

    /// Retained rows, treated first, each arm in input order.
    pub fn retained(&self) -> Vec<usize> {
        self.retained_treated
            .iter()
            .chain(&self.retained_control)
            .copied()
            .collect()
    }
}

/// Keeps units of both arms with score in `[lo, hi]`.
pub fn trim_threshold(fit: &PropensityFit, lo: f64, hi: f64) -> Result<TrimReport> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::Argument(format!("trim interval [{lo}, {hi}] is invalid")));
    }
    let keep: Vec<bool> = fit.scores.iter().map(|&e| e >= lo && e <= hi).collect();
    TrimReport::from_mask(TrimRule::Threshold, &fit.w, &keep, vec![lo, hi])
}

/// The fixed [0.1, 0.9] rule.
pub fn trim_crump(fit: &PropensityFit) -> Result<TrimReport> {
    let mut r = trim_threshold(fit, 0.1, 0.9)?;
    r.rule = TrimRule::Crump;
    Ok(r)
}

/// Drops controls scoring below the smallest treated score.
pub fn trim_dehejia(fit: &PropensityFit) -> Result<TrimReport> {
    let floor = fit
        .treated_scores()
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return Err(Error::Degenerate("no treated units to trim against".into()));
    }
    let keep: Vec<bool> = fit
        .scores
        .iter()
        .zip(&fit.w)
        .map(|(&e, &w)| w == 1 || e >= floor)
        .collect();
    TrimReport::from_mask(TrimRule::Dehejia, &fit.w, &keep, vec![floor])
}

/// Greedy 1:1 nearest-score matching without replacement. Treated units are
/// processed by descending score (ties: lower index first); each takes the
/// closest unused control (ties: lower index). Returns (treated, control)
/// index pairs in processing order.
pub fn greedy_match(treated: &[(usize, f64)], controls: &[(usize, f64)]) -> Result<Vec<(usize, usize)>> {
    if controls.len() < treated.len() {
        return Err(Error::Degenerate(format!(
            "1:1 matching infeasible: {} controls for {} treated",
            controls.len(),
            treated.len()
        )));
    }
    let mut order: Vec<(usize, f64)> = treated.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut pool: Vec<(usize, f64)> = controls.to_vec();
    pool.sort_by(|a, b| a.0.cmp(&b.0));
    let mut used = vec![false; pool.len()];
    let mut pairs = Vec::with_capacity(order.len());
    for (t, et) in order {
        let mut best: Option<(usize, f64)> = None;
        for (k, &(_, ec)) in pool.iter().enumerate() {
            if used[k] {
                continue;
            }
            let d = (et - ec).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        let (k, _) = best.expect("pool larger than treated set");
        used[k] = true;
        pairs.push((t, pool[k].0));
    }
    Ok(pairs)
}

/// Output of the two-step trim-and-match procedure.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    /// Retained treated units plus their matched nonexperimental controls.
    pub trimmed: ObservationTable,
    /// The same treated units plus matched experimental controls.
    pub benchmark: ObservationTable,
    pub report: TrimReport,
    /// Experimental-membership score of each pooled unit (nonexperimental
    /// rows first, then experimental controls).
    pub membership: Vec<f64>,
}

/// Two-step trim and match.
///
/// 1. Pool the nonexperimental sample with the experimental controls and fit
///    a probability forest for membership in the experimental data (treated
///    units and experimental controls). Units whose out-of-bag membership
///    score is below `threshold` or above `1 - threshold` lack counterparts
///    on the other side and are dropped; treated units can be dropped here.
/// 2. Within the retained nonexperimental sample, re-estimate the propensity
///    score and match 1:1 greedily without replacement. The benchmark sample
///    matches the retained experimental controls to the same treated units.
pub fn trim_paper_pipeline(
    nonexp: &ObservationTable,
    exp_controls: &ObservationTable,
    threshold: f64,
    params: &ForestParams,
) -> Result<PipelineResult> {
    if !(threshold > 0.0 && threshold < 0.5) {
        return Err(Error::Argument(format!(
            "membership threshold must lie in (0, 0.5), got {threshold}"
        )));
    }
    require_both_arms(nonexp)?;
    if exp_controls.n() == 0 || exp_controls.n_treated() > 0 {
        return Err(Error::Domain("experimental controls must be a nonempty W = 0 table".into()));
    }
    let pooled = nonexp.concat(exp_controls)?;
    let n_nonexp = nonexp.n();
    let membership: Vec<u8> = (0..pooled.n())
        .map(|i| (i >= n_nonexp || nonexp.w()[i] == 1) as u8)
        .collect();
    let member_params = ForestParams {
        seed: derive_seed(params.seed, "membership"),
        ..params.clone()
    };
    let forest = fit_probability_forest(pooled.x(), pooled.covariate_names(), &membership, &member_params)?;
    let scores = forest.predict_oob();
    let keep: Vec<bool> = scores
        .iter()
        .map(|&s| s >= threshold && s <= 1.0 - threshold)
        .collect();

    let kept_nonexp: Vec<usize> = (0..n_nonexp).filter(|&i| keep[i]).collect();
    let kept_exp: Vec<usize> = (0..exp_controls.n()).filter(|&i| keep[n_nonexp + i]).collect();
    let step1 = nonexp.subset(&kept_nonexp);
    require_both_arms(&step1)?;
    let prop_params = ForestParams {
        seed: derive_seed(params.seed, "trimmed-propensity"),
        ..params.clone()
    };
    let e = estimate_propensity_with(&step1, PropensityMethod::Forest, &prop_params)?;
    let treated: Vec<(usize, f64)> = (0..step1.n())
        .filter(|&i| step1.w()[i] == 1)
        .map(|i| (i, e.scores[i]))
        .collect();
    let controls: Vec<(usize, f64)> = (0..step1.n())
        .filter(|&i| step1.w()[i] == 0)
        .map(|i| (i, e.scores[i]))
        .collect();
    let pairs = greedy_match(&treated, &controls)?;
    let mut treated_rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let mut control_rows: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    treated_rows.sort_unstable();
    control_rows.sort_unstable();
    let rows: Vec<usize> = treated_rows.iter().chain(&control_rows).copied().collect();
    let trimmed = step1.subset(&rows);

    // Benchmark: same treated units against the retained experimental controls.
    let bench_pool = step1.subset(&treated_rows).concat(&exp_controls.subset(&kept_exp))?;
    require_both_arms(&bench_pool)?;
    let bench_params = ForestParams {
        seed: derive_seed(params.seed, "benchmark-propensity"),
        ..params.clone()
    };
    let eb = estimate_propensity_with(&bench_pool, PropensityMethod::Forest, &bench_params)?;
    let nt = treated_rows.len();
    let bt: Vec<(usize, f64)> = (0..nt).map(|i| (i, eb.scores[i])).collect();
    let bc: Vec<(usize, f64)> = (nt..bench_pool.n()).map(|i| (i, eb.scores[i])).collect();
    let bench_pairs = greedy_match(&bt, &bc)?;
    let mut bench_controls: Vec<usize> = bench_pairs.iter().map(|p| p.1).collect();
    bench_controls.sort_unstable();
    let bench_rows: Vec<usize> = (0..nt).chain(bench_controls.iter().copied()).collect();
    let benchmark = bench_pool.subset(&bench_rows);

    // Report in terms of the nonexperimental input rows.
    let final_keep: Vec<bool> = {
        let mut k = vec![false; n_nonexp];
        for &r in treated_rows.iter().chain(&control_rows) {
            k[kept_nonexp[r]] = true;
        }
        k
    };
    let mut report = TrimReport::from_mask(TrimRule::Paper, nonexp.w(), &final_keep, vec![threshold])?;
    report.seed = Some(params.seed);
    report.benchmark_control = Some(
        bench_controls
            .iter()
            .map(|&r| kept_exp[r - nt])
            .collect(),
    );
    Ok(PipelineResult {
        trimmed,
        benchmark,
        report,
        membership: scores,
    })
}

/// Homoskedastic standard-error ratio of a difference in means with
/// `n_small` versus `n_large` controls, for `n_treated` treated units.
pub fn se_inflation(n_treated: usize, n_small: usize, n_large: usize) -> f64 {
    let v = |n0: usize| 1.0 / n_treated as f64 + 1.0 / n0 as f64;
    (v(n_small) / v(n_large)).sqrt()
}
