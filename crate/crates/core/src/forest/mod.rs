//! Honest subsampled random forests.
//!
//! Each tree draws a subsample without replacement and splits it in two: the
//! structure half chooses the splits, the honest half fills the leaves. Trees
//! carry their membership lists, so out-of-bag prediction and the honesty
//! audit work from the fit alone.
//!
//! Every tree has its own random stream keyed by (seed, tree index), and all
//! aggregation runs in tree order, so fits and predictions do not depend on
//! the number of worker threads.

mod causal;
mod tree;

pub use causal::{fit_causal_forest, CausalForestFit, EffectPrediction};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use tree::{feature_orders, Grower, LeafValue, Response, Tree};

/// Serialization format version for [`ForestFit::to_json`].
pub const FORMAT_VERSION: u32 = 1;

const ROW_BLOCK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    /// Share of rows drawn (without replacement) for each tree.
    pub subsample_fraction: f64,
    /// Share of each subsample used to place splits; the rest fills leaves.
    /// A value of 1 disables honesty.
    pub honesty_fraction: f64,
    pub min_leaf: usize,
    /// Covariates tried per split; defaults to ceil(sqrt(p)) + 1.
    pub split_tries: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            trees: 2000,
            subsample_fraction: 0.5,
            honesty_fraction: 0.5,
            min_leaf: 5,
            split_tries: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if self.trees == 0 {
            return Err(Error::Argument("forest needs at least one tree".into()));
        }
        if !frac(self.subsample_fraction) || !frac(self.honesty_fraction) {
            return Err(Error::Argument("forest fractions must lie in (0, 1]".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::Argument("min_leaf must be at least 1".into()));
        }
        if self.split_tries == Some(0) {
            return Err(Error::Argument("split_tries must be at least 1".into()));
        }
        Ok(())
    }

    pub fn effective_split_tries(&self, p: usize) -> usize {
        self.split_tries
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize + 1)
            .clamp(1, p.max(1))
    }

    /// (structure, honest) sizes per tree for `n` training rows.
    fn half_sizes(&self, n: usize) -> (usize, usize) {
        let s = ((self.subsample_fraction * n as f64).round() as usize).clamp(1, n);
        if self.honesty_fraction >= 1.0 {
            return (s, s);
        }
        let structure = ((self.honesty_fraction * s as f64).round() as usize).clamp(1, s);
        (structure, s - structure)
    }
}

/// Hex digest of the ordered covariate names a forest was trained on.
pub fn schema_fingerprint(names: &[String]) -> String {
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update([0u8]);
    }
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestKind {
    Regression,
    Probability,
}

/// Trained regression or probability forest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestFit {
    version: u32,
    kind: ForestKind,
    params: ForestParams,
    covariates: Vec<String>,
    fingerprint: String,
    n_train: usize,
    /// Training covariates, row-major; needed for out-of-bag prediction.
    train: Vec<f64>,
    trees: Vec<Tree>,
}

/// Result of checking that no tree used a unit both to split and to fill a
/// leaf.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HonestyAudit {
    pub trees: usize,
    /// Trees where a unit appears in both halves or a leaf holds a
    /// non-honest unit.
    pub leaking_trees: usize,
    /// Leaves whose honest count is below `min_leaf`.
    pub undersized_leaves: usize,
    /// Honest units stored in a leaf they do not route to.
    pub misrouted_units: usize,
}

impl HonestyAudit {
    pub fn clean(&self) -> bool {
        self.leaking_trees == 0 && self.undersized_leaves == 0 && self.misrouted_units == 0
    }
}

fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, p) = x.shape();
    let mut out = Vec::with_capacity(n * p);
    for i in 0..n {
        out.extend((0..p).map(|j| x[(i, j)]));
    }
    out
}

fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("forest covariates must be finite".into()));
    }
    Ok(())
}

pub(crate) fn grow_trees(
    x: &DMatrix<f64>,
    params: &ForestParams,
    arms: Option<&[u8]>,
    response: &Response<'_>,
    leaf_value: &LeafValue<'_>,
) -> Result<Vec<Tree>> {
    params.validate()?;
    let n = x.nrows();
    let (n_structure, n_honest) = params.half_sizes(n);
    if n < 2 * params.min_leaf || n_honest < params.min_leaf || n_structure < params.min_leaf {
        return Err(Error::Degenerate(format!(
            "{n} rows cannot fill leaves of {} honest units",
            params.min_leaf
        )));
    }
    let order = feature_orders(x);
    let grower = Grower {
        x,
        order: &order,
        min_leaf: params.min_leaf,
        split_tries: params.effective_split_tries(x.ncols()),
        arms,
        response,
        leaf_value,
    };
    let honest_all = params.honesty_fraction >= 1.0;
    let trees = (0..params.trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = crate::rng::stream(params.seed, b as u64);
            let mut idx: Vec<u32> = (0..n as u32).collect();
            let (drawn, _) = idx.partial_shuffle(&mut rng, n_structure + if honest_all { 0 } else { n_honest });
            let mut structure = drawn[..n_structure].to_vec();
            let mut honest = if honest_all {
                structure.clone()
            } else {
                drawn[n_structure..].to_vec()
            };
            structure.sort_unstable();
            honest.sort_unstable();
            grower.grow(structure, honest, &mut rng)
        })
        .collect();
    Ok(trees)
}

fn audit_trees(trees: &[Tree], train: &[f64], p: usize, min_leaf: usize, dishonest: bool) -> HonestyAudit {
    let mut audit = HonestyAudit {
        trees: trees.len(),
        leaking_trees: 0,
        undersized_leaves: 0,
        misrouted_units: 0,
    };
    for t in trees {
        let overlap = !dishonest && t.structure.iter().any(|i| t.honest.binary_search(i).is_ok());
        let foreign = t
            .leaves()
            .any(|(_, members)| members.iter().any(|i| t.honest.binary_search(i).is_err()));
        if overlap || foreign {
            audit.leaking_trees += 1;
        }
        for (id, members) in t.leaves() {
            if members.len() < min_leaf {
                audit.undersized_leaves += 1;
            }
            audit.misrouted_units += members
                .iter()
                .filter(|&&i| t.leaf_of(&train[i as usize * p..(i as usize + 1) * p]) != id)
                .count();
        }
    }
    audit
}

/// Honest regression forest of `y` on `x`.
pub fn fit_regression_forest(
    x: &DMatrix<f64>,
    names: &[String],
    y: &[f64],
    params: &ForestParams,
) -> Result<ForestFit> {
    if y.len() != x.nrows() || names.len() != x.ncols() {
        return Err(Error::Argument("forest inputs have mismatched shapes".into()));
    }
    check_finite(x)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("forest outcome must be finite".into()));
    }
    fit_mean_forest(x, names, y, params, ForestKind::Regression)
}

/// Honest forest estimate of P(w = 1 | x).
pub fn fit_probability_forest(
    x: &DMatrix<f64>,
    names: &[String],
    w: &[u8],
    params: &ForestParams,
) -> Result<ForestFit> {
    if w.len() != x.nrows() || names.len() != x.ncols() {
        return Err(Error::Argument("forest inputs have mismatched shapes".into()));
    }
    if w.iter().any(|&v| v > 1) {
        return Err(Error::Argument("probability forest labels must be 0/1".into()));
    }
    let positives = w.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == w.len() {
        return Err(Error::Argument("probability forest needs both classes".into()));
    }
    check_finite(x)?;
    let y: Vec<f64> = w.iter().map(|&v| v as f64).collect();
    fit_mean_forest(x, names, &y, params, ForestKind::Probability)
}

fn fit_mean_forest(
    x: &DMatrix<f64>,
    names: &[String],
    y: &[f64],
    params: &ForestParams,
    kind: ForestKind,
) -> Result<ForestFit> {
    let response = |idx: &[u32]| {
        let mean = idx.iter().map(|&i| y[i as usize]).sum::<f64>() / idx.len() as f64;
        Some(idx.iter().map(|&i| y[i as usize] - mean).collect())
    };
    let leaf_value = |idx: &[u32]| idx.iter().map(|&i| y[i as usize]).sum::<f64>() / idx.len() as f64;
    let trees = grow_trees(x, params, None, &response, &leaf_value)?;
    Ok(ForestFit {
        version: FORMAT_VERSION,
        kind,
        params: params.clone(),
        covariates: names.to_vec(),
        fingerprint: schema_fingerprint(names),
        n_train: x.nrows(),
        train: row_major(x),
        trees,
    })
}

impl ForestFit {
    pub fn kind(&self) -> ForestKind {
        self.kind
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn covariates(&self) -> &[String] {
        &self.covariates
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn p(&self) -> usize {
        self.covariates.len()
    }

    fn check_schema(&self, x: &DMatrix<f64>, names: &[String]) -> Result<()> {
        if schema_fingerprint(names) != self.fingerprint || x.ncols() != self.p() {
            return Err(Error::Schema(format!(
                "forest trained on [{}], queried with [{}]",
                self.covariates.join(", "),
                names.join(", ")
            )));
        }
        Ok(())
    }

    /// Mean leaf value per row over trees, visiting trees in order for a
    /// block of rows at a time. With `oob`, row `i` is training row `i` and
    /// skips trees that drew it.
    fn predict_rows(&self, rows: &[f64], n: usize, oob: bool) -> Vec<Option<f64>> {
        let p = self.p();
        (0..n.div_ceil(ROW_BLOCK))
            .into_par_iter()
            .flat_map_iter(|b| {
                let lo = b * ROW_BLOCK;
                let hi = (lo + ROW_BLOCK).min(n);
                let mut sum = vec![0.0; hi - lo];
                let mut used = vec![0usize; hi - lo];
                for t in &self.trees {
                    for i in lo..hi {
                        if oob && t.in_sample(i as u32) {
                            continue;
                        }
                        sum[i - lo] += t.leaf(t.leaf_of(&rows[i * p..(i + 1) * p])).1;
                        used[i - lo] += 1;
                    }
                }
                sum.into_iter()
                    .zip(used)
                    .map(|(s, u)| (u > 0).then(|| s / u as f64))
            })
            .collect()
    }

    /// Predictions from all trees.
    pub fn predict(&self, x: &DMatrix<f64>, names: &[String]) -> Result<Vec<f64>> {
        self.check_schema(x, names)?;
        let rows = row_major(x);
        Ok(self
            .predict_rows(&rows, x.nrows(), false)
            .into_iter()
            .map(|v| v.expect("forest has trees"))
            .collect())
    }

    /// Out-of-bag predictions for the training rows: each row uses only the
    /// trees whose subsample excluded it. A row drawn by every tree falls back
    /// to the full forest.
    pub fn predict_oob(&self) -> Vec<f64> {
        let oob = self.predict_rows(&self.train, self.n_train, true);
        let missing: Vec<usize> = (0..self.n_train).filter(|&i| oob[i].is_none()).collect();
        if missing.is_empty() {
            return oob.into_iter().map(|v| v.expect("checked")).collect();
        }
        log::warn!("{} training rows are in every tree's subsample; using all trees for them", missing.len());
        let all = self.predict_rows(&self.train, self.n_train, false);
        oob.into_iter()
            .zip(all)
            .map(|(o, a)| o.or(a).expect("forest has trees"))
            .collect()
    }

    /// Kernel weights over training rows: `alpha_i(x)` is the average over
    /// trees of 1{i shares x's leaf} / leaf size. Sparse, sorted by row.
    pub fn kernel_weights(&self, row: &[f64], exclude: Option<u32>) -> Vec<(usize, f64)> {
        let mut dense = vec![0.0; self.n_train];
        let mut used = 0usize;
        for t in &self.trees {
            if exclude.is_some_and(|i| t.in_sample(i)) {
                continue;
            }
            let (members, _) = t.leaf(t.leaf_of(row));
            let share = 1.0 / members.len() as f64;
            for &m in members {
                dense[m as usize] += share;
            }
            used += 1;
        }
        if used == 0 {
            return Vec::new();
        }
        dense
            .into_iter()
            .enumerate()
            .filter(|(_, v)| *v > 0.0)
            .map(|(i, v)| (i, v / used as f64))
            .collect()
    }

    pub fn honesty_audit(&self) -> HonestyAudit {
        audit_trees(
            &self.trees,
            &self.train,
            self.p(),
            self.params.min_leaf,
            self.params.honesty_fraction >= 1.0,
        )
    }

    /// Subsample membership of one tree: (structure rows, honest rows).
    pub fn tree_membership(&self, tree: usize) -> (&[u32], &[u32]) {
        let t = &self.trees[tree];
        (&t.structure, &t.honest)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let fit: Self = serde_json::from_str(text)?;
        if fit.version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "forest format version {} (expected {FORMAT_VERSION})",
                fit.version
            )));
        }
        Ok(fit)
    }
}

/// Predicts on `x`; with `oob` the rows must be the training rows, and each
/// uses only trees that did not draw it.
pub fn predict(fit: &ForestFit, x: &DMatrix<f64>, names: &[String], oob: bool) -> Result<Vec<f64>> {
    if !oob {
        return fit.predict(x, names);
    }
    fit.check_schema(x, names)?;
    if x.nrows() != fit.n_train || row_major(x) != fit.train {
        return Err(Error::Argument(
            "out-of-bag prediction is only defined for the training rows".into(),
        ));
    }
    Ok(fit.predict_oob())
}
