use nalgebra::DMatrix;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Honest units that fall in the leaf, plus a cached leaf value.
    Leaf { members: Vec<u32>, value: f64 },
}

/// One honest tree. `structure` placed the splits, `honest` populates leaves;
/// both are sorted training-row indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct Tree {
    pub nodes: Vec<Node>,
    pub structure: Vec<u32>,
    pub honest: Vec<u32>,
}

impl Tree {
    pub fn leaf_of(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { .. } => return at,
            }
        }
    }

    pub fn leaf(&self, id: usize) -> (&[u32], f64) {
        match &self.nodes[id] {
            Node::Leaf { members, value } => (members, *value),
            Node::Split { .. } => unreachable!("leaf_of returns leaves"),
        }
    }

    /// Whether the training row was drawn into this tree's subsample.
    pub fn in_sample(&self, i: u32) -> bool {
        self.structure.binary_search(&i).is_ok() || self.honest.binary_search(&i).is_ok()
    }

    pub fn leaves(&self) -> impl Iterator<Item = (usize, &[u32])> {
        self.nodes.iter().enumerate().filter_map(|(id, n)| match n {
            Node::Leaf { members, .. } => Some((id, members.as_slice())),
            Node::Split { .. } => None,
        })
    }
}

pub(crate) type Response<'a> = dyn Fn(&[u32]) -> Option<Vec<f64>> + Sync + 'a;
pub(crate) type LeafValue<'a> = dyn Fn(&[u32]) -> f64 + Sync + 'a;

pub(crate) struct Grower<'a> {
    pub x: &'a DMatrix<f64>,
    /// Output of [`feature_orders`] for `x`.
    pub order: &'a [Vec<u32>],
    pub min_leaf: usize,
    pub split_tries: usize,
    /// When set, every child must contain both arms in both halves.
    pub arms: Option<&'a [u8]>,
    /// Per-node pseudo-outcomes for the structure units; `None` stops splitting.
    pub response: &'a Response<'a>,
    pub leaf_value: &'a LeafValue<'a>,
}

/// Stable split of every per-feature ordering, preserving sortedness.
fn partition(lists: Vec<Vec<u32>>, goes_left: &[bool]) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    lists
        .into_iter()
        .map(|l| l.into_iter().partition(|&i| goes_left[i as usize]))
        .unzip()
}

/// Row indices of `x` sorted by each column, ties by index.
pub(crate) fn feature_orders(x: &DMatrix<f64>) -> Vec<Vec<u32>> {
    (0..x.ncols())
        .into_par_iter()
        .map(|f| {
            let mut v: Vec<u32> = (0..x.nrows() as u32).collect();
            v.sort_by(|&a, &b| x[(a as usize, f)].total_cmp(&x[(b as usize, f)]).then(a.cmp(&b)));
            v
        })
        .collect()
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    pub fn grow(&self, structure: Vec<u32>, honest: Vec<u32>, rng: &mut ChaCha8Rng) -> Tree {
        let n = self.x.nrows();
        let mut mark = vec![0u8; n];
        for &i in &structure {
            mark[i as usize] |= 1;
        }
        for &i in &honest {
            mark[i as usize] |= 2;
        }
        let by_feature = |bit: u8| -> Vec<Vec<u32>> {
            self.order
                .iter()
                .map(|o| o.iter().copied().filter(|&i| mark[i as usize] & bit != 0).collect())
                .collect()
        };
        let (s0, h0) = (by_feature(1), by_feature(2));
        let mut goes_left = vec![false; n];
        let mut scratch = vec![0.0; self.x.nrows()];
        let mut nodes = vec![None];
        let mut stack = vec![(0usize, s0, h0)];
        while let Some((id, s, h)) = stack.pop() {
            match self.best_split(&s, &h, &mut scratch, rng) {
                Some(c) => {
                    for &i in s[0].iter().chain(&h[0]) {
                        goes_left[i as usize] = self.value(i, c.feature) <= c.threshold;
                    }
                    let (sl, sr) = partition(s, &goes_left);
                    let (hl, hr) = partition(h, &goes_left);
                    let left = nodes.len();
                    nodes.push(None);
                    nodes.push(None);
                    nodes[id] = Some(Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right: left + 1,
                    });
                    stack.push((left + 1, sr, hr));
                    stack.push((left, sl, hl));
                }
                None => {
                    let mut members = h.into_iter().next().unwrap_or_default();
                    members.sort_unstable();
                    let value = (self.leaf_value)(&members);
                    nodes[id] = Some(Node::Leaf { members, value });
                }
            }
        }
        Tree {
            nodes: nodes.into_iter().map(|n| n.expect("every node filled")).collect(),
            structure,
            honest,
        }
    }

    fn value(&self, i: u32, feature: usize) -> f64 {
        self.x[(i as usize, feature)]
    }

    fn arm(&self, i: u32) -> usize {
        self.arms.map_or(0, |a| a[i as usize] as usize)
    }

    /// `s` and `h` hold the node's structure and honest rows, one ordering
    /// per feature.
    fn best_split(&self, s: &[Vec<u32>], h: &[Vec<u32>], scratch: &mut [f64], rng: &mut ChaCha8Rng) -> Option<Candidate> {
        let min = self.min_leaf;
        let m = s[0].len();
        let nh = h[0].len();
        if m < 2 * min || nh < 2 * min {
            return None;
        }
        let r = (self.response)(&s[0])?;
        let total: f64 = r.iter().sum();
        let scale: f64 = r.iter().map(|v| v * v).sum();
        if scale <= 0.0 {
            return None;
        }
        for (&i, &ri) in s[0].iter().zip(&r) {
            scratch[i as usize] = ri;
        }
        let base = total * total / m as f64;
        let p = self.x.ncols();
        let tries = self.split_tries.min(p);
        let s_treated_total: usize = s[0].iter().map(|&i| self.arm(i)).sum();
        let h_treated_total: usize = h[0].iter().map(|&i| self.arm(i)).sum();
        let mut best: Option<Candidate> = None;

        for feature in index::sample(rng, p, tries).into_iter() {
            let sorted = &s[feature];
            let hs = &h[feature];
            if self.value(sorted[0], feature) == self.value(sorted[m - 1], feature) {
                continue;
            }
            let mut sum_left = 0.0;
            let mut treated_left = 0;
            let mut h_left = 0;
            let mut ht_left = 0;
            for k in 0..m - 1 {
                let i = sorted[k];
                sum_left += scratch[i as usize];
                treated_left += self.arm(i);
                let lo = self.value(i, feature);
                let hi = self.value(sorted[k + 1], feature);
                if lo == hi {
                    continue;
                }
                let n_left = k + 1;
                let n_right = m - n_left;
                if n_left < min {
                    continue;
                }
                if n_right < min {
                    break;
                }
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                while h_left < nh && self.value(hs[h_left], feature) <= threshold {
                    ht_left += self.arm(hs[h_left]);
                    h_left += 1;
                }
                if h_left < min {
                    continue;
                }
                if nh - h_left < min {
                    break;
                }
                if self.arms.is_some() {
                    let tr = s_treated_total - treated_left;
                    let s_ok = treated_left >= 1 && n_left - treated_left >= 1 && tr >= 1 && n_right - tr >= 1;
                    let ht_right = h_treated_total - ht_left;
                    let h_right = nh - h_left;
                    let h_ok = ht_left >= 1 && h_left - ht_left >= 1 && ht_right >= 1 && h_right - ht_right >= 1;
                    if !(s_ok && h_ok) {
                        continue;
                    }
                }
                let sum_right = total - sum_left;
                let gain = sum_left * sum_left / n_left as f64 + sum_right * sum_right / n_right as f64 - base;
                if gain > 1e-12 * scale && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Candidate {
                        gain,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best
    }
}
