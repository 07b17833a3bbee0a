//! Common-support trimming with an auxiliary propensity forest.
//!
//! The propensity forest is a plain classification forest (Gini splits,
//! half-subsampling without replacement). Each row's propensities are the
//! arm frequencies of its leaves averaged over the trees that did not
//! sample it; rows that every tree sampled fall back to all trees.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::SplitRule;
use super::tree_rng;
use crate::dataset::{Dataset, FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};

const TREES: usize = 200;
const MIN_LEAF: usize = 10;
const SUBSAMPLE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub threshold: f64,
    pub n_before: usize,
    pub n_after: usize,
    /// Dropped rows per observed arm.
    pub dropped_per_arm: Vec<usize>,
    /// Original indices of dropped rows.
    pub dropped_rows: Vec<usize>,
    /// Original indices of kept rows.
    pub kept_rows: Vec<usize>,
    /// Estimated propensities, one row per input row.
    pub propensity: Vec<Vec<f64>>,
}

enum PNode {
    Split { feature: usize, rule: SplitRule, left: usize, right: usize },
    Leaf(Vec<f64>),
}

struct PTree {
    nodes: Vec<PNode>,
}

impl PTree {
    fn leaf(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                PNode::Split { feature, rule, left, right } => {
                    i = if rule.goes_left(x[*feature]) { *left } else { *right };
                }
                PNode::Leaf(f) => return f,
            }
        }
    }
}

/// Gini score to maximize: `sum over sides of sum_c cnt_c^2 / n_side`.
fn gini_score(left: &[f64], nl: f64, total: &[f64], n: f64) -> f64 {
    let nr = n - nl;
    let mut l = 0.0;
    let mut r = 0.0;
    for (a, t) in left.iter().zip(total) {
        l += a * a;
        r += (t - a) * (t - a);
    }
    l / nl + r / nr
}

fn best_split(
    cols: &[Vec<f64>],
    kinds: &[FeatureKind],
    arms: &[usize],
    k: usize,
    rows: &[u32],
    feature: usize,
) -> Option<(f64, SplitRule)> {
    let n = rows.len() as f64;
    let mut total = vec![0.0; k];
    for &r in rows {
        total[arms[r as usize]] += 1.0;
    }
    let base = total.iter().map(|c| c * c).sum::<f64>() / n;
    let col = &cols[feature];
    let mut best: Option<(f64, SplitRule)> = None;
    if kinds[feature].is_unordered() {
        // Levels ordered by the share of arm 0, then prefix splits.
        let nlev = kinds[feature].levels().map_or(0, |l| l.len());
        let mut cnt = vec![vec![0.0f64; k]; nlev];
        let mut tot = vec![0.0f64; nlev];
        for &r in rows {
            let v = col[r as usize] as usize;
            cnt[v][arms[r as usize]] += 1.0;
            tot[v] += 1.0;
        }
        let mut present: Vec<usize> = (0..nlev).filter(|&v| tot[v] > 0.0).collect();
        present.sort_by(|&a, &b| (cnt[a][0] / tot[a]).total_cmp(&(cnt[b][0] / tot[b])).then(a.cmp(&b)));
        let mut left = vec![0.0; k];
        let mut nl = 0.0;
        let mut mask = 0u64;
        for &v in &present[..present.len().saturating_sub(1)] {
            for c in 0..k {
                left[c] += cnt[v][c];
            }
            nl += tot[v];
            mask |= 1 << v;
            if nl < MIN_LEAF as f64 || n - nl < MIN_LEAF as f64 {
                continue;
            }
            let g = gini_score(&left, nl, &total, n) - base;
            if g > 1e-12 && best.as_ref().is_none_or(|b| g > b.0) {
                best = Some((g, SplitRule::Levels(mask)));
            }
        }
        return best;
    }
    let mut order: Vec<u32> = rows.to_vec();
    order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
    let mut left = vec![0.0; k];
    for i in 0..order.len() - 1 {
        let r = order[i] as usize;
        left[arms[r]] += 1.0;
        let nl = (i + 1) as f64;
        let x = col[r];
        let next = col[order[i + 1] as usize];
        if x == next || nl < MIN_LEAF as f64 {
            continue;
        }
        if n - nl < MIN_LEAF as f64 {
            break;
        }
        let g = gini_score(&left, nl, &total, n) - base;
        if g > 1e-12 && best.as_ref().is_none_or(|b| g > b.0) {
            let thr = if matches!(kinds[feature], FeatureKind::Continuous) { 0.5 * (x + next) } else { x };
            best = Some((g, SplitRule::Threshold(thr)));
        }
    }
    best
}

fn grow<R: Rng>(
    cols: &[Vec<f64>],
    kinds: &[FeatureKind],
    arms: &[usize],
    k: usize,
    rows: Vec<u32>,
    mtry: usize,
    rng: &mut R,
) -> PTree {
    let mut nodes: Vec<PNode> = Vec::new();
    let mut stack = vec![(rows, 0usize)];
    nodes.push(PNode::Leaf(Vec::new()));
    let p = cols.len();
    let mut features: Vec<usize> = (0..p).collect();
    while let Some((rows, at)) = stack.pop() {
        let mut split = None;
        if rows.len() >= 2 * MIN_LEAF {
            let (chosen, _) = features.partial_shuffle(rng, mtry);
            let mut chosen = chosen.to_vec();
            chosen.sort_unstable();
            for f in chosen {
                if let Some((g, rule)) = best_split(cols, kinds, arms, k, &rows, f) {
                    if split.as_ref().is_none_or(|(bg, _, _)| g > *bg) {
                        split = Some((g, f, rule));
                    }
                }
            }
        }
        match split {
            None => {
                let mut freq = vec![0.0; k];
                for &r in &rows {
                    freq[arms[r as usize]] += 1.0;
                }
                let n = rows.len() as f64;
                freq.iter_mut().for_each(|f| *f /= n);
                nodes[at] = PNode::Leaf(freq);
            }
            Some((_, feature, rule)) => {
                let (l, r): (Vec<u32>, Vec<u32>) =
                    rows.iter().partition(|&&i| rule.goes_left(cols[feature][i as usize]));
                let left = nodes.len();
                nodes.push(PNode::Leaf(Vec::new()));
                nodes.push(PNode::Leaf(Vec::new()));
                nodes[at] = PNode::Split { feature, rule, left, right: left + 1 };
                stack.push((r, left + 1));
                stack.push((l, left));
            }
        }
    }
    PTree { nodes }
}

/// Out-of-bag propensities of every row of `x`.
pub fn propensity_scores(x: &FeatureMatrix, arms: &[usize], n_arms: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = x.n;
    let cols: Vec<Vec<f64>> = (0..x.p()).map(|j| x.column(j)).collect();
    let sub = ((n as f64 * SUBSAMPLE).round() as usize).clamp(1, n);
    let mtry = ((x.p() as f64).sqrt().ceil() as usize).clamp(1, x.p().max(1));
    let trees: Vec<(PTree, Vec<bool>)> = (0..TREES)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed ^ 0x5157_4f52_5441_4e54, t);
            let mut idx: Vec<u32> = (0..n as u32).collect();
            let (inbag, _) = idx.partial_shuffle(&mut rng, sub);
            let inbag = inbag.to_vec();
            let mut sampled = vec![false; n];
            for &r in &inbag {
                sampled[r as usize] = true;
            }
            (grow(&cols, &x.schema.kinds, arms, n_arms, inbag, mtry, &mut rng), sampled)
        })
        .collect();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut oob = vec![0.0; n_arms];
            let mut all = vec![0.0; n_arms];
            let mut n_oob = 0usize;
            for (tree, sampled) in &trees {
                let f = tree.leaf(xi);
                for d in 0..n_arms {
                    all[d] += f[d];
                    if !sampled[i] {
                        oob[d] += f[d];
                    }
                }
                if !sampled[i] {
                    n_oob += 1;
                }
            }
            if n_oob > 0 {
                oob.iter().map(|v| v / n_oob as f64).collect()
            } else {
                all.iter().map(|v| v / trees.len() as f64).collect()
            }
        })
        .collect()
}

/// Drops rows where some arm's estimated propensity is below `eps`.
/// Propensities use every covariate of `data`.
pub fn common_support_trim(data: &Dataset, eps: f64, seed: u64) -> Result<(Dataset, SupportReport)> {
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::Config("common-support threshold must lie in [0, 0.5)".into()));
    }
    let x = data.features(None)?;
    let k = data.n_arms();
    let propensity = propensity_scores(&x, data.treatment(), k, seed);
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut dropped_per_arm = vec![0usize; k];
    for (i, p) in propensity.iter().enumerate() {
        if p.iter().any(|&v| v < eps) {
            dropped.push(i);
            dropped_per_arm[data.treatment()[i]] += 1;
        } else {
            kept.push(i);
        }
    }
    let counts = data.arm_counts();
    if let Some(d) = (0..k).find(|&d| dropped_per_arm[d] == counts[d]) {
        return Err(Error::Data(format!("common-support trimming empties arm {d}")));
    }
    let trimmed = data.select_rows(&kept);
    let report = SupportReport {
        threshold: eps,
        n_before: data.n_rows(),
        n_after: kept.len(),
        dropped_per_arm,
        dropped_rows: dropped,
        kept_rows: kept,
        propensity,
    };
    Ok((trimmed, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, DgpConfig, SupportViolation};

    #[test]
    fn zero_threshold_keeps_everything() {
        let (ds, _) = generate(&DgpConfig::simple(500, 3, 1.0, 2)).unwrap();
        let (kept, rep) = common_support_trim(&ds, 0.0, 1).unwrap();
        assert_eq!(kept.n_rows(), 500);
        assert!(rep.dropped_rows.is_empty());
        for p in &rep.propensity {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn violation_region_dominates_drops() {
        let mut cfg = DgpConfig::simple(3000, 3, 1.0, 8);
        cfg.support_violation = Some(SupportViolation {
            feature: "x1".into(),
            threshold: 1.0,
            arm: 2,
        });
        let (ds, _) = generate(&cfg).unwrap();
        let (_, rep) = common_support_trim(&ds, 0.05, 3).unwrap();
        let x1 = ds.real("x1").unwrap();
        let inside = rep.dropped_rows.iter().filter(|&&r| x1[r] > 1.0).count();
        assert!(!rep.dropped_rows.is_empty());
        assert!(inside * 2 > rep.dropped_rows.len());
    }
}
