use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureKind;

/// Left branch when the value is `<= threshold`, or when the level code is
/// in the mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    Threshold(f64),
    Levels(u64),
}

impl SplitRule {
    #[inline]
    pub fn goes_left(&self, value: f64) -> bool {
        match *self {
            SplitRule::Threshold(t) => value <= t,
            SplitRule::Levels(mask) => {
                let code = value as u64;
                code < 64 && mask & (1u64 << code) != 0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: u32,
        rule: SplitRule,
        left: u32,
        right: u32,
    },
    Leaf {
        leaf: u32,
    },
}

/// Honest rows of a leaf, grouped by arm: arm `d` owns
/// `rows[offsets[d]..offsets[d + 1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub rows: Vec<u32>,
    pub offsets: Vec<u32>,
}

impl Leaf {
    pub fn from_rows(mut rows: Vec<u32>, arms: &[u32], n_arms: usize) -> Self {
        rows.sort_unstable_by_key(|&r| (arms[r as usize], r));
        let mut offsets = vec![0u32; n_arms + 1];
        for &r in &rows {
            offsets[arms[r as usize] as usize + 1] += 1;
        }
        for d in 0..n_arms {
            offsets[d + 1] += offsets[d];
        }
        Leaf { rows, offsets }
    }

    #[inline]
    pub fn arm_rows(&self, arm: usize) -> &[u32] {
        &self.rows[self.offsets[arm] as usize..self.offsets[arm + 1] as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub leaves: Vec<Leaf>,
}

impl Tree {
    #[inline]
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { leaf } => return *leaf as usize,
                Node::Split {
                    feature,
                    rule,
                    left,
                    right,
                } => {
                    i = if rule.goes_left(x[*feature as usize]) {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn leaf_for(&self, x: &[f64]) -> &Leaf {
        &self.leaves[self.leaf_index(x)]
    }

    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature as usize),
            Node::Leaf { .. } => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Column-major training view used while growing.
pub(crate) struct TrainView<'a> {
    pub cols: &'a [Vec<f64>],
    pub kinds: &'a [FeatureKind],
    pub arms: &'a [u32],
    pub y: &'a [f64],
    pub n_arms: usize,
}

pub(crate) struct GrowParams {
    pub min_leaf: usize,
    pub mtry: usize,
    pub max_depth: Option<usize>,
}

struct Candidate {
    feature: usize,
    rule: SplitRule,
    gain: f64,
}

/// Grows one honest tree: splits are chosen on `structure` rows only and
/// leaves are populated with `honest` rows only. Every split keeps at least
/// `min_leaf` rows of every arm on both sides in both halves.
pub(crate) fn grow<R: Rng>(
    view: &TrainView<'_>,
    structure: Vec<u32>,
    honest: Vec<u32>,
    params: &GrowParams,
    rng: &mut R,
) -> Tree {
    let p = view.cols.len();
    let mut nodes: Vec<Node> = vec![Node::Leaf { leaf: 0 }];
    let mut leaves: Vec<Leaf> = Vec::new();
    let mut stack = vec![(0usize, structure, honest, 0usize)];
    let mut features: Vec<usize> = (0..p).collect();
    let mut scratch = SplitScratch::new(view.n_arms);

    while let Some((node, s_rows, h_rows, depth)) = stack.pop() {
        let can_split = params.max_depth.is_none_or(|m| depth < m)
            && s_rows.len() >= 2 * params.min_leaf * view.n_arms
            && h_rows.len() >= 2 * params.min_leaf * view.n_arms;
        let best = if can_split && p > 0 {
            let k = params.mtry.clamp(1, p);
            let (chosen, _) = features.partial_shuffle(rng, k);
            let mut chosen: Vec<usize> = chosen.to_vec();
            chosen.sort_unstable();
            let mut best: Option<Candidate> = None;
            for f in chosen {
                if let Some(c) = best_split_on(view, f, &s_rows, &h_rows, params.min_leaf, &mut scratch) {
                    if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                        best = Some(c);
                    }
                }
            }
            best
        } else {
            None
        };
        match best {
            Some(c) => {
                let col = &view.cols[c.feature];
                let (sl, sr): (Vec<u32>, Vec<u32>) =
                    s_rows.iter().partition(|&&r| c.rule.goes_left(col[r as usize]));
                let (hl, hr): (Vec<u32>, Vec<u32>) =
                    h_rows.iter().partition(|&&r| c.rule.goes_left(col[r as usize]));
                let left = nodes.len();
                nodes.push(Node::Leaf { leaf: 0 });
                nodes.push(Node::Leaf { leaf: 0 });
                nodes[node] = Node::Split {
                    feature: c.feature as u32,
                    rule: c.rule,
                    left: left as u32,
                    right: left as u32 + 1,
                };
                stack.push((left + 1, sr, hr, depth + 1));
                stack.push((left, sl, hl, depth + 1));
            }
            None => {
                nodes[node] = Node::Leaf {
                    leaf: leaves.len() as u32,
                };
                leaves.push(Leaf::from_rows(h_rows, view.arms, view.n_arms));
            }
        }
    }
    Tree { nodes, leaves }
}

struct SplitScratch {
    s_sorted: Vec<(f64, u32, f64)>,
    h_sorted: Vec<(f64, u32)>,
    s_cnt: Vec<f64>,
    s_sum: Vec<f64>,
    h_cnt: Vec<usize>,
    l_cnt: Vec<f64>,
    l_sum: Vec<f64>,
    hl_cnt: Vec<usize>,
}

impl SplitScratch {
    fn new(k: usize) -> Self {
        SplitScratch {
            s_sorted: Vec::new(),
            h_sorted: Vec::new(),
            s_cnt: vec![0.0; k],
            s_sum: vec![0.0; k],
            h_cnt: vec![0; k],
            l_cnt: vec![0.0; k],
            l_sum: vec![0.0; k],
            hl_cnt: vec![0; k],
        }
    }
}

/// `n_L * n_R * sum over ordered arm pairs (m, l) of
/// (tau_L(m, l) - tau_R(m, l))^2` with `tau` the difference of arm means.
#[inline]
fn heterogeneity_gain(l_cnt: &[f64], l_sum: &[f64], t_cnt: &[f64], t_sum: &[f64]) -> f64 {
    let k = l_cnt.len();
    let mut nl = 0.0;
    let mut nr = 0.0;
    let mut sum_d = 0.0;
    let mut sum_d2 = 0.0;
    for d in 0..k {
        let rc = t_cnt[d] - l_cnt[d];
        nl += l_cnt[d];
        nr += rc;
        let delta = l_sum[d] / l_cnt[d] - (t_sum[d] - l_sum[d]) / rc;
        sum_d += delta;
        sum_d2 += delta * delta;
    }
    // sum_{m != l} (delta_m - delta_l)^2 = 2 (k sum delta^2 - (sum delta)^2)
    let spread = 2.0 * (k as f64 * sum_d2 - sum_d * sum_d);
    nl * nr * spread.max(0.0)
}

fn best_split_on(
    view: &TrainView<'_>,
    f: usize,
    s_rows: &[u32],
    h_rows: &[u32],
    min_leaf: usize,
    sc: &mut SplitScratch,
) -> Option<Candidate> {
    let col = &view.cols[f];
    let k = view.n_arms;
    match &view.kinds[f] {
        FeatureKind::Unordered { levels } => {
            unordered_split(view, f, levels.len(), s_rows, h_rows, min_leaf)
        }
        kind => {
            let ordered = matches!(kind, FeatureKind::Ordered { .. });
            sc.s_sorted.clear();
            sc.s_sorted
                .extend(s_rows.iter().map(|&r| (col[r as usize], view.arms[r as usize], view.y[r as usize])));
            sc.s_sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let first = sc.s_sorted.first()?.0;
            if sc.s_sorted.last()?.0 == first {
                return None;
            }
            sc.h_sorted.clear();
            sc.h_sorted
                .extend(h_rows.iter().map(|&r| (col[r as usize], view.arms[r as usize])));
            sc.h_sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            for d in 0..k {
                sc.s_cnt[d] = 0.0;
                sc.s_sum[d] = 0.0;
                sc.h_cnt[d] = 0;
                sc.l_cnt[d] = 0.0;
                sc.l_sum[d] = 0.0;
                sc.hl_cnt[d] = 0;
            }
            for &(_, a, y) in &sc.s_sorted {
                sc.s_cnt[a as usize] += 1.0;
                sc.s_sum[a as usize] += y;
            }
            for &(_, a) in &sc.h_sorted {
                sc.h_cnt[a as usize] += 1;
            }
            let min = min_leaf as f64;
            let mut hp = 0usize;
            let mut best: Option<Candidate> = None;
            let len = sc.s_sorted.len();
            for i in 0..len - 1 {
                let (x, a, y) = sc.s_sorted[i];
                sc.l_cnt[a as usize] += 1.0;
                sc.l_sum[a as usize] += y;
                let next = sc.s_sorted[i + 1].0;
                if x == next {
                    continue;
                }
                if (i + 1) < min_leaf * k {
                    continue;
                }
                if len - (i + 1) < min_leaf * k {
                    break;
                }
                let threshold = if ordered {
                    x
                } else {
                    let mid = x + (next - x) / 2.0;
                    if mid < next {
                        mid
                    } else {
                        x
                    }
                };
                while hp < sc.h_sorted.len() && sc.h_sorted[hp].0 <= threshold {
                    sc.hl_cnt[sc.h_sorted[hp].1 as usize] += 1;
                    hp += 1;
                }
                let feasible = (0..k).all(|d| {
                    sc.l_cnt[d] >= min
                        && sc.s_cnt[d] - sc.l_cnt[d] >= min
                        && sc.hl_cnt[d] >= min_leaf
                        && sc.h_cnt[d] - sc.hl_cnt[d] >= min_leaf
                });
                if !feasible {
                    continue;
                }
                let gain = heterogeneity_gain(&sc.l_cnt, &sc.l_sum, &sc.s_cnt, &sc.s_sum);
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Candidate {
                        feature: f,
                        rule: SplitRule::Threshold(threshold),
                        gain,
                    });
                }
            }
            best
        }
    }
}

/// Levels are ordered by their structure-half outcome mean and prefix
/// sets of that ordering are scanned.
fn unordered_split(
    view: &TrainView<'_>,
    f: usize,
    n_levels: usize,
    s_rows: &[u32],
    h_rows: &[u32],
    min_leaf: usize,
) -> Option<Candidate> {
    let k = view.n_arms;
    let col = &view.cols[f];
    let mut cnt = vec![0.0; n_levels * k];
    let mut sum = vec![0.0; n_levels * k];
    let mut hcnt = vec![0usize; n_levels * k];
    for &r in s_rows {
        let l = col[r as usize] as usize;
        let a = view.arms[r as usize] as usize;
        cnt[l * k + a] += 1.0;
        sum[l * k + a] += view.y[r as usize];
    }
    for &r in h_rows {
        let l = col[r as usize] as usize;
        hcnt[l * k + view.arms[r as usize] as usize] += 1;
    }
    let mut present: Vec<(usize, f64)> = (0..n_levels)
        .filter_map(|l| {
            let c: f64 = cnt[l * k..(l + 1) * k].iter().sum();
            (c > 0.0).then(|| (l, sum[l * k..(l + 1) * k].iter().sum::<f64>() / c))
        })
        .collect();
    if present.len() < 2 {
        return None;
    }
    present.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut t_cnt = vec![0.0; k];
    let mut t_sum = vec![0.0; k];
    let mut th = vec![0usize; k];
    for l in 0..n_levels {
        for d in 0..k {
            t_cnt[d] += cnt[l * k + d];
            t_sum[d] += sum[l * k + d];
            th[d] += hcnt[l * k + d];
        }
    }
    let mut l_cnt = vec![0.0; k];
    let mut l_sum = vec![0.0; k];
    let mut hl = vec![0usize; k];
    let mut mask = 0u64;
    let min = min_leaf as f64;
    let mut best: Option<Candidate> = None;
    for &(level, _) in &present[..present.len() - 1] {
        mask |= 1u64 << level;
        for d in 0..k {
            l_cnt[d] += cnt[level * k + d];
            l_sum[d] += sum[level * k + d];
            hl[d] += hcnt[level * k + d];
        }
        let feasible = (0..k).all(|d| {
            l_cnt[d] >= min && t_cnt[d] - l_cnt[d] >= min && hl[d] >= min_leaf && th[d] - hl[d] >= min_leaf
        });
        if !feasible {
            continue;
        }
        let gain = heterogeneity_gain(&l_cnt, &l_sum, &t_cnt, &t_sum);
        if best.as_ref().is_none_or(|b| gain > b.gain) {
            best = Some(Candidate {
                feature: f,
                rule: SplitRule::Levels(mask),
                gain,
            });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gain_matches_pairwise_sum() {
        let l_cnt = [3.0, 4.0, 5.0];
        let l_sum = [3.0, 10.0, -2.0];
        let t_cnt = [7.0, 9.0, 8.0];
        let t_sum = [10.0, 11.0, 6.0];
        let mut direct = 0.0;
        let (nl, nr) = (12.0, 12.0);
        for m in 0..3 {
            for l in 0..3 {
                if m == l {
                    continue;
                }
                let tl = l_sum[m] / l_cnt[m] - l_sum[l] / l_cnt[l];
                let tr = (t_sum[m] - l_sum[m]) / (t_cnt[m] - l_cnt[m]) - (t_sum[l] - l_sum[l]) / (t_cnt[l] - l_cnt[l]);
                direct += (tl - tr) * (tl - tr);
            }
        }
        direct *= nl * nr;
        let fast = heterogeneity_gain(&l_cnt, &l_sum, &t_cnt, &t_sum);
        assert!((direct - fast).abs() < 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn level_rule_routes_by_mask() {
        let r = SplitRule::Levels(0b1010);
        assert!(r.goes_left(1.0));
        assert!(!r.goes_left(2.0));
        assert!(r.goes_left(3.0));
        assert!(!r.goes_left(70.0));
    }
}
