//! Shallow assignment trees found by exhaustive search over a split grid.
//!
//! Rewards are the potential outcomes scaled to integers, so subtree values
//! add exactly and ties are real ties. Without capacities the best tree of
//! a node is the best split of it into two best subtrees. With capacities
//! the leaf labels interact across the tree: small instances enumerate
//! every structure and label each one exactly, larger ones search over
//! Lagrangian-penalized rewards and label the resulting structures exactly.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{AllocationInput, Capacities, COST_SCALE};
use crate::dataset::{FeatureKind, FeatureMatrix, FeatureSchema};
use crate::error::{Error, Result};

/// Structures enumerated before switching to the Lagrangian search.
const EXACT_BUDGET: u64 = 250_000;
/// Unordered features with more levels than this use prefix splits.
const MAX_SUBSET_LEVELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPolicy {
    /// Every `a`-th sorted observation is a split candidate.
    pub a: usize,
    /// Finer grids near the root: step `ceil(a / 2^(r-1))` at a node with
    /// `r` levels below it.
    pub per_level: bool,
}

impl GridPolicy {
    pub fn exact() -> Self {
        GridPolicy { a: 1, per_level: false }
    }

    pub fn step(&self, remaining: usize) -> usize {
        let a = self.a.max(1);
        if self.per_level {
            let div = 1usize << (remaining.max(1) - 1).min(20);
            a.div_ceil(div).max(1)
        } else {
            a
        }
    }
}

/// Left branch: `value <= t`, or level in the set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyRule {
    Threshold(f64),
    Subset(Vec<u32>),
}

impl PolicyRule {
    pub fn goes_left(&self, value: f64) -> bool {
        match self {
            PolicyRule::Threshold(t) => value <= *t,
            PolicyRule::Subset(levels) => value >= 0.0 && levels.binary_search(&(value as u32)).is_ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyNode {
    Split {
        feature: usize,
        rule: PolicyRule,
        left: Box<PolicyNode>,
        right: Box<PolicyNode>,
    },
    Leaf {
        arm: usize,
    },
}

impl PolicyNode {
    fn route(&self, x: &[f64]) -> (usize, usize) {
        let mut node = self;
        let mut id = 0usize;
        loop {
            match node {
                PolicyNode::Leaf { arm } => return (*arm, id),
                PolicyNode::Split { feature, rule, left, right } => {
                    if rule.goes_left(x[*feature]) {
                        node = left;
                        id = 2 * id + 1;
                    } else {
                        node = right;
                        id = 2 * id + 2;
                    }
                }
            }
        }
    }

    fn leaves(&self) -> usize {
        match self {
            PolicyNode::Leaf { .. } => 1,
            PolicyNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }

    fn relabel(&mut self, labels: &mut impl Iterator<Item = usize>) {
        match self {
            PolicyNode::Leaf { arm } => *arm = labels.next().expect("one label per leaf"),
            PolicyNode::Split { left, right, .. } => {
                left.relabel(labels);
                right.relabel(labels);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    Unconstrained,
    /// Every structure enumerated and labeled exactly under the capacities.
    Exact,
    /// Structures from penalized searches, labeled exactly under the capacities.
    Lagrangian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTree {
    pub depth: usize,
    pub features: FeatureSchema,
    pub root: PolicyNode,
    /// Total potential outcome of the training rows under the tree.
    pub value: f64,
    pub grid: GridPolicy,
    pub labeling: Labeling,
}

impl PolicyTree {
    pub fn leaf_count(&self) -> usize {
        self.root.leaves()
    }

    fn check(&self, x: &FeatureMatrix) -> Result<()> {
        if x.schema.names != self.features.names || x.schema.kinds != self.features.kinds {
            return Err(Error::Schema {
                column: x.schema.names.join(","),
                reason: "features differ from those the tree was built on".into(),
            });
        }
        Ok(())
    }

    /// Arm assigned to each row. Unseen categorical levels go right.
    pub fn apply(&self, x: &FeatureMatrix) -> Result<Vec<usize>> {
        self.check(x)?;
        let mut unseen = 0usize;
        for (j, kind) in self.features.kinds.iter().enumerate() {
            if let FeatureKind::Unordered { levels } = kind {
                unseen += (0..x.n)
                    .filter(|&i| {
                        let v = x.get(i, j);
                        v < 0.0 || v as usize >= levels.len()
                    })
                    .count();
            }
        }
        if unseen > 0 {
            log::warn!("{unseen} categorical values outside the known levels routed right");
        }
        Ok((0..x.n).map(|i| self.root.route(x.row(i)).0).collect())
    }

    /// Heap-style id of the leaf each row lands in.
    pub fn leaf_ids(&self, x: &FeatureMatrix) -> Result<Vec<usize>> {
        self.check(x)?;
        Ok((0..x.n).map(|i| self.root.route(x.row(i)).1).collect())
    }

    pub fn render(&self) -> String {
        render_node(&self.root, &self.features)
    }
}

pub fn render_node(root: &PolicyNode, features: &FeatureSchema) -> String {
    fn rec(node: &PolicyNode, f: &FeatureSchema, indent: usize, out: &mut String) {
        let pad = "  ".repeat(indent);
        match node {
            PolicyNode::Leaf { arm } => out.push_str(&format!("{pad}-> {arm}\n")),
            PolicyNode::Split { feature, rule, left, right } => {
                let name = &f.names[*feature];
                match rule {
                    PolicyRule::Threshold(t) => out.push_str(&format!("{pad}{name} <= {t}\n")),
                    PolicyRule::Subset(codes) => {
                        let levels = f.kinds[*feature].levels().unwrap_or(&[]);
                        let shown: Vec<String> = codes
                            .iter()
                            .map(|&c| levels.get(c as usize).cloned().unwrap_or_else(|| c.to_string()))
                            .collect();
                        out.push_str(&format!("{pad}{name} ∈ {{{}}}\n", shown.join(",")));
                    }
                }
                rec(left, f, indent + 1, out);
                rec(right, f, indent + 1, out);
            }
        }
    }
    let mut out = String::new();
    rec(root, features, 0, &mut out);
    out
}

/// Inverse of [`PolicyTree::render`].
pub fn parse_tree(text: &str, features: &FeatureSchema) -> Result<PolicyNode> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let body = l.trim_start_matches(' ');
            ((l.len() - body.len()) / 2, body.trim_end())
        })
        .collect();
    let bad = |msg: String| Error::Data(format!("tree text: {msg}"));
    fn node(
        lines: &[(usize, &str)],
        pos: &mut usize,
        indent: usize,
        f: &FeatureSchema,
        bad: &dyn Fn(String) -> Error,
    ) -> Result<PolicyNode> {
        let &(ind, body) = lines.get(*pos).ok_or_else(|| bad("unexpected end".into()))?;
        if ind != indent {
            return Err(bad(format!("line {} has indent {ind}, expected {indent}", *pos + 1)));
        }
        *pos += 1;
        if let Some(arm) = body.strip_prefix("->") {
            let arm = arm.trim().parse().map_err(|_| bad(format!("bad leaf `{body}`")))?;
            return Ok(PolicyNode::Leaf { arm });
        }
        let feature_of = |name: &str| {
            f.names
                .iter()
                .position(|n| n == name.trim())
                .ok_or_else(|| bad(format!("unknown feature `{name}`")))
        };
        let (feature, rule) = if let Some((name, t)) = body.split_once(" <= ") {
            let t: f64 = t.trim().parse().map_err(|_| bad(format!("bad threshold in `{body}`")))?;
            (feature_of(name)?, PolicyRule::Threshold(t))
        } else if let Some((name, set)) = body.split_once(" ∈ ") {
            let j = feature_of(name)?;
            let levels = f.kinds[j].levels().unwrap_or(&[]);
            let inner = set
                .trim()
                .strip_prefix('{')
                .and_then(|s| s.strip_suffix('}'))
                .ok_or_else(|| bad(format!("bad level set in `{body}`")))?;
            let mut codes = Vec::new();
            for lv in inner.split(',') {
                let code = levels
                    .iter()
                    .position(|l| l == lv)
                    .map(|c| c as u32)
                    .or_else(|| lv.parse().ok())
                    .ok_or_else(|| bad(format!("unknown level `{lv}`")))?;
                codes.push(code);
            }
            codes.sort_unstable();
            (j, PolicyRule::Subset(codes))
        } else {
            return Err(bad(format!("cannot read `{body}`")));
        };
        let left = node(lines, pos, indent + 1, f, bad)?;
        let right = node(lines, pos, indent + 1, f, bad)?;
        Ok(PolicyNode::Split {
            feature,
            rule,
            left: Box::new(left),
            right: Box::new(right),
        })
    }
    let mut pos = 0;
    let root = node(&lines, &mut pos, 0, features, &bad)?;
    if pos != lines.len() {
        return Err(bad(format!("trailing content at line {}", pos + 1)));
    }
    Ok(root)
}

#[derive(Clone)]
struct Best {
    value: i64,
    node: PolicyNode,
}

struct Search<'a> {
    x: &'a FeatureMatrix,
    reward: Vec<Vec<i64>>,
    k: usize,
    grid: GridPolicy,
}

fn best_arm(sums: &[i64]) -> (usize, i64) {
    let mut b = 0;
    for d in 1..sums.len() {
        if sums[d] > sums[b] {
            b = d;
        }
    }
    (b, sums[b])
}

impl Search<'_> {
    fn sums(&self, rows: &[u32]) -> Vec<i64> {
        let mut s = vec![0i64; self.k];
        for &r in rows {
            for (d, v) in self.reward[r as usize].iter().enumerate() {
                s[d] += v;
            }
        }
        s
    }

    fn leaf(&self, rows: &[u32]) -> Best {
        let (arm, value) = best_arm(&self.sums(rows));
        Best {
            value,
            node: PolicyNode::Leaf { arm },
        }
    }

    fn sorted_by(&self, rows: &[u32], j: usize) -> Vec<(f64, u32)> {
        let mut s: Vec<(f64, u32)> = rows.iter().map(|&r| (self.x.get(r as usize, j), r)).collect();
        s.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        s
    }

    /// Split positions `i` (left = sorted[..=i]) on the grid, each moved to
    /// the end of its block of tied values, with their thresholds.
    fn positions(sorted: &[(f64, u32)], step: usize) -> Vec<(usize, f64)> {
        let m = sorted.len();
        let mut out: Vec<(usize, f64)> = Vec::new();
        let mut i = step - 1;
        while i + 1 < m {
            let mut e = i;
            while e + 1 < m && sorted[e + 1].0 == sorted[e].0 {
                e += 1;
            }
            if e + 1 < m && out.last().is_none_or(|&(p, _)| p < e) {
                let (lo, hi) = (sorted[e].0, sorted[e + 1].0);
                let mid = lo + (hi - lo) / 2.0;
                let t = if mid < hi { mid } else { lo };
                out.push((e, t));
            }
            i += step;
        }
        out
    }

    /// Candidate subsets of an unordered feature at a node, in lexicographic order.
    fn subsets(&self, rows: &[u32], j: usize) -> Vec<Vec<u32>> {
        let mut per_level: BTreeMap<u32, (i64, i64)> = BTreeMap::new();
        for &r in rows {
            let code = self.x.get(r as usize, j) as u32;
            let rw = &self.reward[r as usize];
            let gain = rw.iter().copied().max().unwrap_or(0) - rw[0];
            let e = per_level.entry(code).or_insert((0, 0));
            e.0 += gain;
            e.1 += 1;
        }
        let present: Vec<u32> = per_level.keys().copied().collect();
        let m = present.len();
        if m < 2 {
            return Vec::new();
        }
        let mut out: Vec<Vec<u32>> = if m <= MAX_SUBSET_LEVELS {
            (1u32..(1 << (m - 1)))
                .map(|mask| (0..m - 1).filter(|&b| mask & (1 << b) != 0).map(|b| present[b]).collect())
                .collect()
        } else {
            let mut ord = present.clone();
            ord.sort_by(|a, b| {
                let (ga, ca) = per_level[a];
                let (gb, cb) = per_level[b];
                (ga as i128 * cb as i128).cmp(&(gb as i128 * ca as i128)).then(a.cmp(b))
            });
            (1..m)
                .map(|p| {
                    let mut s = ord[..p].to_vec();
                    s.sort_unstable();
                    s
                })
                .collect()
        };
        out.sort();
        out
    }

    /// Splits available at a node, in tie-break order.
    fn candidates(&self, rows: &[u32], remaining: usize) -> Vec<(usize, PolicyRule)> {
        let step = self.grid.step(remaining);
        let mut out = Vec::new();
        for (j, kind) in self.x.schema.kinds.iter().enumerate() {
            if kind.is_unordered() {
                out.extend(self.subsets(rows, j).into_iter().map(|s| (j, PolicyRule::Subset(s))));
            } else {
                let sorted = self.sorted_by(rows, j);
                out.extend(Self::positions(&sorted, step).into_iter().map(|(_, t)| (j, PolicyRule::Threshold(t))));
            }
        }
        out
    }

    fn partition(&self, rows: &[u32], feature: usize, rule: &PolicyRule) -> (Vec<u32>, Vec<u32>) {
        rows.iter()
            .partition(|&&r| rule.goes_left(self.x.get(r as usize, feature)))
    }

    fn split_node(feature: usize, rule: PolicyRule, l: Best, r: Best) -> Best {
        Best {
            value: l.value + r.value,
            node: PolicyNode::Split {
                feature,
                rule,
                left: Box::new(l.node),
                right: Box::new(r.node),
            },
        }
    }

    /// Best single split by prefix-sum sweeps.
    fn best_stump(&self, rows: &[u32]) -> Best {
        let step = self.grid.step(1);
        let total = self.sums(rows);
        let mut best: Option<(i64, usize, PolicyRule, usize, usize)> = None;
        let mut consider = |v: i64, j: usize, rule: PolicyRule, la: usize, ra: usize| {
            if best.as_ref().is_none_or(|b| v > b.0) {
                best = Some((v, j, rule, la, ra));
            }
        };
        for (j, kind) in self.x.schema.kinds.iter().enumerate() {
            if kind.is_unordered() {
                let mut level_sums: BTreeMap<u32, Vec<i64>> = BTreeMap::new();
                for &r in rows {
                    let s = level_sums
                        .entry(self.x.get(r as usize, j) as u32)
                        .or_insert_with(|| vec![0; self.k]);
                    for (d, v) in self.reward[r as usize].iter().enumerate() {
                        s[d] += v;
                    }
                }
                for subset in self.subsets(rows, j) {
                    let mut left = vec![0i64; self.k];
                    for c in &subset {
                        for (d, v) in level_sums[c].iter().enumerate() {
                            left[d] += v;
                        }
                    }
                    let right: Vec<i64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                    let (la, lv) = best_arm(&left);
                    let (ra, rv) = best_arm(&right);
                    consider(lv + rv, j, PolicyRule::Subset(subset), la, ra);
                }
            } else {
                let sorted = self.sorted_by(rows, j);
                let pos = Self::positions(&sorted, step);
                let mut left = vec![0i64; self.k];
                let mut upto = 0usize;
                for (e, t) in pos {
                    while upto <= e {
                        for (d, v) in self.reward[sorted[upto].1 as usize].iter().enumerate() {
                            left[d] += v;
                        }
                        upto += 1;
                    }
                    let right: Vec<i64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                    let (la, lv) = best_arm(&left);
                    let (ra, rv) = best_arm(&right);
                    consider(lv + rv, j, PolicyRule::Threshold(t), la, ra);
                }
            }
        }
        match best {
            None => self.leaf(rows),
            Some((value, feature, rule, la, ra)) => Best {
                value,
                node: PolicyNode::Split {
                    feature,
                    rule,
                    left: Box::new(PolicyNode::Leaf { arm: la }),
                    right: Box::new(PolicyNode::Leaf { arm: ra }),
                },
            },
        }
    }

    fn best(&self, rows: &[u32], remaining: usize) -> Best {
        match remaining {
            0 => self.leaf(rows),
            1 => self.best_stump(rows),
            _ => {
                let mut best: Option<Best> = None;
                for (j, rule) in self.candidates(rows, remaining) {
                    let (l, r) = self.partition(rows, j, &rule);
                    let b = Self::split_node(j, rule, self.best(&l, remaining - 1), self.best(&r, remaining - 1));
                    if best.as_ref().is_none_or(|c| b.value > c.value) {
                        best = Some(b);
                    }
                }
                best.unwrap_or_else(|| self.leaf(rows))
            }
        }
    }

    /// Root search with the candidate loop spread over threads. The
    /// reduction keeps the first maximum in candidate order.
    fn best_root(&self, rows: &[u32], depth: usize) -> Best {
        if depth <= 1 {
            return self.best(rows, depth);
        }
        let cands = self.candidates(rows, depth);
        let results: Vec<Best> = cands
            .into_par_iter()
            .map(|(j, rule)| {
                let (l, r) = self.partition(rows, j, &rule);
                Self::split_node(j, rule, self.best(&l, depth - 1), self.best(&r, depth - 1))
            })
            .collect();
        let mut best: Option<Best> = None;
        for b in results {
            if best.as_ref().is_none_or(|c| b.value > c.value) {
                best = Some(b);
            }
        }
        best.unwrap_or_else(|| self.leaf(rows))
    }

    fn count_structures(&self, rows: &[u32], remaining: usize, budget: u64) -> u64 {
        if remaining == 0 {
            return 1;
        }
        let cands = self.candidates(rows, remaining);
        if cands.is_empty() {
            return 1;
        }
        let mut total = 0u64;
        for (j, rule) in cands {
            let (l, r) = self.partition(rows, j, &rule);
            let a = self.count_structures(&l, remaining - 1, budget);
            let b = self.count_structures(&r, remaining - 1, budget);
            total = total.saturating_add(a.saturating_mul(b));
            if total > budget {
                return total;
            }
        }
        total
    }

    /// All structures of a node as (skeleton, per-leaf (count, sums)) in
    /// candidate order; leaves are listed depth-first.
    fn structures(&self, rows: &[u32], remaining: usize) -> Vec<(PolicyNode, Vec<LeafStat>)> {
        let leaf = || {
            vec![(
                PolicyNode::Leaf { arm: 0 },
                vec![LeafStat {
                    n: rows.len(),
                    sums: self.sums(rows),
                }],
            )]
        };
        if remaining == 0 {
            return leaf();
        }
        let cands = self.candidates(rows, remaining);
        if cands.is_empty() {
            return leaf();
        }
        let mut out = Vec::new();
        for (j, rule) in cands {
            let (l, r) = self.partition(rows, j, &rule);
            let ls = self.structures(&l, remaining - 1);
            let rs = self.structures(&r, remaining - 1);
            for (ln, lstat) in &ls {
                for (rn, rstat) in &rs {
                    let mut stats = lstat.clone();
                    stats.extend(rstat.iter().cloned());
                    out.push((
                        PolicyNode::Split {
                            feature: j,
                            rule: rule.clone(),
                            left: Box::new(ln.clone()),
                            right: Box::new(rn.clone()),
                        },
                        stats,
                    ));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct LeafStat {
    n: usize,
    sums: Vec<i64>,
}

/// Leaf labels maximizing the summed reward under the capacities, by
/// branch and bound. Labeling every leaf 0 must be feasible.
fn label_leaves(stats: &[LeafStat], caps: &[Option<usize>], total: Option<usize>) -> (i64, Vec<usize>) {
    let k = caps.len();
    let l = stats.len();
    // Optimistic completion value from each leaf onwards.
    let mut tail = vec![0i64; l + 1];
    for i in (0..l).rev() {
        tail[i] = tail[i + 1] + stats[i].sums.iter().copied().max().unwrap_or(0);
    }
    let prefs: Vec<Vec<usize>> = stats
        .iter()
        .map(|s| {
            let mut o: Vec<usize> = (0..k).collect();
            o.sort_by(|&a, &b| s.sums[b].cmp(&s.sums[a]).then(a.cmp(&b)));
            o
        })
        .collect();
    let mut best_labels = vec![0usize; l];
    let mut best = stats.iter().map(|s| s.sums[0]).sum::<i64>();
    struct St<'a> {
        stats: &'a [LeafStat],
        caps: &'a [Option<usize>],
        total: Option<usize>,
        tail: Vec<i64>,
        prefs: Vec<Vec<usize>>,
        used: Vec<usize>,
        treated: usize,
        labels: Vec<usize>,
    }
    fn dfs(st: &mut St, i: usize, acc: i64, best: &mut i64, best_labels: &mut Vec<usize>) {
        if i == st.stats.len() {
            if acc > *best {
                *best = acc;
                best_labels.clone_from(&st.labels);
            }
            return;
        }
        if acc + st.tail[i] <= *best {
            return;
        }
        let n = st.stats[i].n;
        for idx in 0..st.prefs[i].len() {
            let d = st.prefs[i][idx];
            if st.caps[d].is_some_and(|c| st.used[d] + n > c) {
                continue;
            }
            if d >= 1 && st.total.is_some_and(|t| st.treated + n > t) {
                continue;
            }
            st.used[d] += n;
            if d >= 1 {
                st.treated += n;
            }
            st.labels[i] = d;
            dfs(st, i + 1, acc + st.stats[i].sums[d], best, best_labels);
            st.used[d] -= n;
            if d >= 1 {
                st.treated -= n;
            }
        }
    }
    let mut st = St {
        stats,
        caps,
        total,
        tail,
        prefs,
        used: vec![0; k],
        treated: 0,
        labels: vec![0; l],
    };
    dfs(&mut st, 0, 0, &mut best, &mut best_labels);
    (best, best_labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeSearchOptions {
    pub depth: usize,
    pub grid: GridPolicy,
    /// Penalty updates for capacity-constrained searches too large to enumerate.
    pub lagrangian_iterations: usize,
}

impl TreeSearchOptions {
    pub fn new(depth: usize, grid: GridPolicy) -> Self {
        TreeSearchOptions {
            depth,
            grid,
            lagrangian_iterations: 20,
        }
    }
}

/// Finds the tree maximizing the total potential outcome of the rows.
pub fn search_tree(
    input: &AllocationInput,
    x: &FeatureMatrix,
    opts: &TreeSearchOptions,
    caps: Option<&Capacities>,
) -> Result<PolicyTree> {
    input.validate()?;
    if !(1..=4).contains(&opts.depth) {
        return Err(Error::Config(format!("tree depth {} outside 1..=4", opts.depth)));
    }
    if x.n != input.n() {
        return Err(Error::Data(format!("{} feature rows for {} allocation rows", x.n, input.n())));
    }
    let n = input.n();
    let k = input.n_arms();
    let reward: Vec<Vec<i64>> = input
        .po
        .iter()
        .map(|r| r.iter().map(|v| (v * COST_SCALE).round() as i64).collect())
        .collect();
    let search = Search {
        x,
        reward,
        k,
        grid: opts.grid,
    };
    let rows: Vec<u32> = (0..n as u32).collect();
    let (root, labeling) = match caps.filter(|c| !c.is_unbounded()) {
        None => (search.best_root(&rows, opts.depth).node, Labeling::Unconstrained),
        Some(caps) => {
            let (cap, total) = caps.resolve(n, k)?;
            if cap[0].is_some_and(|c| c < n) {
                return Err(Error::Config(
                    "capacities cannot be met even with every leaf assigned to arm 0".into(),
                ));
            }
            if search.count_structures(&rows, opts.depth, EXACT_BUDGET) <= EXACT_BUDGET {
                let mut best: Option<(i64, PolicyNode)> = None;
                for (mut node, stats) in search.structures(&rows, opts.depth) {
                    let (v, labels) = label_leaves(&stats, &cap, total);
                    if best.as_ref().is_none_or(|b| v > b.0) {
                        node.relabel(&mut labels.into_iter());
                        best = Some((v, node));
                    }
                }
                (best.map(|b| b.1).unwrap_or(PolicyNode::Leaf { arm: 0 }), Labeling::Exact)
            } else {
                (lagrangian(&search, &rows, opts, &cap, total), Labeling::Lagrangian)
            }
        }
    };
    let mut tree = PolicyTree {
        depth: opts.depth,
        features: x.schema.clone(),
        root,
        value: 0.0,
        grid: opts.grid,
        labeling,
    };
    let assignment = tree.apply(x)?;
    tree.value = (0..n).map(|i| input.po[i][assignment[i]]).sum();
    Ok(tree)
}

fn leaf_stats(search: &Search, root: &PolicyNode, rows: &[u32]) -> Vec<LeafStat> {
    let mut stats = vec![];
    fn rec(s: &Search, node: &PolicyNode, rows: &[u32], out: &mut Vec<LeafStat>) {
        match node {
            PolicyNode::Leaf { .. } => out.push(LeafStat {
                n: rows.len(),
                sums: s.sums(rows),
            }),
            PolicyNode::Split { feature, rule, left, right } => {
                let (l, r) = s.partition(rows, *feature, rule);
                rec(s, left, &l, out);
                rec(s, right, &r, out);
            }
        }
    }
    rec(search, root, rows, &mut stats);
    stats
}

/// Penalized searches: capped arms pay `lambda_d` per row, updated by
/// diminishing subgradient steps on the capacity violations. Every
/// structure visited is labeled exactly and the best feasible one kept.
fn lagrangian(search: &Search, rows: &[u32], opts: &TreeSearchOptions, cap: &[Option<usize>], total: Option<usize>) -> PolicyNode {
    let n = rows.len() as f64;
    let k = search.k;
    let spread: f64 = search
        .reward
        .iter()
        .map(|r| (r.iter().max().unwrap() - r.iter().min().unwrap()) as f64)
        .sum::<f64>()
        / n;
    let mut lambda = vec![0.0f64; k];
    let mut best: Option<(i64, PolicyNode)> = None;
    let base = search.reward.clone();
    let mut penalized = Search {
        x: search.x,
        reward: base.clone(),
        k,
        grid: search.grid,
    };
    for it in 0..opts.lagrangian_iterations.max(1) {
        for (i, r) in penalized.reward.iter_mut().enumerate() {
            for d in 0..k {
                r[d] = base[i][d] - lambda[d].round() as i64;
            }
        }
        let found = penalized.best_root(rows, opts.depth).node;
        let stats = leaf_stats(search, &found, rows);
        let (v, labels) = label_leaves(&stats, cap, total);
        // Counts under the penalized labels drive the multiplier update.
        let mut used = vec![0usize; k];
        let mut labels_pen = Vec::new();
        collect_labels(&found, &mut labels_pen);
        for (s, &d) in stats.iter().zip(&labels_pen) {
            used[d] += s.n;
        }
        let mut node = found;
        node.relabel(&mut labels.into_iter());
        if best.as_ref().is_none_or(|b| v > b.0) {
            best = Some((v, node));
        }
        let eta = 2.0 * spread / ((it + 1) as f64).sqrt();
        let mut feasible = true;
        match total {
            Some(t) => {
                let treated: usize = used[1..].iter().sum();
                let g = (treated as f64 - t as f64) / n;
                feasible &= g <= 0.0;
                let l = (lambda[1] + eta * g).max(0.0);
                for lam in lambda.iter_mut().skip(1) {
                    *lam = l;
                }
            }
            None => {
                for d in 0..k {
                    if let Some(c) = cap[d] {
                        let g = (used[d] as f64 - c as f64) / n;
                        feasible &= g <= 0.0;
                        lambda[d] = (lambda[d] + eta * g).max(0.0);
                    }
                }
            }
        }
        if feasible && it == 0 {
            // The unconstrained optimum already satisfies the capacities.
            break;
        }
    }
    best.map(|b| b.1).unwrap_or(PolicyNode::Leaf { arm: 0 })
}

fn collect_labels(node: &PolicyNode, out: &mut Vec<usize>) {
    match node {
        PolicyNode::Leaf { arm } => out.push(*arm),
        PolicyNode::Split { left, right, .. } => {
            collect_labels(left, out);
            collect_labels(right, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(cols: Vec<(&str, FeatureKind, Vec<f64>)>) -> FeatureMatrix {
        let n = cols[0].2.len();
        let p = cols.len();
        let mut values = vec![0.0; n * p];
        for (j, c) in cols.iter().enumerate() {
            for i in 0..n {
                values[i * p + j] = c.2[i];
            }
        }
        FeatureMatrix {
            schema: FeatureSchema {
                names: cols.iter().map(|c| c.0.to_string()).collect(),
                kinds: cols.iter().map(|c| c.1.clone()).collect(),
            },
            n,
            values,
        }
    }

    #[test]
    fn grid_steps() {
        let g = GridPolicy { a: 16, per_level: true };
        assert_eq!((g.step(4), g.step(3), g.step(2), g.step(1)), (2, 4, 8, 16));
        let g = GridPolicy { a: 3, per_level: true };
        assert_eq!((g.step(4), g.step(1)), (1, 3));
        assert_eq!(GridPolicy { a: 5, per_level: false }.step(4), 5);
    }

    #[test]
    fn dominant_arm_everywhere() {
        let po: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, i as f64 + 5.0, 1.0]).collect();
        let inp = AllocationInput::new(po.clone(), vec![0; 12]).unwrap();
        let x = matrix(vec![("a", FeatureKind::Continuous, (0..12).map(|i| (i % 4) as f64).collect())]);
        let t = search_tree(&inp, &x, &TreeSearchOptions::new(2, GridPolicy::exact()), None).unwrap();
        assert!(t.apply(&x).unwrap().iter().all(|&a| a == 1));
        let want: f64 = po.iter().map(|r| r[1]).sum();
        assert_eq!(t.value, want);
    }

    #[test]
    fn render_shape_and_subset() {
        let kinds = FeatureKind::Unordered {
            levels: (0..8).map(|i| i.to_string()).collect(),
        };
        let f = FeatureSchema {
            names: vec!["x1".into(), "type".into()],
            kinds: vec![FeatureKind::Continuous, kinds],
        };
        let root = PolicyNode::Split {
            feature: 0,
            rule: PolicyRule::Threshold(0.5),
            left: Box::new(PolicyNode::Split {
                feature: 1,
                rule: PolicyRule::Subset(vec![1, 5, 6]),
                left: Box::new(PolicyNode::Leaf { arm: 1 }),
                right: Box::new(PolicyNode::Leaf { arm: 0 }),
            }),
            right: Box::new(PolicyNode::Split {
                feature: 0,
                rule: PolicyRule::Threshold(2.25),
                left: Box::new(PolicyNode::Leaf { arm: 2 }),
                right: Box::new(PolicyNode::Leaf { arm: 0 }),
            }),
        };
        let text = render_node(&root, &f);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines.iter().filter(|l| l.trim_start().starts_with("->")).count(), 4);
        assert_eq!(lines[0], "x1 <= 0.5");
        assert_eq!(lines[1], "  type ∈ {1,5,6}");
        assert_eq!(parse_tree(&text, &f).unwrap(), root);
    }

    #[test]
    fn unseen_level_goes_right() {
        let r = PolicyRule::Subset(vec![0, 2]);
        assert!(r.goes_left(2.0));
        assert!(!r.goes_left(7.0));
        assert!(!r.goes_left(-1.0));
    }

    #[test]
    fn label_leaves_respects_caps() {
        let stats = vec![
            LeafStat { n: 3, sums: vec![0, 30, 10] },
            LeafStat { n: 2, sums: vec![0, 25, 24] },
            LeafStat { n: 4, sums: vec![0, 1, 2] },
        ];
        let (v, labels) = label_leaves(&stats, &[None, Some(3), Some(2)], None);
        assert_eq!((v, labels), (54, vec![1, 2, 0]));
        let (v, labels) = label_leaves(&stats, &[None, None, None], Some(5));
        assert_eq!((v, labels), (55, vec![1, 1, 0]));
    }

    #[test]
    fn caps_hold_on_training_rows() {
        let n = 24;
        let po: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0, 10.0 + (i % 5) as f64, (i % 3) as f64 * 4.0]).collect();
        let inp = AllocationInput::new(po, vec![0; n]).unwrap();
        let x = matrix(vec![
            ("a", FeatureKind::Continuous, (0..n).map(|i| (i % 6) as f64).collect()),
            ("b", FeatureKind::Continuous, (0..n).map(|i| (i / 6) as f64).collect()),
        ]);
        let opts = TreeSearchOptions::new(2, GridPolicy::exact());
        let free = search_tree(&inp, &x, &opts, None).unwrap();
        let caps = Capacities::PerArm {
            caps: vec![None, Some(n / 2), Some(n / 2)],
        };
        let capped = search_tree(&inp, &x, &opts, Some(&caps)).unwrap();
        assert_eq!(capped.labeling, Labeling::Exact);
        assert!(capped.value <= free.value + 1e-9);
        let a = capped.apply(&x).unwrap();
        assert!(crate::allocation::respects(&a, &caps, 3));
        let mut big = opts;
        big.lagrangian_iterations = 10;
        let lag = lagrangian(
            &Search {
                x: &x,
                reward: inp.po.iter().map(|r| r.iter().map(|v| (v * COST_SCALE).round() as i64).collect()).collect(),
                k: 3,
                grid: opts.grid,
            },
            &(0..n as u32).collect::<Vec<_>>(),
            &big,
            &[None, Some(n / 2), Some(n / 2)],
            None,
        );
        let t = PolicyTree { root: lag, ..capped.clone() };
        assert!(crate::allocation::respects(&t.apply(&x).unwrap(), &caps, 3));
    }

    #[test]
    fn control_cap_rejected() {
        let inp = AllocationInput::new(vec![vec![0.0, 1.0]; 4], vec![0, 0, 1, 1]).unwrap();
        let x = matrix(vec![("a", FeatureKind::Continuous, vec![0.0, 1.0, 2.0, 3.0])]);
        let caps = Capacities::observed_shares(&inp.observed, 2);
        assert!(search_tree(&inp, &x, &TreeSearchOptions::new(2, GridPolicy::exact()), Some(&caps)).is_err());
    }
}
