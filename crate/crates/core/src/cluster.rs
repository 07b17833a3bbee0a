//! k-means++ clustering of IATE vectors and per-cluster profiles.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnData, Dataset};
use crate::error::{Error, Result};
use crate::forest::tree_rng;

fn default_k() -> usize {
    5
}
fn default_restarts() -> usize {
    10
}
fn default_true() -> bool {
    true
}
fn default_iter() -> usize {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// z-score each column before clustering.
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default = "default_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            k: default_k(),
            restarts: default_restarts(),
            standardize: true,
            max_iter: default_iter(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub k: usize,
    /// Cluster index per row, `0..k`; index 0 is the least beneficial
    /// cluster (reported as cluster 1).
    pub assignment: Vec<usize>,
    /// Member means on the original scale.
    pub centroids: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    /// Within-cluster sum of squares in the clustering space.
    pub within_ss: f64,
    /// Within-cluster SS after each assignment step of the winning run.
    pub ss_history: Vec<f64>,
    pub restart: usize,
}

const SHIFT_TOL: f64 = 1e-8;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = dist2(p, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &points[first])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            Err(_) => {
                // All remaining mass is zero: take any unused row.
                let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen[next] = true;
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &points[next]));
        }
    }
    centroids
}

struct Run {
    assignment: Vec<usize>,
    ss: f64,
    history: Vec<f64>,
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> Run {
    let n = points.len();
    let k = centroids.len();
    let c = points[0].len();
    let mut assignment = vec![0usize; n];
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut ss = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (a, d) = nearest(p, &centroids);
            assignment[i] = a;
            ss += d;
        }
        history.push(ss);
        let mut sums = vec![vec![0.0; c]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignment[i]] += 1;
            for (s, v) in sums[assignment[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            for t in 0..c {
                let m = sums[j][t] / counts[j] as f64;
                shift = shift.max((m - centroids[j][t]).abs());
                centroids[j][t] = m;
            }
        }
        if shift < SHIFT_TOL {
            break;
        }
    }
    let ss = points
        .iter()
        .zip(&assignment)
        .map(|(p, &a)| dist2(p, &centroids[a]))
        .sum();
    history.push(ss);
    hartigan(points, &mut assignment, &mut centroids, &mut history, max_iter);
    let ss = *history.last().expect("history is never empty");
    Run {
        assignment,
        ss,
        history,
    }
}

/// Single-point transfers after Lloyd has settled: a row moves when the exact
/// change in within-cluster SS (with both centroids updated) is negative.
/// Lloyd fixed points on either side of a boundary row are escaped this way.
fn hartigan(
    points: &[Vec<f64>],
    assignment: &mut [usize],
    centroids: &mut [Vec<f64>],
    history: &mut Vec<f64>,
    max_passes: usize,
) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    for _ in 0..max_passes.max(1) {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = assignment[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let removal = na / (na - 1.0) * dist2(p, &centroids[a]);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let add = nb / (nb + 1.0) * dist2(p, &centroids[b]);
                if best.is_none_or(|(_, v)| add < v) {
                    best = Some((b, add));
                }
            }
            let Some((b, add)) = best else { continue };
            if add >= removal * (1.0 - 1e-12) {
                continue;
            }
            let nb = counts[b] as f64;
            for t in 0..p.len() {
                centroids[a][t] = (na * centroids[a][t] - p[t]) / (na - 1.0);
                centroids[b][t] = (nb * centroids[b][t] + p[t]) / (nb + 1.0);
            }
            counts[a] -= 1;
            counts[b] += 1;
            assignment[i] = b;
            moved = true;
        }
        if !moved {
            break;
        }
        // Exact centroids and SS after each pass, so drift never accumulates.
        for c in centroids.iter_mut() {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        for (p, &a) in points.iter().zip(assignment.iter()) {
            for (s, v) in centroids[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, &n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
        }
        let ss = points.iter().zip(assignment.iter()).map(|(p, &a)| dist2(p, &centroids[a])).sum();
        history.push(ss);
    }
}

/// k-means++ on the rows of `matrix` (n x C), best of `restarts` runs by
/// within-cluster SS. Clusters are relabeled by ascending mean of their
/// original-scale centroid.
pub fn cluster_iates(matrix: &[Vec<f64>], opts: &ClusterOptions) -> Result<ClusterResult> {
    let n = matrix.len();
    let k = opts.k;
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::Data(format!("{n} rows cannot form {k} clusters")));
    }
    let c = matrix[0].len();
    if c == 0 || matrix.iter().any(|r| r.len() != c) {
        return Err(Error::Data("IATE matrix rows must share a positive width".into()));
    }
    if matrix.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in IATE matrix".into()));
    }
    // Canonical row order makes the result independent of input order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        matrix[a]
            .iter()
            .zip(&matrix[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut points: Vec<Vec<f64>> = order.iter().map(|&i| matrix[i].clone()).collect();
    if opts.standardize {
        for t in 0..c {
            let col: Vec<f64> = points.iter().map(|p| p[t]).collect();
            let m = crate::stats::mean(&col);
            let sd = crate::stats::std_dev(&col);
            let sd = if sd > 0.0 { sd } else { 1.0 };
            for p in points.iter_mut() {
                p[t] = (p[t] - m) / sd;
            }
        }
    }
    let runs: Vec<Run> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = tree_rng(opts.seed, r);
            let init = seed_plus_plus(&points, k, &mut rng);
            lloyd(&points, init, opts.max_iter)
        })
        .collect();
    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.ss < a.1.ss { b } else { a })
        .expect("at least one restart");
    // Original-scale centroids and relabeling.
    let mut sums = vec![vec![0.0; c]; k];
    let mut sizes = vec![0usize; k];
    for (pos, &a) in best.assignment.iter().enumerate() {
        sizes[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(&matrix[order[pos]]) {
            *s += v;
        }
    }
    let raw: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            if sizes[j] == 0 {
                vec![f64::NAN; c]
            } else {
                sums[j].iter().map(|s| s / sizes[j] as f64).collect()
            }
        })
        .collect();
    let key = |j: usize| raw[j].iter().sum::<f64>() / c as f64;
    let mut rank: Vec<usize> = (0..k).collect();
    rank.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    let mut relabel = vec![0usize; k];
    for (new, &old) in rank.iter().enumerate() {
        relabel[old] = new;
    }
    let mut assignment = vec![0usize; n];
    for (pos, &a) in best.assignment.iter().enumerate() {
        assignment[order[pos]] = relabel[a];
    }
    Ok(ClusterResult {
        k,
        assignment,
        centroids: rank.iter().map(|&j| raw[j].clone()).collect(),
        sizes: rank.iter().map(|&j| sizes[j]).collect(),
        within_ss: best.ss,
        ss_history: best.history,
        restart,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub name: String,
    pub values: Vec<f64>,
}

/// Clusters as columns: share of observations, mean IATE per contrast,
/// then covariate means (level shares for unordered covariates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub clusters: usize,
    pub rows: Vec<ProfileRow>,
}

pub const SHARE_ROW: &str = "Share of observations (in %)";

/// Profiles the clusters over `variables` of `data`, whose rows align with
/// the clustered matrix. `contrast_names` labels the matrix columns.
pub fn profile_clusters(
    result: &ClusterResult,
    matrix: &[Vec<f64>],
    contrast_names: &[String],
    data: &Dataset,
    variables: &[String],
) -> Result<ClusterProfile> {
    let n = result.assignment.len();
    if data.n_rows() != n || matrix.len() != n {
        return Err(Error::Data("profile data rows do not match the clustering".into()));
    }
    let k = result.k;
    let sizes = &result.sizes;
    let mut rows = vec![ProfileRow {
        name: SHARE_ROW.into(),
        values: sizes.iter().map(|&s| 100.0 * s as f64 / n as f64).collect(),
    }];
    let mean_by = |vals: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut sums = vec![0.0; k];
        for i in 0..n {
            sums[result.assignment[i]] += vals(i);
        }
        (0..k)
            .map(|c| if sizes[c] > 0 { sums[c] / sizes[c] as f64 } else { f64::NAN })
            .collect()
    };
    for (t, name) in contrast_names.iter().enumerate() {
        rows.push(ProfileRow {
            name: format!("IATE {name}"),
            values: mean_by(&|i| matrix[i][t]),
        });
    }
    for var in variables {
        let (spec, col) = data.require_column(var)?;
        match (&spec.kind, col) {
            (kind, ColumnData::Level(codes)) if kind.is_unordered() => {
                for (v, level) in kind.levels().unwrap_or(&[]).iter().enumerate() {
                    rows.push(ProfileRow {
                        name: format!("{var}={level}"),
                        values: mean_by(&|i| f64::from(u8::from(codes[i] as usize == v))),
                    });
                }
            }
            _ => rows.push(ProfileRow {
                name: var.clone(),
                values: mean_by(&|i| col.value(i)),
            }),
        }
    }
    Ok(ClusterProfile { clusters: k, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n_equals_k_gives_zero_ss() {
        let m: Vec<Vec<f64>> = vec![vec![1.0], vec![5.0], vec![-2.0]];
        let r = cluster_iates(&m, &ClusterOptions { k: 3, ..Default::default() }).unwrap();
        assert_eq!(r.within_ss, 0.0);
        assert_eq!(r.assignment, vec![1, 2, 0]);
    }

    #[test]
    fn too_few_rows_rejected() {
        let m = vec![vec![1.0]; 3];
        assert!(cluster_iates(&m, &ClusterOptions::default()).is_err());
    }

    #[test]
    fn relabel_orders_by_raw_centroid_mean() {
        let mut m = Vec::new();
        for i in 0..30 {
            let base = [50.0, -20.0, 5.0][i % 3];
            m.push(vec![base + (i as f64) * 0.01, base]);
        }
        let r = cluster_iates(&m, &ClusterOptions { k: 3, seed: 4, ..Default::default() }).unwrap();
        let keys: Vec<f64> = r.centroids.iter().map(|c| c.iter().sum::<f64>() / 2.0).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert!(r.ss_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }
}
