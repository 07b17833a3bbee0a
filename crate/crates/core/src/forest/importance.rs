//! Out-of-bag error, permutation importance, grid tuning and feature
//! selection.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_matrix, Forest, ForestParams};
use crate::dataset::{Dataset, FeatureMatrix, SampleSplit};
use crate::error::{Error, Result};

const PERMUTATIONS: usize = 5;

/// Per tree, the leaf mean of the observed arm for every out-of-bag row
/// whose leaf holds that arm.
fn tree_oob(forest: &Forest, t: usize, x: &FeatureMatrix, y: &[f64], oob: &[u32]) -> Vec<(u32, f64)> {
    let tree = &forest.trees[t];
    let mut out = Vec::with_capacity(oob.len());
    for &r in oob {
        let leaf = tree.leaf_for(x.row(r as usize));
        let rows = leaf.arm_rows(forest.train_arms[r as usize] as usize);
        if rows.is_empty() {
            continue;
        }
        let m = rows.iter().map(|&j| y[j as usize]).sum::<f64>() / rows.len() as f64;
        out.push((r, m));
    }
    out
}

fn oob_rows(forest: &Forest, t: usize) -> Vec<u32> {
    let (s, h) = forest.tree_samples(t);
    let mut inbag = vec![false; forest.n_train()];
    for r in s.into_iter().chain(h) {
        inbag[r as usize] = true;
    }
    (0..forest.n_train() as u32).filter(|&r| !inbag[r as usize]).collect()
}

fn mse_from(per_tree: &[Vec<(u32, f64)>], y: &[f64]) -> f64 {
    let n = y.len();
    let mut sum = vec![0.0; n];
    let mut cnt = vec![0u32; n];
    for tree in per_tree {
        for &(r, m) in tree {
            sum[r as usize] += m;
            cnt[r as usize] += 1;
        }
    }
    let mut se = 0.0;
    let mut k = 0usize;
    for r in 0..n {
        if cnt[r] > 0 {
            let e = y[r] - sum[r] / cnt[r] as f64;
            se += e * e;
            k += 1;
        }
    }
    if k == 0 {
        f64::NAN
    } else {
        se / k as f64
    }
}

fn training_matrix(forest: &Forest, data: &Dataset) -> Result<FeatureMatrix> {
    if data.fingerprint() != forest.data_fingerprint {
        return Err(Error::Data("dataset is not the forest's training data".into()));
    }
    forest.query_matrix(data)
}

/// Out-of-bag MSE of the split outcome, predicting each row's observed arm
/// from the trees that did not sample it.
pub fn oob_mse(forest: &Forest, data: &Dataset) -> Result<f64> {
    let x = training_matrix(forest, data)?;
    let y = &forest.train_outcomes[forest.split_outcome];
    let per_tree: Vec<_> = (0..forest.n_trees())
        .into_par_iter()
        .map(|t| tree_oob(forest, t, &x, y, &oob_rows(forest, t)))
        .collect();
    Ok(mse_from(&per_tree, y))
}

/// Permutation importance: mean increase of the out-of-bag MSE over five
/// random permutations of each feature column. Features that no tree
/// splits on score exactly zero.
pub fn variable_importance(forest: &Forest, data: &Dataset, seed: u64) -> Result<Vec<(String, f64)>> {
    let x = training_matrix(forest, data)?;
    let y = &forest.train_outcomes[forest.split_outcome];
    let oob: Vec<Vec<u32>> = (0..forest.n_trees()).into_par_iter().map(|t| oob_rows(forest, t)).collect();
    let base: Vec<_> = (0..forest.n_trees())
        .into_par_iter()
        .map(|t| tree_oob(forest, t, &x, y, &oob[t]))
        .collect();
    let base_mse = mse_from(&base, y);
    let uses: Vec<Vec<bool>> = forest
        .trees
        .iter()
        .map(|t| {
            let mut u = vec![false; x.p()];
            for f in t.split_features() {
                u[f] = true;
            }
            u
        })
        .collect();
    let counts = forest.split_counts();
    let mut out = Vec::with_capacity(x.p());
    for j in 0..x.p() {
        let name = forest.features.names[j].clone();
        if counts[j] == 0 {
            out.push((name, 0.0));
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        let mut total = 0.0;
        for _ in 0..PERMUTATIONS {
            let mut col = x.column(j);
            col.shuffle(&mut rng);
            let mut xp = x.clone();
            xp.set_column(j, &col);
            let per_tree: Vec<_> = (0..forest.n_trees())
                .into_par_iter()
                .map(|t| {
                    if uses[t][j] {
                        tree_oob(forest, t, &xp, y, &oob[t])
                    } else {
                        base[t].clone()
                    }
                })
                .collect();
            total += mse_from(&per_tree, y) - base_mse;
        }
        out.push((name, total / PERMUTATIONS as f64));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub min_leaf_per_arm: Vec<usize>,
    pub mtry: Vec<usize>,
    /// Trees per grid point; defaults to the base parameters.
    #[serde(default)]
    pub n_trees: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunePoint {
    pub min_leaf_per_arm: usize,
    pub mtry: usize,
    /// `None` when the point was infeasible.
    pub oob_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub points: Vec<TunePoint>,
    pub best: ForestParams,
    pub best_mse: f64,
}

/// Grid search over `(min_leaf_per_arm, mtry)` by out-of-bag outcome MSE.
/// Ties go to the larger leaf size, then the smaller mtry.
pub fn tune(train: &Dataset, grid: &TuneGrid, base: &ForestParams, seed: u64) -> Result<TuneReport> {
    if grid.min_leaf_per_arm.is_empty() || grid.mtry.is_empty() {
        return Err(Error::Config("tuning grid is empty".into()));
    }
    let x = train.features(None)?;
    let counts = train.arm_counts();
    let mut points = Vec::new();
    let mut best: Option<(f64, ForestParams)> = None;
    for &min_leaf in &grid.min_leaf_per_arm {
        for &mtry in &grid.mtry {
            let mut params = base.clone();
            params.min_leaf_per_arm = min_leaf;
            params.mtry = Some(mtry);
            params.seed = seed;
            if let Some(t) = grid.n_trees {
                params.n_trees = t;
            }
            if min_leaf == 0 || mtry == 0 || !params.feasible_for(&counts) {
                warn!("grid point min_leaf={min_leaf} mtry={mtry} infeasible; skipped");
                points.push(TunePoint {
                    min_leaf_per_arm: min_leaf,
                    mtry,
                    oob_mse: None,
                });
                continue;
            }
            let forest = fit_matrix(train, &x, &params)?;
            let mse = oob_mse(&forest, train)?;
            points.push(TunePoint {
                min_leaf_per_arm: min_leaf,
                mtry,
                oob_mse: Some(mse),
            });
            let better = match &best {
                None => true,
                Some((b, bp)) => {
                    let bl = bp.min_leaf_per_arm;
                    let bm = bp.mtry.unwrap_or(0);
                    mse < *b || (mse == *b && (min_leaf > bl || (min_leaf == bl && mtry < bm)))
                }
            };
            if better && mse.is_finite() {
                best = Some((mse, params));
            }
        }
    }
    let (best_mse, mut best) =
        best.ok_or_else(|| Error::Config("every tuning grid point is infeasible".into()))?;
    best.n_trees = base.n_trees;
    best.seed = base.seed;
    Ok(TuneReport {
        points,
        best,
        best_mse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub selected: Vec<String>,
    pub importance: Vec<(String, f64)>,
    pub fell_back: bool,
}

/// Fits a forest on the feature-selection slice and keeps covariates with
/// positive importance, plus `pinned`.
pub fn feature_select(
    data: &Dataset,
    split: &SampleSplit,
    params: &ForestParams,
    pinned: &[String],
) -> Result<FeatureSelection> {
    if split.feature_select.is_empty() {
        return Err(Error::Data("feature-selection slice is empty".into()));
    }
    let all = data.covariate_names();
    for p in pinned {
        if !all.contains(p) {
            return Err(Error::Schema {
                column: p.clone(),
                reason: "pinned feature is not a covariate".into(),
            });
        }
    }
    let slice = data.select_rows(&split.feature_select);
    let forest = super::fit(&slice, params)?;
    let importance = variable_importance(&forest, &slice, params.seed)?;
    let mut selected: Vec<String> = importance
        .iter()
        .filter(|(n, v)| *v > 0.0 || pinned.contains(n))
        .map(|(n, _)| n.clone())
        .collect();
    let fell_back = selected.is_empty();
    if fell_back {
        warn!("no covariate has positive importance; keeping all");
        selected = all;
    }
    Ok(FeatureSelection {
        selected,
        importance,
        fell_back,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::fit;
    use crate::synth::{generate, DgpConfig, EffectSpec};

    #[test]
    fn one_point_grid_and_infeasible_skip() {
        let (ds, _) = generate(&DgpConfig::simple(2000, 2, 1.0, 3)).unwrap();
        let base = ForestParams {
            n_trees: 20,
            ..Default::default()
        };
        let g = TuneGrid {
            min_leaf_per_arm: vec![5, 5000],
            mtry: vec![2],
            n_trees: None,
        };
        let r = tune(&ds, &g, &base, 1).unwrap();
        assert_eq!(r.best.min_leaf_per_arm, 5);
        assert_eq!(r.best.mtry, Some(2));
        assert!(r.points[1].oob_mse.is_none());
        let g = TuneGrid {
            min_leaf_per_arm: vec![5000],
            mtry: vec![2],
            n_trees: None,
        };
        assert!(tune(&ds, &g, &base, 1).is_err());
    }

    #[test]
    fn unused_feature_scores_zero_and_reproducible() {
        let mut cfg = DgpConfig::simple(800, 2, 0.0, 5);
        cfg.effects = vec![EffectSpec::Linear {
            feature: "x1".into(),
            intercept: 0.0,
            slope: 20.0,
        }];
        let (ds, _) = generate(&cfg).unwrap();
        let f = fit(
            &ds,
            &ForestParams {
                n_trees: 30,
                max_depth: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        let a = variable_importance(&f, &ds, 4).unwrap();
        let b = variable_importance(&f, &ds, 4).unwrap();
        assert_eq!(a, b);
        let counts = f.split_counts();
        for (j, (_, v)) in a.iter().enumerate() {
            if counts[j] == 0 {
                assert_eq!(*v, 0.0);
            }
        }
    }
}
