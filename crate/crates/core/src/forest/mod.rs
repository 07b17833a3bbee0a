//! Honest multi-treatment causal forest.
//!
//! Each tree draws an arm-stratified subsample without replacement made of
//! a structure half (used to choose splits) and an honest half (used to
//! populate leaves). By default the structure/honest partition is fixed
//! once for the whole forest; [`Honesty::Tree`] redraws it per tree. A
//! query point `x` gets,
//! for every arm `d`, the weight
//!
//! ```text
//! w_dj(x) = 1/T_d(x) * sum_t 1{j in leaf_t(x), D_j = d} / |leaf_t(x) ∩ {D = d}|
//! ```
//!
//! over honest training rows `j`, where `T_d(x)` counts the trees whose leaf
//! holds arm-`d` rows. Potential outcomes are `sum_j w_dj(x) Y_j` and their
//! variance is estimated as `sum_j w_dj(x)^2 s_j^2`, with `s_j^2` the
//! leaf-level residual variance of row `j` averaged over the trees in which
//! it is honest.

mod importance;
mod support;
mod tree;

pub use importance::{feature_select, oob_mse, tune, variable_importance, FeatureSelection, TuneGrid, TuneReport};
pub use support::{common_support_trim, SupportReport};
pub use tree::{Leaf, Node, SplitRule, Tree};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, FeatureMatrix, FeatureSchema};
use crate::error::{Error, Result};
use tree::{GrowParams, TrainView};

pub const FOREST_FORMAT_VERSION: u32 = 1;

fn default_trees() -> usize {
    1000
}
fn default_subsample() -> f64 {
    2.0 / 3.0
}
fn default_honesty() -> f64 {
    0.5
}
fn default_min_leaf() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    #[serde(default = "default_trees")]
    pub n_trees: usize,
    #[serde(default = "default_subsample")]
    pub subsample_fraction: f64,
    /// Share of each tree's subsample that populates leaves.
    #[serde(default = "default_honesty")]
    pub honesty_fraction: f64,
    #[serde(default = "default_min_leaf")]
    pub min_leaf_per_arm: usize,
    /// Features tried per split; `None` means `ceil(sqrt(p))`.
    #[serde(default)]
    pub mtry: Option<usize>,
    #[serde(default)]
    pub max_depth: Option<usize>,
    /// Common-support trimming threshold on estimated propensities.
    #[serde(default)]
    pub cs_threshold: f64,
    /// Outcome column driving the splits; `None` means the last outcome.
    #[serde(default)]
    pub split_outcome: Option<String>,
    #[serde(default)]
    pub honesty: Honesty,
    #[serde(default)]
    pub seed: u64,
}

/// Scope of the structure/honest separation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Honesty {
    /// Every tree splits its own subsample.
    Tree,
    /// One fixed split of the training rows is shared by all trees, so no
    /// row that shapes any tree is ever averaged.
    #[default]
    Forest,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: default_trees(),
            subsample_fraction: default_subsample(),
            honesty_fraction: default_honesty(),
            min_leaf_per_arm: default_min_leaf(),
            mtry: None,
            max_depth: None,
            cs_threshold: 0.0,
            split_outcome: None,
            honesty: Honesty::default(),
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::Config("subsample_fraction must lie in (0, 1]".into()));
        }
        if !(self.honesty_fraction > 0.0 && self.honesty_fraction < 1.0) {
            return Err(Error::Config("honesty_fraction must lie in (0, 1)".into()));
        }
        if self.min_leaf_per_arm == 0 {
            return Err(Error::Config("min_leaf_per_arm must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.cs_threshold) {
            return Err(Error::Config("cs_threshold must lie in [0, 0.5)".into()));
        }
        if self.mtry == Some(0) {
            return Err(Error::Config("mtry must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1))
    }

    /// Per-arm (structure, honest) row counts of every tree.
    pub fn per_arm_sizes(&self, arm_count: usize) -> (usize, usize) {
        let f = self.subsample_fraction;
        match self.honesty {
            Honesty::Tree => {
                let sub = ((arm_count as f64 * f).round() as usize).min(arm_count);
                let honest = (sub as f64 * self.honesty_fraction).floor() as usize;
                (sub - honest, honest)
            }
            Honesty::Forest => {
                let h = (arm_count as f64 * self.honesty_fraction).floor() as usize;
                let s = arm_count - h;
                (((s as f64 * f).round() as usize).min(s), ((h as f64 * f).round() as usize).min(h))
            }
        }
    }

    /// True when both halves of every tree can hold `min_leaf_per_arm`
    /// rows of every arm at the root.
    pub fn feasible_for(&self, arm_counts: &[usize]) -> bool {
        arm_counts.iter().all(|&c| {
            let (s, h) = self.per_arm_sizes(c);
            h >= self.min_leaf_per_arm && s >= self.min_leaf_per_arm
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub version: u32,
    pub params: ForestParams,
    pub features: FeatureSchema,
    pub n_arms: usize,
    pub outcome_names: Vec<String>,
    pub split_outcome: usize,
    pub train_arms: Vec<u32>,
    /// Training outcomes, one vector per outcome column.
    pub train_outcomes: Vec<Vec<f64>>,
    /// Leaf residual variance of each honest row, per outcome column.
    pub residual_var: Vec<Vec<f64>>,
    pub trees: Vec<Tree>,
    pub data_fingerprint: String,
    pub fingerprint: String,
}

/// Sparse weights of one query point: per arm, `(training row, weight)`
/// sorted by row.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryWeights {
    pub arms: Vec<Vec<(u32, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub queries: Vec<QueryWeights>,
}

/// Potential-outcome estimates for one outcome column. Entries are NaN
/// where the arm is unsupported at the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoEstimates {
    pub outcome: String,
    pub po: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// `supported[q][d]`: some tree places arm-`d` honest rows in the
    /// query's leaf.
    pub supported: Vec<Vec<bool>>,
    pub outcomes: Vec<PoEstimates>,
}

impl Prediction {
    /// Queries supported in every arm.
    pub fn fully_supported(&self) -> Vec<bool> {
        self.supported.iter().map(|s| s.iter().all(|&b| b)).collect()
    }
}

pub(crate) struct Scratch {
    acc: Vec<f64>,
    touched: Vec<u32>,
    trees_per_arm: Vec<usize>,
}

impl Scratch {
    pub(crate) fn new(n_train: usize, n_arms: usize) -> Self {
        Scratch {
            acc: vec![0.0; n_train],
            touched: Vec::new(),
            trees_per_arm: vec![0; n_arms],
        }
    }
}

pub(crate) fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Per-arm row pools from which trees draw their structure and honest
/// rows. Under tree-level honesty each arm has a single pool that every
/// tree splits afresh; under forest-level honesty the pools are a fixed
/// partition shared by all trees.
pub(crate) struct Sampler {
    pools: Vec<(Vec<u32>, Vec<u32>)>,
}

impl Sampler {
    pub(crate) fn new(params: &ForestParams, arms: &[u32], n_arms: usize) -> Self {
        let mut by_arm: Vec<Vec<u32>> = vec![Vec::new(); n_arms];
        for (r, &a) in arms.iter().enumerate() {
            by_arm[a as usize].push(r as u32);
        }
        let pools = match params.honesty {
            Honesty::Tree => by_arm.into_iter().map(|rows| (rows, Vec::new())).collect(),
            Honesty::Forest => {
                let mut rng = tree_rng(params.seed, usize::MAX);
                by_arm
                    .into_iter()
                    .map(|mut rows| {
                        let h = (rows.len() as f64 * params.honesty_fraction).floor() as usize;
                        rows.shuffle(&mut rng);
                        let honest = rows.split_off(rows.len() - h);
                        (rows, honest)
                    })
                    .collect()
            }
        };
        Sampler { pools }
    }

    /// Arm-stratified subsample of a tree, split into (structure, honest).
    pub(crate) fn draw(&self, params: &ForestParams, rng: &mut ChaCha8Rng) -> (Vec<u32>, Vec<u32>) {
        let mut structure = Vec::new();
        let mut honest = Vec::new();
        for (a, b) in &self.pools {
            match params.honesty {
                Honesty::Tree => {
                    let (s, h) = params.per_arm_sizes(a.len());
                    let mut rows = a.clone();
                    let (chosen, _) = rows.partial_shuffle(rng, s + h);
                    honest.extend_from_slice(&chosen[..h]);
                    structure.extend_from_slice(&chosen[h..]);
                }
                Honesty::Forest => {
                    let (s, h) = params.per_arm_sizes(a.len() + b.len());
                    let mut rows = a.clone();
                    structure.extend_from_slice(rows.partial_shuffle(rng, s).0);
                    let mut rows = b.clone();
                    honest.extend_from_slice(rows.partial_shuffle(rng, h).0);
                }
            }
        }
        (structure, honest)
    }
}

fn column_major(x: &FeatureMatrix) -> Vec<Vec<f64>> {
    (0..x.p()).map(|j| x.column(j)).collect()
}

/// Fits a forest on the covariates of `train` (all confounder and
/// heterogeneity columns).
pub fn fit(train: &Dataset, params: &ForestParams) -> Result<Forest> {
    let x = train.features(None)?;
    fit_matrix(train, &x, params)
}

pub(crate) fn fit_matrix(train: &Dataset, x: &FeatureMatrix, params: &ForestParams) -> Result<Forest> {
    params.validate()?;
    let n_arms = train.n_arms();
    if n_arms < 2 {
        return Err(Error::Data("forest needs at least two treatment arms".into()));
    }
    let counts = train.arm_counts();
    if let Some(d) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("arm {d} absent from training data")));
    }
    if !params.feasible_for(&counts) {
        return Err(Error::Config(format!(
            "min_leaf_per_arm {} infeasible for arm counts {counts:?}",
            params.min_leaf_per_arm
        )));
    }
    let outcome_names = train.outcome_names();
    let split_outcome = match &params.split_outcome {
        Some(name) => outcome_names
            .iter()
            .position(|o| o == name)
            .ok_or_else(|| Error::Schema {
                column: name.clone(),
                reason: "split outcome is not an outcome column".into(),
            })?,
        None => outcome_names.len() - 1,
    };
    let train_outcomes: Vec<Vec<f64>> = outcome_names
        .iter()
        .map(|o| train.real(o).map(<[f64]>::to_vec))
        .collect::<Result<_>>()?;
    let arms: Vec<u32> = train.treatment().iter().map(|&t| t as u32).collect();
    let cols = column_major(x);
    let mut resolved = params.clone();
    resolved.mtry = Some(params.resolved_mtry(x.p()));
    let grow_params = GrowParams {
        min_leaf: params.min_leaf_per_arm,
        mtry: resolved.mtry.unwrap_or(1),
        max_depth: params.max_depth,
    };
    let view = TrainView {
        cols: &cols,
        kinds: &x.schema.kinds,
        arms: &arms,
        y: &train_outcomes[split_outcome],
        n_arms,
    };
    let sampler = Sampler::new(params, &arms, n_arms);
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let (structure, honest) = sampler.draw(params, &mut rng);
            tree::grow(&view, structure, honest, &grow_params, &mut rng)
        })
        .collect();

    let residual_var = train_outcomes
        .iter()
        .map(|y| residual_variances(&trees, y, n_arms))
        .collect();
    let mut forest = Forest {
        version: FOREST_FORMAT_VERSION,
        params: resolved,
        features: x.schema.clone(),
        n_arms,
        outcome_names,
        split_outcome,
        train_arms: arms,
        train_outcomes,
        residual_var,
        trees,
        data_fingerprint: train.fingerprint(),
        fingerprint: String::new(),
    };
    forest.fingerprint = forest.compute_fingerprint();
    Ok(forest)
}

/// Average over trees of the squared deviation of an honest row from its
/// leaf's arm mean, scaled by `c / (c - 1)` for a leaf arm cell of size `c`.
/// Cells with a single row carry no information and are skipped.
fn residual_variances(trees: &[Tree], y: &[f64], n_arms: usize) -> Vec<f64> {
    let n = y.len();
    // Fixed chunks summed in order, so the float result ignores the thread count.
    let partial: Vec<(Vec<f64>, Vec<u32>)> = trees
        .par_chunks(16)
        .map(|chunk| {
            let (mut sum, mut count) = (vec![0.0; n], vec![0u32; n]);
            for tree in chunk {
                for leaf in &tree.leaves {
                    for d in 0..n_arms {
                        let rows = leaf.arm_rows(d);
                        let c = rows.len();
                        if c < 2 {
                            continue;
                        }
                        let mean = rows.iter().map(|&r| y[r as usize]).sum::<f64>() / c as f64;
                        let scale = c as f64 / (c - 1) as f64;
                        for &r in rows {
                            let e = y[r as usize] - mean;
                            sum[r as usize] += scale * e * e;
                            count[r as usize] += 1;
                        }
                    }
                }
            }
            (sum, count)
        })
        .collect();
    let (mut sum, mut count) = (vec![0.0; n], vec![0u32; n]);
    for (s, c) in &partial {
        for i in 0..n {
            sum[i] += s[i];
            count[i] += c[i];
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

impl Forest {
    pub fn n_train(&self) -> usize {
        self.train_arms.len()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn outcome_index(&self, name: &str) -> Result<usize> {
        self.outcome_names
            .iter()
            .position(|o| o == name)
            .ok_or_else(|| Error::Schema {
                column: name.to_string(),
                reason: "not an outcome the forest was trained with".into(),
            })
    }

    fn compute_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.data_fingerprint.as_bytes());
        h.update(serde_json::to_vec(&self.params).expect("params serialize"));
        h.update(serde_json::to_vec(&self.features).expect("schema serializes"));
        for t in &self.trees {
            h.update(serde_json::to_vec(t).expect("tree serializes"));
        }
        hex::encode(h.finalize())
    }

    /// Recomputes the fingerprint and compares it with the stored one.
    pub fn verify(&self) -> Result<()> {
        if self.version != FOREST_FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported forest format version {}", self.version)));
        }
        if self.compute_fingerprint() != self.fingerprint {
            return Err(Error::Data("forest fingerprint mismatch".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Forest> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let forest: Forest = serde_json::from_reader(std::io::BufReader::new(f))?;
        forest.verify()?;
        Ok(forest)
    }

    /// Structure and honest rows of tree `t`, regenerated from the seed.
    pub fn tree_samples(&self, t: usize) -> (Vec<u32>, Vec<u32>) {
        let mut rng = tree_rng(self.params.seed, t);
        Sampler::new(&self.params, &self.train_arms, self.n_arms).draw(&self.params, &mut rng)
    }

    /// Covariate matrix of `data` in the forest's feature order. Fails
    /// when the feature schema differs from training.
    pub fn query_matrix(&self, data: &Dataset) -> Result<FeatureMatrix> {
        let x = data.features(Some(&self.features.names))?;
        self.check_schema(&x)?;
        Ok(x)
    }

    pub fn check_schema(&self, x: &FeatureMatrix) -> Result<()> {
        if x.schema.hash() != self.features.hash() {
            return Err(Error::Schema {
                column: "<features>".into(),
                reason: "query schema hash differs from the training schema".into(),
            });
        }
        Ok(())
    }

    /// Accumulates raw weights of query `x` into the scratch buffers; the
    /// normalized weight of touched row `j` is
    /// `acc[j] / trees_per_arm[arm(j)]`.
    pub(crate) fn accumulate(&self, x: &[f64], sc: &mut Scratch) {
        for &j in &sc.touched {
            sc.acc[j as usize] = 0.0;
        }
        sc.touched.clear();
        sc.trees_per_arm.iter_mut().for_each(|c| *c = 0);
        for tree in &self.trees {
            let leaf = tree.leaf_for(x);
            for d in 0..self.n_arms {
                let rows = leaf.arm_rows(d);
                if rows.is_empty() {
                    continue;
                }
                sc.trees_per_arm[d] += 1;
                let inv = 1.0 / rows.len() as f64;
                for &j in rows {
                    let a = &mut sc.acc[j as usize];
                    if *a == 0.0 {
                        sc.touched.push(j);
                    }
                    *a += inv;
                }
            }
        }
    }

    #[inline]
    pub(crate) fn weight_of(&self, j: u32, sc: &Scratch) -> f64 {
        sc.acc[j as usize] / sc.trees_per_arm[self.train_arms[j as usize] as usize] as f64
    }

    pub fn weights(&self, query: &FeatureMatrix) -> Result<WeightMatrix> {
        self.check_schema(query)?;
        let queries = (0..query.n)
            .into_par_iter()
            .map_init(
                || Scratch::new(self.n_train(), self.n_arms),
                |sc, q| {
                    self.accumulate(query.row(q), sc);
                    let mut arms: Vec<Vec<(u32, f64)>> = vec![Vec::new(); self.n_arms];
                    for &j in &sc.touched {
                        arms[self.train_arms[j as usize] as usize].push((j, self.weight_of(j, sc)));
                    }
                    for a in arms.iter_mut() {
                        a.sort_unstable_by_key(|e| e.0);
                    }
                    QueryWeights { arms }
                },
            )
            .collect();
        Ok(WeightMatrix { queries })
    }

    /// Potential outcomes and standard errors for the selected outcome
    /// columns. All columns share the same weights.
    pub fn predict_po(&self, query: &FeatureMatrix, outcomes: &[usize]) -> Result<Prediction> {
        self.check_schema(query)?;
        if let Some(&bad) = outcomes.iter().find(|&&o| o >= self.outcome_names.len()) {
            return Err(Error::Config(format!("outcome index {bad} out of range")));
        }
        let k = self.n_arms;
        let per_query: Vec<(Vec<bool>, Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..query.n)
            .into_par_iter()
            .map_init(
                || Scratch::new(self.n_train(), k),
                |sc, q| {
                    self.accumulate(query.row(q), sc);
                    let supported: Vec<bool> = sc.trees_per_arm.iter().map(|&t| t > 0).collect();
                    let mut po = vec![vec![0.0; k]; outcomes.len()];
                    let mut var = vec![vec![0.0; k]; outcomes.len()];
                    for &j in &sc.touched {
                        let w = self.weight_of(j, sc);
                        let a = self.train_arms[j as usize] as usize;
                        for (oi, &o) in outcomes.iter().enumerate() {
                            po[oi][a] += w * self.train_outcomes[o][j as usize];
                            var[oi][a] += w * w * self.residual_var[o][j as usize];
                        }
                    }
                    for oi in 0..outcomes.len() {
                        for d in 0..k {
                            if !supported[d] {
                                po[oi][d] = f64::NAN;
                                var[oi][d] = f64::NAN;
                            }
                        }
                    }
                    let se = var.into_iter().map(|v| v.into_iter().map(f64::sqrt).collect()).collect();
                    (supported, po, se)
                },
            )
            .collect();
        let mut out: Vec<PoEstimates> = outcomes
            .iter()
            .map(|&o| PoEstimates {
                outcome: self.outcome_names[o].clone(),
                po: Vec::with_capacity(query.n),
                se: Vec::with_capacity(query.n),
            })
            .collect();
        let mut supported = Vec::with_capacity(query.n);
        for (s, po, se) in per_query {
            supported.push(s);
            for (oi, (p, e)) in po.into_iter().zip(se).enumerate() {
                out[oi].po.push(p);
                out[oi].se.push(e);
            }
        }
        Ok(Prediction {
            supported,
            outcomes: out,
        })
    }

    /// For each group of query indices, the mean of the members' weight
    /// vectors, dense over training rows (each row carries its own arm's
    /// weight).
    pub fn group_weights(&self, query: &FeatureMatrix, groups: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        self.check_schema(query)?;
        const CHUNK: usize = 64;
        let n = self.n_train();
        let mut membership: Vec<Vec<usize>> = vec![Vec::new(); query.n];
        for (g, members) in groups.iter().enumerate() {
            for &q in members {
                if q >= query.n {
                    return Err(Error::Data(format!("group member {q} outside query rows")));
                }
                membership[q].push(g);
            }
        }
        let active: Vec<usize> = (0..query.n).filter(|&q| !membership[q].is_empty()).collect();
        // Fixed chunking keeps the summation order independent of threads.
        let partials: Vec<Vec<Vec<f64>>> = active
            .par_chunks(CHUNK)
            .map_init(
                || Scratch::new(n, self.n_arms),
                |sc, chunk| {
                    let mut acc = vec![vec![0.0; n]; groups.len()];
                    for &q in chunk {
                        self.accumulate(query.row(q), sc);
                        for &g in &membership[q] {
                            let inv = 1.0 / groups[g].len() as f64;
                            for &j in &sc.touched {
                                acc[g][j as usize] += inv * self.weight_of(j, sc);
                            }
                        }
                    }
                    acc
                },
            )
            .collect();
        let mut total = vec![vec![0.0; n]; groups.len()];
        for part in partials {
            for (t, p) in total.iter_mut().zip(part) {
                for (a, b) in t.iter_mut().zip(p) {
                    *a += b;
                }
            }
        }
        Ok(total)
    }

    /// `sum_j a_j b_j s_j^2` over training rows of arm `arm`.
    pub fn weighted_covariance(&self, a: &[f64], b: &[f64], arm: usize, outcome: usize) -> f64 {
        let var = &self.residual_var[outcome];
        self.train_arms
            .iter()
            .enumerate()
            .filter(|(_, &d)| d as usize == arm)
            .map(|(j, _)| a[j] * b[j] * var[j])
            .sum()
    }

    /// Fraction of splits using each feature, over all trees.
    pub fn split_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.features.len()];
        for t in &self.trees {
            for f in t.split_features() {
                counts[f] += 1;
            }
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ColumnData, ColumnKind, ColumnSpec, FeatureKind, Role, Schema};
    use crate::synth::{generate, DgpConfig};

    fn hand_forest(trees: Vec<Tree>, arms: Vec<u32>, y: Vec<f64>) -> Forest {
        let n = arms.len();
        Forest {
            version: FOREST_FORMAT_VERSION,
            params: ForestParams::default(),
            features: FeatureSchema {
                names: vec!["x".into()],
                kinds: vec![FeatureKind::Continuous],
            },
            n_arms: 2,
            outcome_names: vec!["y".into()],
            split_outcome: 0,
            train_arms: arms,
            residual_var: vec![vec![1.0; n]],
            train_outcomes: vec![y],
            trees,
            data_fingerprint: String::new(),
            fingerprint: String::new(),
        }
    }

    fn query(xs: &[f64]) -> FeatureMatrix {
        FeatureMatrix {
            schema: FeatureSchema {
                names: vec!["x".into()],
                kinds: vec![FeatureKind::Continuous],
            },
            n: xs.len(),
            values: xs.to_vec(),
        }
    }

    fn root_leaf(rows: Vec<u32>, arms: &[u32]) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { leaf: 0 }],
            leaves: vec![Leaf::from_rows(rows, arms, 2)],
        }
    }

    #[test]
    fn root_leaf_weights_are_uniform() {
        // rows 0,1 arm 1 (a, b); row 2 arm 0
        let arms = vec![1, 1, 0];
        let f = hand_forest(vec![root_leaf(vec![0, 1, 2], &arms)], arms, vec![2.0, 4.0, 7.0]);
        let w = f.weights(&query(&[0.3])).unwrap();
        assert_eq!(w.queries[0].arms[1], vec![(0, 0.5), (1, 0.5)]);
        assert_eq!(w.queries[0].arms[0], vec![(2, 1.0)]);
        let p = f.predict_po(&query(&[0.3]), &[0]).unwrap();
        assert_eq!(p.outcomes[0].po[0][1], 3.0);
    }

    #[test]
    fn two_tree_weights_expand_by_hand() {
        // arm 1 rows: a = 0, b = 1; arm 0 row 2 in both trees
        let arms = vec![1, 1, 0];
        let t1 = root_leaf(vec![0, 2], &arms);
        let t2 = root_leaf(vec![0, 1, 2], &arms);
        let f = hand_forest(vec![t1, t2], arms, vec![0.0; 3]);
        let w = f.weights(&query(&[1.0])).unwrap();
        assert_eq!(w.queries[0].arms[1], vec![(0, 0.75), (1, 0.25)]);
    }

    #[test]
    fn empty_arm_leaves_contribute_nothing() {
        let arms = vec![1, 1, 0];
        let t1 = root_leaf(vec![0, 1], &arms);
        let t2 = root_leaf(vec![0, 2], &arms);
        let f = hand_forest(vec![t1, t2], arms, vec![1.0, 3.0, 5.0]);
        let w = f.weights(&query(&[0.0])).unwrap();
        assert_eq!(w.queries[0].arms[0], vec![(2, 1.0)]);
        let s: f64 = w.queries[0].arms[1].iter().map(|e| e.1).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    fn small_data(n: usize, seed: u64) -> Dataset {
        let (ds, _) = generate(&DgpConfig::simple(n, 3, 2.0, seed)).unwrap();
        ds
    }

    #[test]
    fn weights_normalized_and_nonnegative() {
        let ds = small_data(600, 1);
        let params = ForestParams {
            n_trees: 50,
            seed: 3,
            ..Default::default()
        };
        let f = fit(&ds, &params).unwrap();
        let q = f.query_matrix(&ds.select_rows(&(0..40).collect::<Vec<_>>())).unwrap();
        let w = f.weights(&q).unwrap();
        for qw in &w.queries {
            for arm in &qw.arms {
                assert!(arm.iter().all(|e| e.1 >= 0.0));
                let s: f64 = arm.iter().map(|e| e.1).sum();
                assert!((s - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn honest_rows_never_build_structure() {
        let ds = small_data(500, 2);
        let params = ForestParams {
            n_trees: 30,
            seed: 9,
            ..Default::default()
        };
        let f = fit(&ds, &params).unwrap();
        for t in 0..f.n_trees() {
            let (structure, honest) = f.tree_samples(t);
            let s: std::collections::HashSet<u32> = structure.into_iter().collect();
            let h: std::collections::HashSet<u32> = honest.iter().copied().collect();
            for leaf in &f.trees[t].leaves {
                for r in &leaf.rows {
                    assert!(!s.contains(r));
                    assert!(h.contains(r));
                }
            }
            let total: usize = f.trees[t].leaves.iter().map(|l| l.rows.len()).sum();
            assert_eq!(total, honest.len());
        }
    }

    fn two_arm_data(n: usize) -> Dataset {
        let schema = Schema::new(vec![
            ColumnSpec::new("d", ColumnKind::Continuous, &[Role::Treatment]),
            ColumnSpec::new("y", ColumnKind::Continuous, &[Role::Outcome]),
            ColumnSpec::new("x", ColumnKind::Continuous, &[Role::Confounder]),
        ])
        .unwrap();
        Dataset::from_columns(
            schema,
            vec![
                ColumnData::Real((0..n).map(|i| (i % 2) as f64).collect()),
                ColumnData::Real((0..n).map(|i| if i < n / 2 { (i % 2) as f64 * 5.0 } else { 0.0 }).collect()),
                ColumnData::Real((0..n).map(|i| i as f64).collect()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn min_leaf_binds_on_honest_rows() {
        let ds = two_arm_data(40);
        let params = ForestParams {
            n_trees: 20,
            subsample_fraction: 1.0,
            min_leaf_per_arm: 10,
            seed: 1,
            ..Default::default()
        };
        let f = fit(&ds, &params).unwrap();
        for t in &f.trees {
            for leaf in &t.leaves {
                for d in 0..2 {
                    assert!(leaf.arm_rows(d).len() >= 10);
                }
            }
        }
        let ds = two_arm_data(400);
        let f = fit(&ds, &ForestParams { n_trees: 20, min_leaf_per_arm: 10, ..Default::default() }).unwrap();
        assert!(f.trees.iter().any(|t| t.leaves.len() > 1));
        for t in &f.trees {
            for leaf in &t.leaves {
                for d in 0..2 {
                    assert!(leaf.arm_rows(d).len() >= 10);
                }
            }
        }
    }

    #[test]
    fn constant_covariate_gives_root_leaves() {
        let n = 200;
        let schema = Schema::new(vec![
            ColumnSpec::new("d", ColumnKind::Continuous, &[Role::Treatment]),
            ColumnSpec::new("y", ColumnKind::Continuous, &[Role::Outcome]),
            ColumnSpec::new("c", ColumnKind::Continuous, &[Role::Confounder]),
        ])
        .unwrap();
        let ds = Dataset::from_columns(
            schema,
            vec![
                ColumnData::Real((0..n).map(|i| (i % 2) as f64).collect()),
                ColumnData::Real((0..n).map(|i| (i * 7 % 13) as f64).collect()),
                ColumnData::Real(vec![1.5; n]),
            ],
        )
        .unwrap();
        let f = fit(
            &ds,
            &ForestParams {
                n_trees: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn constant_outcome_has_zero_se() {
        let ds = small_data(400, 5);
        let y = vec![42.0; ds.n_rows()];
        let spec = ColumnSpec::new("y1", ColumnKind::Continuous, &[Role::Outcome]);
        let ds = ds.with_column(spec, ColumnData::Real(y)).unwrap();
        let f = fit(
            &ds,
            &ForestParams {
                n_trees: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let q = f.query_matrix(&ds.select_rows(&[0, 1, 2])).unwrap();
        let p = f.predict_po(&q, &[0]).unwrap();
        for row in 0..3 {
            for d in 0..3 {
                assert!((p.outcomes[0].po[row][d] - 42.0).abs() < 1e-9);
                assert!(p.outcomes[0].se[row][d].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn missing_arm_and_infeasible_leaf_rejected() {
        let ds = small_data(300, 4);
        let sub = ds.select_rows(
            &(0..ds.n_rows())
                .filter(|&r| ds.treatment()[r] != 1)
                .collect::<Vec<_>>(),
        );
        assert!(fit(&sub, &ForestParams::default()).is_err());
        let big = ForestParams {
            min_leaf_per_arm: 5000,
            ..Default::default()
        };
        assert!(fit(&ds, &big).is_err());
    }

    #[test]
    fn schema_mismatch_refused() {
        let ds = small_data(300, 4);
        let f = fit(
            &ds,
            &ForestParams {
                n_trees: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let spec = ColumnSpec::new(
            "x2",
            ColumnKind::Ordered {
                levels: vec!["lo".into(), "hi".into()],
            },
            &[Role::Confounder],
        );
        let other = ds.with_column(spec, ColumnData::Level(vec![0; ds.n_rows()])).unwrap();
        assert!(f.query_matrix(&other).is_err());
        let dropped = ds.without_covariates(&["x2".to_string()]).unwrap();
        assert!(f.query_matrix(&dropped.select_rows(&[0])).is_ok());
    }

    #[test]
    fn joint_and_separate_columns_agree_exactly() {
        let mut cfg = DgpConfig::simple(500, 3, 1.0, 12);
        cfg.horizons = 3;
        let (ds, _) = generate(&cfg).unwrap();
        let f = fit(
            &ds,
            &ForestParams {
                n_trees: 40,
                ..Default::default()
            },
        )
        .unwrap();
        let q = f.query_matrix(&ds.select_rows(&(0..25).collect::<Vec<_>>())).unwrap();
        let joint = f.predict_po(&q, &[0, 2]).unwrap();
        let a = f.predict_po(&q, &[0]).unwrap();
        let b = f.predict_po(&q, &[2]).unwrap();
        assert_eq!(joint.outcomes[0], a.outcomes[0]);
        assert_eq!(joint.outcomes[1], b.outcomes[0]);
    }

    #[test]
    fn save_load_round_trip_and_thread_invariance() {
        let ds = small_data(400, 6);
        let params = ForestParams {
            n_trees: 100,
            seed: 77,
            ..Default::default()
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| fit(&ds, &params).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| fit(&ds, &params).unwrap());
        assert_eq!(one.fingerprint, many.fingerprint);
        assert_eq!(one, many);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forest.json");
        one.save(&path).unwrap();
        let back = Forest::load(&path).unwrap();
        assert_eq!(back, one);
    }
}
