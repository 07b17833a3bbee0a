//! Individualized, group and average effects with weight-based standard
//! errors, plus Wald tests.
//!
//! Every aggregate is the mean of member IATEs. Its variance averages the
//! members' forest weights first and then applies the plug-in variance
//! `sum_j w_j^2 s_j^2`, so cross-group covariances fall out of shared
//! training rows.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnData, Dataset, FeatureKind, FeatureMatrix, Role};
use crate::error::{Error, Result};
use crate::forest::{Forest, Prediction};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Contrast {
    pub m: usize,
    pub l: usize,
}

impl Contrast {
    pub fn new(m: usize, l: usize) -> Result<Self> {
        if m == l {
            return Err(Error::Config(format!("contrast ({m},{l}) compares an arm with itself")));
        }
        Ok(Contrast { m, l })
    }

    pub fn reversed(self) -> Self {
        Contrast { m: self.l, l: self.m }
    }

    /// All `(m, l)` with `m > l`, ordered by `m` then `l`.
    pub fn all_pairs(n_arms: usize) -> Vec<Contrast> {
        let mut out = Vec::new();
        for m in 1..n_arms {
            for l in 0..m {
                out.push(Contrast { m, l });
            }
        }
        out
    }

    fn check(self, n_arms: usize) -> Result<()> {
        if self.m == self.l || self.m >= n_arms || self.l >= n_arms {
            return Err(Error::Config(format!(
                "contrast ({},{}) invalid for {n_arms} arms",
                self.m, self.l
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Contrast {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.m, self.l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Iate,
    Gate,
    Ate,
}

/// Population over which effects are averaged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Population {
    All,
    /// Rows observed in `arm`; with `arm = m` this gives the ATET.
    Treated { arm: usize },
    /// Query row indices.
    Ids { ids: Vec<usize> },
}

impl Population {
    pub fn label(&self) -> String {
        match self {
            Population::All => "all".into(),
            Population::Treated { arm } => format!("D={arm}"),
            Population::Ids { .. } => "custom".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub contrast: Contrast,
    pub level: Level,
    pub population: String,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    pub point: f64,
    pub se: f64,
    pub n_eff: usize,
}

impl EffectEstimate {
    pub fn t_stat(&self) -> f64 {
        if self.se > 0.0 {
            self.point / self.se
        } else if self.point == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(self.point)
        }
    }

    pub fn p_value(&self) -> f64 {
        stats::normal_two_sided_p(self.t_stat())
    }

    /// Symmetric confidence interval at the given coverage.
    pub fn ci(&self, coverage: f64) -> (f64, f64) {
        let z = stats::normal_critical(1.0 - coverage);
        (self.point - z * self.se, self.point + z * self.se)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Cholesky factor of a symmetric matrix; `None` unless clearly positive
/// definite.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let k = a.len();
    let scale = (0..k).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i][p] * l[j][p]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 1e-12 * scale) || !d.is_finite() {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// `b' A^{-1} b` through the Cholesky factor.
fn quad_form_inv(l: &[Vec<f64>], b: &[f64]) -> f64 {
    let k = b.len();
    let mut y = vec![0.0; k];
    for i in 0..k {
        let s: f64 = (0..i).map(|p| l[i][p] * y[p]).sum();
        y[i] = (b[i] - s) / l[i][i];
    }
    y.iter().map(|v| v * v).sum()
}

/// Wald test that all points are equal: `(R t)' (R V R')^{-1} (R t)` with
/// `R` the successive-difference matrix, referred to chi-squared(K-1). A
/// near-singular `R V R'` gets a ridge of `1e-8 * trace / K`.
pub fn wald_equality(points: &[f64], cov: &[Vec<f64>]) -> Result<WaldResult> {
    let k = points.len();
    if k < 2 {
        return Err(Error::Numeric("Wald test needs at least two groups".into()));
    }
    if cov.len() != k || cov.iter().any(|r| r.len() != k) {
        return Err(Error::Numeric("covariance shape does not match the points".into()));
    }
    if points.iter().chain(cov.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input to Wald test".into()));
    }
    let d = k - 1;
    let diff: Vec<f64> = (0..d).map(|i| points[i + 1] - points[i]).collect();
    // (R V R')_{ij} for rows e_{i+1} - e_i
    let mut rvr = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            rvr[i][j] = cov[i + 1][j + 1] - cov[i + 1][j] - cov[i][j + 1] + cov[i][j];
        }
    }
    let chol = cholesky(&rvr).or_else(|| {
        let trace: f64 = (0..k).map(|i| cov[i][i]).sum();
        let ridge = 1e-8 * trace / k as f64;
        let mut reg = rvr.clone();
        // R (V + ridge I) R' adds ridge * R R'
        for i in 0..d {
            reg[i][i] += 2.0 * ridge;
            if i + 1 < d {
                reg[i][i + 1] -= ridge;
                reg[i + 1][i] -= ridge;
            }
        }
        cholesky(&reg)
    });
    let statistic = if diff.iter().all(|&v| v == 0.0) {
        0.0
    } else {
        let l = chol.ok_or_else(|| Error::Numeric("covariance singular after regularization".into()))?;
        quad_form_inv(&l, &diff).max(0.0)
    };
    Ok(WaldResult {
        statistic,
        df: d,
        p_value: stats::chi2_sf(statistic, d),
    })
}

/// Wald test of equal group effects.
pub fn wald_heterogeneity(gates: &[EffectEstimate], cov: &[Vec<f64>]) -> Result<WaldResult> {
    let points: Vec<f64> = gates.iter().map(|g| g.point).collect();
    wald_equality(&points, cov)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IateSummary {
    pub n: usize,
    pub share_positive: f64,
    pub share_significant_positive: f64,
    pub std_points: f64,
    pub mean_se: f64,
    /// Kernel density of the points.
    pub density: Vec<(f64, f64)>,
}

/// Share of positive IATEs, share significantly positive at 5%
/// (two-sided), spread of the points and the average standard error.
pub fn iate_summary(iates: &[EffectEstimate]) -> Result<IateSummary> {
    if iates.is_empty() {
        return Err(Error::Data("no IATEs to summarize".into()));
    }
    let n = iates.len() as f64;
    let z = stats::normal_critical(0.05);
    let points: Vec<f64> = iates.iter().map(|e| e.point).collect();
    let pos = iates.iter().filter(|e| e.point > 0.0).count() as f64;
    let sig = iates.iter().filter(|e| e.point > z * e.se).count() as f64;
    Ok(IateSummary {
        n: iates.len(),
        share_positive: 100.0 * pos / n,
        share_significant_positive: 100.0 * sig / n,
        std_points: stats::std_dev(&points),
        mean_se: iates.iter().map(|e| e.se).sum::<f64>() / n,
        density: stats::kde(&points, None, 200),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateGroup {
    pub label: String,
    /// Bin mean for discretized continuous variables, level code otherwise.
    pub position: f64,
    pub share: f64,
    pub estimate: EffectEstimate,
    /// GATE minus ATE and its standard error.
    pub diff: f64,
    pub diff_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub variable: String,
    pub contrast: Contrast,
    pub ate: EffectEstimate,
    pub groups: Vec<GateGroup>,
    pub covariance: Vec<Vec<f64>>,
    pub wald: Option<WaldResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub point: f64,
    pub se: f64,
}

/// Potential outcomes on the diagonal, `ATE(m, l)` below it (`m > l`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastMatrix {
    pub population: String,
    pub outcome: String,
    pub n: usize,
    pub cells: Vec<Vec<Option<Cell>>>,
}

/// Effect estimation on a set of query rows.
pub struct Estimator<'a> {
    forest: &'a Forest,
    data: &'a Dataset,
    x: FeatureMatrix,
    pred: Prediction,
    outcome: usize,
    supported: Vec<bool>,
}

impl<'a> Estimator<'a> {
    /// Predicts every outcome column of the forest on `data`. The default
    /// outcome is the forest's split outcome.
    pub fn new(forest: &'a Forest, data: &'a Dataset) -> Result<Self> {
        let x = forest.query_matrix(data)?;
        let all: Vec<usize> = (0..forest.outcome_names.len()).collect();
        let pred = forest.predict_po(&x, &all)?;
        let supported = pred.fully_supported();
        let unsupported = supported.iter().filter(|s| !**s).count();
        if unsupported > 0 {
            warn!("{unsupported} query rows lack support in some arm and are excluded");
        }
        Ok(Estimator {
            forest,
            data,
            x,
            pred,
            outcome: forest.split_outcome,
            supported,
        })
    }

    pub fn with_outcome(mut self, name: &str) -> Result<Self> {
        self.outcome = self.forest.outcome_index(name)?;
        Ok(self)
    }

    pub fn outcome_name(&self) -> &str {
        &self.forest.outcome_names[self.outcome]
    }

    pub fn n_arms(&self) -> usize {
        self.forest.n_arms
    }

    pub fn n_queries(&self) -> usize {
        self.x.n
    }

    pub fn prediction(&self) -> &Prediction {
        &self.pred
    }

    pub fn supported(&self) -> &[bool] {
        &self.supported
    }

    pub fn unsupported_rows(&self) -> Vec<usize> {
        (0..self.x.n).filter(|&q| !self.supported[q]).collect()
    }

    pub fn po(&self, q: usize, d: usize) -> f64 {
        self.pred.outcomes[self.outcome].po[q][d]
    }

    pub fn po_se(&self, q: usize, d: usize) -> f64 {
        self.pred.outcomes[self.outcome].se[q][d]
    }

    /// Potential outcomes and standard errors of the current outcome.
    pub fn po_matrix(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        let o = &self.pred.outcomes[self.outcome];
        (&o.po, &o.se)
    }

    /// IATE point of every query row (NaN without support).
    pub fn iate_points(&self, c: Contrast) -> Vec<f64> {
        (0..self.x.n)
            .map(|q| if self.supported[q] { self.po(q, c.m) - self.po(q, c.l) } else { f64::NAN })
            .collect()
    }

    /// IATEs of supported rows.
    pub fn iate(&self, c: Contrast) -> Result<Vec<EffectEstimate>> {
        c.check(self.n_arms())?;
        Ok((0..self.x.n)
            .filter(|&q| self.supported[q])
            .map(|q| EffectEstimate {
                contrast: c,
                level: Level::Iate,
                population: "all".into(),
                outcome: self.outcome_name().to_string(),
                group: None,
                row: Some(q),
                point: self.po(q, c.m) - self.po(q, c.l),
                se: (self.po_se(q, c.m).powi(2) + self.po_se(q, c.l).powi(2)).sqrt(),
                n_eff: 1,
            })
            .collect())
    }

    /// Supported query rows in `pop`.
    pub fn resolve(&self, pop: &Population) -> Result<Vec<usize>> {
        let arms = self.data.treatment();
        let rows: Vec<usize> = match pop {
            Population::All => (0..self.x.n).filter(|&q| self.supported[q]).collect(),
            Population::Treated { arm } => {
                if *arm >= self.n_arms() {
                    return Err(Error::Config(format!("population arm {arm} out of range")));
                }
                (0..self.x.n)
                    .filter(|&q| self.supported[q] && arms[q] == *arm)
                    .collect()
            }
            Population::Ids { ids } => {
                if let Some(&bad) = ids.iter().find(|&&q| q >= self.x.n) {
                    return Err(Error::Data(format!("population row {bad} out of range")));
                }
                ids.iter().copied().filter(|&q| self.supported[q]).collect()
            }
        };
        if rows.is_empty() {
            return Err(Error::Data(format!("population `{}` is empty", pop.label())));
        }
        Ok(rows)
    }

    fn group_weights(&self, groups: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        self.forest.group_weights(&self.x, groups)
    }

    /// Variance-covariance of contrast `c` across groups with dense
    /// averaged weights `w`, for outcome `o`.
    fn contrast_cov(&self, w: &[Vec<f64>], c: Contrast, o: usize) -> Vec<Vec<f64>> {
        let k = w.len();
        let var = &self.forest.residual_var[o];
        let arms = &self.forest.train_arms;
        let mut cov = vec![vec![0.0; k]; k];
        for j in 0..var.len() {
            let a = arms[j] as usize;
            if a != c.m && a != c.l {
                continue;
            }
            for g in 0..k {
                let wg = w[g][j];
                if wg == 0.0 {
                    continue;
                }
                for h in g..k {
                    cov[g][h] += wg * w[h][j] * var[j];
                }
            }
        }
        for g in 0..k {
            for h in 0..g {
                cov[g][h] = cov[h][g];
            }
        }
        cov
    }

    fn arm_var(&self, w: &[f64], d: usize, o: usize) -> f64 {
        self.forest.weighted_covariance(w, w, d, o)
    }

    fn mean_iate(&self, rows: &[usize], c: Contrast, o: usize) -> f64 {
        let po = &self.pred.outcomes[o].po;
        rows.iter().map(|&q| po[q][c.m] - po[q][c.l]).sum::<f64>() / rows.len() as f64
    }

    fn aggregate(
        &self,
        c: Contrast,
        level: Level,
        population: String,
        group: Option<String>,
        rows: &[usize],
        w: &[f64],
        o: usize,
    ) -> EffectEstimate {
        let var = self.arm_var(w, c.m, o) + self.arm_var(w, c.l, o);
        EffectEstimate {
            contrast: c,
            level,
            population,
            outcome: self.forest.outcome_names[o].clone(),
            group,
            row: None,
            point: self.mean_iate(rows, c, o),
            se: var.max(0.0).sqrt(),
            n_eff: rows.len(),
        }
    }

    /// Mean IATE over `pop`; with `pop = Treated { arm: m }` this is the
    /// ATET.
    pub fn ate(&self, c: Contrast, pop: &Population) -> Result<EffectEstimate> {
        c.check(self.n_arms())?;
        let rows = self.resolve(pop)?;
        let w = self.group_weights(std::slice::from_ref(&rows))?;
        Ok(self.aggregate(c, Level::Ate, pop.label(), None, &rows, &w[0], self.outcome))
    }

    /// ATE of `c` for several outcome columns, sharing one set of weights.
    pub fn effect_path(&self, c: Contrast, outcomes: &[String], pop: &Population) -> Result<Vec<EffectEstimate>> {
        c.check(self.n_arms())?;
        let idx: Vec<usize> = outcomes
            .iter()
            .map(|o| self.forest.outcome_index(o))
            .collect::<Result<_>>()?;
        let rows = self.resolve(pop)?;
        let w = self.group_weights(std::slice::from_ref(&rows))?;
        Ok(idx
            .into_iter()
            .map(|o| self.aggregate(c, Level::Ate, pop.label(), None, &rows, &w[0], o))
            .collect())
    }

    /// Groups of supported rows by the values of `z`: levels for
    /// categorical columns, `bins` quantile bins for continuous ones (or
    /// distinct values when there are no more than `bins`).
    pub fn groups_for(&self, z: &str, bins: usize) -> Result<Vec<(String, f64, Vec<usize>)>> {
        let (spec, values) = self.data.require_column(z)?;
        if !spec.has_role(Role::Heterogeneity) {
            return Err(Error::Schema {
                column: z.to_string(),
                reason: "GATE variable lacks the heterogeneity role".into(),
            });
        }
        let rows: Vec<usize> = (0..self.x.n).filter(|&q| self.supported[q]).collect();
        let mut out = Vec::new();
        match (spec.kind.levels(), values) {
            (Some(levels), ColumnData::Level(codes)) => {
                for (v, name) in levels.iter().enumerate() {
                    let members: Vec<usize> = rows.iter().copied().filter(|&q| codes[q] as usize == v).collect();
                    if members.is_empty() {
                        warn!("GATE level `{name}` of `{z}` has no rows; omitted");
                        continue;
                    }
                    out.push((name.clone(), v as f64, members));
                }
            }
            (_, ColumnData::Real(xs)) => {
                let mut order = rows.clone();
                order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
                let mut distinct: Vec<f64> = order.iter().map(|&q| xs[q]).collect();
                distinct.dedup();
                if distinct.len() <= bins.max(1) {
                    for v in distinct {
                        let members: Vec<usize> = rows.iter().copied().filter(|&q| xs[q] == v).collect();
                        out.push((format!("{v}"), v, members));
                    }
                } else {
                    let n = order.len();
                    for b in 0..bins {
                        let lo = b * n / bins;
                        let hi = (b + 1) * n / bins;
                        if lo == hi {
                            continue;
                        }
                        let mut members = order[lo..hi].to_vec();
                        members.sort_unstable();
                        let pos = stats::mean(&members.iter().map(|&q| xs[q]).collect::<Vec<_>>());
                        out.push((format!("q{}", b + 1), pos, members));
                    }
                }
            }
            _ => {
                return Err(Error::Schema {
                    column: z.to_string(),
                    reason: "column storage does not match its kind".into(),
                })
            }
        }
        Ok(out)
    }

    /// GATEs of `c` over the groups of `z`, GATE minus ATE differences and
    /// the Wald test of equal GATEs.
    pub fn gate(&self, c: Contrast, z: &str, bins: usize) -> Result<GateResult> {
        c.check(self.n_arms())?;
        let groups = self.groups_for(z, bins)?;
        let all = self.resolve(&Population::All)?;
        let mut sets: Vec<Vec<usize>> = groups.iter().map(|g| g.2.clone()).collect();
        sets.push(all.clone());
        let w = self.group_weights(&sets)?;
        let k = groups.len();
        let o = self.outcome;
        let cov = self.contrast_cov(&w, c, o);
        let ate = self.aggregate(c, Level::Ate, "all".into(), None, &all, &w[k], o);
        let n_all = all.len() as f64;
        let mut out = Vec::with_capacity(k);
        for (g, (label, position, members)) in groups.into_iter().enumerate() {
            let est = self.aggregate(c, Level::Gate, "all".into(), Some(label.clone()), &members, &w[g], o);
            let diff_var = cov[g][g] - 2.0 * cov[g][k] + cov[k][k];
            out.push(GateGroup {
                label,
                position,
                share: members.len() as f64 / n_all,
                diff: est.point - ate.point,
                diff_se: diff_var.max(0.0).sqrt(),
                estimate: est,
            });
        }
        let cov_groups: Vec<Vec<f64>> = cov[..k].iter().map(|r| r[..k].to_vec()).collect();
        let wald = if k >= 2 {
            let pts: Vec<f64> = out.iter().map(|g| g.estimate.point).collect();
            match wald_equality(&pts, &cov_groups) {
                Ok(w) => Some(w),
                Err(e) => {
                    warn!("Wald test for `{z}` failed: {e}");
                    None
                }
            }
        } else {
            None
        };
        Ok(GateResult {
            variable: z.to_string(),
            contrast: c,
            ate,
            groups: out,
            covariance: cov_groups,
            wald,
        })
    }

    /// ATEs of `c` in each observed-arm subpopulation and the Wald test of
    /// their equality (df = arms - 1).
    pub fn wald_subpopulation_equality(&self, c: Contrast) -> Result<(Vec<EffectEstimate>, WaldResult)> {
        c.check(self.n_arms())?;
        let k = self.n_arms();
        let sets: Vec<Vec<usize>> = (0..k)
            .map(|d| self.resolve(&Population::Treated { arm: d }))
            .collect::<Result<_>>()?;
        let w = self.group_weights(&sets)?;
        let cov = self.contrast_cov(&w, c, self.outcome);
        let ests: Vec<EffectEstimate> = (0..k)
            .map(|d| {
                let pop = Population::Treated { arm: d };
                self.aggregate(c, Level::Ate, pop.label(), None, &sets[d], &w[d], self.outcome)
            })
            .collect();
        let wald = wald_heterogeneity(&ests, &cov)?;
        Ok((ests, wald))
    }

    /// Potential outcomes on the diagonal and pairwise ATEs below it.
    pub fn contrast_matrix(&self, pop: &Population) -> Result<ContrastMatrix> {
        let rows = self.resolve(pop)?;
        let w = self.group_weights(std::slice::from_ref(&rows))?;
        let k = self.n_arms();
        let o = self.outcome;
        let po = &self.pred.outcomes[o].po;
        let mut cells = vec![vec![None; k]; k];
        for d in 0..k {
            let point = rows.iter().map(|&q| po[q][d]).sum::<f64>() / rows.len() as f64;
            cells[d][d] = Some(Cell {
                point,
                se: self.arm_var(&w[0], d, o).max(0.0).sqrt(),
            });
        }
        for c in Contrast::all_pairs(k) {
            let e = self.aggregate(c, Level::Ate, pop.label(), None, &rows, &w[0], o);
            cells[c.m][c.l] = Some(Cell { point: e.point, se: e.se });
        }
        Ok(ContrastMatrix {
            population: pop.label(),
            outcome: self.outcome_name().to_string(),
            n: rows.len(),
            cells,
        })
    }

    /// Kind of a query covariate, for callers that need to know whether a
    /// GATE variable is discretized.
    pub fn feature_kind(&self, name: &str) -> Option<&FeatureKind> {
        let i = self.x.schema.names.iter().position(|n| n == name)?;
        Some(&self.x.schema.kinds[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(point: f64, se: f64) -> EffectEstimate {
        EffectEstimate {
            contrast: Contrast { m: 1, l: 0 },
            level: Level::Gate,
            population: "all".into(),
            outcome: "y".into(),
            group: None,
            row: None,
            point,
            se,
            n_eff: 1,
        }
    }

    #[test]
    fn two_group_wald_closed_form() {
        let w = wald_heterogeneity(&[est(10.0, 2.0), est(2.0, 2.0)], &[vec![4.0, 0.0], vec![0.0, 4.0]]).unwrap();
        assert!((w.statistic - 8.0).abs() < 1e-12);
        assert_eq!(w.df, 1);
        assert!((w.p_value - 0.004677734981047).abs() < 1e-9);
    }

    #[test]
    fn identical_points_give_zero() {
        let cov = vec![vec![1.0, 0.2, 0.0, 0.0], vec![0.2, 1.0, 0.0, 0.0], vec![0.0, 0.0, 2.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]];
        let w = wald_equality(&[3.0; 4], &cov).unwrap();
        assert_eq!(w.statistic, 0.0);
        assert_eq!(w.p_value, 1.0);
        assert_eq!(w.df, 3);
    }

    #[test]
    fn singular_covariance_is_regularized() {
        // Perfectly correlated groups: R V R' = 0 before the ridge.
        let cov = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let w = wald_equality(&[1.0, 2.0], &cov).unwrap();
        assert!(w.statistic > 1e6);
        let zero = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert!(wald_equality(&[1.0, 2.0], &zero).is_err());
    }

    #[test]
    fn summary_shares() {
        let all: Vec<_> = (0..10).map(|_| est(5.0, 1.0)).collect();
        let s = iate_summary(&all).unwrap();
        assert_eq!(s.share_positive, 100.0);
        assert_eq!(s.share_significant_positive, 100.0);
        let sym: Vec<_> = [-3.0, -1.0, 1.0, 3.0].iter().map(|&p| est(p, 1.0)).collect();
        assert_eq!(iate_summary(&sym).unwrap().share_positive, 50.0);
    }

    #[test]
    fn contrast_must_differ() {
        assert!(Contrast::new(2, 2).is_err());
        assert_eq!(Contrast::all_pairs(4).len(), 6);
    }
}
