//! Synthetic multi-treatment data with known potential outcomes.
//!
//! Covariate families:
//! - `x1..xP` standard normal (continuous). `x1` drives treatment logits
//!   when `confounding_strength > 0`.
//! - `o1..oP` uniform over `ordered_levels` ordered levels `"0".."L-1"`.
//! - `u1..uP` uniform over `unordered_levels` unordered levels.
//!
//! Potential outcome of arm `d` at the final horizon is
//! `baseline + sum_k slope_k * x_k + effect_d(x)` (plus a hidden confounder
//! term when configured). Outcome columns `y1..yH` are cumulative over
//! months: month `t` contributes `1/H` of the final expectation plus
//! Gaussian noise with variance `noise_sd^2 / H`, so `yH` has noise sd
//! `noise_sd`. Optional pre-treatment columns `pre1..preP` follow the same
//! construction without any treatment effect and precede the `y` columns,
//! so the last outcome column is always the final horizon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnData, ColumnKind, ColumnSpec, Dataset, Role, Schema};
use crate::error::{Error, Result};

/// Effect of arm `d >= 1` relative to arm 0 at the final horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EffectSpec {
    Zero,
    Constant {
        value: f64,
    },
    Linear {
        feature: String,
        intercept: f64,
        slope: f64,
    },
    /// `inside` when the feature's level code is in `levels` (categorical)
    /// or its value exceeds `threshold` (continuous), else `outside`.
    Step {
        feature: String,
        #[serde(default)]
        levels: Vec<u32>,
        #[serde(default)]
        threshold: Option<f64>,
        inside: f64,
        outside: f64,
    },
}

/// Arm `arm` is never assigned where `feature > threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportViolation {
    pub feature: String,
    pub threshold: f64,
    pub arm: usize,
}

/// Unobserved standard normal factor that shifts the logit of `arm` and
/// the baseline outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenConfounder {
    pub arm: usize,
    pub selection: f64,
    pub outcome: f64,
}

fn default_levels_ordered() -> usize {
    5
}
fn default_levels_unordered() -> usize {
    3
}
fn default_baseline() -> f64 {
    100.0
}
fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub p_continuous: usize,
    #[serde(default)]
    pub p_ordered: usize,
    #[serde(default)]
    pub p_unordered: usize,
    #[serde(default = "default_levels_ordered")]
    pub ordered_levels: usize,
    #[serde(default = "default_levels_unordered")]
    pub unordered_levels: usize,
    /// Number of arms including control.
    pub m_treatments: usize,
    /// One entry per arm `1..m_treatments`.
    pub effects: Vec<EffectSpec>,
    #[serde(default)]
    pub confounding_strength: f64,
    pub noise_sd: f64,
    #[serde(default = "default_one")]
    pub horizons: usize,
    #[serde(default)]
    pub pre_periods: usize,
    #[serde(default = "default_baseline")]
    pub baseline: f64,
    /// Baseline slopes on `x1, x2, ...`; missing entries are zero.
    #[serde(default)]
    pub baseline_slopes: Vec<f64>,
    #[serde(default)]
    pub support_violation: Option<SupportViolation>,
    #[serde(default)]
    pub hidden_confounder: Option<HiddenConfounder>,
    pub seed: u64,
}

impl DgpConfig {
    /// A small randomized design with constant effects.
    pub fn simple(n: usize, arms: usize, effect: f64, seed: u64) -> Self {
        DgpConfig {
            n,
            p_continuous: 3,
            p_ordered: 1,
            p_unordered: 1,
            ordered_levels: 5,
            unordered_levels: 3,
            m_treatments: arms,
            effects: vec![EffectSpec::Constant { value: effect }; arms.saturating_sub(1)],
            confounding_strength: 0.0,
            noise_sd: 10.0,
            horizons: 1,
            pre_periods: 0,
            baseline: 100.0,
            baseline_slopes: vec![5.0],
            support_violation: None,
            hidden_confounder: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_treatments < 2 {
            return Err(Error::Config("m_treatments must be at least 2".into()));
        }
        if self.effects.len() != self.m_treatments - 1 {
            return Err(Error::Config(format!(
                "{} effect specs for {} treated arms",
                self.effects.len(),
                self.m_treatments - 1
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::Config("noise_sd must be positive".into()));
        }
        if !(self.confounding_strength >= 0.0) {
            return Err(Error::Config("confounding_strength must be >= 0".into()));
        }
        if self.horizons == 0 {
            return Err(Error::Config("at least one outcome horizon required".into()));
        }
        if self.confounding_strength > 0.0 && self.p_continuous == 0 {
            return Err(Error::Config("confounding needs a continuous covariate x1".into()));
        }
        if self.p_ordered > 0 && self.ordered_levels < 2 || self.p_unordered > 0 && self.unordered_levels < 2 {
            return Err(Error::Config("categorical covariates need at least 2 levels".into()));
        }
        if self.unordered_levels > crate::dataset::MAX_UNORDERED_LEVELS {
            return Err(Error::Config("too many unordered levels".into()));
        }
        if let Some(v) = &self.support_violation {
            if v.arm >= self.m_treatments {
                return Err(Error::Config(format!("support violation arm {} out of range", v.arm)));
            }
        }
        if let Some(h) = &self.hidden_confounder {
            if h.arm >= self.m_treatments {
                return Err(Error::Config(format!("hidden confounder arm {} out of range", h.arm)));
            }
        }
        let names = self.covariate_names();
        let check = |f: &str| -> Result<()> {
            if names.iter().any(|n| n == f) {
                Ok(())
            } else {
                Err(Error::Config(format!("effect references unknown covariate `{f}`")))
            }
        };
        for e in &self.effects {
            match e {
                EffectSpec::Linear { feature, .. } => check(feature)?,
                EffectSpec::Step {
                    feature,
                    levels,
                    threshold,
                    ..
                } => {
                    check(feature)?;
                    if levels.is_empty() && threshold.is_none() {
                        return Err(Error::Config(format!(
                            "step effect on `{feature}` needs levels or a threshold"
                        )));
                    }
                }
                _ => {}
            }
        }
        if let Some(v) = &self.support_violation {
            check(&v.feature)?;
        }
        Ok(())
    }

    pub fn covariate_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        names.extend((1..=self.p_continuous).map(|k| format!("x{k}")));
        names.extend((1..=self.p_ordered).map(|k| format!("o{k}")));
        names.extend((1..=self.p_unordered).map(|k| format!("u{k}")));
        names
    }
}

/// Ground truth attached to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    /// `E[Y^d | X_i]` at the final horizon, one row per observation.
    pub true_po: Vec<Vec<f64>>,
    /// Assignment probabilities; rows sum to one.
    pub true_propensity: Vec<Vec<f64>>,
    /// Number of cumulative outcome horizons; the expectation at horizon
    /// `h` is `true_po * h / horizons`.
    pub horizons: usize,
}

impl Oracle {
    pub fn n(&self) -> usize {
        self.true_po.len()
    }

    pub fn n_arms(&self) -> usize {
        self.true_po.first().map_or(0, Vec::len)
    }

    pub fn true_iate(&self, m: usize, l: usize) -> Vec<f64> {
        self.true_po.iter().map(|r| r[m] - r[l]).collect()
    }

    pub fn true_po_at(&self, row: usize, arm: usize, horizon: usize) -> f64 {
        self.true_po[row][arm] * horizon as f64 / self.horizons as f64
    }

    /// Mean true effect over `rows` (all rows when `None`).
    pub fn true_ate(&self, m: usize, l: usize, rows: Option<&[usize]>) -> f64 {
        match rows {
            Some(rs) => rs.iter().map(|&r| self.true_po[r][m] - self.true_po[r][l]).sum::<f64>() / rs.len() as f64,
            None => crate::stats::mean(&self.true_iate(m, l)),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Oracle {
        Oracle {
            true_po: rows.iter().map(|&r| self.true_po[r].clone()).collect(),
            true_propensity: rows.iter().map(|&r| self.true_propensity[r].clone()).collect(),
            horizons: self.horizons,
        }
    }
}

fn effect_value(spec: &EffectSpec, names: &[String], x: &[f64]) -> f64 {
    let lookup = |f: &str| x[names.iter().position(|n| n == f).expect("validated feature")];
    match spec {
        EffectSpec::Zero => 0.0,
        EffectSpec::Constant { value } => *value,
        EffectSpec::Linear {
            feature,
            intercept,
            slope,
        } => intercept + slope * lookup(feature),
        EffectSpec::Step {
            feature,
            levels,
            threshold,
            inside,
            outside,
        } => {
            let v = lookup(feature);
            let hit = if levels.is_empty() {
                v > threshold.expect("validated threshold")
            } else {
                levels.iter().any(|&l| l as f64 == v)
            };
            if hit {
                *inside
            } else {
                *outside
            }
        }
    }
}

/// Draws a dataset and its oracle. Pure function of the config.
pub fn generate(config: &DgpConfig) -> Result<(Dataset, Oracle)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n;
    let arms = config.m_treatments;
    let names = config.covariate_names();
    let p = names.len();
    let pc = config.p_continuous;
    let po_ = config.p_ordered;

    let mut x = vec![0.0; n * p];
    let mut hidden = vec![0.0; n];
    let mut treatment = vec![0usize; n];
    let mut true_po = Vec::with_capacity(n);
    let mut true_prop = Vec::with_capacity(n);
    let h = config.horizons;
    let pre = config.pre_periods;
    let mut outcomes = vec![vec![0.0; n]; h];
    let mut pre_outcomes = vec![vec![0.0; n]; pre];
    let month_sd = config.noise_sd / (h as f64).sqrt();
    let pre_sd = config.noise_sd / (pre.max(1) as f64).sqrt();
    let violation_col = config
        .support_violation
        .as_ref()
        .map(|v| names.iter().position(|n| *n == v.feature).expect("validated"));

    for i in 0..n {
        let row = &mut x[i * p..(i + 1) * p];
        for (j, v) in row.iter_mut().enumerate() {
            *v = if j < pc {
                StandardNormal.sample(&mut rng)
            } else if j < pc + po_ {
                rng.random_range(0..config.ordered_levels) as f64
            } else {
                rng.random_range(0..config.unordered_levels) as f64
            };
        }
        let u: f64 = if config.hidden_confounder.is_some() {
            StandardNormal.sample(&mut rng)
        } else {
            0.0
        };
        hidden[i] = u;

        let mut logits: Vec<f64> = (0..arms)
            .map(|d| config.confounding_strength * row.first().copied().unwrap_or(0.0) * d as f64 / (arms - 1) as f64)
            .collect();
        if let Some(hc) = &config.hidden_confounder {
            logits[hc.arm] += hc.selection * u;
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut prop: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        if let (Some(v), Some(col)) = (&config.support_violation, violation_col) {
            if row[col] > v.threshold {
                prop[v.arm] = 0.0;
            }
        }
        let total: f64 = prop.iter().sum();
        prop.iter_mut().for_each(|q| *q /= total);

        let draw: f64 = rng.random();
        let mut acc = 0.0;
        let mut d = arms - 1;
        for (k, q) in prop.iter().enumerate() {
            acc += q;
            if draw < acc {
                d = k;
                break;
            }
        }
        while prop[d] == 0.0 {
            d -= 1;
        }
        treatment[i] = d;

        let mut base = config.baseline;
        for (k, s) in config.baseline_slopes.iter().enumerate().take(pc) {
            base += s * row[k];
        }
        if let Some(hc) = &config.hidden_confounder {
            base += hc.outcome * u;
        }
        let mut pos = vec![base; arms];
        for (a, spec) in config.effects.iter().enumerate() {
            pos[a + 1] += effect_value(spec, &names, row);
        }

        let mut cum = 0.0;
        for (t, col) in outcomes.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            cum += month_sd * e;
            col[i] = pos[d] * (t + 1) as f64 / h as f64 + cum;
        }
        let mut cum = 0.0;
        for (t, col) in pre_outcomes.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            cum += pre_sd * e;
            col[i] = base * (t + 1) as f64 / pre as f64 + cum;
        }
        true_po.push(pos);
        true_prop.push(prop);
    }

    let mut specs = vec![
        ColumnSpec::new("id", ColumnKind::Continuous, &[Role::Id]),
        ColumnSpec::new("d", ColumnKind::Continuous, &[Role::Treatment]),
    ];
    let mut cols = vec![
        ColumnData::Real((0..n).map(|i| i as f64).collect()),
        ColumnData::Real(treatment.iter().map(|&d| d as f64).collect()),
    ];
    for t in 0..pre {
        specs.push(ColumnSpec::new(format!("pre{}", t + 1), ColumnKind::Continuous, &[Role::Outcome]));
        cols.push(ColumnData::Real(std::mem::take(&mut pre_outcomes[t])));
    }
    for t in 0..h {
        specs.push(ColumnSpec::new(format!("y{}", t + 1), ColumnKind::Continuous, &[Role::Outcome]));
        cols.push(ColumnData::Real(std::mem::take(&mut outcomes[t])));
    }
    let covariate_roles = [Role::Confounder, Role::Heterogeneity];
    for (j, name) in names.iter().enumerate() {
        let column: Vec<f64> = (0..n).map(|i| x[i * p + j]).collect();
        if j < pc {
            specs.push(ColumnSpec::new(name.clone(), ColumnKind::Continuous, &covariate_roles));
            cols.push(ColumnData::Real(column));
        } else {
            let count = if j < pc + po_ {
                config.ordered_levels
            } else {
                config.unordered_levels
            };
            let levels: Vec<String> = (0..count).map(|l| l.to_string()).collect();
            let kind = if j < pc + po_ {
                ColumnKind::Ordered { levels }
            } else {
                ColumnKind::Unordered { levels }
            };
            specs.push(ColumnSpec::new(name.clone(), kind, &covariate_roles));
            cols.push(ColumnData::Level(column.iter().map(|&v| v as u32).collect()));
        }
    }
    let data = Dataset::from_columns(Schema::new(specs)?, cols).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{msg}; increase n or weaken confounding")),
        other => other,
    })?;
    Ok((
        data,
        Oracle {
            true_po,
            true_propensity: true_prop,
            horizons: h,
        },
    ))
}

/// Rows partitioned into named groups (for example the levels of a
/// heterogeneity variable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub labels: Vec<usize>,
    pub names: Vec<String>,
}

impl GroupPartition {
    /// Groups by the level codes of a categorical column.
    pub fn from_column(data: &Dataset, column: &str) -> Result<Self> {
        let (spec, values) = data.require_column(column)?;
        match (spec.kind.levels(), values) {
            (Some(levels), ColumnData::Level(codes)) => Ok(GroupPartition {
                labels: codes.iter().map(|&c| c as usize).collect(),
                names: levels.to_vec(),
            }),
            _ => Err(Error::Schema {
                column: column.to_string(),
                reason: "grouping needs a categorical column".into(),
            }),
        }
    }

    pub fn shares(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.names.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts.iter().map(|&c| c as f64 / self.labels.len() as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleGate {
    pub group: String,
    pub share: f64,
    pub gate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub contrast: (usize, usize),
    pub ate: f64,
    pub gates: Vec<OracleGate>,
}

/// True ATE and, optionally, true GATEs for a contrast.
pub fn oracle_summary(
    oracle: &Oracle,
    contrast: (usize, usize),
    groups: Option<&GroupPartition>,
) -> Result<OracleSummary> {
    let (m, l) = contrast;
    let arms = oracle.n_arms();
    if m >= arms || l >= arms {
        return Err(Error::Config(format!("contrast ({m},{l}) outside 0..{arms}")));
    }
    let iate = oracle.true_iate(m, l);
    let ate = crate::stats::mean(&iate);
    let mut gates = Vec::new();
    if let Some(g) = groups {
        if g.labels.len() != iate.len() {
            return Err(Error::Data("group labels do not match oracle rows".into()));
        }
        let k = g.names.len();
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&lab, v) in g.labels.iter().zip(&iate) {
            sums[lab] += v;
            counts[lab] += 1;
        }
        for z in 0..k {
            if counts[z] == 0 {
                return Err(Error::Data(format!("group `{}` is empty", g.names[z])));
            }
            gates.push(OracleGate {
                group: g.names[z].clone(),
                share: counts[z] as f64 / iate.len() as f64,
                gate: sums[z] / counts[z] as f64,
            });
        }
    }
    Ok(OracleSummary {
        contrast,
        ate,
        gates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn randomized_assignment_is_uniform() {
        let cfg = DgpConfig::simple(6000, 3, 0.0, 5);
        let (ds, oracle) = generate(&cfg).unwrap();
        let counts = ds.arm_counts();
        let n = 6000.0_f64;
        let sd = (n * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - n / 3.0).abs() < 3.0 * sd);
        }
        for row in &oracle.true_propensity {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_effects_give_zero_iates() {
        let mut cfg = DgpConfig::simple(500, 4, 0.0, 2);
        cfg.effects = vec![EffectSpec::Zero; 3];
        let (_, oracle) = generate(&cfg).unwrap();
        for m in 0..4 {
            for l in 0..4 {
                assert!(oracle.true_iate(m, l).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn step_in_group_matches_rule() {
        let mut cfg = DgpConfig::simple(1000, 2, 0.0, 9);
        cfg.p_unordered = 1;
        cfg.unordered_levels = 2;
        cfg.effects = vec![EffectSpec::Step {
            feature: "u1".into(),
            levels: vec![1],
            threshold: None,
            inside: 10.0,
            outside: 2.0,
        }];
        let (ds, oracle) = generate(&cfg).unwrap();
        let groups = GroupPartition::from_column(&ds, "u1").unwrap();
        let iate = oracle.true_iate(1, 0);
        for (i, v) in iate.iter().enumerate() {
            let expect = if groups.labels[i] == 1 { 10.0 } else { 2.0 };
            assert_eq!(*v, expect);
        }
    }

    #[test]
    fn oracle_summary_weighted_mean() {
        let true_po: Vec<Vec<f64>> = (0..100)
            .map(|i| if i < 30 { vec![0.0, 10.0] } else { vec![0.0, 2.0] })
            .collect();
        let oracle = Oracle {
            true_propensity: vec![vec![0.5, 0.5]; 100],
            true_po,
            horizons: 1,
        };
        let groups = GroupPartition {
            labels: (0..100).map(|i| usize::from(i >= 30)).collect(),
            names: vec!["a".into(), "b".into()],
        };
        let s = oracle_summary(&oracle, (1, 0), Some(&groups)).unwrap();
        assert!((s.ate - 4.4).abs() < 1e-12);
        let recombined: f64 = s.gates.iter().map(|g| g.share * g.gate).sum();
        assert!((recombined - s.ate).abs() < 1e-12);

        let empty = GroupPartition {
            labels: vec![0; 100],
            names: vec!["a".into(), "b".into()],
        };
        let err = oracle_summary(&oracle, (1, 0), Some(&empty)).unwrap_err();
        assert!(err.to_string().contains("`b`"));
    }

    #[test]
    fn antisymmetry_and_triangle() {
        let mut cfg = DgpConfig::simple(200, 3, 0.0, 4);
        cfg.effects = vec![
            EffectSpec::Linear {
                feature: "x2".into(),
                intercept: 1.0,
                slope: 3.0,
            },
            EffectSpec::Constant { value: -4.0 },
        ];
        let (_, o) = generate(&cfg).unwrap();
        let a = o.true_iate(1, 2);
        let b = o.true_iate(2, 1);
        let c = o.true_iate(2, 0);
        let d = o.true_iate(1, 0);
        for i in 0..200 {
            assert_eq!(a[i], -b[i]);
            assert!((a[i] + c[i] - d[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn arm_means_track_oracle_at_scale() {
        let mut cfg = DgpConfig::simple(50_000, 3, 5.0, 17);
        cfg.confounding_strength = 1.0;
        let (ds, o) = generate(&cfg).unwrap();
        let y = ds.real("y1").unwrap();
        for d in 0..3 {
            let rows: Vec<usize> = (0..ds.n_rows()).filter(|&r| ds.treatment()[r] == d).collect();
            let obs = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
            let tru = rows.iter().map(|&r| o.true_po[r][d]).sum::<f64>() / rows.len() as f64;
            assert!((obs - tru).abs() < 3.0 * cfg.noise_sd / (rows.len() as f64).sqrt());
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = DgpConfig::simple(300, 3, 1.0, 21);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }

    #[test]
    fn support_violation_zeroes_propensity() {
        let mut cfg = DgpConfig::simple(2000, 3, 1.0, 8);
        cfg.support_violation = Some(SupportViolation {
            feature: "x1".into(),
            threshold: 1.0,
            arm: 2,
        });
        let (ds, o) = generate(&cfg).unwrap();
        let x1 = ds.real("x1").unwrap();
        for i in 0..ds.n_rows() {
            if x1[i] > 1.0 {
                assert_eq!(o.true_propensity[i][2], 0.0);
                assert_ne!(ds.treatment()[i], 2);
            }
        }
    }
}
