//! Pseudo-treatment falsification test.
//!
//! A fresh forest is fitted on data whose outcome predates treatment, so
//! every true effect is zero; significant pairwise ATEs point to
//! confounding the covariates do not absorb.

use serde::{Deserialize, Serialize};

use crate::dataset::split_samples;
use crate::dataset::Dataset;
use crate::effects::{Cell, Contrast, ContrastMatrix, EffectEstimate, Estimator, Population};
use crate::error::{Error, Result};
use crate::forest::{fit, ForestParams};
use crate::stats;

fn default_alpha() -> f64 {
    0.01
}
fn default_split() -> (f64, f64) {
    (0.75, 0.25)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboConfig {
    /// Outcome column measured before treatment.
    pub pseudo_outcome: String,
    /// Arms kept for the test; all arms when absent.
    #[serde(default)]
    pub arms_under_test: Option<Vec<usize>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Covariates withheld from the placebo forest.
    #[serde(default)]
    pub exclude_covariates: Vec<String>,
    /// Train and predict shares.
    #[serde(default = "default_split")]
    pub split: (f64, f64),
    #[serde(default)]
    pub seed: u64,
}

impl PlaceboConfig {
    pub fn new(pseudo_outcome: impl Into<String>) -> Self {
        PlaceboConfig {
            pseudo_outcome: pseudo_outcome.into(),
            arms_under_test: None,
            alpha: default_alpha(),
            exclude_covariates: Vec::new(),
            split: default_split(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboContrast {
    /// Contrast in the original arm labels.
    pub contrast: Contrast,
    pub estimate: EffectEstimate,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboResult {
    /// Original labels of the tested arms, in matrix order.
    pub arms: Vec<usize>,
    pub alpha: f64,
    pub critical: f64,
    pub contrasts: Vec<PlaceboContrast>,
    /// Indexed by position in `arms`.
    pub matrix: ContrastMatrix,
}

impl PlaceboResult {
    pub fn any_reject(&self) -> bool {
        self.contrasts.iter().any(|c| c.verdict == Verdict::Reject)
    }

    /// Significance stars of cell `(i, j)` at the configured level.
    pub fn stars(&self, cell: &Cell) -> &'static str {
        if cell.se > 0.0 && (cell.point / cell.se).abs() > self.critical {
            "***"
        } else {
            ""
        }
    }
}

pub fn placebo_run(past: &Dataset, config: &PlaceboConfig, params: &ForestParams) -> Result<PlaceboResult> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::Config("placebo alpha must lie in (0, 1)".into()));
    }
    if !past.outcome_names().contains(&config.pseudo_outcome) {
        return Err(Error::Schema {
            column: config.pseudo_outcome.clone(),
            reason: "pseudo outcome is not an outcome column".into(),
        });
    }
    let arms: Vec<usize> = match &config.arms_under_test {
        Some(a) => a.clone(),
        None => (0..past.n_arms()).collect(),
    };
    let (data, kept) = past.restrict_arms(&arms)?;
    let data = data.without_covariates(&config.exclude_covariates)?;
    let split = split_samples(&data, (config.split.0, config.split.1, 0.0), config.seed)?;
    let train = data.select_rows(&split.train);
    let predict = data.select_rows(&split.predict);
    let mut p = params.clone();
    p.split_outcome = Some(config.pseudo_outcome.clone());
    let forest = fit(&train, &p)?;
    let est = Estimator::new(&forest, &predict)?.with_outcome(&config.pseudo_outcome)?;
    let critical = stats::normal_critical(config.alpha);
    let mut contrasts = Vec::new();
    for c in Contrast::all_pairs(kept.len()) {
        let e = est.ate(c, &Population::All)?;
        let verdict = if e.point.abs() > critical * e.se {
            Verdict::Reject
        } else {
            Verdict::Pass
        };
        contrasts.push(PlaceboContrast {
            contrast: Contrast {
                m: kept[c.m],
                l: kept[c.l],
            },
            estimate: e,
            verdict,
        });
    }
    let matrix = est.contrast_matrix(&Population::All)?;
    Ok(PlaceboResult {
        arms: kept,
        alpha: config.alpha,
        critical,
        contrasts,
        matrix,
    })
}
