//! End-to-end analysis driven by a JSON run configuration.
//!
//! Stages run in a fixed order and each writes its artifacts under the
//! output directory before the next starts, so a failure keeps everything
//! produced so far. A manifest with SHA-256 hashes of every file closes the
//! run; identical configs give identical manifests.

use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocation::{allocation_table, evaluate, AllocationInput, AllocationResult, Capacities, GainMode};
use crate::cluster::{cluster_iates, profile_clusters, ClusterOptions, ClusterProfile, ClusterResult};
use crate::dataset::{split_samples, ColumnData, Dataset, SampleSplit, Schema};
use crate::effects::{Contrast, ContrastMatrix, EffectEstimate, Estimator, GateResult, IateSummary, Population, WaldResult};
use crate::error::{Error, Result};
use crate::forest::{common_support_trim, feature_select, fit, tune, Forest, ForestParams, TuneGrid};
use crate::placebo::{placebo_run, PlaceboConfig};
use crate::policy_tree::{search_tree, GridPolicy, PolicyTree, TreeSearchOptions};
use crate::report::{read_json, write_json, write_reports};
use crate::stats;
use crate::synth::{generate, DgpConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSource {
    Dgp { dgp: DgpConfig },
    Files { csv: PathBuf, schema: PathBuf },
}

impl DataSource {
    fn load(&self) -> Result<(Dataset, Option<crate::synth::Oracle>)> {
        match self {
            DataSource::Dgp { dgp } => {
                let (d, o) = generate(dgp)?;
                Ok((d, Some(o)))
            }
            DataSource::Files { csv, schema } => {
                let schema = Schema::load(schema)?;
                let (d, report) = Dataset::load(csv, &schema)?;
                info!("loaded {} rows ({:?})", d.n_rows(), report);
                Ok((d, None))
            }
        }
    }
}

/// Keeps rows whose `column` equals `equals` (a level name or a number).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFilter {
    pub column: String,
    pub equals: String,
}

impl RowFilter {
    fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let (spec, col) = data.require_column(&self.column)?;
        let rows: Vec<usize> = match (spec.kind.levels(), col) {
            (Some(levels), ColumnData::Level(codes)) => {
                let code = levels.iter().position(|l| l == &self.equals).ok_or_else(|| Error::Schema {
                    column: self.column.clone(),
                    reason: format!("no level `{}`", self.equals),
                })?;
                (0..data.n_rows()).filter(|&i| codes[i] as usize == code).collect()
            }
            _ => {
                let v: f64 = self.equals.parse().map_err(|_| Error::Config(format!("filter value `{}` is not numeric", self.equals)))?;
                (0..data.n_rows()).filter(|&i| col.value(i) == v).collect()
            }
        };
        if rows.is_empty() {
            return Err(Error::Data(format!("filter on `{}` keeps no rows", self.column)));
        }
        Ok(data.select_rows(&rows))
    }
}

fn d_train() -> f64 {
    0.6
}
fn d_predict() -> f64 {
    0.2
}
fn d_fs() -> f64 {
    0.2
}
fn d_true() -> bool {
    true
}
fn d_fs_trees() -> usize {
    200
}
fn d_bins() -> usize {
    10
}
fn d_smooth() -> usize {
    50
}
fn d_depths() -> Vec<usize> {
    vec![2, 3]
}
fn d_grid() -> usize {
    64
}
fn d_half() -> f64 {
    0.5
}
fn d_lagrange() -> usize {
    10
}
fn d_caps() -> Vec<CapsSpec> {
    vec![CapsSpec::ObservedShares, CapsSpec::ObservedTotal]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    #[serde(default = "d_train")]
    pub train: f64,
    #[serde(default = "d_predict")]
    pub predict: f64,
    #[serde(default = "d_fs")]
    pub feature_select: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: d_train(),
            predict: d_predict(),
            feature_select: d_fs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelectConfig {
    #[serde(default = "d_true")]
    pub enabled: bool,
    #[serde(default = "d_fs_trees")]
    pub n_trees: usize,
    /// Always kept; GATE variables are added automatically.
    #[serde(default)]
    pub pinned: Vec<String>,
}

impl Default for FeatureSelectConfig {
    fn default() -> Self {
        FeatureSelectConfig {
            enabled: true,
            n_trees: d_fs_trees(),
            pinned: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    #[serde(default)]
    pub short_list: Vec<String>,
    #[serde(default)]
    pub long_list: Vec<String>,
    /// Quantile bins for continuous variables.
    #[serde(default = "d_bins")]
    pub bins: usize,
    /// Contrasts for GATEs and clustering; every programme against arm 0 by default.
    #[serde(default)]
    pub contrasts: Option<Vec<Contrast>>,
    /// Grid size of the smoothed GATE curves of continuous variables.
    #[serde(default = "d_smooth")]
    pub smooth_points: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            short_list: Vec::new(),
            long_list: Vec::new(),
            bins: d_bins(),
            contrasts: None,
            smooth_points: d_smooth(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    #[serde(default = "d_true")]
    pub enabled: bool,
    #[serde(default)]
    pub options: ClusterOptions,
    #[serde(default)]
    pub profile_variables: Vec<String>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            enabled: true,
            options: ClusterOptions::default(),
            profile_variables: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboSection {
    /// Past-dated data; the main data when absent.
    #[serde(default)]
    pub data: Option<DataSource>,
    pub config: PlaceboConfig,
    #[serde(default)]
    pub n_trees: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CapsSpec {
    /// Every arm at its observed count.
    ObservedShares,
    /// Programme arms at their observed counts, arm 0 open.
    ObservedProgrammes,
    /// Total treated at its observed count.
    ObservedTotal,
    Explicit { caps: Capacities },
}

impl CapsSpec {
    fn label(&self) -> &'static str {
        match self {
            CapsSpec::ObservedShares => "observed_shares",
            CapsSpec::ObservedProgrammes => "observed_programmes",
            CapsSpec::ObservedTotal => "observed_total",
            CapsSpec::Explicit { .. } => "explicit",
        }
    }

    fn resolve(&self, observed: &[usize], n_arms: usize) -> Capacities {
        match self {
            CapsSpec::ObservedShares => Capacities::observed_shares(observed, n_arms),
            CapsSpec::ObservedProgrammes => Capacities::observed_programme_caps(observed, n_arms),
            CapsSpec::ObservedTotal => Capacities::observed_total(observed),
            CapsSpec::Explicit { caps } => caps.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationConfig {
    #[serde(default = "d_true")]
    pub enabled: bool,
    #[serde(default = "d_caps")]
    pub caps: Vec<CapsSpec>,
    #[serde(default)]
    pub gain_mode: GainMode,
    /// Column with the priority values of the longest-unemployed rule.
    #[serde(default)]
    pub priority_column: Option<String>,
    /// Nonzero marks rows eligible under the longest-unemployed rule.
    #[serde(default)]
    pub ever_employed_column: Option<String>,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        AllocationConfig {
            enabled: true,
            caps: d_caps(),
            gain_mode: GainMode::default(),
            priority_column: None,
            ever_employed_column: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    #[serde(default = "d_true")]
    pub enabled: bool,
    #[serde(default = "d_depths")]
    pub depths: Vec<usize>,
    #[serde(default = "d_grid")]
    pub a: usize,
    #[serde(default = "d_true")]
    pub per_level: bool,
    /// Split variables; the GATE short list (or every covariate) by default.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    /// Also search trees under observed programme capacities.
    #[serde(default = "d_true")]
    pub capped: bool,
    /// Share of the prediction rows used to build trees; the rest evaluates them.
    #[serde(default = "d_half")]
    pub train_share: f64,
    #[serde(default = "d_lagrange")]
    pub lagrangian_iterations: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            enabled: true,
            depths: d_depths(),
            a: d_grid(),
            per_level: true,
            features: None,
            capped: true,
            train_share: d_half(),
            lagrangian_iterations: d_lagrange(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default)]
    pub filter: Option<RowFilter>,
    /// Base seed; every stochastic stage derives its own from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split: SplitConfig,
    /// Outcome analysed; the last outcome column by default.
    #[serde(default)]
    pub outcome: Option<String>,
    /// Outcomes of the effect path; `y1..yH` for generated data, every
    /// outcome otherwise.
    #[serde(default)]
    pub path_outcomes: Option<Vec<String>>,
    #[serde(default)]
    pub feature_selection: FeatureSelectConfig,
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(default)]
    pub tune: Option<TuneGrid>,
    /// Contrasts for effect paths and IATE summaries; all pairs by default.
    #[serde(default)]
    pub contrasts: Option<Vec<Contrast>>,
    #[serde(default)]
    pub gates: GateConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub placebo: Option<PlaceboSection>,
    #[serde(default)]
    pub allocation: AllocationConfig,
    #[serde(default)]
    pub trees: TreeConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Data,
    Split,
    SelectFeatures,
    Tune,
    Fit,
    Effects,
    Wald,
    Cluster,
    Placebo,
    Allocate,
    Tree,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Split => "split",
            Stage::SelectFeatures => "select-features",
            Stage::Tune => "tune",
            Stage::Fit => "fit",
            Stage::Effects => "effects",
            Stage::Wald => "wald",
            Stage::Cluster => "cluster",
            Stage::Placebo => "placebo",
            Stage::Allocate => "allocate",
            Stage::Tree => "tree",
            Stage::Report => "report",
        }
    }

    /// Offset added to the base seed.
    fn seed_offset(self) -> u64 {
        self as u64 * 1_000_003
    }
}

// ---- artifacts ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectPath {
    pub contrast: Contrast,
    pub estimates: Vec<EffectEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IateSummaryEntry {
    pub contrast: Contrast,
    pub summary: IateSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsArtifact {
    pub outcome: String,
    pub arm_labels: Vec<String>,
    pub n_query: usize,
    pub unsupported: usize,
    /// All rows first, then the population of each arm.
    pub matrices: Vec<ContrastMatrix>,
    pub paths: Vec<EffectPath>,
    pub iate_summaries: Vec<IateSummaryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubpopWald {
    pub contrast: Contrast,
    pub estimates: Vec<EffectEstimate>,
    pub wald: WaldResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateEntry {
    /// `short` or `long`.
    pub list: String,
    pub result: GateResult,
    /// Kernel-smoothed GATE minus ATE over a grid of a continuous variable.
    #[serde(default)]
    pub smoothed: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldArtifact {
    pub subpopulation: Vec<SubpopWald>,
    pub gates: Vec<GateEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub contrasts: Vec<String>,
    /// Query rows that were clustered.
    pub rows: Vec<usize>,
    pub result: ClusterResult,
    pub profile: ClusterProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSet {
    pub caps_label: String,
    pub caps: Capacities,
    pub results: Vec<AllocationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationArtifact {
    pub arm_labels: Vec<String>,
    /// Query rows entering the allocation.
    pub rows: Vec<usize>,
    pub tables: Vec<AllocationSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEntry {
    pub depth: usize,
    pub capped: bool,
    pub tree: PolicyTree,
    pub train: AllocationResult,
    pub eval: AllocationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeArtifact {
    pub n_arms: usize,
    pub train_rows: Vec<usize>,
    pub eval_rows: Vec<usize>,
    pub trees: Vec<TreeEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub completed: Vec<String>,
    #[serde(default)]
    pub failed_stage: Option<String>,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

fn hash_files(dir: &Path) -> Result<Vec<ManifestEntry>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<ManifestEntry>) -> Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(dir, e))?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                if rel == MANIFEST {
                    continue;
                }
                let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
                out.push(ManifestEntry {
                    path: rel,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                    bytes: bytes.len() as u64,
                });
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

fn default_path_outcomes(cfg: &RunConfig, data: &Dataset) -> Vec<String> {
    if let Some(p) = &cfg.path_outcomes {
        return p.clone();
    }
    match &cfg.data {
        DataSource::Dgp { dgp } => (1..=dgp.horizons).map(|h| format!("y{h}")).collect(),
        DataSource::Files { .. } => data.outcome_names(),
    }
}

/// Nadaraya-Watson smoother with a Gaussian kernel and Silverman bandwidth.
pub fn kernel_smooth(x: &[f64], y: &[f64], points: usize) -> Vec<(f64, f64)> {
    if x.is_empty() || points < 2 {
        return Vec::new();
    }
    let h = stats::silverman_bandwidth(x);
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..points)
        .map(|k| {
            let g = lo + (hi - lo) * k as f64 / (points - 1) as f64;
            let (mut sw, mut swy) = (0.0, 0.0);
            for (xi, yi) in x.iter().zip(y) {
                let u = (g - xi) / h;
                let w = (-0.5 * u * u).exp();
                sw += w;
                swy += w * yi;
            }
            (g, if sw > 0.0 { swy / sw } else { f64::NAN })
        })
        .collect()
}

/// Runs the stages up to and including `until`, writing into `out`.
pub fn run(cfg: &RunConfig, out: &Path, until: Stage) -> Result<Manifest> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_sha256 = hex::encode(Sha256::digest(serde_json::to_vec(cfg)?));
    let mut completed: Vec<String> = Vec::new();
    let result = run_stages(cfg, out, until, &mut completed);
    let manifest = Manifest {
        config_sha256,
        completed,
        failed_stage: result.as_ref().err().and_then(|e| match e {
            Error::Stage { stage, .. } => Some(stage.clone()),
            _ => None,
        }),
        files: hash_files(out)?,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    result.map(|_| manifest)
}

fn tag<T>(stage: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: stage.name().into(),
            source: Box::new(e),
        },
    })
}

fn run_stages(cfg: &RunConfig, out: &Path, until: Stage, completed: &mut Vec<String>) -> Result<()> {
    let seed = |s: Stage| cfg.seed.wrapping_add(s.seed_offset());
    let mut done = |s: Stage, t: std::time::Instant| {
        info!("stage {} done in {:.1?}", s.name(), t.elapsed());
        completed.push(s.name().into());
    };

    // data
    let t = std::time::Instant::now();
    let data = tag(Stage::Data, (|| {
        let dir = out.join("data");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (mut data, oracle) = cfg.data.load()?;
        if let Some(o) = &oracle {
            write_json(&dir.join("oracle.json"), o)?;
        }
        if let Some(f) = &cfg.filter {
            data = f.apply(&data)?;
        }
        if cfg.forest.cs_threshold > 0.0 {
            let (trimmed, report) = common_support_trim(&data, cfg.forest.cs_threshold, seed(Stage::Data))?;
            write_json(&dir.join("support.json"), &report)?;
            data = trimmed;
        }
        data.save(&dir.join("data.csv"), &dir.join("schema.json"))?;
        Ok(data)
    })())?;
    done(Stage::Data, t);
    if until == Stage::Data {
        return Ok(());
    }

    let t = std::time::Instant::now();
    let split: SampleSplit = tag(Stage::Split, (|| {
        let s = &cfg.split;
        let split = split_samples(&data, (s.train, s.predict, s.feature_select), seed(Stage::Split))?;
        write_json(&out.join("split.json"), &split)?;
        Ok(split)
    })())?;
    done(Stage::Split, t);
    if until == Stage::Split {
        return Ok(());
    }

    let mut params = cfg.forest.clone();
    if let Some(o) = &cfg.outcome {
        params.split_outcome = Some(o.clone());
    }

    let t = std::time::Instant::now();
    let data = tag(Stage::SelectFeatures, (|| {
        if !cfg.feature_selection.enabled || split.feature_select.is_empty() {
            return Ok(data.clone());
        }
        let mut pinned = cfg.feature_selection.pinned.clone();
        let covs = data.covariate_names();
        let downstream = cfg.gates.short_list.iter().chain(&cfg.gates.long_list).chain(&cfg.cluster.profile_variables);
        for v in downstream.chain(cfg.trees.features.iter().flatten()) {
            if !pinned.contains(v) && covs.contains(v) {
                pinned.push(v.clone());
            }
        }
        let mut p = params.clone();
        p.n_trees = cfg.feature_selection.n_trees;
        p.seed = seed(Stage::SelectFeatures);
        let sel = feature_select(&data, &split, &p, &pinned)?;
        write_json(&out.join("features.json"), &sel)?;
        data.keep_covariates(&sel.selected)
    })())?;
    done(Stage::SelectFeatures, t);
    if until == Stage::SelectFeatures {
        return Ok(());
    }

    let train = data.select_rows(&split.train);
    let predict = data.select_rows(&split.predict);

    let t = std::time::Instant::now();
    params.seed = seed(Stage::Fit);
    if let Some(grid) = &cfg.tune {
        params = tag(Stage::Tune, (|| {
            let report = tune(&train, grid, &params, seed(Stage::Tune))?;
            write_json(&out.join("tune.json"), &report)?;
            Ok(report.best)
        })())?;
    }
    done(Stage::Tune, t);
    if until == Stage::Tune {
        return Ok(());
    }

    let t = std::time::Instant::now();
    let forest: Forest = tag(Stage::Fit, (|| {
        let f = fit(&train, &params)?;
        f.save(&out.join("forest.json"))?;
        Ok(f)
    })())?;
    done(Stage::Fit, t);
    if until == Stage::Fit {
        return Ok(());
    }

    let t = std::time::Instant::now();
    let est = tag(Stage::Effects, (|| {
        let mut est = Estimator::new(&forest, &predict)?;
        if let Some(o) = &cfg.outcome {
            est = est.with_outcome(o)?;
        }
        Ok(est)
    })())?;
    let k = est.n_arms();
    let arm_labels: Vec<String> = (0..k).map(|a| a.to_string()).collect();
    let contrasts = cfg.contrasts.clone().unwrap_or_else(|| Contrast::all_pairs(k));
    let gate_contrasts = cfg
        .gates
        .contrasts
        .clone()
        .unwrap_or_else(|| (1..k).map(|m| Contrast { m, l: 0 }).collect());
    tag(Stage::Effects, (|| {
        let mut matrices = vec![est.contrast_matrix(&Population::All)?];
        for arm in 0..k {
            matrices.push(est.contrast_matrix(&Population::Treated { arm })?);
        }
        let path_outcomes = default_path_outcomes(cfg, &data);
        let mut paths = Vec::new();
        let mut summaries = Vec::new();
        let mut iate_table = crate::report::Table {
            header: vec!["query_row".into(), "observed_arm".into(), "supported".into()],
            rows: Vec::new(),
        };
        let mut iates = Vec::new();
        for &c in &contrasts {
            paths.push(EffectPath {
                contrast: c,
                estimates: est.effect_path(c, &path_outcomes, &Population::All)?,
            });
            let iate = est.iate(c)?;
            summaries.push(IateSummaryEntry {
                contrast: c,
                summary: crate::effects::iate_summary(&iate)?,
            });
            iate_table.header.push(format!("iate_{}_{}", c.m, c.l));
            iate_table.header.push(format!("se_{}_{}", c.m, c.l));
            iates.push(iate);
        }
        let supported = est.supported();
        let mut pos = vec![0usize; iates.len()];
        for q in 0..est.n_queries() {
            let mut row = vec![q.to_string(), predict.treatment()[q].to_string(), supported[q].to_string()];
            for (t, iate) in iates.iter().enumerate() {
                if supported[q] {
                    let e = &iate[pos[t]];
                    row.push(format!("{}", e.point));
                    row.push(format!("{}", e.se));
                    pos[t] += 1;
                } else {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
            iate_table.rows.push(row);
        }
        iate_table.write_csv(&out.join("iates.csv"))?;
        let artifact = EffectsArtifact {
            outcome: est.outcome_name().to_string(),
            arm_labels: arm_labels.clone(),
            n_query: est.n_queries(),
            unsupported: est.unsupported_rows().len(),
            matrices,
            paths,
            iate_summaries: summaries,
        };
        write_json(&out.join("effects.json"), &artifact)
    })())?;
    done(Stage::Effects, t);
    if until == Stage::Effects {
        return Ok(());
    }

    let t = std::time::Instant::now();
    tag(Stage::Wald, (|| {
        let mut subpopulation = Vec::new();
        for &c in &contrasts {
            let (estimates, wald) = est.wald_subpopulation_equality(c)?;
            subpopulation.push(SubpopWald { contrast: c, estimates, wald });
        }
        let mut gates = Vec::new();
        let supported: Vec<usize> = (0..est.n_queries()).filter(|&q| est.supported()[q]).collect();
        for (list, vars) in [("short", &cfg.gates.short_list), ("long", &cfg.gates.long_list)] {
            for var in vars {
                for &c in &gate_contrasts {
                    let result = est.gate(c, var, cfg.gates.bins)?;
                    let smoothed = match est.feature_kind(var) {
                        Some(crate::dataset::FeatureKind::Continuous) | None
                            if matches!(predict.require_column(var)?.1, ColumnData::Real(_)) =>
                        {
                            let z = predict.real(var)?;
                            let pts = est.iate_points(c);
                            let xs: Vec<f64> = supported.iter().map(|&q| z[q]).collect();
                            let ys: Vec<f64> = supported.iter().map(|&q| pts[q]).collect();
                            Some(
                                kernel_smooth(&xs, &ys, cfg.gates.smooth_points)
                                    .into_iter()
                                    .map(|(x, g)| (x, g - result.ate.point))
                                    .collect(),
                            )
                        }
                        _ => None,
                    };
                    gates.push(GateEntry {
                        list: list.into(),
                        result,
                        smoothed,
                    });
                }
            }
        }
        write_json(&out.join("wald.json"), &WaldArtifact { subpopulation, gates })
    })())?;
    done(Stage::Wald, t);
    if until == Stage::Wald {
        return Ok(());
    }

    let supported_rows: Vec<usize> = (0..est.n_queries()).filter(|&q| est.supported()[q]).collect();

    let t = std::time::Instant::now();
    if cfg.cluster.enabled {
        tag(Stage::Cluster, (|| {
            let cols: Vec<Vec<f64>> = gate_contrasts.iter().map(|&c| est.iate_points(c)).collect();
            let matrix: Vec<Vec<f64>> = supported_rows.iter().map(|&q| cols.iter().map(|c| c[q]).collect()).collect();
            let mut opts = cfg.cluster.options.clone();
            opts.seed = seed(Stage::Cluster);
            let result = cluster_iates(&matrix, &opts)?;
            let names: Vec<String> = gate_contrasts.iter().map(|c| c.to_string()).collect();
            let sub = predict.select_rows(&supported_rows);
            let profile = profile_clusters(&result, &matrix, &names, &sub, &cfg.cluster.profile_variables)?;
            write_json(
                &out.join("clusters.json"),
                &ClusterArtifact {
                    contrasts: names,
                    rows: supported_rows.clone(),
                    result,
                    profile,
                },
            )
        })())?;
    }
    done(Stage::Cluster, t);
    if until == Stage::Cluster {
        return Ok(());
    }

    let t = std::time::Instant::now();
    if let Some(p) = &cfg.placebo {
        tag(Stage::Placebo, (|| {
            let past = match &p.data {
                Some(src) => src.load()?.0,
                None => data.clone(),
            };
            let mut pc = p.config.clone();
            pc.seed = seed(Stage::Placebo);
            let mut pp = params.clone();
            pp.seed = seed(Stage::Placebo);
            if let Some(n) = p.n_trees {
                pp.n_trees = n;
            }
            let r = placebo_run(&past, &pc, &pp)?;
            write_json(&out.join("placebo.json"), &r)
        })())?;
    }
    done(Stage::Placebo, t);
    if until == Stage::Placebo {
        return Ok(());
    }

    let t = std::time::Instant::now();
    let input = tag(Stage::Allocate, (|| {
        let (po, se) = est.po_matrix();
        let outcome = predict.real(est.outcome_name())?;
        let observed: Vec<usize> = supported_rows.iter().map(|&q| predict.treatment()[q]).collect();
        let mut input = AllocationInput::new(supported_rows.iter().map(|&q| po[q].clone()).collect(), observed)?;
        input.po_se = Some(supported_rows.iter().map(|&q| se[q].clone()).collect());
        input.realized = Some(supported_rows.iter().map(|&q| outcome[q]).collect());
        if let Some(c) = &cfg.allocation.priority_column {
            let (_, col) = predict.require_column(c)?;
            input.priority_values = Some(supported_rows.iter().map(|&q| col.value(q)).collect());
        }
        if let Some(c) = &cfg.allocation.ever_employed_column {
            let (_, col) = predict.require_column(c)?;
            input.ever_employed = Some(supported_rows.iter().map(|&q| col.value(q) != 0.0).collect());
        }
        input.validate()?;
        Ok(input)
    })())?;

    if cfg.allocation.enabled {
        tag(Stage::Allocate, (|| {
            let mut tables = Vec::new();
            for spec in &cfg.allocation.caps {
                let caps = spec.resolve(&input.observed, k);
                let results = allocation_table(&input, &caps, seed(Stage::Allocate), cfg.allocation.gain_mode)?;
                tables.push(AllocationSet {
                    caps_label: spec.label().into(),
                    caps,
                    results,
                });
            }
            write_json(
                &out.join("allocation.json"),
                &AllocationArtifact {
                    arm_labels: arm_labels.clone(),
                    rows: supported_rows.clone(),
                    tables,
                },
            )
        })())?;
    }
    done(Stage::Allocate, t);
    if until == Stage::Allocate {
        return Ok(());
    }

    let t = std::time::Instant::now();
    if cfg.trees.enabled && !cfg.trees.depths.is_empty() {
        tag(Stage::Tree, (|| {
            let tc = &cfg.trees;
            let features = match &tc.features {
                Some(f) => f.clone(),
                None if !cfg.gates.short_list.is_empty() => cfg.gates.short_list.clone(),
                None => data.covariate_names(),
            };
            let x_all = predict.select_rows(&supported_rows).features(Some(&features))?;
            let n = input.n();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed(Stage::Tree)));
            let cut = ((n as f64) * tc.train_share).round().clamp(1.0, n as f64) as usize;
            let mut train_rows = order[..cut].to_vec();
            let mut eval_rows = order[cut..].to_vec();
            train_rows.sort_unstable();
            eval_rows.sort_unstable();
            if eval_rows.is_empty() {
                eval_rows = train_rows.clone();
            }
            let sub = |rows: &[usize]| -> Result<AllocationInput> {
                let mut a = AllocationInput::new(rows.iter().map(|&i| input.po[i].clone()).collect(), rows.iter().map(|&i| input.observed[i]).collect())?;
                a.realized = input.realized.as_ref().map(|r| rows.iter().map(|&i| r[i]).collect());
                Ok(a)
            };
            let tr_in = sub(&train_rows)?;
            let ev_in = sub(&eval_rows)?;
            let x_tr = x_all.select_rows(&train_rows);
            let x_ev = x_all.select_rows(&eval_rows);
            let caps = Capacities::observed_programme_caps(&tr_in.observed, k);
            let mut trees = Vec::new();
            for &depth in &tc.depths {
                let mut opts = TreeSearchOptions::new(depth, GridPolicy { a: tc.a, per_level: tc.per_level });
                opts.lagrangian_iterations = tc.lagrangian_iterations;
                let variants: Vec<bool> = if tc.capped { vec![false, true] } else { vec![false] };
                for capped in variants {
                    let tree = search_tree(&tr_in, &x_tr, &opts, capped.then_some(&caps))?;
                    let name = format!("tree_depth{depth}");
                    let train = evaluate(&name, &tree.apply(&x_tr)?, &tr_in, cfg.allocation.gain_mode)?;
                    let eval = evaluate(&name, &tree.apply(&x_ev)?, &ev_in, cfg.allocation.gain_mode)?;
                    trees.push(TreeEntry { depth, capped, tree, train, eval });
                }
            }
            write_json(
                &out.join("trees.json"),
                &TreeArtifact {
                    n_arms: k,
                    train_rows: train_rows.iter().map(|&i| supported_rows[i]).collect(),
                    eval_rows: eval_rows.iter().map(|&i| supported_rows[i]).collect(),
                    trees,
                },
            )
        })())?;
    }
    done(Stage::Tree, t);
    if until == Stage::Tree {
        return Ok(());
    }

    let t = std::time::Instant::now();
    tag(Stage::Report, write_reports(out))?;
    done(Stage::Report, t);
    Ok(())
}

/// Regenerates tables and figures from the artifacts already in `out`.
pub fn report_only(out: &Path) -> Result<Vec<PathBuf>> {
    tag(Stage::Report, write_reports(out))
}
