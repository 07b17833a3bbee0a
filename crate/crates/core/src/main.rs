use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use mtforest::allocation::{allocation_table, evaluate, AllocationInput, Capacities, GainMode};
use mtforest::dataset::{split_samples, ColumnKind, ColumnSpec, Dataset, FeatureMatrix, Role, Schema};
use mtforest::forest::{fit, ForestParams};
use mtforest::pipeline::{self, AllocationArtifact, AllocationSet, RunConfig, Stage, TreeArtifact, TreeEntry};
use mtforest::policy_tree::{search_tree, GridPolicy, TreeSearchOptions};
use mtforest::report::{read_json, write_json, write_reports};
use mtforest::synth::{generate, DgpConfig};
use mtforest::{Error, Result};

#[derive(Parser)]
#[command(name = "mtforest", version, about = "Multi-treatment causal forests and treatment allocation")]
struct Cli {
    /// Worker threads; all cores by default. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Data CSV.
    #[arg(long)]
    data: PathBuf,
    /// Schema JSON describing the CSV columns.
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CapsArg {
    Unbounded,
    ObservedShares,
    ObservedProgrammes,
    ObservedTotal,
}

impl CapsArg {
    fn resolve(self, observed: &[usize], k: usize) -> Capacities {
        match self {
            CapsArg::Unbounded => Capacities::unbounded(k),
            CapsArg::ObservedShares => Capacities::observed_shares(observed, k),
            CapsArg::ObservedProgrammes => Capacities::observed_programme_caps(observed, k),
            CapsArg::ObservedTotal => Capacities::observed_total(observed),
        }
    }

    fn label(self) -> &'static str {
        match self {
            CapsArg::Unbounded => "unbounded",
            CapsArg::ObservedShares => "observed_shares",
            CapsArg::ObservedProgrammes => "observed_programmes",
            CapsArg::ObservedTotal => "observed_total",
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with its oracle from a generator config.
    Simulate(Common),
    /// Split a dataset into training, prediction and feature-selection rows.
    Split {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Train, predict and feature-selection shares.
        #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.2, 0.2])]
        fractions: Vec<f64>,
    },
    /// Fit a forest on every row of a dataset; `--config` holds forest parameters.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Run the pipeline through feature selection.
    SelectFeatures(Common),
    /// Run the pipeline through tuning.
    Tune(Common),
    /// Run the pipeline through effect estimation.
    Effects(Common),
    /// Run the pipeline through Wald tests and GATEs.
    Wald(Common),
    /// Run the pipeline through clustering.
    Cluster(Common),
    /// Run the pipeline through the placebo test.
    Placebo(Common),
    /// Allocation table: through the pipeline with `--config`, or from a
    /// potential-outcome CSV with `--po`.
    Allocate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        standalone: AllocateArgs,
    },
    /// Policy trees: through the pipeline with `--config`, or from a
    /// potential-outcome CSV plus feature data.
    Tree {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        standalone: TreeArgs,
    },
    /// Regenerate tables and plots from the artifacts in `--out`.
    Report(Common),
    /// Run every stage.
    Run(Common),
}

#[derive(Args, Clone)]
struct AllocateArgs {
    /// CSV with `observed`, `po_0..po_k`, and optionally `se_*`, `realized`,
    /// `priority`, `ever_employed`.
    #[arg(long)]
    po: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "observed-shares")]
    caps: CapsArg,
    #[arg(long, value_enum, default_value = "ratio-of-sums")]
    gain_mode: GainArg,
}

#[derive(Args, Clone)]
struct TreeArgs {
    #[arg(long)]
    po: Option<PathBuf>,
    /// Feature CSV, row-aligned with the potential outcomes.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Split variables; every covariate by default.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// Grid approximation parameter.
    #[arg(long, default_value_t = 64)]
    a: usize,
    /// Use the same grid at every level instead of refining it.
    #[arg(long)]
    flat_grid: bool,
    #[arg(long, value_enum, default_value = "unbounded")]
    tree_caps: CapsArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum GainArg {
    RatioOfSums,
    MeanOfRatios,
}

impl From<GainArg> for GainMode {
    fn from(g: GainArg) -> Self {
        match g {
            GainArg::RatioOfSums => GainMode::RatioOfSums,
            GainArg::MeanOfRatios => GainMode::MeanOfRatios,
        }
    }
}

fn need_config(c: &Common) -> Result<&Path> {
    c.config.as_deref().ok_or_else(|| Error::Config("--config is required".into()))
}

/// An unreadable config file is a configuration error, not a data error.
fn config_io(e: Error) -> Error {
    match e {
        Error::Io { .. } => Error::Config(e.to_string()),
        e => e,
    }
}

fn run_until(c: &Common, stage: Stage) -> Result<()> {
    let mut cfg = RunConfig::load(need_config(c)?).map_err(config_io)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let m = pipeline::run(&cfg, &c.out, stage)?;
    println!("{} files written to {}", m.files.len(), c.out.display());
    Ok(())
}

fn load_data(d: &DataArgs) -> Result<Dataset> {
    let schema = Schema::load(&d.schema)?;
    Ok(Dataset::load(&d.data, &schema)?.0)
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Loads split variables for a standalone tree search. The schema may leave
/// out treatment and outcome columns; the observed arms stand in for them.
fn load_tree_features(data: &Path, schema: &Path, observed: &[usize], names: Option<&[String]>) -> Result<FeatureMatrix> {
    let mut schema: Schema = read_json(schema)?;
    let has = |r: Role| schema.columns.iter().any(|c| c.has_role(r));
    let (add_arm, add_outcome) = (!has(Role::Treatment), !has(Role::Outcome));
    let mut rdr = csv::Reader::from_path(data)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = rdr.headers()?.clone();
    if add_arm {
        header.push_field("__arm");
        schema.columns.push(ColumnSpec::new("__arm", ColumnKind::Continuous, &[Role::Treatment]));
    }
    if add_outcome {
        header.push_field("__outcome");
        schema.columns.push(ColumnSpec::new("__outcome", ColumnKind::Continuous, &[Role::Outcome]));
    }
    w.write_record(&header)?;
    let mut rows = 0;
    for rec in rdr.records() {
        let mut rec = rec?;
        let arm = observed.get(rows).ok_or_else(|| Error::Data(format!("more feature rows than the {} potential-outcome rows", observed.len())))?;
        if add_arm {
            rec.push_field(&arm.to_string());
        }
        if add_outcome {
            rec.push_field("0");
        }
        w.write_record(&rec)?;
        rows += 1;
    }
    if rows != observed.len() {
        return Err(Error::Data(format!("{rows} feature rows for {} potential-outcome rows", observed.len())));
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    let (d, report) = Dataset::from_reader(bytes.as_slice(), &schema)?;
    if report.dropped_rows > 0 {
        return Err(Error::Data(format!("feature file has missing values ({report})")));
    }
    d.features(names)
}

/// Reads the standalone potential-outcome CSV.
fn read_po_csv(path: &Path) -> Result<AllocationInput> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let indexed = |prefix: &str| -> Vec<usize> {
        (0..).map_while(|a| col(&format!("{prefix}{a}"))).collect()
    };
    let obs = col("observed").ok_or_else(|| Error::Schema {
        column: "observed".into(),
        reason: "missing".into(),
    })?;
    let po_cols = indexed("po_");
    if po_cols.len() < 2 {
        return Err(Error::Schema {
            column: "po_0".into(),
            reason: "need po_0 and po_1 at least".into(),
        });
    }
    let se_cols = indexed("se_");
    let (realized, priority, ever) = (col("realized"), col("priority"), col("ever_employed"));
    let num = |rec: &csv::StringRecord, i: usize, line: usize| -> Result<f64> {
        rec[i].trim().parse::<f64>().map_err(|_| Error::Data(format!("line {line}: `{}` in column `{}` is not a number", &rec[i], header[i])))
    };
    let (mut po, mut se, mut observed, mut rv, mut pv, mut ev) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let o = num(&rec, obs, line)?;
        if o < 0.0 || o.fract() != 0.0 {
            return Err(Error::Data(format!("line {line}: observed arm `{o}` is not an arm index")));
        }
        observed.push(o as usize);
        po.push(po_cols.iter().map(|&c| num(&rec, c, line)).collect::<Result<Vec<_>>>()?);
        if se_cols.len() == po_cols.len() {
            se.push(se_cols.iter().map(|&c| num(&rec, c, line)).collect::<Result<Vec<_>>>()?);
        }
        if let Some(c) = realized {
            rv.push(num(&rec, c, line)?);
        }
        if let Some(c) = priority {
            pv.push(num(&rec, c, line)?);
        }
        if let Some(c) = ever {
            ev.push(num(&rec, c, line)? != 0.0);
        }
    }
    let mut input = AllocationInput::new(po, observed)?;
    input.po_se = (se_cols.len() == po_cols.len()).then_some(se);
    input.realized = realized.map(|_| rv);
    input.priority_values = priority.map(|_| pv);
    input.ever_employed = ever.map(|_| ev);
    input.validate()?;
    Ok(input)
}

fn exec(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Simulate(c) => {
            let mut dgp: DgpConfig = read_json(need_config(&c)?).map_err(config_io)?;
            if let Some(s) = c.seed {
                dgp.seed = s;
            }
            let (data, oracle) = generate(&dgp)?;
            mkdir(&c.out)?;
            data.save(&c.out.join("data.csv"), &c.out.join("schema.json"))?;
            write_json(&c.out.join("oracle.json"), &oracle)?;
            println!("{} rows written to {}", data.n_rows(), c.out.display());
        }
        Cmd::Split { common, data, fractions } => {
            if fractions.len() != 3 {
                return Err(Error::Config("--fractions takes three shares".into()));
            }
            let d = load_data(&data)?;
            let split = split_samples(&d, (fractions[0], fractions[1], fractions[2]), common.seed.unwrap_or(0))?;
            mkdir(&common.out)?;
            write_json(&common.out.join("split.json"), &split)?;
        }
        Cmd::Fit { common, data } => {
            let mut params: ForestParams = match &common.config {
                Some(p) => read_json(p).map_err(config_io)?,
                None => ForestParams::default(),
            };
            if let Some(s) = common.seed {
                params.seed = s;
            }
            let d = load_data(&data)?;
            let forest = fit(&d, &params)?;
            mkdir(&common.out)?;
            forest.save(&common.out.join("forest.json"))?;
        }
        Cmd::SelectFeatures(c) => run_until(&c, Stage::SelectFeatures)?,
        Cmd::Tune(c) => run_until(&c, Stage::Tune)?,
        Cmd::Effects(c) => run_until(&c, Stage::Effects)?,
        Cmd::Wald(c) => run_until(&c, Stage::Wald)?,
        Cmd::Cluster(c) => run_until(&c, Stage::Cluster)?,
        Cmd::Placebo(c) => run_until(&c, Stage::Placebo)?,
        Cmd::Allocate { common, standalone } => match &standalone.po {
            None => run_until(&common, Stage::Allocate)?,
            Some(po) => {
                let input = read_po_csv(po)?;
                let k = input.n_arms();
                let caps = standalone.caps.resolve(&input.observed, k);
                let results = allocation_table(&input, &caps, common.seed.unwrap_or(0), standalone.gain_mode.into())?;
                mkdir(&common.out)?;
                write_json(
                    &common.out.join("allocation.json"),
                    &AllocationArtifact {
                        arm_labels: (0..k).map(|a| a.to_string()).collect(),
                        rows: (0..input.n()).collect(),
                        tables: vec![AllocationSet {
                            caps_label: standalone.caps.label().into(),
                            caps,
                            results,
                        }],
                    },
                )?;
                write_reports(&common.out)?;
            }
        },
        Cmd::Tree { common, standalone: t } => match (&t.po, &t.data, &t.schema) {
            (None, _, _) => run_until(&common, Stage::Tree)?,
            (Some(po), Some(data), Some(schema)) => {
                let input = read_po_csv(po)?;
                let x = load_tree_features(data, schema, &input.observed, t.features.as_deref())?;
                let k = input.n_arms();
                let opts = TreeSearchOptions::new(t.depth, GridPolicy { a: t.a, per_level: !t.flat_grid });
                let caps = t.tree_caps.resolve(&input.observed, k);
                let caps = (!caps.is_unbounded()).then_some(caps);
                let tree = search_tree(&input, &x, &opts, caps.as_ref())?;
                let eval = evaluate(&format!("tree_depth{}", t.depth), &tree.apply(&x)?, &input, GainMode::default())?;
                mkdir(&common.out)?;
                print!("{}", tree.render());
                write_json(
                    &common.out.join("trees.json"),
                    &TreeArtifact {
                        n_arms: k,
                        train_rows: (0..input.n()).collect(),
                        eval_rows: (0..input.n()).collect(),
                        trees: vec![TreeEntry {
                            depth: t.depth,
                            capped: caps.is_some(),
                            tree,
                            train: eval.clone(),
                            eval,
                        }],
                    },
                )?;
                write_reports(&common.out)?;
            }
            _ => return Err(Error::Config("standalone tree search needs --po, --data and --schema".into())),
        },
        Cmd::Report(c) => {
            let written = pipeline::report_only(&c.out)?;
            println!("{} report files written to {}", written.len(), c.out.display());
        }
        Cmd::Run(c) => run_until(&c, Stage::Report)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            error!("cannot set thread count: {e}");
            return ExitCode::from(2);
        }
        info!("using {t} threads");
    }
    match exec(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let shown = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let msg = s.to_string();
                if !shown.contains(&msg) {
                    eprintln!("  caused by: {msg}");
                }
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
