use mtforest::pipeline::{run, DataSource, PlaceboSection, RunConfig, Stage, MANIFEST};
use mtforest::placebo::PlaceboConfig;
use mtforest::synth::{DgpConfig, EffectSpec};
use mtforest::Error;

fn small_config() -> RunConfig {
    let mut dgp = DgpConfig::simple(600, 3, 0.0, 5);
    dgp.effects = vec![
        EffectSpec::Constant { value: 5.0 },
        EffectSpec::Linear { feature: "x1".into(), intercept: 0.0, slope: 4.0 },
    ];
    dgp.horizons = 3;
    dgp.pre_periods = 1;
    let mut cfg: RunConfig = serde_json::from_value(serde_json::json!({
        "data": {"type": "dgp", "dgp": dgp},
        "seed": 3,
        "forest": {"n_trees": 60, "min_leaf_per_arm": 5},
        "feature_selection": {"n_trees": 30},
        "gates": {"short_list": ["x1", "u1"], "bins": 4, "smooth_points": 20},
        "cluster": {"options": {"k": 3, "restarts": 2}, "profile_variables": ["x1", "u1"]},
        "trees": {"depths": [2], "a": 8}
    }))
    .unwrap();
    cfg.placebo = Some(PlaceboSection {
        data: None,
        config: PlaceboConfig::new("pre1"),
        n_trees: Some(40),
    });
    cfg
}

#[test]
fn full_run_writes_artifacts_and_is_reproducible() {
    let cfg = small_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run(&cfg, a.path(), Stage::Report).unwrap();
    let mb = run(&cfg, b.path(), Stage::Report).unwrap();
    assert_eq!(ma, mb);
    assert!(ma.failed_stage.is_none());
    let paths: Vec<&str> = ma.files.iter().map(|f| f.path.as_str()).collect();
    for want in [
        "effects.json",
        "wald.json",
        "clusters.json",
        "placebo.json",
        "allocation.json",
        "trees.json",
        "forest.json",
        "iates.csv",
        "tables/allocation_observed_shares.csv",
    ] {
        assert!(paths.contains(&want), "{want} missing from {paths:?}");
    }
    assert!(paths.iter().any(|p| p.starts_with("plots/") && p.ends_with(".svg")));
    let mut sorted = paths.clone();
    sorted.sort();
    assert_eq!(paths, sorted);
}

#[test]
fn partial_run_stops_after_stage() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let m = run(&cfg, dir.path(), Stage::Fit).unwrap();
    assert_eq!(m.completed.last().map(String::as_str), Some("fit"));
    assert!(dir.path().join("forest.json").exists());
    assert!(!dir.path().join("effects.json").exists());
}

#[test]
fn failing_stage_is_named_and_earlier_artifacts_survive() {
    let mut cfg = small_config();
    cfg.gates.short_list = vec!["no_such_column".into()];
    cfg.trees.features = Some(vec!["x1".into()]);
    let dir = tempfile::tempdir().unwrap();
    let err = run(&cfg, dir.path(), Stage::Report).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(stage, "wald"),
        e => panic!("unexpected error {e}"),
    }
    assert_eq!(err.exit_code(), 3);
    assert!(dir.path().join("effects.json").exists());
    let manifest: mtforest::pipeline::Manifest =
        serde_json::from_slice(&std::fs::read(dir.path().join(MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest.failed_stage.as_deref(), Some("wald"));
}

#[test]
fn files_source_roundtrips_generated_data() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    run(&cfg, dir.path(), Stage::Data).unwrap();
    let mut files_cfg = cfg.clone();
    files_cfg.data = DataSource::Files {
        csv: dir.path().join("data/data.csv"),
        schema: dir.path().join("data/schema.json"),
    };
    files_cfg.path_outcomes = Some(vec!["y1".into(), "y2".into(), "y3".into()]);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run(&cfg, a.path(), Stage::Effects).unwrap();
    let mb = run(&files_cfg, b.path(), Stage::Effects).unwrap();
    let pick = |m: &mtforest::pipeline::Manifest, p: &str| m.files.iter().find(|f| f.path == p).unwrap().sha256.clone();
    assert_eq!(pick(&ma, "effects.json"), pick(&mb, "effects.json"));
}
