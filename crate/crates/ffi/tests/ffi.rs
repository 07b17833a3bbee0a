use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use mtforest::synth::{generate, DgpConfig};
use mtforest_ffi::*;

fn last_error() -> String {
    let p = mtf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn optimal_allocation_respects_caps() {
    let po = [1.0, 5.0, 2.0, 6.0, 3.0, 4.0, 0.0, 9.0];
    let caps = [-1i64, 2];
    let mut out = [9usize; 4];
    let s = unsafe { mtf_allocate_optimal(po.as_ptr(), 4, 2, caps.as_ptr(), -1, out.as_mut_ptr()) };
    assert_eq!(s, MtfStatus::Ok);
    // Gains of arm 1 are 4, 4, 1, 9: row 3 plus one of the tied rows.
    let total: f64 = out.iter().enumerate().map(|(r, &a)| po[r * 2 + a]).sum();
    assert_eq!(total, 19.0);
    assert_eq!(out[3], 1);
    assert_eq!(out.iter().filter(|&&a| a == 1).count(), 2);

    let s = unsafe { mtf_allocate_optimal(po.as_ptr(), 4, 2, ptr::null(), 1, out.as_mut_ptr()) };
    assert_eq!(s, MtfStatus::Ok);
    assert_eq!(out.iter().filter(|&&a| a == 1).count(), 1);
    assert_eq!(out[3], 1);
}

#[test]
fn infeasible_caps_and_null_pointers_report_errors() {
    let po = [1.0, 2.0, 3.0, 4.0];
    let caps = [0i64, 1];
    let mut out = [0usize; 2];
    let s = unsafe { mtf_allocate_optimal(po.as_ptr(), 2, 2, caps.as_ptr(), -1, out.as_mut_ptr()) };
    assert_eq!(s, MtfStatus::Config);
    assert!(last_error().contains("capacities"));

    let s = unsafe { mtf_allocate_optimal(ptr::null(), 2, 2, ptr::null(), -1, out.as_mut_ptr()) };
    assert_eq!(s, MtfStatus::InvalidArgument);
    assert!(last_error().contains("po is null"));

    let nan = [f64::NAN, 1.0];
    let s = unsafe { mtf_allocate_optimal(nan.as_ptr(), 1, 2, ptr::null(), -1, out.as_mut_ptr()) };
    assert_eq!(s, MtfStatus::Numeric);
}

#[test]
fn policy_tree_roundtrip() {
    // Arm 1 pays when x > 0.
    let n = 8;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 - 3.5).collect();
    let po: Vec<f64> = xs.iter().flat_map(|&x| [0.0, if x > 0.0 { 1.0 } else { -1.0 }]).collect();
    let observed = vec![0usize; n];
    let mut tree: *mut MtfPolicyTree = ptr::null_mut();
    let s = unsafe { mtf_policy_tree_search(po.as_ptr(), observed.as_ptr(), xs.as_ptr(), n, 2, 1, 1, 1, &mut tree) };
    assert_eq!(s, MtfStatus::Ok);
    let mut value = 0.0;
    assert_eq!(unsafe { mtf_policy_tree_value(tree, &mut value) }, MtfStatus::Ok);
    assert_eq!(value, 4.0);
    let mut arms = vec![9usize; n];
    assert_eq!(unsafe { mtf_policy_tree_apply(tree, xs.as_ptr(), n, 1, arms.as_mut_ptr()) }, MtfStatus::Ok);
    assert_eq!(arms, [0, 0, 0, 0, 1, 1, 1, 1]);
    let mut text: *mut std::ffi::c_char = ptr::null_mut();
    assert_eq!(unsafe { mtf_policy_tree_render(tree, &mut text) }, MtfStatus::Ok);
    let rendered = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_string();
    assert!(rendered.starts_with("x1 <= 0"), "{rendered}");
    unsafe {
        mtf_string_free(text);
        mtf_policy_tree_free(tree);
    }
}

#[test]
fn forest_handles() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = generate(&DgpConfig::simple(300, 2, 5.0, 1)).unwrap();
    let (csv, schema) = (dir.path().join("d.csv"), dir.path().join("s.json"));
    data.save(&csv, &schema).unwrap();

    let mut ds: *mut MtfDataset = ptr::null_mut();
    assert_eq!(unsafe { mtf_dataset_load(cstr(&csv).as_ptr(), cstr(&schema).as_ptr(), &mut ds) }, MtfStatus::Ok);
    let mut n = 0;
    assert_eq!(unsafe { mtf_dataset_n_rows(ds, &mut n) }, MtfStatus::Ok);
    assert_eq!(n, 300);

    let params = CString::new(r#"{"n_trees": 40, "seed": 2}"#).unwrap();
    let mut forest: *mut MtfForest = ptr::null_mut();
    assert_eq!(unsafe { mtf_forest_fit(ds, params.as_ptr(), &mut forest) }, MtfStatus::Ok);
    let mut k = 0;
    assert_eq!(unsafe { mtf_forest_n_arms(forest, &mut k) }, MtfStatus::Ok);
    assert_eq!(k, 2);

    let mut po = vec![0.0; n * k];
    let mut se = vec![0.0; n * k];
    let s = unsafe { mtf_forest_potential_outcomes(forest, ds, po.as_mut_ptr(), se.as_mut_ptr(), po.len()) };
    assert_eq!(s, MtfStatus::Ok);
    assert!(se.iter().all(|v| v.is_nan() || *v >= 0.0));
    let s = unsafe { mtf_forest_potential_outcomes(forest, ds, po.as_mut_ptr(), ptr::null_mut(), 3) };
    assert_eq!(s, MtfStatus::InvalidArgument);

    let (mut point, mut ate_se) = (0.0, 0.0);
    assert_eq!(unsafe { mtf_forest_ate(forest, ds, 1, 0, &mut point, &mut ate_se) }, MtfStatus::Ok);
    let diffs: Vec<f64> = po.chunks(2).filter(|r| r[0].is_finite()).map(|r| r[1] - r[0]).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    assert!((mean - point).abs() < 1e-9 * point.abs().max(1.0));
    assert!(ate_se > 0.0);

    let saved = dir.path().join("f.json");
    assert_eq!(unsafe { mtf_forest_save(forest, cstr(&saved).as_ptr()) }, MtfStatus::Ok);
    let mut again: *mut MtfForest = ptr::null_mut();
    assert_eq!(unsafe { mtf_forest_load(cstr(&saved).as_ptr(), &mut again) }, MtfStatus::Ok);
    let mut po2 = vec![0.0; n * k];
    assert_eq!(unsafe { mtf_forest_potential_outcomes(again, ds, po2.as_mut_ptr(), ptr::null_mut(), po2.len()) }, MtfStatus::Ok);
    assert!(po.iter().zip(&po2).all(|(a, b)| a.to_bits() == b.to_bits()));

    unsafe {
        mtf_forest_free(forest);
        mtf_forest_free(again);
        mtf_dataset_free(ds);
    }
}

#[test]
fn bad_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new("{\"data\": 3}").unwrap();
    let s = unsafe { mtf_run_pipeline(cfg.as_ptr(), cstr(dir.path()).as_ptr()) };
    assert_eq!(s, MtfStatus::Config);
    assert!(!last_error().is_empty());
    assert!(!unsafe { CStr::from_ptr(mtf_version()) }.to_bytes().is_empty());
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mtforest.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    for line in src.lines() {
        if let Some(rest) = line.split("extern \"C\" fn ").nth(1) {
            let name = rest.split('(').next().unwrap();
            assert!(h.contains(&format!("{name}(")), "{name} missing from header");
        }
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    for (compiler, flag) in [("cc", "-xc"), ("c++", "-xc++")] {
        let Ok(out) = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", flag])
            .arg(header())
            .output()
        else {
            eprintln!("{compiler} not available, header not compiled");
            continue;
        };
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
