//! C ABI over the `mtforest` library.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free`. Every fallible call returns an [`MtfStatus`];
//! on failure the message is kept per thread and read with
//! [`mtf_last_error`]. Panics are caught and reported as
//! [`MtfStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mtforest::allocation::{min_cost_assignment, AllocationInput, COST_SCALE};
use mtforest::dataset::{Dataset, FeatureKind, FeatureMatrix, FeatureSchema, Schema};
use mtforest::effects::{Contrast, Estimator, Population};
use mtforest::forest::{fit, Forest, ForestParams};
use mtforest::pipeline::{run, RunConfig, Stage};
use mtforest::policy_tree::{search_tree, GridPolicy, PolicyTree, TreeSearchOptions};
use mtforest::Error;

/// Result codes. The nonzero values below 5 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtfStatus {
    Ok = 0,
    Config = 2,
    Data = 3,
    Numeric = 4,
    /// Null pointer, bad UTF-8 or a too small output buffer.
    InvalidArgument = 5,
    Internal = 6,
}

/// A loaded dataset.
pub struct MtfDataset(Dataset);

/// A fitted forest.
pub struct MtfForest(Forest);

/// A fitted policy tree.
pub struct MtfPolicyTree(PolicyTree);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MtfStatus {
    match e.exit_code() {
        2 => MtfStatus::Config,
        4 => MtfStatus::Numeric,
        _ => MtfStatus::Data,
    }
}

enum Fail {
    Lib(Error),
    Arg(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

type FfiResult<T> = Result<T, Fail>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> MtfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MtfStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Arg(m))) => {
            set_error(m);
            MtfStatus::InvalidArgument
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            MtfStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Fail::Arg(format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg(format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| Fail::Arg(format!("{what} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Arg(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Arg(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, v: T, what: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(Fail::Arg(format!("{what} is null")));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mtf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mtf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mtf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Runs the full pipeline from a JSON config string into `out_dir`.
///
/// # Safety
/// Both arguments must be valid nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mtf_run_pipeline(config_json: *const c_char, out_dir: *const c_char) -> MtfStatus {
    guard(|| {
        let cfg: RunConfig = serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?;
        let out = PathBuf::from(str_arg(out_dir, "out_dir")?);
        run(&cfg, &out, Stage::Report)?;
        Ok(())
    })
}

/// Loads a CSV with its schema sidecar.
///
/// # Safety
/// Paths must be valid strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtf_dataset_load(csv_path: *const c_char, schema_path: *const c_char, out: *mut *mut MtfDataset) -> MtfStatus {
    guard(|| {
        let schema = Schema::load(str_arg(schema_path, "schema_path")?.as_ref())?;
        let (d, _) = Dataset::load(str_arg(csv_path, "csv_path")?.as_ref(), &schema)?;
        put(out, MtfDataset(d), "out")
    })
}

/// # Safety
/// `d` must be null or a handle from [`mtf_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn mtf_dataset_free(d: *mut MtfDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// # Safety
/// `d` must be a valid dataset handle.
#[no_mangle]
pub unsafe extern "C" fn mtf_dataset_n_rows(d: *const MtfDataset, out: *mut usize) -> MtfStatus {
    guard(|| {
        *out_slice(out, 1, "out")?.first_mut().expect("one") = ref_arg(d, "dataset")?.0.n_rows();
        Ok(())
    })
}

/// Fits a forest. `params_json` may be null for defaults.
///
/// # Safety
/// `data` must be a valid handle, `params_json` null or a valid string.
#[no_mangle]
pub unsafe extern "C" fn mtf_forest_fit(data: *const MtfDataset, params_json: *const c_char, out: *mut *mut MtfForest) -> MtfStatus {
    guard(|| {
        let d = ref_arg(data, "data")?;
        let params: ForestParams = if params_json.is_null() {
            ForestParams::default()
        } else {
            serde_json::from_str(str_arg(params_json, "params_json")?).map_err(Error::from)?
        };
        put(out, MtfForest(fit(&d.0, &params)?), "out")
    })
}

/// # Safety
/// `path` must be a valid string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtf_forest_load(path: *const c_char, out: *mut *mut MtfForest) -> MtfStatus {
    guard(|| {
        let f = Forest::load(str_arg(path, "path")?.as_ref())?;
        put(out, MtfForest(f), "out")
    })
}

/// # Safety
/// `f` must be a valid forest handle and `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn mtf_forest_save(f: *const MtfForest, path: *const c_char) -> MtfStatus {
    guard(|| {
        ref_arg(f, "forest")?.0.save(str_arg(path, "path")?.as_ref())?;
        Ok(())
    })
}

/// # Safety
/// `f` must be null or a forest handle.
#[no_mangle]
pub unsafe extern "C" fn mtf_forest_free(f: *mut MtfForest) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Number of treatment arms, control included.
///
/// # Safety
/// `f` must be a valid forest handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtf_forest_n_arms(f: *const MtfForest, out: *mut usize) -> MtfStatus {
    guard(|| {
        *out_slice(out, 1, "out")?.first_mut().expect("one") = ref_arg(f, "forest")?.0.n_arms;
        Ok(())
    })
}

/// Potential outcomes and standard errors of every row of `data`, row-major
/// `n_rows x n_arms`. Rows outside common support get NaN. Both buffers must
/// hold `len` values, at least `n_rows * n_arms`; `se` may be null.
///
/// # Safety
/// Handles must be valid and buffers writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn mtf_forest_potential_outcomes(
    f: *const MtfForest,
    data: *const MtfDataset,
    po: *mut f64,
    se: *mut f64,
    len: usize,
) -> MtfStatus {
    guard(|| {
        let (f, d) = (ref_arg(f, "forest")?, ref_arg(data, "data")?);
        let est = Estimator::new(&f.0, &d.0)?;
        let (k, n) = (est.n_arms(), est.n_queries());
        if len < n * k {
            return Err(Fail::Arg(format!("buffer holds {len} values, {} needed", n * k)));
        }
        let po = out_slice(po, n * k, "po")?;
        let mut se = if se.is_null() { None } else { Some(out_slice(se, n * k, "se")?) };
        for q in 0..n {
            for a in 0..k {
                let ok = est.supported()[q];
                po[q * k + a] = if ok { est.po(q, a) } else { f64::NAN };
                if let Some(se) = se.as_deref_mut() {
                    se[q * k + a] = if ok { est.po_se(q, a) } else { f64::NAN };
                }
            }
        }
        Ok(())
    })
}

/// Average effect of arm `m` against arm `l` over all supported rows.
///
/// # Safety
/// Handles must be valid; `point` and `se` writable.
#[no_mangle]
pub unsafe extern "C" fn mtf_forest_ate(
    f: *const MtfForest,
    data: *const MtfDataset,
    m: usize,
    l: usize,
    point: *mut f64,
    se: *mut f64,
) -> MtfStatus {
    guard(|| {
        let (f, d) = (ref_arg(f, "forest")?, ref_arg(data, "data")?);
        let est = Estimator::new(&f.0, &d.0)?;
        let e = est.ate(Contrast::new(m, l)?, &Population::All)?;
        out_slice(point, 1, "point")?[0] = e.point;
        out_slice(se, 1, "se")?[0] = e.se;
        Ok(())
    })
}

/// Outcome-maximizing assignment of `n` rows to `k` arms. `po` is row-major
/// `n x k`; `caps[a] < 0` leaves arm `a` open; `caps` may be null for no
/// caps. `total_treated < 0` disables the treated total.
///
/// # Safety
/// `po` holds `n*k` values, `caps` null or `k` values, `out` `n` slots.
#[no_mangle]
pub unsafe extern "C" fn mtf_allocate_optimal(
    po: *const f64,
    n: usize,
    k: usize,
    caps: *const i64,
    total_treated: i64,
    out: *mut usize,
) -> MtfStatus {
    guard(|| {
        let po = slice_arg(po, n * k, "po")?;
        let cap: Vec<Option<usize>> = if caps.is_null() {
            vec![None; k]
        } else {
            slice_arg(caps, k, "caps")?.iter().map(|&c| (c >= 0).then_some(c as usize)).collect()
        };
        if po.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite potential outcome".into()).into());
        }
        let cost: Vec<Vec<i64>> = po.chunks(k.max(1)).map(|r| r.iter().map(|v| -(v * COST_SCALE).round() as i64).collect()).collect();
        let total = (total_treated >= 0).then_some(total_treated as usize);
        let a = min_cost_assignment(&cost, &cap, total).ok_or_else(|| Error::Config("capacities admit fewer rows than given".into()))?;
        out_slice(out, n, "out")?.copy_from_slice(&a);
        Ok(())
    })
}

/// Exact policy tree over continuous features. `po` is `n x k` and `x` is
/// `n x p`, both row-major; `observed` holds each row's arm.
///
/// # Safety
/// Buffers must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn mtf_policy_tree_search(
    po: *const f64,
    observed: *const usize,
    x: *const f64,
    n: usize,
    k: usize,
    p: usize,
    depth: usize,
    grid_a: usize,
    out: *mut *mut MtfPolicyTree,
) -> MtfStatus {
    guard(|| {
        let po = slice_arg(po, n * k, "po")?;
        let observed = slice_arg(observed, n, "observed")?;
        let x = slice_arg(x, n * p, "x")?;
        let input = AllocationInput::new(po.chunks(k.max(1)).map(<[f64]>::to_vec).collect(), observed.to_vec())?;
        let fm = continuous_matrix(x, n, p);
        let opts = TreeSearchOptions::new(depth, GridPolicy { a: grid_a, per_level: true });
        put(out, MtfPolicyTree(search_tree(&input, &fm, &opts, None)?), "out")
    })
}

fn continuous_matrix(x: &[f64], n: usize, p: usize) -> FeatureMatrix {
    FeatureMatrix {
        schema: FeatureSchema {
            names: (1..=p).map(|j| format!("x{j}")).collect(),
            kinds: vec![FeatureKind::Continuous; p],
        },
        n,
        values: x.to_vec(),
    }
}

/// Arm recommended for each of `n` rows of `x` (`n x p`, row-major).
///
/// # Safety
/// `t` must be a valid tree handle and buffers sized as stated.
#[no_mangle]
pub unsafe extern "C" fn mtf_policy_tree_apply(t: *const MtfPolicyTree, x: *const f64, n: usize, p: usize, out: *mut usize) -> MtfStatus {
    guard(|| {
        let t = ref_arg(t, "tree")?;
        let fm = continuous_matrix(slice_arg(x, n * p, "x")?, n, p);
        let arms = t.0.apply(&fm)?;
        out_slice(out, n, "out")?.copy_from_slice(&arms);
        Ok(())
    })
}

/// Total potential outcome the tree achieves on its training rows.
///
/// # Safety
/// `t` must be a valid tree handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mtf_policy_tree_value(t: *const MtfPolicyTree, out: *mut f64) -> MtfStatus {
    guard(|| {
        out_slice(out, 1, "out")?[0] = ref_arg(t, "tree")?.0.value;
        Ok(())
    })
}

/// Text rendering; release with [`mtf_string_free`].
///
/// # Safety
/// `t` must be a valid tree handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mtf_policy_tree_render(t: *const MtfPolicyTree, out: *mut *mut c_char) -> MtfStatus {
    guard(|| {
        let s = CString::new(ref_arg(t, "tree")?.0.render()).map_err(|e| Fail::Arg(e.to_string()))?;
        if out.is_null() {
            return Err(Fail::Arg("out is null".into()));
        }
        *out = s.into_raw();
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a tree handle.
#[no_mangle]
pub unsafe extern "C" fn mtf_policy_tree_free(t: *mut MtfPolicyTree) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}
